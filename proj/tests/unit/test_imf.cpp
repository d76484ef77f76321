#include "bridgekit/entropic_ot.hpp"
#include "bridgekit/gaussian_bridge.hpp"
#include "bridgekit/imf.hpp"
#include "bridgekit/stats.hpp"

#include <catch_amalgamated.hpp>

using namespace bridgekit;
using namespace bridgekit::imf;
using Catch::Approx;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }
Mat m1(double x) { return Mat::Constant(1, 1, x); }

PairSamples gaussian_pairs(const ot::JointGaussian& joint, std::size_t n, std::uint64_t seed) {
    auto sampler = paths::EndpointSampler::gaussian(joint);
    PairSamples p{Mat(static_cast<Eigen::Index>(n), 1), Mat(static_cast<Eigen::Index>(n), 1)};
    for (std::size_t i = 0; i < n; ++i) {
        RandomStream rng(seed, i);
        double a = 0, b = 0;
        sampler.draw(rng, std::span<double>(&a, 1), std::span<double>(&b, 1));
        p.x0(Eigen::Index(i), 0) = a;
        p.xT(Eigen::Index(i), 0) = b;
    }
    return p;
}

gauss::GaussianBridgePath reference_path() {
    auto sched = gauss::compute_schedule(gauss::LinearReferenceSde::brownian(1, 1.0, 1.0));
    return gauss::GaussianBridgePath(sched, {v1(-1.0), m1(0.25)}, {v1(1.5), m1(1.0)});
}

double bulk_rmse(const DriftModel& model, const gauss::GaussianBridgePath& path) {
    double s = 0.0;
    int n = 0;
    for (int k = 0; k <= 18; ++k)
        for (int i = 0; i <= 20; ++i, ++n) {
            double t = 0.05 * k;
            Vec x = v1(path.mean(t)[0] + std::sqrt(path.cov(t)(0, 0)) * (-2.0 + 0.2 * i));
            s += std::pow(model(x, t)[0] - path.drift(x, t)[0], 2);
        }
    return std::sqrt(s / n);
}

// Zero-weight model with the given bin count.
DriftModel empty_model(std::size_t bins, double T) {
    DriftModel m;
    m.horizon = T;
    m.dim = 1;
    for (std::size_t b = 0; b <= bins; ++b) m.bin_edges.push_back(T * double(b) / double(bins));
    m.centers = Mat::Zero(1, 1);
    m.bandwidth = 1.0;
    m.weights.assign(bins, Mat::Zero(Eigen::Index(m.n_features()), 1));
    return m;
}

}  // namespace

TEST_CASE("regression targets for pinned pairs average to zero") {
    PairSamples pairs{Mat::Constant(4000, 1, 0.7), Mat::Constant(4000, 1, 0.7)};
    auto ds = make_regression_dataset(pairs, 1.0, 1.0, 10, 3);
    CHECK(ds.target.allFinite());
    for (double t : ds.t) REQUIRE(t < 0.99);
    for (int b = 0; b < 4; ++b) {
        std::vector<double> vals;
        for (std::size_t r = 0; r < ds.t.size(); ++r)
            if (ds.t[r] >= 0.2 * b && ds.t[r] < 0.2 * (b + 1)) vals.push_back(ds.target(Eigen::Index(r), 0));
        auto m = mean_estimate(vals);
        CHECK(std::abs(m.value) <= 4 * m.std_error);
    }
    for (std::size_t r = 0; r < ds.t.size(); ++r) {
        double expected = (0.7 - ds.x(Eigen::Index(r), 0)) / (1.0 - ds.t[r]);
        REQUIRE(ds.target(Eigen::Index(r), 0) == Approx(expected).epsilon(1e-12));
    }
    CHECK_THROWS_AS(make_regression_dataset(pairs, 1.0, 1.0, 10, 3, 0.0), ContractError);
}

TEST_CASE("realizable linear targets are recovered") {
    RegressionDataset ds;
    const std::size_t n = 4000;
    ds.t.resize(n);
    ds.x.resize(Eigen::Index(n), 1);
    ds.target.resize(Eigen::Index(n), 1);
    RandomStream rng(4, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ds.t[i] = rng.uniform();
        ds.x(Eigen::Index(i), 0) = rng.normal();
        ds.target(Eigen::Index(i), 0) = 2.0 * ds.x(Eigen::Index(i), 0) - 1.0;
    }
    auto worst_residual = [&](const DriftModel& model) {
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            worst = std::max(worst, std::abs(model(ds.x.row(Eigen::Index(i)).transpose(), ds.t[i])[0] -
                                             ds.target(Eigen::Index(i), 0)));
        return worst;
    };
    ModelConfig linear;
    linear.ridge = 0.0;
    linear.n_time_bins = 4;
    linear.n_centers = 0;
    auto exact = markov_projection_fit(ds, linear);
    CHECK(worst_residual(exact) <= 1e-10);
    CHECK_FALSE(exact.ridge_fallback);
    // Wide radial features are nearly collinear; the ridge fallback engages and the fit stays close.
    ModelConfig radial;
    radial.ridge = 0.0;
    radial.n_time_bins = 4;
    radial.n_centers = 16;
    auto fallback = markov_projection_fit(ds, radial);
    CHECK(fallback.ridge_fallback);
    CHECK(worst_residual(fallback) <= 1e-3);
}

TEST_CASE("an empty time bin is a fault") {
    RegressionDataset ds;
    ds.t.assign(500, 0.05);
    ds.x = Mat::Random(500, 1);
    ds.target = Mat::Random(500, 1);
    CHECK_THROWS_AS(markov_projection_fit(ds), NumericalFault);
}

TEST_CASE("projection of the Gaussian bridge coupling recovers its drift") {
    auto path = reference_path();
    auto joint = ot::gaussian_eot_closed_form(v1(-1.0), m1(0.25), v1(1.5), m1(1.0), 1.0);
    auto ds = make_regression_dataset(gaussian_pairs(joint, 20000, 5), 1.0, 1.0, 40, 6);
    auto model = markov_projection_fit(ds);
    CHECK(bulk_rmse(model, path) <= 0.05);
    CHECK_FALSE(model.ridge_fallback);
}

TEST_CASE("simulating the bridge drift harvests the closed-form joint law") {
    auto path = reference_path();
    auto joint = ot::gaussian_eot_closed_form(v1(-1.0), m1(0.25), v1(1.5), m1(1.0), 1.0);
    const std::size_t bins = 400;
    auto model = empty_model(bins, 1.0);
    for (std::size_t b = 0; b < bins; ++b) {
        double t = (double(b) + 0.5) / double(bins);
        auto [a, c] = path.drift_affine(t);
        model.weights[b](0, 0) = c[0];
        model.weights[b](1, 0) = a(0, 0);
    }
    auto pairs = reciprocal_projection(model, paths::gaussian_init(v1(-1.0), m1(0.25)), Direction::Forward, 40000,
                                       bins, 1.0, 7);
    Mat both(pairs.x0.rows(), 2);
    both << pairs.x0, pairs.xT;
    auto fit = stats::fit_gaussian(both);
    const double n = double(both.rows());
    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(fit.mean[i] - joint.mean[i]) <= 4 * std::sqrt(joint.covariance(i, i) / n));
        for (int j = 0; j < 2; ++j) {
            double se = std::sqrt((joint.covariance(i, i) * joint.covariance(j, j) + std::pow(joint.covariance(i, j), 2)) / n);
            CHECK(std::abs(fit.cov(i, j) - joint.covariance(i, j)) <= 4 * se);
        }
    }
    auto again = reciprocal_projection(model, paths::gaussian_init(v1(-1.0), m1(0.25)), Direction::Forward, 40000,
                                       bins, 1.0, 7);
    CHECK(again.x0 == pairs.x0);
    CHECK(again.xT == pairs.xT);
}

TEST_CASE("zero drift from a point yields the reference endpoint law") {
    auto pairs = reciprocal_projection(empty_model(4, 2.0), paths::point_init(v1(0.0)), Direction::Forward, 20000,
                                       40, 1.5, 8);
    CHECK(pairs.x0.cwiseAbs().maxCoeff() == 0.0);
    std::vector<double> xt(pairs.xT.data(), pairs.xT.data() + pairs.xT.rows());
    auto r = stats::ks_one_sample(xt, [](double x) { return stats::normal_cdf(x, 0.0, 1.5 * std::sqrt(2.0)); });
    CHECK(r.p_value > 0.001);
}

TEST_CASE("zero iterations return the initial coupling") {
    ImfConfig cfg;
    cfg.initial_coupling = PairSamples{Mat::Constant(10, 1, 1.0), Mat::Constant(10, 1, 2.0)};
    auto r = imf_run(paths::point_init(v1(0.0)), paths::point_init(v1(0.0)), 1, 1.0, 1.0, 0, cfg, 1);
    CHECK(r.report.empty());
    CHECK(r.state.coupling.x0 == cfg.initial_coupling->x0);
    CHECK(r.state.coupling.xT == cfg.initial_coupling->xT);
}

TEST_CASE("self-bridge converges to the entropic self-coupling") {
    // Static oracle: Sinkhorn between discretized standard normals with entropic weight 2.
    const int n = 161;
    Mat grid(n, 1);
    Vec p(n);
    for (int i = 0; i < n; ++i) {
        grid(i, 0) = -6.0 + 12.0 * i / (n - 1);
        p[i] = std::exp(-0.5 * grid(i, 0) * grid(i, 0));
    }
    p /= p.sum();
    ot::SinkhornConfig sc;
    sc.epsilon = 2.0;
    auto s = ot::sinkhorn_solve(p, p, ot::squared_euclidean_cost(grid, grid), sc);
    double cross = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cross += s.coupling.weights(i, j) * grid(i, 0) * grid(j, 0);

    ImfConfig cfg;
    cfg.n_pairs = 8000;
    cfg.n_t_per_pair = 20;
    cfg.n_steps = 100;
    auto normal = paths::gaussian_init(v1(0.0), m1(1.0));
    auto r = imf_run(normal, normal, 1, 1.0, 1.0, 5, cfg, 11);
    CHECK(r.report.back().cross_covariance(0, 0) == Approx(cross).epsilon(0.05));
    // Family-wise 5% level across the iterations.
    for (const auto& it : r.report) {
        CHECK(it.marginal_pvalue > 0.05 / double(r.report.size()));
        CHECK(it.coupling_kl.value >= -3 * it.coupling_kl.std_error);
    }
}
