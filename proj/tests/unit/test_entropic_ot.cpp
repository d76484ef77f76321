#include "bridgekit/entropic_ot.hpp"
#include "bridgekit/random.hpp"

#include <catch_amalgamated.hpp>

using namespace bridgekit;
using namespace bridgekit::ot;
using Catch::Approx;

namespace {

Vec random_simplex(RandomStream& rng, int n) {
    Vec w(n);
    for (auto& x : w) x = 0.1 + rng.uniform();
    return w / w.sum();
}

bool nondecreasing(const std::vector<double>& v, double slack) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] < v[i - 1] - slack) return false;
    return true;
}

}  // namespace

TEST_CASE("zero cost gives the product coupling and constant potentials") {
    Vec a(3), b(2);
    a << 0.2, 0.3, 0.5;
    b << 0.6, 0.4;
    auto r = sinkhorn_solve(a, b, Mat::Zero(3, 2));
    CHECK((r.coupling.weights - a * b.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Vec s = r.potentials.phi.array() + r.potentials.phi_hat(0);
    CHECK(s.maxCoeff() - s.minCoeff() < 1e-12);
}

TEST_CASE("single-point marginals admit only one coupling") {
    Vec a = Vec::Ones(1), b = Vec::Ones(1);
    Mat c(1, 1);
    c << 3.7;
    auto r = sinkhorn_solve(a, b, c);
    CHECK(r.coupling.weights(0, 0) == Approx(1.0).epsilon(1e-14));
}

TEST_CASE("two-point instance matches the one-parameter closed form") {
    Vec a = Vec::Constant(2, 0.5);
    Mat c(2, 2);
    c << 0.0, 1.0, 1.0, 0.0;
    for (double eps : {0.25, 1.0, 4.0}) {
        SinkhornConfig cfg;
        cfg.epsilon = eps;
        auto r = sinkhorn_solve(a, a, c, cfg);
        // Minimize over pi_d = [[d, .5-d], [.5-d, d]]: stationarity gives d / (.5 - d) = exp(1 / eps).
        const double d = 0.5 * std::exp(1.0 / eps) / (1.0 + std::exp(1.0 / eps));
        CHECK(r.coupling.weights(0, 0) == Approx(d).margin(1e-9));
        CHECK(r.coupling.weights(0, 1) == Approx(0.5 - d).margin(1e-9));
        CHECK(nondecreasing(r.report.dual_objective_trace, 1e-10));
        // Strong duality against the primal value at the closed-form optimum.
        Mat closed(2, 2);
        closed << d, 0.5 - d, 0.5 - d, d;
        double primal = 2.0 * (0.5 - d) + eps * kl_discrete(closed, a * a.transpose());
        CHECK(dual_objective(r.potentials, a, a, c, eps) == Approx(primal).margin(1e-8));
        CHECK(primal_objective(r.coupling, a, a, c, eps) == Approx(primal).margin(1e-8));
    }
}

TEST_CASE("dual objective and coupling are invariant to opposite potential shifts") {
    Vec a = Vec::Constant(2, 0.5);
    Mat c(2, 2);
    c << 0.0, 1.0, 1.0, 0.0;
    CHECK(dual_objective({Vec::Zero(2), Vec::Zero(2)}, a, a, Mat::Zero(2, 2), 1.0) == Approx(0.0).margin(1e-15));
    auto r = sinkhorn_solve(a, a, c);
    DualPotentials shifted{r.potentials.phi.array() + 3.0, r.potentials.phi_hat.array() - 3.0};
    CHECK(dual_objective(shifted, a, a, c, 1.0) ==
          Approx(dual_objective(r.potentials, a, a, c, 1.0)).margin(1e-12));
    auto k0 = coupling_from_potentials(r.potentials, a, a, c, 1.0);
    auto k1 = coupling_from_potentials(shifted, a, a, c, 1.0);
    CHECK((k0.weights - k1.weights).cwiseAbs().maxCoeff() < 1e-14);
    auto prod = coupling_from_potentials({Vec::Zero(2), Vec::Zero(2)}, a, a, Mat::Zero(2, 2), 1.0);
    CHECK((prod.weights - a * a.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("discrete KL special cases") {
    std::vector<double> p{0.3, 0.7};
    CHECK(kl_discrete(p, p) == 0.0);
    std::vector<double> point{1.0, 0.0}, half{0.5, 0.5};
    CHECK(kl_discrete(point, half) == Approx(std::log(2.0)).epsilon(1e-14));
    std::vector<double> q{1.0, 0.0};
    CHECK(kl_discrete(half, q) == kInf);
}

TEST_CASE("Gaussian closed form for identity covariances") {
    Vec m = Vec::Zero(2);
    Mat id = Mat::Identity(2, 2);
    for (double s : {1.0, 10.0, 0.3}) {
        auto j = gaussian_eot_closed_form(m, id, m, id, s);
        double expected = 0.5 * (std::sqrt(4.0 + std::pow(s, 4)) - s * s);
        CHECK((j.cross - expected * id).cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK(gaussian_eot_closed_form(m, id, m, id, 1.0).cross(0, 0) == Approx(0.618034).margin(1e-6));
    CHECK(gaussian_eot_closed_form(m, id, m, id, 10.0).cross(0, 0) == Approx(0.0099995).margin(1e-6));
    auto zero = gaussian_eot_closed_form(m, id, m, id, 0.0);
    CHECK((zero.cross - id).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Gaussian closed form agrees with a discretized Sinkhorn solve") {
    const int n = 161;
    Mat x(n, 1);
    Vec p(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = -6.0 + 12.0 * i / (n - 1);
        p[i] = std::exp(-0.5 * x(i, 0) * x(i, 0));
    }
    p /= p.sum();
    SinkhornConfig cfg;
    cfg.epsilon = 2.0;
    auto r = sinkhorn_solve(p, p, squared_euclidean_cost(x, x), cfg);
    double mean = p.dot(x.col(0)), cross = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cross += r.coupling.weights(i, j) * (x(i, 0) - mean) * (x(j, 0) - mean);
    Vec m = Vec::Zero(1);
    Mat one = Mat::Identity(1, 1);
    CHECK(cross == Approx(gaussian_eot_closed_form(m, one, m, one, 1.0).cross(0, 0)).epsilon(0.01));
}

TEST_CASE("property: random instances satisfy marginals, dual ascent and domain agreement") {
    RandomStream rng(2024, 0);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 2 + int(rng.index(6)), m = 2 + int(rng.index(6));
        Vec a = random_simplex(rng, n), b = random_simplex(rng, m);
        Mat c(n, m);
        for (auto& v : c.reshaped()) v = 2.0 * rng.uniform();
        SinkhornConfig cfg;
        cfg.epsilon = 0.2 + rng.uniform();
        auto r = sinkhorn_solve(a, b, c, cfg);
        REQUIRE(r.report.converged);
        CHECK(total_variation(r.coupling.source_marginal(), a) <= 1e-8);
        CHECK(total_variation(r.coupling.target_marginal(), b) <= 1e-8);
        CHECK(nondecreasing(r.report.dual_objective_trace, 1e-10));
        CHECK(r.coupling.weights.minCoeff() >= 0.0);
        cfg.log_domain = false;
        auto s = sinkhorn_solve(a, b, c, cfg);
        CHECK((s.coupling.weights - r.coupling.weights).cwiseAbs().maxCoeff() < 1e-7);
        CHECK(dual_objective(r.potentials, a, b, c, cfg.epsilon) ==
              Approx(primal_objective(r.coupling, a, b, c, cfg.epsilon)).margin(1e-7));
    }
}

TEST_CASE("small epsilon stays finite in the log domain") {
    Vec a = Vec::Constant(4, 0.25);
    Mat pts(4, 1);
    pts << 0.0, 1.0, 2.0, 3.0;
    SinkhornConfig cfg;
    cfg.epsilon = 0.01;
    auto r = sinkhorn_solve(a, a, squared_euclidean_cost(pts, pts), cfg);
    CHECK(r.coupling.weights.allFinite());
    CHECK(r.coupling.weights.diagonal().sum() > 0.99);
}

TEST_CASE("malformed inputs are rejected") {
    Vec a = Vec::Constant(2, 0.5), bad(2);
    bad << 0.7, 0.7;
    Mat c = Mat::Zero(2, 2);
    SinkhornConfig cfg;
    cfg.epsilon = -1.0;
    CHECK_THROWS_AS(sinkhorn_solve(a, a, c, cfg), ContractError);
    CHECK_THROWS_AS(sinkhorn_solve(a, bad, c), ContractError);
    CHECK_THROWS_AS(sinkhorn_solve(a, a, Mat::Zero(3, 2)), ContractError);
    Mat pts(2, 1);
    pts << 1.0, 1.0;
    CHECK_THROWS_AS(DiscreteMeasure::make(pts, a), ContractError);
}
