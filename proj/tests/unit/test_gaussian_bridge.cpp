#include "bridgekit/entropic_ot.hpp"
#include "bridgekit/gaussian_bridge.hpp"
#include "bridgekit/random.hpp"

#include <catch_amalgamated.hpp>

using namespace bridgekit;
using namespace bridgekit::gauss;
using Catch::Approx;

namespace {

GaussianMarginal marginal(double mean, double var) { return {Vec::Constant(1, mean), Mat::Constant(1, 1, var)}; }

LinearReferenceSde ou_reference(double theta, double sigma, double horizon) {
    LinearReferenceSde ref;
    ref.c_of_t = [theta](double) { return -theta; };
    ref.alpha_of_t = [](double) { return Vec::Constant(1, 0.0); };
    ref.sigma_of_t = [sigma](double) { return sigma; };
    ref.horizon = horizon;
    ref.dim = 1;
    return ref;
}

Mat finite_difference_jacobian(const GaussianBridgePath& path, const Vec& x, double t) {
    const double h = 1e-5;
    Mat j(x.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Vec xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        j.col(k) = (path.drift(xp, t) - path.drift(xm, t)) / (2 * h);
    }
    return j;
}

}  // namespace

TEST_CASE("Brownian schedule has the analytic coefficients") {
    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) {
        CHECK(s.tau(t) == Approx(1.0).margin(1e-12));
        CHECK(s.zeta(t)[0] == Approx(0.0).margin(1e-12));
        CHECK(s.r(t) == Approx(t).margin(1e-10));
        CHECK(s.r_bar(t) == Approx(1.0 - t).margin(1e-10));
        CHECK(s.kappa(t, 0.7) == Approx(std::min(t, 0.7)).margin(1e-10));
    }
    CHECK(s.sigma_star() == Approx(1.0).margin(1e-12));
    CHECK(s.rho(0.0) == Approx(0.0).margin(1e-12));
    CHECK(s.rho(1.0) == Approx(1.0).margin(1e-12));
    CHECK(compute_schedule(LinearReferenceSde::brownian(1, 1.0, 2.0)).sigma_star() == Approx(std::sqrt(2.0)).margin(1e-10));
}

TEST_CASE("OU schedule matches closed-form integrals") {
    const double theta = 0.8, sigma = 1.3, T = 1.5;
    auto s = compute_schedule(ou_reference(theta, sigma, T));
    for (double t : {0.3, 0.9, 1.5}) {
        CHECK(s.tau(t) == Approx(std::exp(-theta * t)).epsilon(1e-10));
        // Var X_t from X_0 = 0.
        double var = sigma * sigma * (1.0 - std::exp(-2.0 * theta * t)) / (2.0 * theta);
        CHECK(s.kappa(t, t) == Approx(var).epsilon(1e-8));
    }
    CHECK(s.r(0.0) == Approx(0.0).margin(1e-12));
    CHECK(s.r(T) == Approx(1.0).margin(1e-10));
    CHECK(s.r_bar(T) == Approx(0.0).margin(1e-10));
    CHECK(s.r_bar(0.0) == Approx(1.0).margin(1e-12));
}

TEST_CASE("bridge moments interpolate linearly for a Brownian reference") {
    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    auto a = marginal(-1.0, 0.25), b = marginal(1.5, 1.0);
    for (double t : {0.0, 0.25, 0.5, 1.0}) {
        auto m = bridge_moments(s, a, b, t);
        CHECK(m.mean[0] == Approx((1 - t) * -1.0 + t * 1.5).margin(1e-10));
    }
    auto m0 = bridge_moments(s, a, b, 0.0);
    CHECK(m0.cov(0, 0) == Approx(0.25).margin(1e-10));
    auto m1 = bridge_moments(s, a, b, 1.0);
    CHECK(m1.cov(0, 0) == Approx(1.0).margin(1e-8));
    // Near-point endpoints reduce to the Brownian bridge variance t (T - t) / T.
    auto pinned = bridge_moments(s, marginal(0.0, 1e-12), marginal(0.0, 1e-12), 0.5);
    CHECK(pinned.cov(0, 0) == Approx(0.25).margin(1e-6));
}

TEST_CASE("bridge cross covariance equals the static entropic coupling") {
    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    GaussianBridgePath path(s, marginal(-1.0, 0.25), marginal(1.5, 1.0));
    auto j = ot::gaussian_eot_closed_form(Vec::Constant(1, -1.0), Mat::Constant(1, 1, 0.25), Vec::Constant(1, 1.5),
                                          Mat::Constant(1, 1, 1.0), 1.0);
    CHECK(path.cross_covariance()(0, 0) == Approx(j.cross(0, 0)).epsilon(1e-10));
}

TEST_CASE("drift at the mean equals the mean velocity") {
    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    GaussianBridgePath path(s, marginal(-1.0, 0.25), marginal(1.5, 1.0));
    for (double t : {0.1, 0.5, 0.8}) CHECK(path.drift(path.mean(t), t)[0] == Approx(path.mean_velocity(t)[0]).margin(1e-9));
    CHECK(path.mean_velocity(0.3)[0] == Approx(2.5).margin(1e-8));
}

TEST_CASE("nearly pinned endpoints recover the Brownian bridge drift") {
    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    GaussianBridgePath path(s, marginal(0.0, 1e-10), marginal(2.0, 1e-10));
    for (double t : {0.2, 0.6}) {
        Vec x = Vec::Constant(1, 0.3);
        CHECK(path.drift(x, t)[0] == Approx((2.0 - 0.3) / (1.0 - t)).epsilon(1e-4));
    }
}

TEST_CASE("property: drift Jacobian is symmetric") {
    auto s1 = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    GaussianBridgePath p1(s1, marginal(-1.0, 0.04), marginal(1.0, 0.04));
    auto s2 = compute_schedule(LinearReferenceSde::brownian(2, 1.0, 1.0));
    Mat a(2, 2), b(2, 2);
    a << 1.0, 0.3, 0.3, 0.5;
    b << 0.7, -0.2, -0.2, 1.4;
    GaussianBridgePath p2(s2, {Vec::Zero(2), a}, {Vec::Constant(2, 1.0), b});
    RandomStream rng(5, 0);
    for (int i = 0; i < 10; ++i) {
        double t = 0.05 + 0.9 * rng.uniform();
        Vec x1 = Vec::Constant(1, rng.normal());
        Mat j1 = finite_difference_jacobian(p1, x1, t);
        CHECK(std::abs(j1(0, 0) - j1(0, 0)) < 1e-8);
        Vec x2(2);
        x2 << rng.normal(), rng.normal();
        Mat j2 = finite_difference_jacobian(p2, x2, t);
        CHECK(std::abs(j2(0, 1) - j2(1, 0)) < 1e-6);
        auto [A, c] = p2.drift_affine(t);
        CHECK((A - A.transpose()).cwiseAbs().maxCoeff() < 1e-8);
        Mat st = p2.s_matrix(t).transpose() * p2.cov(t).inverse();
        CHECK((st - st.transpose()).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("drift transports the covariance along the path") {
    // d/dt Sigma_t = A Sigma + Sigma A^T + sigma^2 I for the affine drift A x + b.
    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    GaussianBridgePath path(s, marginal(-1.0, 0.25), marginal(1.5, 1.0));
    for (double t : {0.2, 0.5, 0.7}) {
        const double h = 1e-5;
        double dcov = (path.cov(t + h)(0, 0) - path.cov(t - h)(0, 0)) / (2 * h);
        double a = path.drift_affine(t).first(0, 0);
        CHECK(dcov == Approx(2 * a * path.cov(t)(0, 0) + 1.0).margin(1e-6));
    }
}

TEST_CASE("Lyapunov solves") {
    Mat id = Mat::Identity(2, 2), u(2, 2);
    u << 2.0, 3.0, 3.0, 8.0;
    CHECK((lyapunov_solve(id, u) - u / 2).cwiseAbs().maxCoeff() < 1e-12);
    Mat d = Mat::Zero(2, 2);
    d.diagonal() << 1.0, 2.0;
    Mat expected(2, 2);
    expected << 1.0, 1.0, 1.0, 2.0;
    CHECK((lyapunov_solve(d, u) - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(lyapunov_solve(d, Mat::Zero(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
    RandomStream rng(9, 0);
    for (int trial = 0; trial < 10; ++trial) {
        Mat g(3, 3), w(3, 3);
        for (auto& v : g.reshaped()) v = rng.normal();
        for (auto& v : w.reshaped()) v = rng.normal();
        Mat sigma = g * g.transpose() + Mat::Identity(3, 3);
        Mat sym = w + w.transpose();
        Mat a = lyapunov_solve(sigma, sym);
        CHECK((sigma * a + a * sigma - sym).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("covariance action") {
    auto zero = [](double) { return 0.0; };
    auto one = [](double) { return 1.0; };
    std::vector<Mat> still(21, Mat::Identity(3, 3) * 2.0);
    CHECK(bw_action(still, 1.0, zero) == Approx(0.0).margin(1e-15));
    std::vector<Mat> ident(21, Mat::Identity(3, 3));
    CHECK(bw_action(ident, 1.0, one) == Approx(3.0 / 8.0).epsilon(1e-12));

    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    GaussianBridgePath path(s, marginal(0.0, 1.0), marginal(0.0, 4.0));
    std::vector<Mat> bridge, straight;
    for (int k = 0; k <= 400; ++k) {
        double t = k / 400.0;
        bridge.push_back(path.cov(t));
        straight.push_back(Mat::Constant(1, 1, 1.0 + 3.0 * t));
    }
    double ab = bw_action(bridge, 1.0, one), as = bw_action(straight, 1.0, one);
    CHECK(ab < as);
    CHECK(as - ab > 1e-4);
}

TEST_CASE("invalid marginals are rejected") {
    GaussianMarginal bad{Vec::Zero(1), Mat::Constant(1, 1, -1.0)};
    CHECK_THROWS_AS(bad.validate(), NumericalFault);
    auto s = compute_schedule(LinearReferenceSde::brownian(1, 1.0, 1.0));
    GaussianBridgePath path(s, marginal(0.0, 1.0), marginal(0.0, 1.0));
    CHECK_THROWS_AS(path.mean(1.5), NumericalFault);
}
