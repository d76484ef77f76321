// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance                 run all criteria
//   acceptance --criterion N   run one

#include "bridgekit/discrete_sb.hpp"
#include "bridgekit/entropic_ot.hpp"
#include "bridgekit/gaussian_bridge.hpp"
#include "bridgekit/imf.hpp"
#include "bridgekit/path_sim.hpp"
#include "bridgekit/random.hpp"
#include "bridgekit/soc.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

using namespace bridgekit;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

// Accumulates named checks into one verdict.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok) pass_ = false;
        if (!ok || verbose_) notes_ << (ok ? "" : "violated: ") << what << "; ";
    }
    void note(const std::string& what) { notes_ << what << "; ";}
    Verdict verdict() const { return {pass_, notes_.str()}; }

private:
    bool pass_ = true;
    bool verbose_ = false;
    std::ostringstream notes_;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Vec scalar(double v) { return Vec::Constant(1, v); }
Mat scalar_mat(double v) { return Mat::Constant(1, 1, v); }

bool nondecreasing(const std::vector<double>& v, double slack) {
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] < v[k - 1] - slack) return false;
    return true;
}

// Shared 1-D Gaussian instance N(-1, 0.25) -> N(1.5, 1) under a unit Brownian reference on [0, 1].
struct GaussInstance {
    gauss::BridgeSchedule schedule = gauss::compute_schedule(gauss::LinearReferenceSde::brownian(1, 1.0, 1.0));
    gauss::GaussianMarginal start{scalar(-1.0), scalar_mat(0.25)};
    gauss::GaussianMarginal end{scalar(1.5), scalar_mat(1.0)};
    gauss::GaussianBridgePath path{schedule, start, end};
    ot::JointGaussian joint() const {
        return ot::gaussian_eot_closed_form(start.mean, start.cov, end.mean, end.cov, schedule.sigma_star());
    }
};

// ---------------------------------------------------------------- 1

Verdict sinkhorn_analytic() {
    Checks c;
    Vec w = Vec::Constant(2, 0.5);
    Mat cost(2, 2);
    cost << 0, 1, 1, 0;
    auto r = ot::sinkhorn_solve(w, w, cost, {1.0, 10000, 1e-12, true});
    const double e = std::exp(1.0), expected = 0.5 * e / (1.0 + e);
    const double got = r.coupling.weights(0, 0);
    c.note(fmt("diagonal %.9f, closed form %.9f", got, expected));
    c.expect(std::abs(got - expected) <= 1e-6, "diagonal within 1e-6");
    c.expect(std::abs(r.coupling.weights(1, 1) - expected) <= 1e-6, "second diagonal within 1e-6");
    c.expect(nondecreasing(r.report.dual_objective_trace, 1e-10), "dual trace nondecreasing");
    return c.verdict();
}

// ---------------------------------------------------------------- 2

Verdict gaussian_vs_sinkhorn() {
    Checks c;
    GaussInstance g;
    const int n = 201;
    Mat x(n, 1);
    Vec a(n), b(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = -6.0 + 12.0 * i / (n - 1);
        a[i] = std::exp(-0.5 * std::pow(x(i, 0) + 1.0, 2) / 0.25);
        b[i] = std::exp(-0.5 * std::pow(x(i, 0) - 1.5, 2) / 1.0);
    }
    a /= a.sum();
    b /= b.sum();
    const double s = g.schedule.sigma_star();
    ot::SinkhornConfig cfg;
    cfg.epsilon = 2.0 * s * s;
    auto r = ot::sinkhorn_solve(a, b, ot::squared_euclidean_cost(x, x), cfg);
    c.expect(r.report.converged, "Sinkhorn converged");
    const double ma = a.dot(x.col(0)), mb = b.dot(x.col(0));
    double cross = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cross += r.coupling.weights(i, j) * (x(i, 0) - ma) * (x(j, 0) - mb);
    const double closed = g.joint().cross(0, 0);
    const double rel = std::abs(cross - closed) / std::abs(closed);
    c.note(fmt("grid cross-covariance %.6f, closed form %.6f, relative error %.2e", cross, closed, rel));
    c.expect(rel <= 0.02, "within 2%");
    return c.verdict();
}

// ---------------------------------------------------------------- 3

Verdict bridge_mixture_marginals() {
    Checks c;
    GaussInstance g;
    auto endpoints = paths::EndpointSampler::gaussian(g.joint());
    const std::size_t n = 100000;
    for (double t : {0.25, 0.5, 0.75}) {
        Mat xs = paths::sample_bridge_mixture(endpoints, t, 1.0, n, derive_seed(3, std::uint64_t(t * 100)), 1.0);
        std::span<const double> col(xs.data(), std::size_t(xs.rows()));
        auto m = mean_estimate(col);
        auto v = variance_estimate(col);
        auto exact = gauss::bridge_moments(g.schedule, g.start, g.end, t);
        const double zm = (m.value - exact.mean[0]) / m.std_error, zv = (v.value - exact.cov(0, 0)) / v.std_error;
        c.note(fmt("t=%.2f mean z %.2f, variance z %.2f", t, zm, zv));
        c.expect(std::abs(zm) <= 4.0 && std::abs(zv) <= 4.0, fmt("t=%.2f within 4 SE", t));
    }
    return c.verdict();
}

// ---------------------------------------------------------------- 4

Verdict girsanov_identities() {
    Checks c;
    paths::SdeSpec ref;
    ref.sigma_of_t = [](double) { return 1.0; };
    VectorField zero = [](std::span<const double>, double, std::span<double> out) { out[0] = 0.0; };
    VectorField push = [](std::span<const double>, double, std::span<double> out) { out[0] = 0.7; };
    const std::size_t n = 100000, steps = 100;
    auto init = paths::point_init(scalar(0.0));

    paths::SdeSpec tilted = ref;
    tilted.control = push;
    auto under_tilt = paths::simulate_sde(tilted, init, n, steps, 41);
    auto kl = paths::path_kl_estimate(under_tilt, zero, push);
    // The integrand is constant for a constant control, so SE is zero up to rounding.
    c.note(fmt("path KL %.12f +- %.2e (exact 0.245)", kl.value, kl.std_error));
    c.expect(std::abs(kl.value - 0.245) <= 3.0 * kl.std_error + 1e-12, "KL = 0.245 within 3 SE");

    auto under_ref = paths::simulate_sde(ref, init, n, steps, 42);
    Vec lr = paths::girsanov_log_rnd(under_ref, zero, push);
    std::vector<double> w(std::size_t(lr.size()));
    for (Eigen::Index i = 0; i < lr.size(); ++i) w[std::size_t(i)] = std::exp(lr[i]);
    auto m = mean_estimate(w);
    c.note(fmt("E[exp(log RND)] %.5f +- %.5f", m.value, m.std_error));
    c.expect(std::abs(m.value - 1.0) <= 4.0 * m.std_error, "normalization within 4 SE");
    return c.verdict();
}

// ---------------------------------------------------------------- 5, 6

soc::SocProblem quadratic_problem(paths::InitSampler init) {
    soc::SocProblem p;
    p.sigma_of_t = [](double) { return 1.0; };
    p.terminal_cost = [](std::span<const double> x) { return 0.5 * x[0] * x[0]; };
    p.horizon = 1.0;
    p.init = std::move(init);
    return p;
}

double optimal_control(double x, double t) { return -x / (2.0 - t); }

Verdict soc_solver_agreement() {
    Checks c;
    auto problem = quadratic_problem(paths::point_init(scalar(0.0)));
    soc::SpaceGrid space{{{-3.0, 3.0, 201}}};
    const std::size_t nt = 201;
    auto hjb = soc::hjb_solve_grid(problem, space, nt);
    auto fk = soc::feynman_kac_value(problem, space, nt, 8192, 55);
    double gap = 0.0;
    for (Eigen::Index k = 0; k < hjb.values.rows(); ++k)
        for (Eigen::Index i = 0; i < hjb.values.cols(); ++i)
            gap = std::max(gap, std::abs(hjb.values(k, i) - fk.values(k, i)));
    auto control = soc::control_from_value(hjb, problem.sigma_of_t);
    double sq = 0.0;
    for (std::size_t k = 0; k < nt; ++k)
        for (std::size_t i = 0; i < space.size(); ++i) {
            double t = hjb.times[k], x = space.node(i)[0], u = 0.0;
            control.evaluate(std::span<const double>(&x, 1), t, std::span<double>(&u, 1));
            sq += std::pow(u - optimal_control(x, t), 2);
        }
    const double rmse = std::sqrt(sq / double(nt * space.size()));
    c.note(fmt("HJB vs Feynman-Kac sup gap %.2e, control RMSE %.2e", gap, rmse));
    c.expect(gap <= 0.01, "value gap <= 0.01");
    c.expect(rmse <= 0.01, "control RMSE <= 0.01");
    return c.verdict();
}

Verdict soc_loss_landscape() {
    Checks c;
    auto problem = quadratic_problem(paths::gaussian_init(scalar(0.0), scalar_mat(1.0)));
    VectorField zero = [](std::span<const double>, double, std::span<double> out) { out[0] = 0.0; };
    VectorField best = [](std::span<const double> x, double t, std::span<double> out) { out[0] = optimal_control(x[0], t); };
    VectorField off = [](std::span<const double> x, double t, std::span<double> out) {
        out[0] = optimal_control(x[0], t) + 0.3;
    };
    const std::size_t n = 20000, steps = 100;

    // Log-variance at the optimum with the exact initial value V0(x) = x^2 / 4 + log(2) / 2 as offset.
    auto proposal = paths::simulate_sde(problem.sde(zero), problem.init, n, steps, 61);
    StateFn v0 = [](std::span<const double> x) { return 0.25 * x[0] * x[0] + 0.5 * std::log(2.0); };
    auto lv = soc::loss_log_variance(best, problem, proposal, zero, v0);
    c.note(fmt("LV at optimum %.3e +- %.3e (%.1f SE)", lv.value, lv.std_error, lv.value / lv.std_error));
    c.expect(std::abs(lv.value) <= 3.0 * lv.std_error, "LV at optimum within 3 SE of 0");

    // Both on-policy ensembles share one noise seed; the comparison still uses the unpaired standard errors.
    auto re_best = soc::loss_relative_entropy(best, problem, paths::simulate_sde(problem.sde(best), problem.init, n, steps, 62));
    auto re_off = soc::loss_relative_entropy(off, problem, paths::simulate_sde(problem.sde(off), problem.init, n, steps, 62));
    const double se = std::hypot(re_best.std_error, re_off.std_error);
    c.note(fmt("RE optimum %.4f, shifted %.4f, combined SE %.4f", re_best.value, re_off.value, se));
    c.expect(re_off.value - re_best.value > 3.0 * se, "RE gap exceeds 3 SE");

    soc::SpaceGrid coarse{{{-3.0, 3.0, 7}}};
    auto rep = soc::ParamControl::tabular(coarse, soc::uniform_times(1.0, 6));
    soc::FitOptions opt;
    opt.n_paths = 4000;
    opt.n_steps = 100;
    opt.budget = 600;
    auto fit = soc::fit_control(problem, soc::LossKind::RelativeEntropy, rep, opt, 64);
    double sq = 0.0;
    int count = 0;
    for (int k = 0; k <= 18; ++k)
        for (int i = 0; i <= 40; ++i) {
            double t = 0.05 * k, x = -2.0 + 0.1 * i, u = 0.0;
            fit.control.evaluate(std::span<const double>(&x, 1), t, std::span<double>(&u, 1));
            sq += std::pow(u - optimal_control(x, t), 2);
            ++count;
        }
    const double rmse = std::sqrt(sq / count);
    c.note(fmt("fitted control RMSE %.4f on |x|<=2, t<=0.9", rmse));
    c.expect(rmse <= 0.05, "fit RMSE <= 0.05");
    return c.verdict();
}

// ---------------------------------------------------------------- 7

Verdict continuous_imf() {
    Checks c;
    GaussInstance g;
    const auto& path = g.path;
    imf::ImfOracle oracle;
    oracle.control = [&path](const Vec& x, double t) { return Vec(path.drift(x, t)); };
    for (int k = 0; k <= 18; ++k)
        for (int i = 0; i < 21; ++i) {
            double t = 0.05 * k;
            oracle.eval_points.push_back({scalar(path.mean(t)[0] + std::sqrt(path.cov(t)(0, 0)) * (-2.0 + 0.2 * i)), t});
        }
    imf::ImfConfig cfg;
    cfg.n_pairs = 20000;
    auto r = imf::imf_run(paths::gaussian_init(g.start.mean, g.start.cov), paths::gaussian_init(g.end.mean, g.end.cov), 1,
                          1.0, 1.0, 10, cfg, 71, oracle);
    const auto& last = r.report.back();
    const double closed = path.cross_covariance()(0, 0);
    const double rel = std::abs(last.cross_covariance(0, 0) - closed) / closed;
    c.note(fmt("final drift RMSE %.4f, cross-covariance %.4f vs %.4f", last.drift_rmse, last.cross_covariance(0, 0), closed));
    c.expect(last.drift_rmse <= 0.05, "drift RMSE <= 0.05");
    c.expect(rel <= 0.05, "endpoint covariance within 5%");
    for (std::size_t k = 1; k < r.report.size(); ++k) {
        const auto &a = r.report[k - 1].coupling_kl, &b = r.report[k].coupling_kl;
        c.expect(b.value <= a.value + 3.0 * std::hypot(a.std_error, b.std_error),
                 fmt("KL step %.0f nonincreasing within 3 SE", double(k)));
    }
    return c.verdict();
}

// ---------------------------------------------------------------- 8, 9

Mat random_generator(std::size_t n, double lo, double hi, RandomStream& rng) {
    Mat q = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < q.rows(); ++i)
        for (Eigen::Index j = 0; j < q.cols(); ++j)
            if (i != j) q(i, j) = lo + (hi - lo) * rng.uniform();
    for (Eigen::Index i = 0; i < q.rows(); ++i) q(i, i) = -q.row(i).sum();
    return q;
}

Vec random_law(std::size_t n, RandomStream& rng) {
    Vec p(static_cast<Eigen::Index>(n));
    for (auto& v : p) v = 0.05 + rng.uniform();
    return p / p.sum();
}

Verdict discrete_exact_sb() {
    Checks c;
    RandomStream r1(11, 0), r2(12, 1);
    dsb::Generator q0(dsb::RateMatrix::constant(random_generator(5, 0.05, 0.3, r1)));
    Vec a = random_law(5, r2), b = random_law(5, r2);
    auto sb = dsb::discrete_sb_exact(q0, a, b, 1.0);
    const double e0 = (sb.coupling().rowwise().sum() - a).cwiseAbs().maxCoeff();
    const double e1 = (sb.coupling().colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
    c.note(fmt("marginal errors %.1e, %.1e; KL to reference %.6f", e0, e1, sb.kl_to_reference));
    c.expect(e0 <= 1e-9 && e1 <= 1e-9, "endpoint marginals within 1e-9");

    Mat ref = a.asDiagonal() * dsb::transition_matrix(q0, 0.0, 1.0);
    RandomStream r3(13, 0);
    double best_alt = kInf;
    for (int k = 0; k < 20; ++k) {
        Mat cost(5, 5);
        for (auto& v : cost.reshaped()) v = 3.0 * r3.uniform();
        auto alt = ot::sinkhorn_solve(a, b, cost, {0.3 + r3.uniform(), 20000, 1e-12, true});
        const double kl = ot::kl_discrete(alt.coupling.weights, ref);
        best_alt = std::min(best_alt, kl);
        c.expect(sb.kl_to_reference < kl, fmt("beats random coupling %.0f", k));
    }
    c.note(fmt("best random feasible coupling KL %.6f", best_alt));

    auto run = dsb::ddsbm_run(q0, a, b, 1.0, 20, {}, 81);
    std::size_t reached = 0;
    for (const auto& it : run.report)
        if (!reached && it.kl_to_sb <= 1e-8) reached = it.iteration;
    c.note(fmt("DDSBM reaches KL <= 1e-8 at iteration %.0f, final %.1e", double(reached), run.report.back().kl_to_sb));
    c.expect(reached > 0 && reached <= 20, "DDSBM KL <= 1e-8 within 20 iterations");
    for (std::size_t k = 1; k < run.report.size(); ++k)
        // Past convergence the KL sits at rounding level, so descent is judged with an absolute 1e-14 slack.
        c.expect(run.report[k].kl_to_sb <= run.report[k - 1].kl_to_sb + 1e-14, fmt("monotone at iteration %.0f", double(k)));
    return c.verdict();
}

Verdict ctmc_kl_analytic() {
    Checks c;
    Mat q1(2, 2), q2(2, 2);
    q1 << -1, 1, 1, -1;
    q2 << -2, 2, 2, -2;
    dsb::Generator ref(dsb::RateMatrix::constant(q1)), alt(dsb::RateMatrix::constant(q2));
    Vec u = Vec::Constant(2, 0.5);
    const double expected = 2.0 * std::numbers::ln2 - 1.0;
    auto exact = dsb::ctmc_kl(alt, ref, u, u, 1.0, dsb::KlMethod::Exact);
    auto mc = dsb::ctmc_kl(alt, ref, u, u, 1.0, dsb::KlMethod::MonteCarlo, 100000, 91);
    c.note(fmt("exact %.12f, closed form %.12f, MC %.5f", exact.value, expected, mc.value));
    c.note(fmt("MC SE %.5f", mc.std_error));
    c.expect(std::abs(exact.value - expected) <= 1e-10, "exact within 1e-10");
    c.expect(std::abs(mc.value - expected) <= 4.0 * mc.std_error, "MC within 4 SE");
    return c.verdict();
}

// ---------------------------------------------------------------- 10

Mat random_joint(std::size_t n, RandomStream& rng) {
    Mat p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (auto& v : p.reshaped()) v = 0.02 + rng.uniform();
    return p / p.sum();
}

Mat random_spd(std::size_t n, RandomStream& rng) {
    Mat g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (auto& v : g.reshaped()) v = rng.normal();
    return g * g.transpose() / double(n) + 0.2 * Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
}

Verdict invariant_suite() {
    Checks c;
    RandomStream rng(100, 0);
    std::size_t checked = 0;

    // Dual ascent and KL descent to the converged coupling.
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 2 + rng.index(6), m = 2 + rng.index(6);
        Vec a = random_law(n, rng), b = random_law(m, rng);
        Mat cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        for (auto& v : cost.reshaped()) v = 2.0 * rng.uniform();
        ot::SinkhornConfig cfg{0.1 + rng.uniform(), 20000, 1e-12, true};
        auto r = ot::sinkhorn_solve(a, b, cost, cfg);
        c.expect(nondecreasing(r.report.dual_objective_trace, 1e-10), "dual ascent");
        ot::DualPotentials shifted{r.potentials.phi.array() + 0.37, r.potentials.phi_hat.array() - 0.37};
        c.expect((ot::coupling_from_potentials(shifted, a, b, cost, cfg.epsilon).weights -
                  ot::coupling_from_potentials(r.potentials, a, b, cost, cfg.epsilon).weights)
                         .cwiseAbs()
                         .maxCoeff() <= 1e-12,
                 "potential shift invariance");
        double prev = kInf;
        for (int iters = 1; iters <= 12; ++iters) {
            auto partial = ot::sinkhorn_solve(a, b, cost, {cfg.epsilon, iters, 1e-300, true});
            const double kl = ot::kl_discrete(r.coupling.weights, partial.coupling.weights);
            c.expect(kl <= prev + 1e-10, "KL descent to the converged coupling");
            prev = kl;
        }
        checked += 14;
    }

    // KL chain rule and data processing on random 4x4 joints.
    for (int trial = 0; trial < 50; ++trial) {
        Mat p = random_joint(4, rng), q = random_joint(4, rng);
        Vec pm = p.rowwise().sum(), qm = q.rowwise().sum();
        double conditional = 0.0;
        for (Eigen::Index i = 0; i < 4; ++i) {
            Vec pc = p.row(i).transpose() / pm[i], qc = q.row(i).transpose() / qm[i];
            conditional += pm[i] * ot::kl_discrete(std::span<const double>(pc.data(), 4), std::span<const double>(qc.data(), 4));
        }
        const double joint = ot::kl_discrete(p, q);
        const double marginal = ot::kl_discrete(std::span<const double>(pm.data(), 4), std::span<const double>(qm.data(), 4));
        c.expect(std::abs(joint - marginal - conditional) <= 1e-10, "KL chain rule");
        c.expect(marginal <= joint + 1e-15, "marginal KL below joint KL");
        Mat kernel(16, 16);
        for (auto& v : kernel.reshaped()) v = rng.uniform();
        for (Eigen::Index j = 0; j < 16; ++j) kernel.col(j) /= kernel.col(j).sum();
        Vec pv = kernel * p.reshaped(), qv = kernel * q.reshaped();
        c.expect(ot::kl_discrete(std::span<const double>(pv.data(), 16), std::span<const double>(qv.data(), 16)) <= joint + 1e-15,
                 "data processing through a stochastic kernel");
        checked += 3;
    }

    // Generator and transition validity, Doob and conditioned-generator equivalence.
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.index(4);
        Mat a = random_generator(n, 0.1, 1.5, rng), b = random_generator(n, 0.1, 1.5, rng);
        std::vector<dsb::Generator> kinds{
            dsb::Generator(dsb::RateMatrix::constant(a)), dsb::Generator(dsb::RateMatrix::piecewise({0.0, 0.5}, {a, b})),
            dsb::Generator::from_function(n, [a, b](double t) -> Mat { return (1 - t) * a + t * b; }, 1.0, false)};
        for (const auto& g : kinds) {
            for (double t : {0.0, 0.3, 0.9}) {
                Mat q = g.at(t);
                Mat off = q;
                off.diagonal().setZero();
                c.expect(off.minCoeff() >= 0.0 && q.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12, "generator rows");
                Mat p = dsb::transition_matrix(g, t, 1.0);
                c.expect(p.minCoeff() >= 0.0 && (p.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-10, "transition rows");
            }
            const std::size_t target = rng.index(n);
            auto h = [&g, target](double t) -> Vec { return dsb::transition_matrix(g, t, 1.0).col(static_cast<Eigen::Index>(target)); };
            auto tilted = dsb::doob_tilt(g, h, 1.0);
            for (double t : {0.1, 0.5, 0.8}) {
                Mat cond = dsb::conditioned_rates(g, target, 1.0, t);
                c.expect((tilted.at(t) - cond).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, cond.cwiseAbs().maxCoeff()),
                         "Doob tilt equals the conditioned generator");
                c.expect((cond.rowwise().sum()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, cond.cwiseAbs().maxCoeff()),
                         "conditioned generator rows");
            }
            checked += 12;
        }
    }

    // Drift-Jacobian symmetry of the Gaussian bridge and Lyapunov residuals.
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 2 + rng.index(2);
        const double sigma = 0.5 + rng.uniform();
        auto sched = gauss::compute_schedule(gauss::LinearReferenceSde::brownian(int(d), sigma, 1.0));
        Vec m0(static_cast<Eigen::Index>(d)), m1(static_cast<Eigen::Index>(d));
        for (auto& v : m0) v = rng.normal();
        for (auto& v : m1) v = rng.normal();
        gauss::GaussianBridgePath path(sched, {m0, random_spd(d, rng)}, {m1, random_spd(d, rng)});
        for (int k = 0; k < 5; ++k) {
            const double t = 0.05 + 0.9 * rng.uniform();
            Vec x(static_cast<Eigen::Index>(d));
            for (auto& v : x) v = rng.normal();
            Mat jac(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
            const double h = 1e-5;
            for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
                Vec e = Vec::Zero(static_cast<Eigen::Index>(d));
                e[j] = h;
                jac.col(j) = (path.drift(x + e, t) - path.drift(x - e, t)) / (2 * h);
            }
            c.expect((jac - jac.transpose()).cwiseAbs().maxCoeff() <= 1e-6, "drift Jacobian symmetric");
            ++checked;
        }
        for (int k = 0; k < 5; ++k) {
            const std::size_t n = 1 + rng.index(5);
            Mat s = random_spd(n, rng), u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
            for (auto& v : u.reshaped()) v = rng.normal();
            u = (u + u.transpose()).eval();
            Mat a = gauss::lyapunov_solve(s, u);
            c.expect((s * a + a * s - u).norm() <= 1e-10, "Lyapunov residual");
            ++checked;
        }
    }
    c.note(fmt("%.0f invariant checks", double(checked)));
    return c.verdict();
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    Verdict (*run)();
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all{
        {1, "Sinkhorn analytic instance", 1.0, sinkhorn_analytic},
        {2, "Gaussian closed form vs Sinkhorn", 10.0, gaussian_vs_sinkhorn},
        {3, "bridge-mixture marginals", 30.0, bridge_mixture_marginals},
        {4, "Girsanov identities", 30.0, girsanov_identities},
        {5, "SOC solver agreement", 60.0, soc_solver_agreement},
        {6, "SOC loss landscape", 300.0, soc_loss_landscape},
        {7, "continuous IMF", 300.0, continuous_imf},
        {8, "discrete exact SB", 30.0, discrete_exact_sb},
        {9, "CTMC KL analytic instance", 30.0, ctmc_kl_analytic},
        {10, "invariant suite", 600.0, invariant_suite},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
            return 2;
        }
    }
    int failures = 0, ran = 0;
    for (const auto& c : criteria()) {
        if (only && c.id != only) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.limit_seconds;
        const bool ok = v.pass && in_time;
        if (!ok) ++failures;
        std::printf("criterion %d %s: %s (%.2f s of %.0f s)%s %s\n", c.id, c.name, ok ? "PASS" : "FAIL", secs,
                    c.limit_seconds, in_time ? "" : " [over time]", v.detail.c_str());
        std::fflush(stdout);
    }
    if (!ran) {
        std::fprintf(stderr, "no criterion %d\n", only);
        return 2;
    }
    return failures ? 1 : 0;
}
