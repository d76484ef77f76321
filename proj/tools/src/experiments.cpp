#include "app.hpp"

#include "bridgekit/discrete_sb.hpp"
#include "bridgekit/entropic_ot.hpp"
#include "bridgekit/gaussian_bridge.hpp"
#include "bridgekit/imf.hpp"
#include "bridgekit/io.hpp"
#include "bridgekit/path_sim.hpp"
#include "bridgekit/random.hpp"
#include "bridgekit/soc.hpp"
#include "bridgekit/stats.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace bridgekit::cli {

namespace {

using nlohmann::json;

void write_json(const std::filesystem::path& path, const json& doc) {
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<double> parse_list(const std::string& text, const std::string& key) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (item.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("parameter '" + key + "' must be a comma-separated list of numbers");
        }
    }
    if (v.empty()) throw UsageError("parameter '" + key + "' is empty");
    return v;
}

Vec scalar(double v) { return Vec::Constant(1, v); }
Mat scalar_mat(double v) { return Mat::Constant(1, 1, v); }

std::vector<ParamSpec> gaussian_endpoint_params() {
    return {{"mu0", -1.0, "source mean"},
            {"var0", 0.25, "source variance"},
            {"muT", 1.5, "target mean"},
            {"varT", 1.0, "target variance"},
            {"sigma", 1.0, "reference diffusion coefficient"},
            {"horizon", 1.0, "time horizon T"}};
}

gauss::GaussianBridgePath gaussian_path(const Params& p) {
    auto schedule = gauss::compute_schedule(
        gauss::LinearReferenceSde::brownian(1, p.num("sigma"), p.num("horizon")));
    return gauss::GaussianBridgePath(schedule, {scalar(p.num("mu0")), scalar_mat(p.num("var0"))},
                                     {scalar(p.num("muT")), scalar_mat(p.num("varT"))});
}

// ---------------------------------------------------------------- sinkhorn

void run_sinkhorn(const Params& p, std::uint64_t, RunContext& ctx) {
    ot::DiscreteMeasure source, target;
    if (p.str("source_csv").empty() != p.str("target_csv").empty())
        throw UsageError("give both source_csv and target_csv or neither");
    if (p.str("source_csv").empty()) {
        Mat pts(2, 1);
        pts << 0.0, 1.0;
        source = ot::DiscreteMeasure::make(pts, Vec::Constant(2, 0.5));
        target = source;
    } else {
        source = io::read_measure_csv(p.str("source_csv"));
        target = io::read_measure_csv(p.str("target_csv"));
    }
    ot::SinkhornConfig cfg;
    cfg.epsilon = p.num("epsilon");
    cfg.max_iters = int(p.integer("max_iters"));
    cfg.marginal_tol = p.num("marginal_tol");
    cfg.log_domain = p.flag("log_domain");
    Mat cost = ot::squared_euclidean_cost(source.points, target.points);
    auto r = ot::sinkhorn_solve(source, target, cost, cfg);

    io::write_matrix_csv(ctx.file("coupling.csv", "coupling"), r.coupling.weights, "target");
    io::CsvTable pot{{"index", "source_potential", "target_potential"}, {}};
    for (Eigen::Index i = 0; i < std::max(r.potentials.phi.size(), r.potentials.phi_hat.size()); ++i)
        pot.rows.push_back({double(i), i < r.potentials.phi.size() ? r.potentials.phi[i] : std::nan(""),
                            i < r.potentials.phi_hat.size() ? r.potentials.phi_hat[i] : std::nan("")});
    io::write_csv(ctx.file("potentials.csv", "data"), pot);
    io::CsvTable dual{{"half_step", "dual_objective"}, {}};
    for (std::size_t k = 0; k < r.report.dual_objective_trace.size(); ++k)
        dual.rows.push_back({double(k + 1), r.report.dual_objective_trace[k]});
    io::write_csv(ctx.file("dual_trace.csv", "data"), dual);
    io::CsvTable marg{{"iteration", "marginal_tv_error"}, {}};
    for (std::size_t k = 0; k < r.report.marginal_error_trace.size(); ++k)
        marg.rows.push_back({double(k + 1), r.report.marginal_error_trace[k]});
    io::write_csv(ctx.file("marginal_trace.csv", "data"), marg);

    write_json(ctx.file("report.json", "report"),
               {{"iterations", r.report.iterations_used},
                {"converged", r.report.converged},
                {"primal_objective", ot::primal_objective(r.coupling, source.weights, target.weights, cost, cfg.epsilon)},
                {"dual_objective", r.report.dual_objective_trace.empty() ? 0.0 : r.report.dual_objective_trace.back()},
                {"source_marginal_tv", ot::total_variation(r.coupling.source_marginal(), source.weights)},
                {"target_marginal_tv", ot::total_variation(r.coupling.target_marginal(), target.weights)}});
}

// ---------------------------------------------------------------- gaussian-bridge

void run_gaussian_bridge(const Params& p, std::uint64_t, RunContext& ctx) {
    auto path = gaussian_path(p);
    const double T = p.num("horizon");
    const std::size_t nt = p.count("n_times");
    const std::size_t nx = p.count("n_x");
    if (nt < 2 || nx < 2) throw UsageError("n_times and n_x must be at least 2");
    const double sigma = p.num("sigma");

    io::CsvTable moments{{"t", "mean", "variance"}, {}};
    std::vector<Mat> covs;
    for (std::size_t k = 0; k < nt; ++k) {
        double t = T * double(k) / double(nt - 1);
        Mat c = path.cov(t);
        covs.push_back(c);
        moments.rows.push_back({t, path.mean(t)[0], c(0, 0)});
    }
    io::write_csv(ctx.file("moments.csv", "data"), moments);

    // The drift is singular in neither endpoint but the grid stops short of T for symmetry with simulation.
    io::CsvTable drift{{"t", "x", "drift"}, {}};
    const double lo = p.num("x_lo"), hi = p.num("x_hi");
    for (std::size_t k = 0; k + 1 < nt; ++k) {
        double t = T * double(k) / double(nt - 1);
        for (std::size_t i = 0; i < nx; ++i) {
            double x = lo + (hi - lo) * double(i) / double(nx - 1);
            drift.rows.push_back({t, x, path.drift(scalar(x), t)[0]});
        }
    }
    io::write_csv(ctx.file("drift.csv", "data"), drift);
    io::write_schedule_csv(ctx.file("schedule.csv", "data"), path.schedule(), nt);

    auto joint = ot::gaussian_eot_closed_form(scalar(p.num("mu0")), scalar_mat(p.num("var0")), scalar(p.num("muT")),
                                              scalar_mat(p.num("varT")), sigma * std::sqrt(T));
    write_json(ctx.file("report.json", "report"),
               {{"cross_covariance", path.cross_covariance()(0, 0)},
                {"static_cross_covariance", joint.cross(0, 0)},
                {"covariance_action", gauss::bw_action(covs, T, [sigma](double) { return sigma; })}});
}

// ---------------------------------------------------------------- bridge-mixture

void run_bridge_mixture(const Params& p, std::uint64_t seed, RunContext& ctx) {
    auto path = gaussian_path(p);
    const double T = p.num("horizon"), sigma = p.num("sigma");
    const std::size_t n = p.count("n_samples");
    if (n < 2) throw UsageError("n_samples must be at least 2");
    auto joint = ot::gaussian_eot_closed_form(scalar(p.num("mu0")), scalar_mat(p.num("var0")), scalar(p.num("muT")),
                                              scalar_mat(p.num("varT")), sigma * std::sqrt(T));
    auto endpoints = paths::EndpointSampler::gaussian(joint);
    auto times = parse_list(p.str("times"), "times");

    io::CsvTable moments{{"t", "mean", "mean_se", "variance", "variance_se", "exact_mean", "exact_variance"}, {}};
    json per_time = json::array();
    for (std::size_t k = 0; k < times.size(); ++k) {
        double t = times[k];
        if (!(t > 0.0 && t < T)) throw UsageError("times must lie strictly inside (0, horizon)");
        Mat xs = paths::sample_bridge_mixture(endpoints, t, sigma, n, derive_seed(seed, stream_id("bridge-mixture") + k), T);
        std::span<const double> col(xs.data(), std::size_t(xs.rows()));
        auto m = mean_estimate(col);
        auto v = variance_estimate(col);
        double em = path.mean(t)[0], ev = path.cov(t)(0, 0);
        moments.rows.push_back({t, m.value, m.std_error, v.value, v.std_error, em, ev});
        double sd = std::sqrt(ev);
        auto h = paths::marginal_histogram(col, em - 5 * sd, em + 5 * sd, int(p.integer("bins")));
        std::ostringstream name;
        name << "histogram_" << k << ".csv";
        io::write_histogram_csv(ctx.file(name.str(), "data"), h);
        per_time.push_back({{"t", t},
                            {"histogram", name.str()},
                            {"mean_z", (m.value - em) / m.std_error},
                            {"variance_z", (v.value - ev) / v.std_error}});
    }
    io::write_csv(ctx.file("moments.csv", "data"), moments);
    write_json(ctx.file("report.json", "report"), {{"samples_per_time", n}, {"times", per_time}});
}

// ---------------------------------------------------------------- soc-grid

void run_soc_grid(const Params& p, std::uint64_t seed, RunContext& ctx) {
    const double a = p.num("curvature"), sigma = p.num("sigma"), T = p.num("horizon");
    if (a < 0.0) throw UsageError("curvature must be nonnegative");
    soc::SocProblem problem;
    problem.sigma_of_t = [sigma](double) { return sigma; };
    problem.terminal_cost = [a](std::span<const double> x) { return 0.5 * a * x[0] * x[0]; };
    problem.horizon = T;
    problem.init = paths::point_init(scalar(p.num("x0")));

    soc::SpaceGrid space{{{p.num("x_lo"), p.num("x_hi"), p.count("n_x")}}};
    const std::size_t nt = p.count("n_times");
    auto hjb = soc::hjb_solve_grid(problem, space, nt);
    auto fk = soc::feynman_kac_value(problem, space, nt, p.count("n_mc"), derive_seed(seed, stream_id("soc-grid/fk")));

    auto exact_value = [=](double x, double t) {
        double g = 1.0 + a * sigma * sigma * (T - t);
        return a * x * x / (2.0 * g) + 0.5 * std::log(g);
    };
    auto exact_control = [=](double x, double t) { return -sigma * a * x / (1.0 + a * sigma * sigma * (T - t)); };

    io::write_value_grid_csv(ctx.file("value_hjb.csv", "data"), hjb);
    io::write_value_grid_csv(ctx.file("value_fk.csv", "data"), fk);
    soc::ValueGrid exact = hjb;
    for (std::size_t k = 0; k < nt; ++k)
        for (std::size_t i = 0; i < space.size(); ++i)
            exact.values(Eigen::Index(k), Eigen::Index(i)) = exact_value(space.node(i)[0], exact.times[k]);
    io::write_value_grid_csv(ctx.file("value_exact.csv", "data"), exact);

    auto grid_control = soc::control_from_value(hjb, problem.sigma_of_t);
    io::CsvTable control{{"t", "x", "control_grid", "control_exact"}, {}};
    double max_value_err = 0.0, max_gap = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < nt; ++k)
        for (std::size_t i = 0; i < space.size(); ++i) {
            double t = hjb.times[k], x = space.node(i)[0], u = 0.0;
            grid_control.evaluate(std::span<const double>(&x, 1), t, std::span<double>(&u, 1));
            control.rows.push_back({t, x, u, exact_control(x, t)});
            sq += std::pow(u - exact_control(x, t), 2);
            max_value_err = std::max(max_value_err, std::abs(hjb.values(Eigen::Index(k), Eigen::Index(i)) - exact_value(x, t)));
            max_gap = std::max(max_gap, std::abs(hjb.values(Eigen::Index(k), Eigen::Index(i)) -
                                                 fk.values(Eigen::Index(k), Eigen::Index(i))));
        }
    io::write_csv(ctx.file("control.csv", "data"), control);

    // Loss comparison for the exact optimum and the zero control, all estimated from the reference proposal.
    const std::size_t n_paths = p.count("n_paths"), n_steps = p.count("n_steps");
    VectorField optimal = [exact_control](std::span<const double> x, double t, std::span<double> out) {
        out[0] = exact_control(x[0], t);
    };
    VectorField zero = [](std::span<const double>, double, std::span<double> out) { out[0] = 0.0; };
    auto proposal = paths::simulate_sde(problem.sde(zero), problem.init, n_paths, n_steps,
                                        derive_seed(seed, stream_id("soc-grid/proposal")));
    Vec logw = soc::optimal_log_weights(problem, proposal, zero);
    io::CsvTable losses{{"control", "relative_entropy", "re_se", "cross_entropy", "ce_se", "log_variance", "lv_se"}, {}};
    json loss_doc = json::object();
    int idx = 0;
    for (auto& [label, field] : std::vector<std::pair<std::string, VectorField>>{{"optimal", optimal}, {"zero", zero}}) {
        auto own = paths::simulate_sde(problem.sde(field), problem.init, n_paths, n_steps,
                                       derive_seed(seed, stream_id("soc-grid/own") + std::uint64_t(idx)));
        auto re = soc::loss_relative_entropy(field, problem, own);
        auto ce = soc::loss_cross_entropy(field, problem, proposal, zero, logw);
        auto lv = soc::loss_log_variance(field, problem, proposal, zero);
        losses.rows.push_back({double(idx), re.value, re.std_error, ce.loss.value, ce.loss.std_error, lv.value, lv.std_error});
        loss_doc[label] = {{"relative_entropy", re.value},
                           {"cross_entropy", ce.loss.value},
                           {"cross_entropy_ess", ce.effective_sample_size},
                           {"log_variance", lv.value}};
        ++idx;
    }
    io::write_csv(ctx.file("losses.csv", "data"), losses);
    write_json(ctx.file("report.json", "report"),
               {{"losses_rows", {"optimal", "zero"}},
                {"exact_value_at_x0", exact_value(p.num("x0"), 0.0)},
                {"hjb_max_error", max_value_err},
                {"hjb_fk_max_gap", max_gap},
                {"control_rmse", std::sqrt(sq / double(control.rows.size()))},
                {"losses", loss_doc}});
}

// ---------------------------------------------------------------- imf

void run_imf(const Params& p, std::uint64_t seed, RunContext& ctx) {
    auto path = gaussian_path(p);
    const double T = p.num("horizon"), sigma = p.num("sigma");
    imf::ImfConfig cfg;
    cfg.n_pairs = p.count("n_pairs");
    cfg.n_t_per_pair = p.count("n_t_per_pair");
    cfg.n_steps = p.count("n_steps");
    cfg.model.n_centers = p.count("n_centers");
    cfg.model.n_time_bins = p.count("n_time_bins");
    cfg.model.ridge = p.num("ridge");

    imf::ImfOracle oracle;
    oracle.control = [&path, sigma](const Vec& x, double t) { return Vec(path.drift(x, t) / sigma); };
    for (int k = 0; k <= 18; ++k)
        for (int i = 0; i < 21; ++i) {
            double t = T * 0.05 * k;
            oracle.eval_points.push_back(
                {scalar(path.mean(t)[0] + std::sqrt(path.cov(t)(0, 0)) * (-2.0 + 0.2 * i)), t});
        }
    auto r = imf::imf_run(paths::gaussian_init(scalar(p.num("mu0")), scalar_mat(p.num("var0"))),
                          paths::gaussian_init(scalar(p.num("muT")), scalar_mat(p.num("varT"))), 1, sigma, T,
                          p.count("n_iters"), cfg, derive_seed(seed, stream_id("imf")), oracle);

    io::CsvTable report{{"iteration", "coupling_kl", "coupling_kl_se", "regression_loss", "drift_rmse",
                         "marginal_pvalue", "cross_covariance", "ridge_fallback"},
                        {}};
    for (const auto& it : r.report)
        report.rows.push_back({double(it.iteration), it.coupling_kl.value, it.coupling_kl.std_error, it.regression_loss,
                               it.drift_rmse, it.marginal_pvalue, it.cross_covariance(0, 0), it.ridge_fallback ? 1.0 : 0.0});
    io::write_csv(ctx.file("imf_report.csv", "data"), report);
    if (r.state.forward_model) io::write_drift_model_json(ctx.file("forward_model.json", "model"), *r.state.forward_model);
    if (r.state.reverse_model) io::write_drift_model_json(ctx.file("reverse_model.json", "model"), *r.state.reverse_model);
    Mat pairs(r.state.coupling.x0.rows(), 2);
    pairs << r.state.coupling.x0, r.state.coupling.xT;
    io::write_matrix_csv(ctx.file("coupling_samples.csv", "data"), pairs, "x");
    write_json(ctx.file("report.json", "report"),
               {{"iterations", r.report.size()},
                {"closed_form_cross_covariance", path.cross_covariance()(0, 0)},
                {"final_cross_covariance", r.report.empty() ? 0.0 : r.report.back().cross_covariance(0, 0)},
                {"final_drift_rmse", r.report.empty() ? 0.0 : r.report.back().drift_rmse},
                {"kl_increase_warning", r.kl_increase_warning}});
}

// ---------------------------------------------------------------- discrete-sb

void run_discrete_sb(const Params& p, std::uint64_t seed, RunContext& ctx) {
    const double T = p.num("horizon");
    dsb::RateMatrix q;
    RandomStream rng(derive_seed(seed, stream_id("discrete-sb/instance")), 0);
    if (!p.str("rates_file").empty()) {
        q = io::read_rate_matrix(p.str("rates_file"));
    } else {
        const std::size_t n = p.count("n_states");
        if (n < 2) throw UsageError("n_states must be at least 2");
        const double lo = p.num("rate_lo"), hi = p.num("rate_hi");
        if (!(lo > 0.0 && hi >= lo)) throw UsageError("need 0 < rate_lo <= rate_hi");
        Mat m = Mat::Zero(Eigen::Index(n), Eigen::Index(n));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                if (i != j) m(i, j) = lo + (hi - lo) * rng.uniform();
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, i) = -m.row(i).sum();
        q = dsb::RateMatrix::constant(m);
    }
    const std::size_t n = q.n_states();
    auto random_law = [&] {
        Vec v(static_cast<Eigen::Index>(n));
        for (auto& x : v) x = 0.05 + rng.uniform();
        return Vec(v / v.sum());
    };
    Vec pi0 = random_law(), piT = random_law();
    dsb::Generator g(q);

    auto sb = dsb::discrete_sb_exact(g, pi0, piT, T);
    io::write_rate_matrix_json(ctx.file("rates.json", "rate_matrix"), q);
    io::write_matrix_csv(ctx.file("sb_coupling.csv", "coupling"), sb.coupling(), "target");
    const std::size_t nm = p.count("n_marginal_times");
    if (nm < 2) throw UsageError("n_marginal_times must be at least 2");
    io::CsvTable marg{{"t"}, {}};
    for (std::size_t x = 0; x < n; ++x) marg.header.push_back("p" + std::to_string(x));
    for (std::size_t k = 0; k < nm; ++k) {
        double t = T * double(k) / double(nm - 1);
        Vec m = sb.marginal(t);
        std::vector<double> row{t};
        row.insert(row.end(), m.data(), m.data() + m.size());
        marg.rows.push_back(row);
    }
    io::write_csv(ctx.file("sb_marginals.csv", "marginals"), marg);

    dsb::DdsbmConfig cfg;
    const auto& mode = p.str("mode");
    if (mode == "exact") cfg.mode = dsb::DdsbmMode::Exact;
    else if (mode == "sampled") cfg.mode = dsb::DdsbmMode::Sampled;
    else throw UsageError("mode must be 'exact' or 'sampled'");
    cfg.n_paths = p.count("n_paths");
    auto d = dsb::ddsbm_run(g, pi0, piT, T, p.count("n_iters"), cfg, derive_seed(seed, stream_id("discrete-sb/ddsbm")));
    io::CsvTable rep{{"iteration", "forward_kl_to_sb", "kl_to_sb", "tv_to_sb"}, {}};
    for (const auto& it : d.report)
        rep.rows.push_back({double(it.iteration), it.forward_kl_to_sb, it.kl_to_sb, it.tv_to_sb});
    io::write_csv(ctx.file("ddsbm_report.csv", "data"), rep);
    io::write_matrix_csv(ctx.file("ddsbm_coupling.csv", "coupling"), d.coupling, "target");

    write_json(ctx.file("report.json", "report"),
               {{"n_states", n},
                {"source", std::vector<double>(pi0.data(), pi0.data() + pi0.size())},
                {"target", std::vector<double>(piT.data(), piT.data() + piT.size())},
                {"sb_kl_to_reference", sb.kl_to_reference},
                {"sinkhorn_iterations", sb.report.iterations_used},
                {"ddsbm_mode", mode},
                {"ddsbm_final_kl_to_sb", d.report.empty() ? 0.0 : d.report.back().kl_to_sb}});
}

}  // namespace

const std::vector<Experiment>& experiments() {
    static const std::vector<Experiment> all = [] {
        std::vector<Experiment> v;
        v.push_back({"sinkhorn",
                     "entropic OT by Sinkhorn; coupling, potentials, dual and marginal traces",
                     false,
                     {{"epsilon", 1.0, "entropic weight"},
                      {"max_iters", std::int64_t(10000), "iteration cap"},
                      {"marginal_tol", 1e-9, "TV stopping tolerance"},
                      {"log_domain", true, "log-domain updates"},
                      {"source_csv", std::string(), "source measure CSV (coords..., weight); default 2-point instance"},
                      {"target_csv", std::string(), "target measure CSV"}},
                     run_sinkhorn});
        auto gb = gaussian_endpoint_params();
        gb.push_back({"n_times", std::int64_t(101), "time grid size"});
        gb.push_back({"n_x", std::int64_t(81), "drift field space grid size"});
        gb.push_back({"x_lo", -4.0, "drift grid lower bound"});
        gb.push_back({"x_hi", 4.0, "drift grid upper bound"});
        v.push_back({"gaussian-bridge", "closed-form Gaussian bridge moments, drift field and schedule", false, gb,
                     run_gaussian_bridge});
        auto bm = gaussian_endpoint_params();
        bm.push_back({"n_samples", std::int64_t(100000), "samples per time"});
        bm.push_back({"times", std::string("0.25,0.5,0.75"), "comma-separated interior times"});
        bm.push_back({"bins", std::int64_t(60), "histogram bins"});
        v.push_back({"bridge-mixture", "marginal histograms of a bridge mixture over the Gaussian entropic coupling",
                     true, bm, run_bridge_mixture});
        v.push_back({"soc-grid",
                     "quadratic terminal cost: grid HJB, Feynman-Kac values and loss comparison",
                     true,
                     {{"curvature", 1.0, "terminal cost curvature a in a x^2 / 2"},
                      {"sigma", 1.0, "diffusion coefficient"},
                      {"horizon", 1.0, "time horizon T"},
                      {"x0", 0.0, "initial state for the loss comparison"},
                      {"x_lo", -3.0, "grid lower bound"},
                      {"x_hi", 3.0, "grid upper bound"},
                      {"n_x", std::int64_t(61), "space nodes"},
                      {"n_times", std::int64_t(51), "time nodes"},
                      {"n_mc", std::int64_t(2048), "Feynman-Kac samples per node"},
                      {"n_paths", std::int64_t(4000), "paths per loss estimate"},
                      {"n_steps", std::int64_t(100), "Euler steps per path"}},
                     run_soc_grid});
        auto im = gaussian_endpoint_params();
        im.push_back({"n_iters", std::int64_t(6), "fitting iterations"});
        im.push_back({"n_pairs", std::int64_t(5000), "coupling samples"});
        im.push_back({"n_t_per_pair", std::int64_t(20), "regression times per pair"});
        im.push_back({"n_steps", std::int64_t(100), "Euler steps per simulation"});
        im.push_back({"n_centers", std::int64_t(32), "radial centers"});
        im.push_back({"n_time_bins", std::int64_t(16), "time bins"});
        im.push_back({"ridge", 1e-6, "ridge penalty"});
        v.push_back({"imf", "iterative Markovian fitting between two Gaussians, per-iteration report", true, im, run_imf});
        v.push_back({"discrete-sb",
                     "exact CTMC bridge and discrete iterative fitting report",
                     true,
                     {{"n_states", std::int64_t(5), "states of the random instance"},
                      {"rate_lo", 0.05, "smallest off-diagonal rate"},
                      {"rate_hi", 0.3, "largest off-diagonal rate"},
                      {"rates_file", std::string(), "rate matrix file (JSON or CSV) instead of a random instance"},
                      {"horizon", 1.0, "time horizon T"},
                      {"n_iters", std::int64_t(10), "fitting iterations"},
                      {"mode", std::string("exact"), "exact or sampled"},
                      {"n_paths", std::int64_t(10000), "paths per sampled iteration"},
                      {"n_marginal_times", std::int64_t(11), "marginal output times"}},
                     run_discrete_sb});
        return v;
    }();
    return all;
}

}  // namespace bridgekit::cli
