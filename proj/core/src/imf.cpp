#include "bridgekit/imf.hpp"

#include "bridgekit/parallel.hpp"
#include "bridgekit/random.hpp"
#include "bridgekit/stats.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <memory>

namespace bridgekit::imf {

Mat draw_samples(const paths::InitSampler& sampler, std::size_t dim, std::size_t n, std::uint64_t seed) {
    Mat out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    parallel_for(n, [&](std::size_t i) {
        RandomStream rng(seed, i);
        std::vector<double> x(dim);
        sampler(rng, x);
        for (std::size_t c = 0; c < dim; ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = x[c];
    });
    return out;
}

RegressionDataset make_regression_dataset(const PairSamples& pairs, double sigma, double T, std::size_t n_t,
                                          std::uint64_t seed, double t_clip_fraction) {
    require(pairs.x0.rows() == pairs.xT.rows() && pairs.x0.cols() == pairs.xT.cols(), "pair arrays must match");
    require(pairs.size() >= 1 && n_t >= 1, "dataset needs pairs and time draws");
    require(sigma > 0.0 && T > 0.0, "sigma and horizon must be positive");
    require(t_clip_fraction > 0.0 && t_clip_fraction < 1.0, "clip fraction must lie in (0, 1)");
    const std::size_t n = pairs.size(), d = std::size_t(pairs.x0.cols()), total = n * n_t;
    RegressionDataset ds;
    ds.horizon = T;
    ds.t.resize(total);
    ds.x.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
    ds.target.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
    const double tmax = T * (1.0 - t_clip_fraction);
    parallel_for(n, [&](std::size_t i) {
        RandomStream rng(seed, i);
        const Vec a = pairs.x0.row(static_cast<Eigen::Index>(i)).transpose(), b = pairs.xT.row(static_cast<Eigen::Index>(i)).transpose();
        for (std::size_t j = 0; j < n_t; ++j) {
            const std::size_t r = i * n_t + j;
            double t = rng.uniform() * tmax;
            Vec x = a;
            if (t > 0.0) {
                const auto s = paths::brownian_bridge_stats(a, b, t, T, sigma, a);
                const double sd = std::sqrt(s.variance);
                for (Eigen::Index c = 0; c < x.size(); ++c) x[c] = s.mean[c] + sd * rng.normal();
            } else {
                t = 0.0;
            }
            ds.t[r] = t;
            ds.x.row(static_cast<Eigen::Index>(r)) = x.transpose();
            ds.target.row(static_cast<Eigen::Index>(r)) = ((b - x) / (sigma * (T - t))).transpose();
        }
    });
    return ds;
}

std::size_t DriftModel::bin_of(double t) const {
    const std::size_t nb = weights.size();
    const double u = std::clamp(t / horizon, 0.0, 1.0);
    return std::min<std::size_t>(std::size_t(u * double(nb)), nb - 1);
}

void DriftModel::features(std::span<const double> x, std::span<double> out) const {
    out[0] = 1.0;
    for (std::size_t c = 0; c < dim; ++c) out[1 + c] = x[c];
    const double inv = 0.5 / (bandwidth * bandwidth);
    for (Eigen::Index k = 0; k < centers.rows(); ++k) {
        double r2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double dx = x[c] - centers(k, static_cast<Eigen::Index>(c));
            r2 += dx * dx;
        }
        out[1 + dim + std::size_t(k)] = std::exp(-r2 * inv);
    }
}

void DriftModel::evaluate(std::span<const double> x, double t, std::span<double> out) const {
    thread_local std::vector<double> f;
    f.resize(n_features());
    features(x, f);
    const Mat& w = weights[bin_of(t)];
    for (std::size_t c = 0; c < dim; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) s += f[k] * w(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
        out[c] = s;
    }
}

Vec DriftModel::operator()(const Vec& x, double t) const {
    Vec out(x.size());
    evaluate({x.data(), std::size_t(x.size())}, t, {out.data(), std::size_t(out.size())});
    return out;
}

VectorField DriftModel::field() const {
    auto self = std::make_shared<const DriftModel>(*this);
    return [self](std::span<const double> x, double t, std::span<double> out) { self->evaluate(x, t, out); };
}

DriftModel markov_projection_fit(const RegressionDataset& data, const ModelConfig& config) {
    const std::size_t n = data.t.size();
    require(n >= 1 && std::size_t(data.x.rows()) == n && data.target.rows() == data.x.rows(), "dataset arrays must match");
    require(config.n_time_bins >= 1 && config.ridge >= 0.0, "model needs time bins and a nonnegative ridge");
    DriftModel m;
    m.horizon = data.horizon;
    m.dim = std::size_t(data.x.cols());
    const std::size_t d = m.dim, K = config.n_centers;
    for (std::size_t b = 0; b <= config.n_time_bins; ++b) m.bin_edges.push_back(m.horizon * double(b) / double(config.n_time_bins));

    m.centers.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d));
    if (K > 0) {
        if (d == 1) {
            std::vector<double> xs(data.x.data(), data.x.data() + n);
            std::sort(xs.begin(), xs.end());
            const double lo = xs[std::size_t(0.005 * double(n - 1))], hi = xs[std::size_t(0.995 * double(n - 1))];
            for (std::size_t k = 0; k < K; ++k)
                m.centers(static_cast<Eigen::Index>(k), 0) = K == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * double(k) / double(K - 1);
            const double spacing = K == 1 ? 0.5 * (hi - lo) : (hi - lo) / double(K - 1);
            m.bandwidth = std::max(1e-6, config.bandwidth_scale * spacing);
        } else {
            for (std::size_t k = 0; k < K; ++k) m.centers.row(static_cast<Eigen::Index>(k)) = data.x.row(static_cast<Eigen::Index>(k * n / K));
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                double best = kInf;
                for (std::size_t j = 0; j < K; ++j)
                    if (j != k) best = std::min(best, (m.centers.row(static_cast<Eigen::Index>(k)) - m.centers.row(static_cast<Eigen::Index>(j))).norm());
                acc += std::isfinite(best) ? best : 1.0;
            }
            m.bandwidth = std::max(1e-6, config.bandwidth_scale * acc / double(K));
        }
    }

    const std::size_t nb = config.n_time_bins, p = m.n_features();
    m.weights.assign(nb, Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(d)));
    std::vector<std::vector<std::size_t>> members(nb);
    for (std::size_t i = 0; i < n; ++i) members[m.bin_of(data.t[i])].push_back(i);
    for (std::size_t b = 0; b < nb; ++b)
        if (members[b].size() < 10) throw NumericalFault("time bin " + std::to_string(b) + " has fewer than 10 samples");

    std::vector<char> fallback(nb, 0);
    parallel_for(nb, [&](std::size_t b) {
        const auto& idx = members[b];
        Mat phi(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(p));
        Mat y(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(d));
        std::vector<double> f(p);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const Vec xr = data.x.row(static_cast<Eigen::Index>(idx[r])).transpose();
            m.features({xr.data(), d}, f);
            for (std::size_t k = 0; k < p; ++k) phi(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = f[k];
            y.row(static_cast<Eigen::Index>(r)) = data.target.row(static_cast<Eigen::Index>(idx[r]));
        }
        const double inv_n = 1.0 / double(idx.size());
        Mat a = Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
        a.selfadjointView<Eigen::Lower>().rankUpdate(phi.transpose(), inv_n);
        a = a.selfadjointView<Eigen::Lower>();
        const Mat rhs = phi.transpose() * y * inv_n;
        double lambda = config.ridge;
        for (int attempt = 0; attempt < 12; ++attempt) {
            Mat reg = a + lambda * Mat::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
            Eigen::SelfAdjointEigenSolver<Mat> es(reg);
            const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
            if (lmin > 1e-13 * lmax) {
                m.weights[b] = es.eigenvectors() *
                               (es.eigenvectors().transpose() * rhs).cwiseQuotient(es.eigenvalues().replicate(1, static_cast<Eigen::Index>(d)));
                if (attempt > 0) fallback[b] = 1;
                return;
            }
            lambda = std::max(lambda * 1e3, 1e-10 * std::max(1.0, lmax));
        }
        throw NumericalFault("regression in time bin " + std::to_string(b) + " stayed singular");
    });
    for (char f : fallback) m.ridge_fallback = m.ridge_fallback || f;
    for (const auto& w : m.weights) ensure_finite(w, "drift model weights");
    return m;
}

namespace {

paths::PathEnsemble run_model(const DriftModel& model, const paths::InitSampler& start, std::size_t n,
                              std::size_t n_steps, double sigma, std::uint64_t seed, std::size_t stride) {
    paths::SdeSpec spec{{}, model.field(), [sigma](double) { return sigma; }, model.horizon, model.dim};
    paths::SimulationOptions opt;
    opt.retain_increments = false;
    opt.record_stride = stride;
    return paths::simulate_sde(spec, start, n, n_steps, seed, opt);
}

PairSamples endpoints(const paths::PathEnsemble& ens, Direction dir) {
    Mat a = ens.marginal(0), b = ens.marginal(ens.n_times() - 1);
    if (dir == Direction::Forward) return {std::move(a), std::move(b)};
    return {std::move(b), std::move(a)};
}

Mat cross_cov(const PairSamples& s) {
    Mat a = s.x0.rowwise() - s.x0.colwise().mean();
    Mat b = s.xT.rowwise() - s.xT.colwise().mean();
    return a.transpose() * b / double(s.size() - 1);
}

Mat stacked(const PairSamples& s, const std::vector<std::size_t>& idx) {
    const Eigen::Index d = s.x0.cols();
    Mat m(static_cast<Eigen::Index>(idx.size()), 2 * d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        m.row(static_cast<Eigen::Index>(r)).head(d) = s.x0.row(static_cast<Eigen::Index>(idx[r]));
        m.row(static_cast<Eigen::Index>(r)).tail(d) = s.xT.row(static_cast<Eigen::Index>(idx[r]));
    }
    return m;
}

double moment_kl(const PairSamples& p, const std::vector<std::size_t>& ip, const PairSamples& q,
                 const std::vector<std::size_t>& iq) {
    auto a = stats::fit_gaussian(stacked(p, ip));
    auto b = stats::fit_gaussian(stacked(q, iq));
    return stats::gaussian_kl(a.mean, a.cov, b.mean, b.cov);
}

McEstimate coupling_kl(const PairSamples& p, const PairSamples& q, std::size_t boots, std::uint64_t seed) {
    std::vector<std::size_t> ip(p.size()), iq(q.size());
    for (std::size_t i = 0; i < ip.size(); ++i) ip[i] = i;
    for (std::size_t i = 0; i < iq.size(); ++i) iq[i] = i;
    const double value = moment_kl(p, ip, q, iq);
    RandomStream rng(seed, stream_id("kl-bootstrap"));
    std::vector<double> reps;
    for (std::size_t b = 0; b < boots; ++b) {
        for (auto& i : ip) i = rng.index(p.size());
        for (auto& i : iq) i = rng.index(q.size());
        reps.push_back(moment_kl(p, ip, q, iq));
    }
    double se = 0.0;
    if (reps.size() > 1) {
        double m = 0.0;
        for (double r : reps) m += r;
        m /= double(reps.size());
        for (double r : reps) se += (r - m) * (r - m);
        se = std::sqrt(se / double(reps.size() - 1));
    }
    return {value, se, p.size()};
}

double regression_mse(const DriftModel& m, const RegressionDataset& ds) {
    const std::size_t n = ds.t.size(), d = m.dim;
    std::vector<double> err(n);
    parallel_for(n, [&](std::size_t i) {
        Vec x = ds.x.row(static_cast<Eigen::Index>(i)).transpose();
        Vec u = m(x, ds.t[i]);
        err[i] = (u - ds.target.row(static_cast<Eigen::Index>(i)).transpose()).squaredNorm() / double(d);
    });
    double s = 0.0;
    for (double e : err) s += e;
    return s / double(n);
}

}  // namespace

PairSamples reciprocal_projection(const DriftModel& model, const paths::InitSampler& start, Direction direction,
                                  std::size_t n, std::size_t n_steps, double sigma, std::uint64_t seed) {
    require(sigma > 0.0, "sigma must be positive");
    return endpoints(run_model(model, start, n, n_steps, sigma, seed, n_steps), direction);
}

ImfResult imf_run(const paths::InitSampler& pi0, const paths::InitSampler& piT, std::size_t dim, double sigma,
                  double T, std::size_t n_iters, const ImfConfig& cfg, std::uint64_t seed,
                  const std::optional<ImfOracle>& oracle) {
    require(pi0 && piT, "IMF needs both endpoint samplers");
    require(sigma > 0.0 && T > 0.0 && dim >= 1, "IMF needs positive sigma, horizon and dimension");
    require(cfg.n_steps >= 2 && cfg.n_steps % 2 == 0, "IMF needs an even number of steps");
    ImfResult res;
    auto sub = [&](const char* name, std::size_t it) { return derive_seed(seed, stream_id(name) + it); };
    if (cfg.initial_coupling) {
        res.state.coupling = *cfg.initial_coupling;
    } else {
        res.state.coupling = {draw_samples(pi0, dim, cfg.n_pairs, sub("init-source", 0)),
                              draw_samples(piT, dim, cfg.n_pairs, sub("init-target", 0))};
    }
    std::size_t rising = 0;
    for (std::size_t it = 1; it <= n_iters; ++it) {
        ImfIteration rep;
        rep.iteration = it;
        const PairSamples previous = res.state.coupling;

        // forward Markovian projection of the current coupling, then its endpoint law
        auto ds = make_regression_dataset(previous, sigma, T, cfg.n_t_per_pair, sub("forward-data", it), cfg.t_clip_fraction);
        DriftModel fwd = markov_projection_fit(ds, cfg.model);
        rep.regression_loss = regression_mse(fwd, ds);
        auto ens = run_model(fwd, pi0, cfg.n_pairs, cfg.n_steps, sigma, sub("forward-sim", it), cfg.n_steps / 2);
        PairSamples fpairs{ens.marginal(0), ens.marginal(2)};

        // marginal preservation at T/2 against the bridge mixture of the projected coupling
        {
            const std::size_t m = std::min(cfg.marginal_test_samples, cfg.n_pairs);
            Mat model_mid = ens.marginal(1).topRows(static_cast<Eigen::Index>(m));
            Mat mix(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
            RandomStream rng(sub("mixture", it), 0);
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t i = rng.index(previous.size());
                for (std::size_t c = 0; c < dim; ++c)
                    mix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        0.5 * (previous.x0(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) + previous.xT(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c))) +
                        sigma * std::sqrt(0.25 * T) * rng.normal();
            }
            rep.marginal_pvalue = stats::energy_test(model_mid, mix, cfg.permutations, sub("energy", it)).p_value;
        }

        // reverse Markovian projection from the target side
        PairSamples swapped{fpairs.xT, fpairs.x0};
        auto rds = make_regression_dataset(swapped, sigma, T, cfg.n_t_per_pair, sub("reverse-data", it), cfg.t_clip_fraction);
        DriftModel rev = markov_projection_fit(rds, cfg.model);
        res.state.coupling = reciprocal_projection(rev, piT, Direction::Reverse, cfg.n_pairs, cfg.n_steps, sigma, sub("reverse-sim", it));

        rep.coupling_kl = coupling_kl(previous, res.state.coupling, cfg.bootstrap, sub("bootstrap", it));
        rep.cross_covariance = cross_cov(res.state.coupling);
        rep.ridge_fallback = fwd.ridge_fallback || rev.ridge_fallback;
        if (oracle) {
            double s = 0.0;
            for (const auto& [x, t] : oracle->eval_points) s += (fwd(x, t) - oracle->control(x, t)).squaredNorm() / double(dim);
            rep.drift_rmse = std::sqrt(s / double(std::max<std::size_t>(1, oracle->eval_points.size())));
        }
        if (!res.report.empty()) {
            const auto& prev = res.report.back().coupling_kl;
            const double tol = 3.0 * std::hypot(prev.std_error, rep.coupling_kl.std_error);
            rising = rep.coupling_kl.value > prev.value + tol ? rising + 1 : 0;
            if (rising >= 3) res.kl_increase_warning = true;
        }
        res.state.forward_model = std::move(fwd);
        res.state.reverse_model = std::move(rev);
        res.state.iteration = it;
        res.report.push_back(std::move(rep));
    }
    return res;
}

}  // namespace bridgekit::imf
