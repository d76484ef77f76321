#include "bridgekit/soc.hpp"

#include "bridgekit/parallel.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <memory>
#include <sstream>

namespace bridgekit::soc {

void SocProblem::validate() const {
    require(static_cast<bool>(sigma_of_t), "problem needs a diffusion coefficient");
    require(static_cast<bool>(terminal_cost), "problem needs a terminal cost");
    require(horizon > 0.0, "horizon must be positive");
    require(dim >= 1, "dimension must be positive");
}

paths::SdeSpec SocProblem::sde(VectorField control) const {
    return {ref_drift, std::move(control), sigma_of_t, horizon, dim};
}

std::size_t SpaceGrid::size() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.n;
    return n;
}

Vec SpaceGrid::node(std::size_t flat) const {
    Vec x(Eigen::Index(axes.size()));
    for (std::size_t a = axes.size(); a-- > 0;) {
        x[Eigen::Index(a)] = axes[a].node(flat % axes[a].n);
        flat /= axes[a].n;
    }
    return x;
}

void SpaceGrid::validate() const {
    require(axes.size() == 1 || axes.size() == 2, "space grid must be 1-D or 2-D");
    for (const auto& a : axes) require(a.n >= 3 && a.hi > a.lo, "each axis needs at least 3 nodes and hi > lo");
}

std::vector<double> uniform_times(double horizon, std::size_t n_times) {
    require(n_times >= 2, "time grid needs at least two nodes");
    std::vector<double> t(n_times);
    for (std::size_t k = 0; k < n_times; ++k) t[k] = k + 1 == n_times ? horizon : horizon * double(k) / double(n_times - 1);
    return t;
}

namespace {

// cell index and fractional offset along an axis, clamped to the axis
std::pair<std::size_t, double> locate(const Axis& a, double x) {
    const double u = std::clamp((x - a.lo) / a.step(), 0.0, double(a.n - 1));
    std::size_t i = std::min<std::size_t>(std::size_t(u), a.n - 2);
    return {i, u - double(i)};
}

std::pair<std::size_t, double> locate_time(const std::vector<double>& times, double t) {
    if (t <= times.front()) return {0, 0.0};
    if (t >= times.back()) return {times.size() - 2, 1.0};
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t i = std::size_t(it - times.begin()) - 1;
    i = std::min(i, times.size() - 2);
    return {i, (t - times[i]) / (times[i + 1] - times[i])};
}

double normal_quantile(double p) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }

}  // namespace

double ValueGrid::value_at(std::size_t k, std::span<const double> x) const {
    require(x.size() == space.dim(), "query dimension must match the grid");
    const std::size_t d = space.dim();
    std::vector<std::pair<std::size_t, double>> loc(d);
    for (std::size_t a = 0; a < d; ++a) loc[a] = locate(space.axes[a], x[a]);
    double v = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t(1) << d); ++corner) {
        double w = 1.0;
        std::size_t flat = 0;
        for (std::size_t a = 0; a < d; ++a) {
            const bool up = (corner >> a) & 1;
            w *= up ? loc[a].second : 1.0 - loc[a].second;
            flat = flat * space.axes[a].n + loc[a].first + (up ? 1 : 0);
        }
        if (w != 0.0) v += w * values(Eigen::Index(k), Eigen::Index(flat));
    }
    return v;
}

ValueGrid feynman_kac_value(const SocProblem& problem, const SpaceGrid& space, std::size_t n_times, std::size_t n_mc,
                            std::uint64_t seed, const FeynmanKacOptions& options) {
    problem.validate();
    space.validate();
    require(space.dim() == problem.dim, "grid dimension must match the problem");
    require(n_mc >= 2, "Monte Carlo needs at least two samples per node");
    const std::size_t d = problem.dim, nn = space.size();
    ValueGrid out;
    out.space = space;
    out.times = uniform_times(problem.horizon, n_times);
    out.values = Mat::Zero(Eigen::Index(n_times), Eigen::Index(nn));
    out.std_error = Mat::Zero(Eigen::Index(n_times), Eigen::Index(nn));
    const std::size_t K = n_times - 1;
    const double dt = problem.horizon / double(K);

    std::vector<Vec> nodes(nn);
    for (std::size_t i = 0; i < nn; ++i) nodes[i] = space.node(i);
    for (std::size_t i = 0; i < nn; ++i)
        out.values(Eigen::Index(K), Eigen::Index(i)) = problem.terminal_cost({nodes[i].data(), d});

    const bool exact = !problem.ref_drift && !problem.running_cost;
    const bool stratified = exact && d == 1 && options.stratify;
    std::vector<std::string> faults(nn);

    for (std::size_t k = 0; k < K; ++k) {
        const double t = out.times[k];
        RandomStream rng(seed, k);
        const std::size_t steps = K - k;
        // common random numbers across nodes at one time level
        std::vector<double> noise;
        std::size_t per_sample = 0;
        double spread = 0.0;
        if (exact) {
            per_sample = d;
            spread = std::sqrt(simpson([&](double s) { const double v = problem.sigma_of_t(s); return v * v; }, t,
                                       problem.horizon, 256));
            noise.resize(n_mc * d);
            if (stratified) {
                const std::size_t strata = n_mc / 2;
                for (std::size_t j = 0; j < strata; ++j)
                    for (std::size_t r = 0; r < 2; ++r) {
                        const double u = (double(j) + rng.uniform()) / double(strata);
                        noise[2 * j + r] = normal_quantile(std::clamp(u, 1e-300, 1.0 - 1e-16));
                    }
            } else {
                for (double& z : noise) z = rng.normal();
            }
        } else {
            per_sample = steps * d;
            noise.resize(n_mc * per_sample);
            for (double& z : noise) z = rng.normal() * std::sqrt(dt);
        }
        const std::size_t used = stratified ? 2 * (n_mc / 2) : n_mc;

        parallel_for(nn, [&](std::size_t i) {
            std::vector<double> logs(used), x(d), f(d, 0.0);
            for (std::size_t m = 0; m < used; ++m) {
                const double* z = noise.data() + m * per_sample;
                double g = 0.0;
                if (exact) {
                    for (std::size_t c = 0; c < d; ++c) x[c] = nodes[i][Eigen::Index(c)] + spread * z[c];
                } else {
                    for (std::size_t c = 0; c < d; ++c) x[c] = nodes[i][Eigen::Index(c)];
                    for (std::size_t s = 0; s < steps; ++s) {
                        const double ts = out.times[k + s];
                        if (problem.running_cost) g += problem.running_cost(x, ts) * dt;
                        const double sg = problem.sigma_of_t(ts);
                        if (problem.ref_drift) problem.ref_drift(x, ts, f);
                        for (std::size_t c = 0; c < d; ++c) x[c] += f[c] * dt + sg * z[s * d + c];
                    }
                }
                g += problem.terminal_cost(x);
                logs[m] = -g;
            }
            const double top = *std::max_element(logs.begin(), logs.end());
            if (!std::isfinite(top)) {
                faults[i] = "Feynman-Kac estimate is not finite at node " + std::to_string(i);
                return;
            }
            std::vector<double> e(used);
            for (std::size_t m = 0; m < used; ++m) e[m] = std::exp(logs[m] - top);
            double mean = 0.0;
            for (double v : e) mean += v;
            mean /= double(used);
            double var_mean = 0.0;
            if (stratified) {
                const std::size_t strata = used / 2;
                for (std::size_t j = 0; j < strata; ++j) {
                    const double diff = e[2 * j] - e[2 * j + 1];
                    var_mean += diff * diff / 4.0;
                }
                var_mean /= double(strata) * double(strata);
            } else {
                double ss = 0.0;
                for (double v : e) ss += (v - mean) * (v - mean);
                var_mean = ss / double(used - 1) / double(used);
            }
            out.values(Eigen::Index(k), Eigen::Index(i)) = -(top + std::log(mean));
            out.std_error(Eigen::Index(k), Eigen::Index(i)) = std::sqrt(var_mean) / mean;
        });
        for (const auto& f : faults)
            if (!f.empty()) throw NumericalFault(f);
    }
    ensure_finite(out.values, "Feynman-Kac value grid");
    return out;
}

ValueGrid hjb_solve_grid(const SocProblem& problem, const SpaceGrid& space, std::size_t n_times,
                         const HjbOptions& options) {
    problem.validate();
    space.validate();
    require(space.dim() == problem.dim, "grid dimension must match the problem");
    require(options.theta >= 0.5 && options.theta <= 1.0, "theta must lie in [0.5, 1]");
    require(options.substeps >= 1, "substeps must be positive");
    const std::size_t d = space.dim();
    const double T = problem.horizon;

    double smax = 0.0, smin = kInf;
    for (int j = 0; j <= 64; ++j) {
        const double s = problem.sigma_of_t(T * j / 64.0);
        smax = std::max(smax, s);
        smin = std::min(smin, s);
    }
    require(smin > 0.0, "diffusion must be bounded away from zero");

    // padded computational grid with the same spacing
    SpaceGrid comp;
    std::vector<std::size_t> pad(d);
    for (std::size_t a = 0; a < d; ++a) {
        const Axis& ax = space.axes[a];
        const double h = ax.step();
        pad[a] = std::size_t(std::ceil(options.padding_sd * smax * std::sqrt(T) / h));
        comp.axes.push_back({ax.lo - double(pad[a]) * h, ax.hi + double(pad[a]) * h, ax.n + 2 * pad[a]});
    }
    const std::size_t N = comp.size();
    std::vector<Vec> nodes(N);
    for (std::size_t i = 0; i < N; ++i) nodes[i] = comp.node(i);
    std::vector<std::size_t> strides(d, 1);
    for (std::size_t a = d - 1; a-- > 0;) strides[a] = strides[a + 1] * comp.axes[a + 1].n;

    Vec phi(static_cast<Eigen::Index>(N));
    Vec term(static_cast<Eigen::Index>(N));
    for (std::size_t i = 0; i < N; ++i) term[Eigen::Index(i)] = problem.terminal_cost({nodes[i].data(), d});
    ensure_finite(term, "terminal cost on the grid");
    const double shift = term.minCoeff();
    for (std::size_t i = 0; i < N; ++i) phi[Eigen::Index(i)] = std::exp(-(term[Eigen::Index(i)] - shift));

    auto build = [&](double t) {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(N * (1 + 2 * d));
        const double s = problem.sigma_of_t(t);
        std::vector<double> f(d, 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            if (problem.ref_drift) problem.ref_drift({nodes[i].data(), d}, t, f);
            double diag = problem.running_cost ? -problem.running_cost({nodes[i].data(), d}, t) : 0.0;
            std::size_t rem = i;
            for (std::size_t a = 0; a < d; ++a) {
                const std::size_t idx = (rem / strides[a]) % comp.axes[a].n;
                const double h = comp.axes[a].step();
                const double diff = 0.5 * s * s / (h * h);
                const double adv = f[a] / (2.0 * h);
                diag -= 2.0 * diff;
                const std::size_t n = comp.axes[a].n;
                // reflecting ghost nodes at the far boundary
                const std::size_t lo = idx == 0 ? i + strides[a] : i - strides[a];
                const std::size_t hi = idx == n - 1 ? i - strides[a] : i + strides[a];
                const bool edge = idx == 0 || idx == n - 1;
                trip.emplace_back(Eigen::Index(i), Eigen::Index(lo), diff - (edge ? 0.0 : adv));
                trip.emplace_back(Eigen::Index(i), Eigen::Index(hi), diff + (edge ? 0.0 : adv));
            }
            trip.emplace_back(Eigen::Index(i), Eigen::Index(i), diag);
        }
        Eigen::SparseMatrix<double> L(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
        L.setFromTriplets(trip.begin(), trip.end());
        return L;
    };

    ValueGrid out;
    out.space = space;
    out.times = uniform_times(T, n_times);
    out.values = Mat::Zero(Eigen::Index(n_times), Eigen::Index(space.size()));

    // map requested nodes into the padded grid
    std::vector<std::size_t> inner(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        std::size_t rem = i, flat = 0;
        std::vector<std::size_t> idx(d);
        for (std::size_t a = d; a-- > 0;) {
            idx[a] = rem % space.axes[a].n;
            rem /= space.axes[a].n;
        }
        for (std::size_t a = 0; a < d; ++a) flat += (idx[a] + pad[a]) * strides[a];
        inner[i] = flat;
    }
    auto record = [&](std::size_t k) {
        for (std::size_t i = 0; i < space.size(); ++i) {
            const double p = phi[Eigen::Index(inner[i])];
            if (!(p > 0.0) || !std::isfinite(p)) {
                std::ostringstream os;
                os << "potential is nonpositive at node " << i << " and time index " << k;
                throw NumericalFault(os.str());
            }
            out.values(Eigen::Index(k), Eigen::Index(i)) = -std::log(p) + shift;
        }
    };
    const std::size_t K = n_times - 1;
    for (std::size_t i = 0; i < space.size(); ++i)
        out.values(Eigen::Index(K), Eigen::Index(i)) = problem.terminal_cost({nodes[inner[i]].data(), d});

    const std::size_t M = K * options.substeps;
    const double dt = T / double(M);
    Eigen::SparseMatrix<double> eye(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    eye.setIdentity();
    Eigen::SparseMatrix<double> Lnext = build(T);
    for (std::size_t m = M; m-- > 0;) {
        const double t = T * double(m) / double(M);
        Eigen::SparseMatrix<double> Lnow = build(t);
        Eigen::SparseMatrix<double> lhs = eye - options.theta * dt * Lnow;
        Vec rhs = phi + (1.0 - options.theta) * dt * (Lnext * phi);
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(lhs);
        if (lu.info() != Eigen::Success) throw NumericalFault("HJB step matrix is singular");
        phi = lu.solve(rhs);
        ensure_finite(phi, "HJB potential");
        Lnext = std::move(Lnow);
        if (m % options.substeps == 0) record(m / options.substeps);
    }
    return out;
}

ParamControl ParamControl::tabular(SpaceGrid space, std::vector<double> times) {
    space.validate();
    require(times.size() >= 2 && std::is_sorted(times.begin(), times.end()), "control times must be increasing");
    ParamControl c;
    c.kind_ = Kind::Tabular;
    c.out_dim_ = space.dim();
    c.space_ = std::move(space);
    c.times_ = std::move(times);
    c.params_ = Vec::Zero(Eigen::Index(c.n_params()));
    return c;
}

ParamControl ParamControl::radial(Mat centers, double bandwidth, std::size_t time_bins, double horizon) {
    require(centers.rows() >= 1 && centers.cols() >= 1, "radial control needs centers");
    require(bandwidth > 0.0 && time_bins >= 1 && horizon > 0.0, "radial control needs positive bandwidth, bins and horizon");
    ParamControl c;
    c.kind_ = Kind::Radial;
    c.out_dim_ = std::size_t(centers.cols());
    c.centers_ = std::move(centers);
    c.bandwidth_ = bandwidth;
    c.bins_ = time_bins;
    c.horizon_ = horizon;
    c.params_ = Vec::Zero(Eigen::Index(c.n_params()));
    return c;
}

std::size_t ParamControl::n_features() const {
    if (kind_ == Kind::Tabular) return space_.size() * times_.size();
    return bins_ * (1 + out_dim_ + std::size_t(centers_.rows()));
}

void ParamControl::features(std::span<const double> x, double t, std::vector<std::pair<std::size_t, double>>& out) const {
    out.clear();
    if (kind_ == Kind::Tabular) {
        const std::size_t d = space_.dim();
        std::pair<std::size_t, double> loc[2];
        for (std::size_t a = 0; a < d; ++a) loc[a] = locate(space_.axes[a], x[a]);
        const auto tl = locate_time(times_, t);
        const std::size_t nn = space_.size();
        for (std::size_t corner = 0; corner < (std::size_t(1) << (d + 1)); ++corner) {
            double w = 1.0;
            std::size_t flat = 0;
            for (std::size_t a = 0; a < d; ++a) {
                const bool up = (corner >> a) & 1;
                w *= up ? loc[a].second : 1.0 - loc[a].second;
                flat = flat * space_.axes[a].n + loc[a].first + (up ? 1 : 0);
            }
            const bool tup = (corner >> d) & 1;
            w *= tup ? tl.second : 1.0 - tl.second;
            if (w != 0.0) out.emplace_back((tl.first + (tup ? 1 : 0)) * nn + flat, w);
        }
        return;
    }
    const std::size_t per = 1 + out_dim_ + std::size_t(centers_.rows());
    const std::size_t b = std::min<std::size_t>(std::size_t(std::max(0.0, t) / horizon_ * double(bins_)), bins_ - 1);
    const std::size_t base = b * per;
    out.emplace_back(base, 1.0);
    for (std::size_t c = 0; c < out_dim_; ++c) out.emplace_back(base + 1 + c, x[c]);
    for (Eigen::Index k = 0; k < centers_.rows(); ++k) {
        double r2 = 0.0;
        for (std::size_t c = 0; c < out_dim_; ++c) {
            const double dx = x[c] - centers_(k, Eigen::Index(c));
            r2 += dx * dx;
        }
        out.emplace_back(base + 1 + out_dim_ + std::size_t(k), std::exp(-0.5 * r2 / (bandwidth_ * bandwidth_)));
    }
}

void ParamControl::evaluate(std::span<const double> x, double t, std::span<double> out) const {
    thread_local std::vector<std::pair<std::size_t, double>> feats;
    features(x, t, feats);
    for (std::size_t c = 0; c < out_dim_; ++c) out[c] = 0.0;
    for (const auto& [f, w] : feats)
        for (std::size_t c = 0; c < out_dim_; ++c) out[c] += w * params_[Eigen::Index(f * out_dim_ + c)];
}

VectorField ParamControl::field() const {
    auto self = std::make_shared<const ParamControl>(*this);
    return [self](std::span<const double> x, double t, std::span<double> out) { self->evaluate(x, t, out); };
}

ParamControl control_from_value(const ValueGrid& value, const ScalarFn& sigma_of_t) {
    ParamControl c = ParamControl::tabular(value.space, value.times);
    const SpaceGrid& g = value.space;
    const std::size_t d = g.dim(), nn = g.size();
    std::vector<std::size_t> strides(d, 1);
    for (std::size_t a = d - 1; a-- > 0;) strides[a] = strides[a + 1] * g.axes[a + 1].n;
    for (std::size_t k = 0; k < value.times.size(); ++k) {
        const double s = sigma_of_t(value.times[k]);
        auto V = [&](std::size_t i) { return value.values(Eigen::Index(k), Eigen::Index(i)); };
        for (std::size_t i = 0; i < nn; ++i) {
            for (std::size_t a = 0; a < d; ++a) {
                const std::size_t idx = (i / strides[a]) % g.axes[a].n, n = g.axes[a].n, st = strides[a];
                const double h = g.axes[a].step();
                double grad;
                if (idx == 0) grad = (-3.0 * V(i) + 4.0 * V(i + st) - V(i + 2 * st)) / (2.0 * h);
                else if (idx == n - 1) grad = (3.0 * V(i) - 4.0 * V(i - st) + V(i - 2 * st)) / (2.0 * h);
                else grad = (V(i + st) - V(i - st)) / (2.0 * h);
                c.params()[Eigen::Index((k * nn + i) * d + a)] = -s * grad;
            }
        }
    }
    return c;
}

StateFn sb_terminal_cost(StateFn phi_hat_T, StateFn target_density) {
    require(phi_hat_T && target_density, "terminal cost needs both functions");
    return [phi_hat_T = std::move(phi_hat_T), target_density = std::move(target_density)](std::span<const double> x) {
        const double a = phi_hat_T(x), b = target_density(x);
        if (!(a > 0.0) || !(b > 0.0)) throw NumericalFault("terminal cost inputs must be positive");
        return std::log(a) - std::log(b);
    };
}

namespace {

struct PathTerms {
    double quad = 0.0;     // 0.5 int |u|^2
    double cross = 0.0;    // int u.v dt
    double stoch = 0.0;    // int u dB
    double running = 0.0;  // int c
    double terminal = 0.0; // Phi(X_T)
};

std::vector<PathTerms> path_terms(const VectorField& u, const VectorField& v, const SocProblem& problem,
                                  const paths::PathEnsemble& ens, bool need_increments) {
    problem.validate();
    require(ens.dim == problem.dim, "ensemble dimension must match the problem");
    if (need_increments && !ens.has_increments()) throw NumericalFault("ensemble lacks retained Brownian increments");
    const std::size_t d = ens.dim, nt = ens.n_times();
    std::vector<PathTerms> out(ens.n_paths);
    parallel_for(ens.n_paths, [&](std::size_t p) {
        std::vector<double> uk(d, 0.0), vk(d, 0.0);
        PathTerms& r = out[p];
        for (std::size_t k = 0; k + 1 < nt; ++k) {
            const double t = ens.grid[k], dt = ens.grid[k + 1] - t;
            auto x = ens.state(p, k);
            if (u) u(x, t, uk);
            if (v) v(x, t, vk);
            if (problem.running_cost) r.running += problem.running_cost(x, t) * dt;
            for (std::size_t c = 0; c < d; ++c) {
                r.quad += 0.5 * uk[c] * uk[c] * dt;
                r.cross += uk[c] * vk[c] * dt;
            }
            if (need_increments) {
                auto db = ens.increment(p, k);
                for (std::size_t c = 0; c < d; ++c) r.stoch += uk[c] * db[c];
            }
        }
        r.terminal = problem.terminal_cost(ens.state(p, nt - 1));
    });
    return out;
}

}  // namespace

McEstimate loss_relative_entropy(const VectorField& control, const SocProblem& problem,
                                 const paths::PathEnsemble& ensemble) {
    auto terms = path_terms(control, {}, problem, ensemble, false);
    std::vector<double> per(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) per[i] = terms[i].quad + terms[i].running + terms[i].terminal;
    auto e = mean_estimate(per);
    ensure_finite(e.value, "relative-entropy loss");
    return e;
}

Vec optimal_log_weights(const SocProblem& problem, const paths::PathEnsemble& ensemble, const VectorField& proposal) {
    auto terms = path_terms(proposal, {}, problem, ensemble, true);
    Vec w(Eigen::Index(terms.size()));
    for (std::size_t i = 0; i < terms.size(); ++i)
        w[Eigen::Index(i)] = -terms[i].terminal - terms[i].running - terms[i].quad - terms[i].stoch;
    ensure_finite(w, "importance log-weights");
    return w;
}

CrossEntropyResult loss_cross_entropy(const VectorField& control, const SocProblem& problem,
                                      const paths::PathEnsemble& ensemble, const VectorField& proposal,
                                      const Vec& log_weights) {
    require(log_weights.size() == Eigen::Index(ensemble.n_paths), "one log-weight per path is required");
    auto terms = path_terms(control, proposal, problem, ensemble, true);
    const double top = log_weights.maxCoeff();
    Vec w = (log_weights.array() - top).exp();
    w /= w.sum();
    double est = 0.0;
    std::vector<double> g(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) {
        g[i] = terms[i].quad - terms[i].cross - terms[i].stoch;
        est += w[Eigen::Index(i)] * g[i];
    }
    double var = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) var += w[Eigen::Index(i)] * w[Eigen::Index(i)] * (g[i] - est) * (g[i] - est);
    CrossEntropyResult r;
    r.loss = {est, std::sqrt(var), terms.size()};
    r.effective_sample_size = 1.0 / w.squaredNorm();
    r.low_ess = r.effective_sample_size < 10.0;
    ensure_finite(est, "cross-entropy loss");
    return r;
}

McEstimate loss_log_variance(const VectorField& control, const SocProblem& problem,
                             const paths::PathEnsemble& ensemble, const VectorField& proposal,
                             const StateFn& initial_offset) {
    if (ensemble.n_paths < 2) throw NumericalFault("log-variance loss needs at least two paths");
    auto terms = path_terms(control, proposal, problem, ensemble, true);
    std::vector<double> y(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) {
        y[i] = terms[i].quad - terms[i].cross - terms[i].stoch - terms[i].running - terms[i].terminal;
        if (initial_offset) y[i] += initial_offset(ensemble.state(i, 0));
    }
    auto e = variance_estimate(y);
    ensure_finite(e.value, "log-variance loss");
    return e;
}

namespace {

// Frozen-ensemble representation of the loss as a function of linear control parameters.
struct FrozenLoss {
    struct Step {
        std::uint32_t first, count;  // into feature arrays
        double dt;
    };
    LossKind kind;
    std::size_t n_paths = 0, d = 1, n_theta = 0, n_offset = 0;
    std::vector<std::size_t> feat_idx;
    std::vector<double> feat_w;
    std::vector<Step> steps;           // n_paths * n_steps
    std::vector<double> drive;         // per step and component: v dt + dB
    std::vector<double> constant;      // per path: -(int c) - Phi (log-variance) or 0
    std::vector<double> weights;       // normalized importance weights (cross-entropy)
    std::vector<std::pair<std::size_t, double>> offset_feats;  // two per path
    std::size_t n_steps = 0;

    // loss value, gradient and Gauss-Newton diagonal
    double eval(const Vec& theta, Vec* grad, Vec* diag) const {
        const std::size_t P = n_theta + n_offset;
        std::vector<double> y(n_paths, 0.0);
        std::vector<Vec> dy;
        const bool want = grad != nullptr;
        if (want) dy.assign(n_paths, Vec());
        parallel_for(n_paths, [&](std::size_t p) {
            Vec g;
            if (want) g = Vec::Zero(Eigen::Index(P));
            double acc = constant[p];
            std::vector<double> u(d);
            for (std::size_t k = 0; k < n_steps; ++k) {
                const Step& s = steps[p * n_steps + k];
                std::fill(u.begin(), u.end(), 0.0);
                for (std::uint32_t j = 0; j < s.count; ++j) {
                    const std::size_t f = feat_idx[s.first + j];
                    for (std::size_t c = 0; c < d; ++c) u[c] += feat_w[s.first + j] * theta[Eigen::Index(f * d + c)];
                }
                const double* dr = drive.data() + (p * n_steps + k) * d;
                for (std::size_t c = 0; c < d; ++c) {
                    acc += 0.5 * u[c] * u[c] * s.dt - u[c] * dr[c];
                    if (want) {
                        const double coef = u[c] * s.dt - dr[c];
                        for (std::uint32_t j = 0; j < s.count; ++j)
                            g[Eigen::Index(feat_idx[s.first + j] * d + c)] += feat_w[s.first + j] * coef;
                    }
                }
            }
            if (n_offset) {
                for (std::size_t j = 0; j < 2; ++j) {
                    const auto& [idx, w] = offset_feats[2 * p + j];
                    acc += w * theta[Eigen::Index(n_theta + idx)];
                    if (want) g[Eigen::Index(n_theta + idx)] += w;
                }
            }
            y[p] = acc;
            if (want) dy[p] = std::move(g);
        });
        double loss = 0.0;
        if (kind == LossKind::LogVariance) {
            double mean = 0.0;
            for (double v : y) mean += v;
            mean /= double(n_paths);
            for (double v : y) loss += (v - mean) * (v - mean);
            loss /= double(n_paths - 1);
            if (want) {
                Vec gbar = Vec::Zero(Eigen::Index(P));
                for (const auto& g : dy) gbar += g;
                gbar /= double(n_paths);
                grad->setZero(Eigen::Index(P));
                if (diag) diag->setZero(Eigen::Index(P));
                for (std::size_t p = 0; p < n_paths; ++p) {
                    Vec c = dy[p] - gbar;
                    *grad += (2.0 * (y[p] - mean) / double(n_paths - 1)) * c;
                    if (diag) *diag += (2.0 / double(n_paths - 1)) * c.cwiseAbs2();
                }
            }
        } else {
            for (std::size_t p = 0; p < n_paths; ++p) loss += weights[p] * y[p];
            if (want) {
                grad->setZero(Eigen::Index(P));
                if (diag) diag->setZero(Eigen::Index(P));
                for (std::size_t p = 0; p < n_paths; ++p) *grad += weights[p] * dy[p];
                if (diag) {
                    // exact Hessian diagonal of the quadratic cross-entropy objective
                    for (std::size_t p = 0; p < n_paths; ++p)
                        for (std::size_t k = 0; k < n_steps; ++k) {
                            const Step& s = steps[p * n_steps + k];
                            for (std::uint32_t j = 0; j < s.count; ++j)
                                for (std::size_t c = 0; c < d; ++c)
                                    (*diag)[Eigen::Index(feat_idx[s.first + j] * d + c)] +=
                                        weights[p] * feat_w[s.first + j] * feat_w[s.first + j] * s.dt;
                        }
                }
            }
        }
        return loss;
    }
};

FrozenLoss freeze(const SocProblem& problem, LossKind kind, const ParamControl& rep, const FitOptions& opt,
                  const paths::PathEnsemble& ens) {
    FrozenLoss fl;
    fl.kind = kind;
    fl.n_paths = ens.n_paths;
    fl.d = ens.dim;
    fl.n_theta = rep.n_params();
    fl.n_steps = ens.n_times() - 1;
    fl.n_offset = (kind == LossKind::LogVariance && opt.learn_initial_offset) ? opt.offset_axis.n : 0;
    const std::size_t d = fl.d;
    fl.steps.resize(fl.n_paths * fl.n_steps);
    fl.drive.resize(fl.n_paths * fl.n_steps * d);
    fl.constant.assign(fl.n_paths, 0.0);
    std::vector<std::pair<std::size_t, double>> feats;
    std::vector<double> v(d, 0.0);
    for (std::size_t p = 0; p < fl.n_paths; ++p) {
        for (std::size_t k = 0; k < fl.n_steps; ++k) {
            const double t = ens.grid[k], dt = ens.grid[k + 1] - t;
            auto x = ens.state(p, k);
            rep.features(x, t, feats);
            fl.steps[p * fl.n_steps + k] = {std::uint32_t(fl.feat_idx.size()), std::uint32_t(feats.size()), dt};
            for (const auto& [f, w] : feats) {
                fl.feat_idx.push_back(f);
                fl.feat_w.push_back(w);
            }
            if (opt.proposal) opt.proposal(x, t, v);
            auto db = ens.increment(p, k);
            for (std::size_t c = 0; c < d; ++c) fl.drive[(p * fl.n_steps + k) * d + c] = v[c] * dt + db[c];
            if (kind == LossKind::LogVariance && problem.running_cost)
                fl.constant[p] -= problem.running_cost(x, t) * dt;
        }
        if (kind == LossKind::LogVariance) fl.constant[p] -= problem.terminal_cost(ens.state(p, fl.n_steps));
        if (fl.n_offset) {
            const auto [i, frac] = locate(opt.offset_axis, ens.state(p, 0)[0]);
            fl.offset_feats.emplace_back(i, 1.0 - frac);
            fl.offset_feats.emplace_back(i + 1, frac);
        }
    }
    if (kind == LossKind::CrossEntropy) {
        Vec lw = optimal_log_weights(problem, ens, opt.proposal);
        Vec w = (lw.array() - lw.maxCoeff()).exp();
        w /= w.sum();
        fl.weights.assign(w.data(), w.data() + w.size());
    }
    return fl;
}

}  // namespace

FitResult fit_control(const SocProblem& problem, LossKind loss, ParamControl representation,
                      const FitOptions& opt, std::uint64_t seed) {
    problem.validate();
    require(opt.budget >= 1, "optimizer budget must be at least one evaluation");
    require(static_cast<bool>(problem.init), "problem needs an initial law");
    require(representation.out_dim() == problem.dim, "control dimension must match the problem");
    FitResult res{representation, {}, 0, {}};

    if (loss == LossKind::RelativeEntropy) {
        // on-policy loss: re-simulate with common random numbers and difference the parameters
        auto simulate = [&](const Vec& theta) {
            ParamControl c = representation;
            c.params() = theta;
            return paths::simulate_sde(problem.sde(c.field()), problem.init, opt.n_paths, opt.n_steps, seed);
        };
        auto evaluate = [&](const Vec& theta) {
            ParamControl c = representation;
            c.params() = theta;
            ++res.evaluations;
            return loss_relative_entropy(c.field(), problem, simulate(theta)).value;
        };
        // mean time spent on each feature along the paths, the curvature of 0.5 int |u|^2
        auto feature_mass = [&](const Vec& theta) {
            auto ens = simulate(theta);
            const std::size_t nf = representation.n_features(), d = representation.out_dim();
            Vec mass = Vec::Zero(Eigen::Index(nf * d));
            std::vector<std::pair<std::size_t, double>> feats;
            for (std::size_t p = 0; p < ens.n_paths; ++p)
                for (std::size_t k = 0; k + 1 < ens.n_times(); ++k) {
                    const double dt = ens.grid[k + 1] - ens.grid[k];
                    representation.features(ens.state(p, k), ens.grid[k], feats);
                    for (const auto& [f, w] : feats)
                        for (std::size_t c = 0; c < d; ++c) mass[Eigen::Index(f * d + c)] += w * w * dt;
                }
            return Vec(mass / double(ens.n_paths));
        };
        Vec theta = representation.params();
        double cur = evaluate(theta);
        res.loss_trace.push_back(cur);
        double step = opt.initial_step;
        const double h = 1e-4;
        while (res.evaluations + 2 * theta.size() + 1 <= opt.budget) {
            Vec g(theta.size());
            for (Eigen::Index j = 0; j < theta.size(); ++j) {
                Vec a = theta, b = theta;
                a[j] += h;
                b[j] -= h;
                g[j] = (evaluate(a) - evaluate(b)) / (2.0 * h);
            }
            if (g.norm() < opt.gradient_tol) break;
            Vec diag = feature_mass(theta);
            const double floor = 1e-8 * std::max(1e-300, diag.maxCoeff());
            Vec dir = -g.cwiseQuotient(diag.cwiseMax(floor));
            bool moved = false;
            while (res.evaluations < opt.budget && step > 1e-12) {
                Vec cand = theta + step * dir;
                const double val = evaluate(cand);
                if (!std::isfinite(val)) throw NumericalFault("control fit diverged");
                if (val < cur) {
                    theta = cand;
                    cur = val;
                    res.loss_trace.push_back(cur);
                    step = std::min(1.0, step * 1.5);
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
        res.control.params() = theta;
        return res;
    }

    auto ens = paths::simulate_sde(problem.sde(opt.proposal), problem.init, opt.n_paths, opt.n_steps, seed);
    FrozenLoss fl = freeze(problem, loss, representation, opt, ens);
    Vec theta = Vec::Zero(Eigen::Index(fl.n_theta + fl.n_offset));
    theta.head(Eigen::Index(fl.n_theta)) = representation.params();
    Vec grad, diag;
    double cur = fl.eval(theta, &grad, &diag);
    ++res.evaluations;
    if (!std::isfinite(cur)) throw NumericalFault("control loss is not finite at the initial parameters");
    res.loss_trace.push_back(cur);
    double step = opt.initial_step;
    while (res.evaluations < opt.budget) {
        // descent direction scaled by the Gauss-Newton diagonal
        const double floor = 1e-8 * std::max(1e-300, diag.maxCoeff());
        Vec dir = -grad.cwiseQuotient(diag.cwiseMax(floor));
        if (grad.norm() < opt.gradient_tol) break;
        Vec cand = theta + step * dir;
        Vec g2, d2;
        const double val = fl.eval(cand, &g2, &d2);
        ++res.evaluations;
        if (!std::isfinite(val)) {
            std::ostringstream os;
            os << "control fit diverged after " << res.loss_trace.size() << " accepted steps";
            throw NumericalFault(os.str());
        }
        if (val <= cur) {
            theta = std::move(cand);
            cur = val;
            grad = std::move(g2);
            diag = std::move(d2);
            res.loss_trace.push_back(cur);
            step = std::min(1.0, step * 1.5);
        } else {
            step *= 0.5;
            if (step < 1e-12) break;
        }
    }
    res.control.params() = theta.head(Eigen::Index(fl.n_theta));
    res.offset_params = theta.tail(Eigen::Index(fl.n_offset));
    return res;
}

}  // namespace bridgekit::soc
