#include "bridgekit/path_sim.hpp"

#include "bridgekit/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <sstream>

namespace bridgekit::paths {

void SdeSpec::validate() const {
    require(static_cast<bool>(sigma_of_t), "SDE needs a diffusion coefficient");
    require(horizon > 0.0, "horizon must be positive");
    require(dim >= 1, "dimension must be positive");
}

InitSampler point_init(Vec x0) {
    return [x0 = std::move(x0)](RandomStream&, std::span<double> out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x0[Eigen::Index(i)];
    };
}

InitSampler gaussian_init(Vec mean, Mat cov) {
    require_spd(cov, "initial covariance");
    Mat l = Eigen::LLT<Mat>(cov).matrixL();
    return [mean = std::move(mean), l = std::move(l)](RandomStream& rng, std::span<double> out) {
        Vec z(mean.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
        Vec x = mean + l * z;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[Eigen::Index(i)];
    };
}

Mat PathEnsemble::marginal(std::size_t k) const {
    require(k < n_times(), "time index out of range");
    Mat m(n_paths, dim);
    for (std::size_t p = 0; p < n_paths; ++p) {
        auto s = state(p, k);
        for (std::size_t j = 0; j < dim; ++j) m(Eigen::Index(p), Eigen::Index(j)) = s[j];
    }
    return m;
}

PathEnsemble simulate_sde(const SdeSpec& spec, const InitSampler& init, std::size_t n_paths, std::size_t n_steps,
                          std::uint64_t seed, const SimulationOptions& options) {
    spec.validate();
    require(n_paths >= 1 && n_steps >= 1, "simulation needs at least one path and one step");
    require(static_cast<bool>(init), "simulation needs an initial sampler");
    const std::size_t stride = std::max<std::size_t>(1, options.record_stride);
    require(n_steps % stride == 0, "record stride must divide the number of steps");
    const std::size_t d = spec.dim;
    const double dt = spec.horizon / double(n_steps);
    const double sqdt = std::sqrt(dt);

    PathEnsemble ens;
    ens.n_paths = n_paths;
    ens.dim = d;
    ens.seed = seed;
    const std::size_t n_rec = n_steps / stride + 1;
    for (std::size_t k = 0; k < n_rec; ++k)
        ens.grid.push_back(k == n_rec - 1 ? spec.horizon : double(k * stride) * dt);
    ens.states.assign(n_paths * n_rec * d, 0.0);
    const bool keep = options.retain_increments && stride == 1;
    if (keep) ens.increments.assign(n_paths * n_steps * d, 0.0);

    std::vector<std::string> faults(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        RandomStream rng(seed, p);
        std::vector<double> x(d), f(d, 0.0), u(d, 0.0), db(d);
        init(rng, x);
        std::copy(x.begin(), x.end(), ens.states.begin() + std::ptrdiff_t(p * n_rec * d));
        for (std::size_t k = 0; k < n_steps; ++k) {
            const double t = double(k) * dt;
            const double s = spec.sigma_of_t(t);
            if (spec.ref_drift) spec.ref_drift(x, t, f);
            if (spec.control) spec.control(x, t, u);
            for (std::size_t j = 0; j < d; ++j) {
                db[j] = sqdt * rng.normal();
                x[j] += (f[j] + s * u[j]) * dt + s * db[j];
            }
            for (double v : x) {
                if (!std::isfinite(v)) {
                    std::ostringstream os;
                    os << "non-finite state on path " << p << " at step " << k + 1;
                    faults[p] = os.str();
                    return;
                }
            }
            if (keep) std::copy(db.begin(), db.end(), ens.increments.begin() + std::ptrdiff_t((p * n_steps + k) * d));
            if ((k + 1) % stride == 0)
                std::copy(x.begin(), x.end(), ens.states.begin() + std::ptrdiff_t((p * n_rec + (k + 1) / stride) * d));
        }
    });
    for (const auto& f : faults)
        if (!f.empty()) throw NumericalFault(f);
    return ens;
}

BrownianBridgeStats brownian_bridge_stats(const Vec& x0, const Vec& xT, double t, double T, double sigma,
                                          const Vec& x) {
    if (!(t > 0.0 && t < T)) throw NumericalFault("bridge statistics need 0 < t < T");
    require(x0.size() == xT.size() && x.size() == x0.size(), "bridge endpoints and query must share a dimension");
    require(sigma > 0.0, "sigma must be positive");
    BrownianBridgeStats s;
    s.mean = (1.0 - t / T) * x0 + (t / T) * xT;
    s.variance = sigma * sigma * t * (T - t) / T;
    s.pinned_drift = (xT - x) / (T - t);
    s.score = (t * xT + (T - t) * x0 - T * x) / (sigma * sigma * t * (T - t));
    return s;
}

EndpointSampler EndpointSampler::empirical(const ot::Coupling& coupling, Mat source_points, Mat target_points) {
    const Mat& w = coupling.weights;
    require(w.rows() == source_points.rows() && w.cols() == target_points.rows(),
            "coupling shape must match the supports");
    require(source_points.cols() == target_points.cols(), "supports must share a dimension");
    require((w.array() >= 0.0).all(), "coupling weights must be nonnegative");
    EndpointSampler s;
    s.mode_ = Mode::Empirical;
    s.dim_ = std::size_t(source_points.cols());
    s.n_cols_ = std::size_t(w.cols());
    double c = 0.0;
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            c += w(i, j);
            s.cumulative_.push_back(c);
        }
    require(c > 0.0, "coupling has no mass");
    for (double& v : s.cumulative_) v /= c;
    s.source_ = std::move(source_points);
    s.target_ = std::move(target_points);
    return s;
}

EndpointSampler EndpointSampler::gaussian(const ot::JointGaussian& joint) {
    EndpointSampler s;
    s.mode_ = Mode::Gaussian;
    s.dim_ = joint.dim();
    s.mean_ = joint.mean;
    Eigen::SelfAdjointEigenSolver<Mat> es(joint.covariance);
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
        throw NumericalFault("joint Gaussian covariance is not positive semidefinite");
    s.factor_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    return s;
}

EndpointSampler EndpointSampler::independent(InitSampler source, InitSampler target, std::size_t dim) {
    EndpointSampler s;
    s.mode_ = Mode::Independent;
    s.dim_ = dim;
    s.sample0_ = std::move(source);
    s.sampleT_ = std::move(target);
    return s;
}

void EndpointSampler::draw(RandomStream& rng, std::span<double> x0, std::span<double> xT) const {
    switch (mode_) {
    case Mode::Empirical: {
        const double u = rng.uniform();
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        std::size_t k = std::min<std::size_t>(std::size_t(it - cumulative_.begin()), cumulative_.size() - 1);
        const Eigen::Index i = Eigen::Index(k / n_cols_), j = Eigen::Index(k % n_cols_);
        for (std::size_t c = 0; c < dim_; ++c) {
            x0[c] = source_(i, Eigen::Index(c));
            xT[c] = target_(j, Eigen::Index(c));
        }
        break;
    }
    case Mode::Gaussian: {
        Vec z(mean_.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
        Vec x = mean_ + factor_ * z;
        for (std::size_t c = 0; c < dim_; ++c) {
            x0[c] = x[Eigen::Index(c)];
            xT[c] = x[Eigen::Index(c + dim_)];
        }
        break;
    }
    case Mode::Independent:
        sample0_(rng, x0);
        sampleT_(rng, xT);
        break;
    }
}

Mat sample_bridge_mixture(const EndpointSampler& endpoints, double t, double sigma, std::size_t n,
                          std::uint64_t seed, double T) {
    require(t >= 0.0 && t <= T, "time must lie in [0, T]");
    require(sigma > 0.0, "sigma must be positive");
    const std::size_t d = endpoints.dim();
    Mat out(n, d);
    parallel_for(n, [&](std::size_t i) {
        RandomStream rng(seed, i);
        std::vector<double> a(d), b(d);
        endpoints.draw(rng, a, b);
        const double sd = sigma * std::sqrt(t * (T - t) / T);
        for (std::size_t c = 0; c < d; ++c) {
            double x = (1.0 - t / T) * a[c] + (t / T) * b[c];
            if (t == 0.0) x = a[c];
            else if (t == T) x = b[c];
            else x += sd * rng.normal();
            out(Eigen::Index(i), Eigen::Index(c)) = x;
        }
    });
    return out;
}

InterpolantSpec InterpolantSpec::linear(double horizon, ScalarFn gamma) {
    return {[horizon](const Vec& x0, const Vec& xT, double t) -> Vec {
                if (t <= 0.0) return x0;
                if (t >= horizon) return xT;
                return (1.0 - t / horizon) * x0 + (t / horizon) * xT;
            },
            std::move(gamma), horizon};
}

Vec interpolant_sample(const InterpolantSpec& spec, const Vec& x0, const Vec& xT, double t, std::uint64_t seed) {
    require(spec.interpolant && spec.gamma, "interpolant spec is incomplete");
    require(t >= 0.0 && t <= spec.horizon, "time must lie in [0, T]");
    Vec base = spec.interpolant(x0, xT, t);
    const double g = spec.gamma(t);
    if (g < 0.0) throw NumericalFault("interpolant noise scale is negative");
    if (g == 0.0) return base;
    RandomStream rng(seed, 0);
    for (Eigen::Index i = 0; i < base.size(); ++i) base[i] += g * rng.normal();
    return base;
}

namespace {
template <class Body>
void for_each_step(const PathEnsemble& ens, const VectorField& u, const VectorField& ut, Body&& body) {
    if (!ens.has_increments()) throw NumericalFault("ensemble lacks retained Brownian increments");
    const std::size_t d = ens.dim, nt = ens.n_times();
    parallel_for(ens.n_paths, [&](std::size_t p) {
        std::vector<double> a(d, 0.0), b(d, 0.0), diff(d);
        for (std::size_t k = 0; k + 1 < nt; ++k) {
            const double t = ens.grid[k], dt = ens.grid[k + 1] - t;
            auto x = ens.state(p, k);
            if (u) u(x, t, a);
            if (ut) ut(x, t, b);
            for (std::size_t j = 0; j < d; ++j) diff[j] = b[j] - a[j];
            body(p, k, dt, std::span<const double>(diff), ens.increment(p, k));
        }
    });
}
}  // namespace

Vec girsanov_log_rnd(const PathEnsemble& ens, const VectorField& u, const VectorField& u_tilde) {
    Vec out = Vec::Zero(Eigen::Index(ens.n_paths));
    for_each_step(ens, u, u_tilde, [&](std::size_t p, std::size_t, double dt, std::span<const double> diff,
                                       std::span<const double> db) {
        double sq = 0.0, lin = 0.0;
        for (std::size_t j = 0; j < diff.size(); ++j) {
            sq += diff[j] * diff[j];
            lin += diff[j] * db[j];
        }
        out[Eigen::Index(p)] += -0.5 * sq * dt + lin;
    });
    ensure_finite(out, "log RND");
    return out;
}

McEstimate path_kl_estimate(const PathEnsemble& ens, const VectorField& u, const VectorField& u_tilde) {
    std::vector<double> per(ens.n_paths, 0.0);
    for_each_step(ens, u, u_tilde, [&](std::size_t p, std::size_t, double dt, std::span<const double> diff,
                                       std::span<const double>) {
        double sq = 0.0;
        for (double v : diff) sq += v * v;
        per[p] += 0.5 * sq * dt;
    });
    return mean_estimate(per);
}

VectorField reverse_drift(VectorField f, VectorField score, ScalarFn sigma_of_t, double T) {
    require(static_cast<bool>(score) && static_cast<bool>(sigma_of_t), "reverse drift needs a score and diffusion");
    return [f = std::move(f), score = std::move(score), sigma_of_t = std::move(sigma_of_t), T](
               std::span<const double> x, double s, std::span<double> out) {
        const double t = T - s;
        const double sg = sigma_of_t(t);
        std::vector<double> fv(x.size(), 0.0);
        if (f) f(x, t, fv);
        score(x, t, out);
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = -fv[j] + sg * sg * out[j];
    };
}

Histogram marginal_histogram(std::span<const double> samples, double lo, double hi, int bins) {
    require(hi > lo && bins >= 1, "histogram needs a nonempty range and at least one bin");
    require(!samples.empty(), "histogram needs samples");
    Histogram h;
    const double w = (hi - lo) / bins;
    std::vector<double> counts(std::size_t(bins), 0.0);
    for (double x : samples) {
        if (x < lo || x >= hi) continue;
        counts[std::min<std::size_t>(std::size_t((x - lo) / w), std::size_t(bins - 1))] += 1.0;
    }
    for (int b = 0; b < bins; ++b) {
        h.left.push_back(lo + b * w);
        h.right.push_back(lo + (b + 1) * w);
        h.density.push_back(counts[std::size_t(b)] / (double(samples.size()) * w));
    }
    return h;
}

}  // namespace bridgekit::paths
