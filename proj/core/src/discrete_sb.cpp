#include "bridgekit/discrete_sb.hpp"

#include "bridgekit/parallel.hpp"
#include "bridgekit/random.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <array>
#include <sstream>

namespace bridgekit::dsb {

namespace {

using Idx = Eigen::Index;

Idx ix(std::size_t i) { return static_cast<Idx>(i); }

Mat expm(const Mat& a) { return a.exp(); }

// Clips round-off negatives and checks unit row sums.
void finalize_stochastic(Mat& p, double clip) {
    for (Idx i = 0; i < p.rows(); ++i) {
        for (Idx j = 0; j < p.cols(); ++j) {
            if (!std::isfinite(p(i, j))) throw NumericalFault("transition matrix has non-finite entries");
            if (p(i, j) < 0.0) {
                if (p(i, j) < -clip)
                    throw NumericalFault("transition matrix entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                         ") is negative: " + std::to_string(p(i, j)));
                p(i, j) = 0.0;
            }
        }
        const double s = p.row(i).sum();
        if (std::abs(s - 1.0) > 1e-10)
            throw NumericalFault("transition matrix row " + std::to_string(i) + " sums to " + std::to_string(s));
        p.row(i) /= s;
    }
}

Mat with_diagonal(Mat q) {
    for (Idx i = 0; i < q.rows(); ++i) {
        q(i, i) = 0.0;
        q(i, i) = -q.row(i).sum();
    }
    return q;
}

double max_exit(const Mat& q) { return (-q.diagonal()).maxCoeff(); }

// Last time the integrators visit for generators that blow up at the horizon.
double cutoff_time(const Generator& g) {
    if (!g.singular_at_horizon()) return kInf;
    if (g.kind() == Generator::Kind::Tabulated) return g.knots().back();
    return g.horizon() * (1.0 - 1e-12);
}

// Step mesh for [s, t]: bounded relative to the rate scale and graded toward a singular horizon.
std::vector<double> step_mesh(const Generator& g, double s, double t) {
    const double end = std::min(t, cutoff_time(g));
    std::vector<double> mesh{s};
    if (end <= s) return mesh;
    const bool singular = g.singular_at_horizon();
    const double H = g.horizon();
    double lambda = max_exit(g.at(s));
    const double probe_end = singular ? std::min(end, s + 0.5 * (H - s)) : end;
    for (int k = 1; k <= 4; ++k) lambda = std::max(lambda, max_exit(g.at(s + (probe_end - s) * k / 4.0)));
    const double hmax = std::min((end - s) / 8.0, 0.01 / std::max(lambda, 1e-3));
    std::vector<double> knots;
    if (g.kind() == Generator::Kind::Tabulated) knots = g.knots();
    if (g.kind() == Generator::Kind::PiecewiseConstant) knots = g.pieces().starts;
    auto next_knot = std::upper_bound(knots.begin(), knots.end(), s);
    double tau = s;
    while (tau < end) {
        double h = hmax;
        if (singular) h = std::min(h, 0.01 * (H - tau));
        double nxt = std::min(end, tau + h);
        while (next_knot != knots.end() && *next_knot <= tau) ++next_knot;
        if (next_knot != knots.end() && *next_knot < nxt) nxt = *next_knot;
        if (end - nxt < 1e-3 * h) nxt = end;
        mesh.push_back(nxt);
        tau = nxt;
    }
    return mesh;
}

struct Integrated {
    Mat p;
    Vec acc;
};

// RK4 for P' = P G(tau), optionally accumulating int P c(tau) dtau.
Integrated integrate(const Generator& g, double s, double t, Mat p, const std::function<Vec(double)>& cost) {
    const auto mesh = step_mesh(g, s, t);
    Vec acc = Vec::Zero(p.rows());
    for (std::size_t k = 0; k + 1 < mesh.size(); ++k) {
        const double a = mesh[k], h = mesh[k + 1] - a;
        // sample strictly inside the step so that tabulated and piecewise generators use the current piece
        const double eps = 1e-14 * std::max(1.0, std::abs(a));
        const Mat g1 = g.at(a + eps), g2 = g.at(a + 0.5 * h), g4 = g.at(a + h - eps);
        const Mat k1 = p * g1;
        const Mat p2 = p + 0.5 * h * k1;
        const Mat k2 = p2 * g2;
        const Mat p3 = p + 0.5 * h * k2;
        const Mat k3 = p3 * g2;
        const Mat p4 = p + h * k3;
        const Mat k4 = p4 * g4;
        if (cost) {
            const Vec c1 = cost(a + eps), c2 = cost(a + 0.5 * h), c4 = cost(a + h - eps);
            acc += h / 6.0 * (p * c1 + 2.0 * p2 * c2 + 2.0 * p3 * c2 + p4 * c4);
        }
        p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return {std::move(p), std::move(acc)};
}

Mat identity(std::size_t n) { return Mat::Identity(ix(n), ix(n)); }

}  // namespace

void validate_rates(const Mat& q, double tol) {
    require(q.rows() == q.cols() && q.rows() > 0, "rate matrix must be square and nonempty");
    for (Idx i = 0; i < q.rows(); ++i) {
        for (Idx j = 0; j < q.cols(); ++j) {
            require(std::isfinite(q(i, j)), "rate matrix has non-finite entries");
            if (i != j && q(i, j) < 0.0)
                throw ContractError("negative rate at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
        }
        const double s = q.row(i).sum();
        if (std::abs(s) > tol * std::max(1.0, q.row(i).cwiseAbs().maxCoeff()))
            throw ContractError("rate matrix row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
}

void validate_law(const Vec& p, double tol) {
    require(p.size() > 0, "law must be nonempty");
    for (Idx i = 0; i < p.size(); ++i)
        require(std::isfinite(p[i]) && p[i] >= 0.0, "law has a negative or non-finite entry");
    require(std::abs(p.sum() - 1.0) <= tol, "law must sum to one");
}

RateMatrix RateMatrix::constant(Mat q) { return piecewise({0.0}, {std::move(q)}); }

RateMatrix RateMatrix::piecewise(std::vector<double> starts, std::vector<Mat> pieces) {
    RateMatrix r;
    r.starts = std::move(starts);
    r.pieces = std::move(pieces);
    r.validate();
    return r;
}

std::size_t RateMatrix::piece_of(double t) const {
    auto it = std::upper_bound(starts.begin(), starts.end(), t);
    return it == starts.begin() ? 0 : std::size_t(it - starts.begin()) - 1;
}

void RateMatrix::validate(double tol) const {
    require(!pieces.empty() && starts.size() == pieces.size(), "rate schedule needs one start per piece");
    require(starts.front() == 0.0, "rate schedule must start at 0");
    for (std::size_t k = 1; k < starts.size(); ++k) require(starts[k] > starts[k - 1], "piece starts must increase");
    for (const auto& q : pieces) {
        require(q.rows() == pieces.front().rows(), "pieces must share the state space");
        validate_rates(q, tol);
    }
    require(labels.empty() || labels.size() == n_states(), "labels must match the state count");
}

Generator::Generator(RateMatrix q) {
    q.validate();
    kind_ = Kind::PiecewiseConstant;
    n_ = q.n_states();
    pc_ = std::make_shared<const RateMatrix>(std::move(q));
}

Generator Generator::tabulated(std::vector<double> knots, std::vector<Mat> values, double horizon, bool singular) {
    require(knots.size() == values.size() && !knots.empty(), "tabulated generator needs one value per knot");
    for (std::size_t k = 1; k < knots.size(); ++k) require(knots[k] > knots[k - 1], "knots must increase");
    Generator g;
    g.kind_ = Kind::Tabulated;
    g.n_ = std::size_t(values.front().rows());
    g.knots_ = std::make_shared<const std::vector<double>>(std::move(knots));
    g.values_ = std::make_shared<const std::vector<Mat>>(std::move(values));
    g.horizon_ = horizon;
    g.singular_ = singular;
    return g;
}

Generator Generator::from_function(std::size_t n, std::function<Mat(double)> rates, double horizon, bool singular) {
    require(n > 0 && static_cast<bool>(rates), "function generator needs states and a rate function");
    Generator g;
    g.kind_ = Kind::Function;
    g.n_ = n;
    g.fn_ = std::move(rates);
    g.horizon_ = horizon;
    g.singular_ = singular;
    return g;
}

const RateMatrix& Generator::pieces() const {
    require(kind_ == Kind::PiecewiseConstant, "generator is not piecewise constant");
    return *pc_;
}

Mat Generator::at(double t) const {
    switch (kind_) {
    case Kind::PiecewiseConstant:
        return pc_->at(t);
    case Kind::Tabulated: {
        const auto& k = *knots_;
        const auto& v = *values_;
        if (t <= k.front()) return v.front();
        if (t >= k.back()) return v.back();
        const std::size_t i = std::size_t(std::upper_bound(k.begin(), k.end(), t) - k.begin()) - 1;
        const double w = (t - k[i]) / (k[i + 1] - k[i]);
        return (1.0 - w) * v[i] + w * v[i + 1];
    }
    case Kind::Function:
        break;
    }
    return fn_(t);
}

double Generator::exit_integral(std::size_t x, double a, double b) const {
    if (b <= a) return 0.0;
    const Idx i = ix(x);
    switch (kind_) {
    case Kind::PiecewiseConstant: {
        const auto& r = *pc_;
        double s = 0.0;
        for (std::size_t k = r.piece_of(a); k < r.pieces.size(); ++k) {
            const double lo = std::max(a, r.starts[k]);
            const double hi = k + 1 < r.starts.size() ? std::min(b, r.starts[k + 1]) : b;
            if (hi > lo) s += -r.pieces[k](i, i) * (hi - lo);
            if (hi >= b) break;
        }
        return s;
    }
    case Kind::Tabulated: {
        const auto& k = *knots_;
        std::vector<double> cuts{a};
        for (double kk : k)
            if (kk > a && kk < b) cuts.push_back(kk);
        cuts.push_back(b);
        double s = 0.0;
        for (std::size_t j = 0; j + 1 < cuts.size(); ++j)
            s += 0.5 * (cuts[j + 1] - cuts[j]) * (-at(cuts[j])(i, i) - at(cuts[j + 1])(i, i));
        return s;
    }
    case Kind::Function:
        break;
    }
    static const GaussLegendre gl(8);
    std::vector<double> cuts = step_mesh(*this, a, b);
    if (cuts.back() < b) cuts.push_back(b);
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < cuts.size(); ++j)
        s += gl.integrate([&](double t) { return -fn_(t)(i, i); }, cuts[j], cuts[j + 1]);
    return s;
}

Generator tabulate(const Generator& g, double H, std::size_t base_steps, double grading, double cutoff) {
    require(H > 0.0 && base_steps >= 1, "tabulation needs a positive horizon and steps");
    std::vector<double> knots{0.0};
    const double end = g.singular_at_horizon() ? H * (1.0 - cutoff) : H;
    const double h0 = H / double(base_steps);
    while (knots.back() < end) {
        double h = h0;
        if (g.singular_at_horizon()) h = std::min(h, grading * (H - knots.back()));
        double nxt = std::min(end, knots.back() + h);
        if (end - nxt < 1e-3 * h) nxt = end;
        knots.push_back(nxt);
    }
    std::vector<Mat> values(knots.size());
    parallel_for(knots.size(), [&](std::size_t k) { values[k] = g.at(knots[k]); });
    for (const auto& v : values) ensure_finite(v, "tabulated rates");
    return Generator::tabulated(std::move(knots), std::move(values), H, g.singular_at_horizon());
}

Mat transition_matrix(const Generator& q, double s, double t) {
    require(s <= t, "transition needs s <= t");
    const std::size_t n = q.n_states();
    if (s == t) return identity(n);
    Mat p;
    if (q.kind() == Generator::Kind::PiecewiseConstant) {
        const auto& r = q.pieces();
        p = identity(n);
        for (std::size_t k = r.piece_of(s); k < r.pieces.size(); ++k) {
            const double lo = std::max(s, r.starts[k]);
            const double hi = k + 1 < r.starts.size() ? std::min(t, r.starts[k + 1]) : t;
            if (hi > lo) p = p * expm(r.pieces[k] * (hi - lo));
            if (hi >= t) break;
        }
        finalize_stochastic(p, 1e-12);
    } else {
        p = integrate(q, s, t, identity(n), {}).p;
        finalize_stochastic(p, 1e-9);
    }
    return p;
}

Vec propagate_forward(const Generator& q, const Vec& law, double s, double t) {
    require(std::size_t(law.size()) == q.n_states(), "law size must match the generator");
    return (law.transpose() * transition_matrix(q, s, t)).transpose();
}

Vec propagate_backward(const Generator& q, const Vec& phi_T, double t, double T) {
    require(std::size_t(phi_T.size()) == q.n_states(), "terminal function size must match the generator");
    return transition_matrix(q, t, T) * phi_T;
}

std::size_t CtmcPath::state_at(double t) const {
    const std::size_t k = std::size_t(std::upper_bound(jump_times.begin(), jump_times.end(), t) - jump_times.begin());
    return states[k];
}

namespace {

std::size_t next_state(const Mat& q, std::size_t x, RandomStream& rng) {
    const Idx n = q.cols();
    double total = 0.0;
    for (Idx y = 0; y < n; ++y)
        if (y != ix(x)) total += std::max(0.0, q(ix(x), y));
    if (total <= 0.0) return x;
    const double u = rng.uniform() * total;
    double c = 0.0;
    std::size_t last = x;
    for (Idx y = 0; y < n; ++y) {
        if (y == ix(x) || q(ix(x), y) <= 0.0) continue;
        c += q(ix(x), y);
        last = std::size_t(y);
        if (u < c) return last;
    }
    return last;
}

CtmcPath gillespie(const RateMatrix& r, std::size_t x0, double T, RandomStream& rng) {
    CtmcPath p{T, {}, {x0}};
    double t = 0.0;
    std::size_t x = x0;
    while (t < T) {
        const std::size_t k = r.piece_of(t);
        const double piece_end = k + 1 < r.starts.size() ? std::min(T, r.starts[k + 1]) : T;
        const double rate = -r.pieces[k](ix(x), ix(x));
        const double hold = rate > 0.0 ? -std::log1p(-rng.uniform()) / rate : kInf;
        if (t + hold >= piece_end) {
            t = piece_end;
            continue;
        }
        t += hold;
        const std::size_t y = next_state(r.pieces[k], x, rng);
        if (y == x) continue;
        p.jump_times.push_back(t);
        p.states.push_back(y);
        x = y;
    }
    return p;
}

// Hazard inversion for linearly interpolated exit rates.
CtmcPath hazard_inversion(const Generator& g, std::size_t x0, double T, RandomStream& rng) {
    CtmcPath p{T, {}, {x0}};
    const auto& k = g.knots();
    const auto& v = g.knot_values();
    std::size_t x = x0;
    double t = 0.0;
    double target = -std::log1p(-rng.uniform());
    std::size_t i = 0;
    while (t < T) {
        while (i + 1 < k.size() && k[i + 1] <= t) ++i;
        const bool tail = i + 1 >= k.size();
        const double b = tail ? T : std::min(T, k[i + 1]);
        const double la = -g.at(t)(ix(x), ix(x));
        const double lb = tail ? la : -v[i + 1](ix(x), ix(x));
        const double w = b - t;
        const double mass = 0.5 * (la + lb) * w;
        if (mass < target) {
            target -= mass;
            t = b;
            continue;
        }
        const double slope = (lb - la) / w;
        double u;
        if (std::abs(slope) * target < 1e-12 * la * la) {
            u = target / la;
        } else {
            u = 2.0 * target / (la + std::sqrt(std::max(0.0, la * la + 2.0 * slope * target)));
        }
        t = std::min(b, t + u);
        const std::size_t y = next_state(g.at(t), x, rng);
        target = -std::log1p(-rng.uniform());
        if (y == x) continue;
        p.jump_times.push_back(t);
        p.states.push_back(y);
        x = y;
    }
    return p;
}

CtmcPath simulate_prepared(const Generator& g, std::size_t x0, double T, RandomStream& rng) {
    if (g.kind() == Generator::Kind::PiecewiseConstant) return gillespie(g.pieces(), x0, T, rng);
    return hazard_inversion(g, x0, T, rng);
}

Generator prepared(const Generator& g, double T) {
    return g.kind() == Generator::Kind::Function ? tabulate(g, T) : g;
}

}  // namespace

CtmcPath simulate_ctmc(const Generator& q, std::size_t x0, double T, std::uint64_t seed, std::uint64_t stream) {
    require(x0 < q.n_states(), "initial state out of range");
    require(T >= 0.0, "horizon must be nonnegative");
    RandomStream rng(seed, stream);
    return simulate_prepared(prepared(q, T), x0, T, rng);
}

std::vector<CtmcPath> simulate_ctmc_batch(const Generator& q, const Vec& init, std::size_t n, double T,
                                          std::uint64_t seed) {
    validate_law(init, 1e-9);
    require(std::size_t(init.size()) == q.n_states(), "initial law size must match the generator");
    const Generator g = prepared(q, T);
    std::vector<CtmcPath> out(n);
    parallel_for(n, [&](std::size_t i) {
        RandomStream rng(seed, i);
        const std::size_t x0 = rng.categorical(init, std::size_t(init.size()), init.sum());
        out[i] = simulate_prepared(g, x0, T, rng);
    });
    return out;
}

double ctmc_log_rnd(const CtmcPath& path, const Generator& q_prime, const Generator& q, const Vec& pi0_prime,
                    const Vec& pi0, std::string* violation) {
    require(q_prime.n_states() == q.n_states(), "generators must share the state space");
    auto fail = [&](double value, const std::string& why) {
        if (violation) *violation = why;
        return value;
    };
    const std::size_t x0 = path.initial();
    const double a = pi0_prime[ix(x0)], b = pi0[ix(x0)];
    if (b <= 0.0) return fail(kInf, "initial state " + std::to_string(x0) + " has zero reference mass");
    if (a <= 0.0) return fail(-kInf, "initial state " + std::to_string(x0) + " has zero mass");
    double value = std::log(a / b);
    double start = 0.0;
    for (std::size_t k = 0; k <= path.n_jumps(); ++k) {
        const std::size_t x = path.states[k];
        const double end = k < path.n_jumps() ? path.jump_times[k] : path.horizon;
        value += q.exit_integral(x, start, end) - q_prime.exit_integral(x, start, end);
        if (k < path.n_jumps()) {
            const std::size_t y = path.states[k + 1];
            const double rp = q_prime.at(end)(ix(x), ix(y)), r = q.at(end)(ix(x), ix(y));
            const std::string step = std::to_string(x) + " -> " + std::to_string(y) + " at t=" + std::to_string(end);
            if (r <= 0.0) return fail(kInf, "transition " + step + " has zero reference rate");
            if (rp <= 0.0) return fail(-kInf, "transition " + step + " has zero rate");
            value += std::log(rp / r);
        }
        start = end;
    }
    return value;
}

namespace {

// Per-state KL rate sum_{y != x} q' log(q'/q) + q - q'.
Vec kl_rate(const Mat& qp, const Mat& q) {
    const Idx n = q.rows();
    Vec c = Vec::Zero(n);
    for (Idx x = 0; x < n; ++x) {
        for (Idx y = 0; y < n; ++y) {
            if (y == x) continue;
            if (qp(x, y) > 0.0) {
                if (q(x, y) <= 0.0) return Vec::Constant(n, kInf);
                c[x] += qp(x, y) * std::log(qp(x, y) / q(x, y));
            }
            c[x] += q(x, y) - qp(x, y);
        }
    }
    return c;
}

}  // namespace

McEstimate ctmc_kl(const Generator& q_prime, const Generator& q, const Vec& pi0_prime, const Vec& pi0, double T,
                   KlMethod method, std::size_t n_paths, std::uint64_t seed) {
    require(q_prime.n_states() == q.n_states(), "generators must share the state space");
    require(std::size_t(pi0.size()) == q.n_states() && pi0_prime.size() == pi0.size(), "initial laws must match the states");
    require(T >= 0.0, "horizon must be nonnegative");
    validate_law(pi0_prime, 1e-9);
    validate_law(pi0, 1e-9);
    if (method == KlMethod::MonteCarlo) {
        require(n_paths >= 2, "Monte Carlo KL needs at least two paths");
        const auto paths = simulate_ctmc_batch(q_prime, pi0_prime, n_paths, T, seed);
        std::vector<double> v(n_paths);
        parallel_for(n_paths, [&](std::size_t i) { v[i] = ctmc_log_rnd(paths[i], q_prime, q, pi0_prime, pi0); });
        for (double x : v)
            if (!std::isfinite(x)) return {x, kInf, n_paths};
        return mean_estimate(v);
    }
    const double init = ot::kl_discrete(std::span<const double>(pi0_prime.data(), std::size_t(pi0_prime.size())),
                                        std::span<const double>(pi0.data(), std::size_t(pi0.size())));
    if (!std::isfinite(init)) return {kInf, 0.0, 0};
    const std::size_t n = q.n_states();
    double total = init;
    if (q_prime.kind() == Generator::Kind::PiecewiseConstant && q.kind() == Generator::Kind::PiecewiseConstant) {
        std::vector<double> cuts = q_prime.pieces().starts;
        cuts.insert(cuts.end(), q.pieces().starts.begin(), q.pieces().starts.end());
        cuts.push_back(T);
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
        Vec p = pi0_prime;
        for (std::size_t k = 0; k + 1 < cuts.size() && cuts[k] < T; ++k) {
            const double a = cuts[k], b = std::min(cuts[k + 1], T), w = b - a;
            if (w <= 0.0) continue;
            const Mat qp = q_prime.at(a), qr = q.at(a);
            const Vec c = kl_rate(qp, qr);
            if (!c.allFinite()) return {kInf, 0.0, 0};
            Mat aug = Mat::Zero(ix(2 * n), ix(2 * n));
            aug.topLeftCorner(ix(n), ix(n)) = qp * w;
            aug.topRightCorner(ix(n), ix(n)) = identity(n) * w;
            const Mat e = expm(aug);
            total += p.dot(e.topRightCorner(ix(n), ix(n)) * c);
            p = (p.transpose() * e.topLeftCorner(ix(n), ix(n))).transpose();
        }
    } else {
        bool support_ok = true;
        auto cost = [&](double t) {
            Vec c = kl_rate(q_prime.at(t), q.at(t));
            if (!c.allFinite()) {
                support_ok = false;
                c.setZero();
            }
            return c;
        };
        const Mat p0 = pi0_prime.transpose();
        total += integrate(q_prime, 0.0, T, p0, cost).acc[0];
        if (!support_ok) return {kInf, 0.0, 0};
    }
    return {total, 0.0, 0};
}

Generator doob_tilt(const Generator& q0, std::function<Vec(double)> h, double T, int n_checks, double tol) {
    require(static_cast<bool>(h) && n_checks >= 2 && T > 0.0, "Doob tilt needs h, a horizon and checks");
    std::vector<Vec> hs;
    for (int k = 0; k < n_checks; ++k) {
        const double t = T * k / n_checks;
        Vec v = h(t);
        require(std::size_t(v.size()) == q0.n_states(), "h has the wrong size");
        if (!(v.array() > 0.0).all()) throw NumericalFault("h is not positive at t=" + std::to_string(t));
        hs.push_back(std::move(v));
    }
    for (int k = 0; k + 1 < n_checks; ++k) {
        const double t = T * k / n_checks, t2 = T * (k + 1) / n_checks;
        const Vec pred = transition_matrix(q0, t, t2) * hs[std::size_t(k + 1)];
        const double err = (pred - hs[std::size_t(k)]).cwiseAbs().maxCoeff();
        if (err > tol * hs[std::size_t(k)].maxCoeff())
            throw NumericalFault("h is not space-time harmonic between t=" + std::to_string(t) + " and " +
                                 std::to_string(t2) + " (error " + std::to_string(err) + ")");
    }
    return Generator::from_function(
        q0.n_states(),
        [q0, h](double t) {
            const Mat q = q0.at(t);
            const Vec v = h(t);
            Mat out = q;
            for (Idx x = 0; x < q.rows(); ++x)
                for (Idx y = 0; y < q.cols(); ++y)
                    if (x != y) out(x, y) = q(x, y) * v[y] / v[x];
            return with_diagonal(out);
        },
        T, true);
}

Vec conditioned_row(const Generator& q0, std::size_t x_T, double T, double t, std::size_t x) {
    require(x_T < q0.n_states() && x < q0.n_states(), "state out of range");
    require(t < T, "conditioning needs t < T");
    const Vec h = transition_matrix(q0, t, T).col(ix(x_T));
    if (h[ix(x)] <= 0.0)
        throw NumericalFault("state " + std::to_string(x) + " cannot reach " + std::to_string(x_T) + " by T");
    const Mat q = q0.at(t);
    Vec row = Vec::Zero(q.cols());
    for (Idx y = 0; y < q.cols(); ++y)
        if (y != ix(x)) row[y] = q(ix(x), y) * h[y] / h[ix(x)];
    row[ix(x)] = -row.sum();
    return row;
}

Mat conditioned_rates(const Generator& q0, std::size_t x_T, double T, double t) {
    require(x_T < q0.n_states(), "state out of range");
    require(t < T, "conditioning needs t < T");
    const Vec h = transition_matrix(q0, t, T).col(ix(x_T));
    const Mat q = q0.at(t);
    Mat out = q;
    for (Idx x = 0; x < q.rows(); ++x) {
        if (h[x] <= 0.0)
            throw NumericalFault("state " + std::to_string(x) + " cannot reach " + std::to_string(x_T) + " by T");
        for (Idx y = 0; y < q.cols(); ++y)
            if (x != y) out(x, y) = q(x, y) * h[y] / h[x];
    }
    return with_diagonal(out);
}

Generator conditioned_generator(const Generator& q0, std::size_t x_T, double T) {
    return Generator::from_function(
        q0.n_states(), [q0, x_T, T](double t) { return conditioned_rates(q0, x_T, T, std::min(t, T * (1.0 - 1e-15))); }, T,
        true);
}

ReciprocalMeasure::ReciprocalMeasure(Generator reference, Mat coupling, double T)
    : ref_(std::move(reference)), coupling_(std::move(coupling)), T_(T) {
    const std::size_t n = ref_.n_states();
    require(T > 0.0, "horizon must be positive");
    require(std::size_t(coupling_.rows()) == n && std::size_t(coupling_.cols()) == n, "coupling must be n x n");
    require((coupling_.array() >= 0.0).all() && std::abs(coupling_.sum() - 1.0) <= 1e-9, "coupling must be a joint law");
    const Mat p = ref_transition(0.0, T);
    weight_ = Mat::Zero(ix(n), ix(n));
    std::ostringstream bad;
    for (Idx i = 0; i < ix(n); ++i)
        for (Idx j = 0; j < ix(n); ++j) {
            if (coupling_(i, j) <= 0.0) continue;
            if (p(i, j) <= 0.0) bad << " (" << i << "," << j << ")";
            else weight_(i, j) = coupling_(i, j) / p(i, j);
        }
    if (!bad.str().empty()) throw NumericalFault("coupling charges pairs the reference cannot connect:" + bad.str());
}

Mat ReciprocalMeasure::ref_transition(double s, double t) const { return transition_matrix(ref_, s, t); }

Vec ReciprocalMeasure::marginal(double t) const {
    require(t >= 0.0 && t <= T_, "time outside [0, T]");
    const Mat a = ref_transition(0.0, t).transpose() * weight_;
    const Mat b = ref_transition(t, T_);
    return a.cwiseProduct(b).rowwise().sum();
}

Vec ReciprocalMeasure::terminal_given(double t, std::size_t x) const {
    require(t >= 0.0 && t <= T_ && x < n_states(), "time or state out of range");
    const Mat a = ref_transition(0.0, t).transpose() * weight_;
    const Mat b = ref_transition(t, T_);
    Vec r = a.row(ix(x)).cwiseProduct(b.row(ix(x))).transpose();
    const double s = r.sum();
    if (s <= 0.0) throw NumericalFault("state " + std::to_string(x) + " has zero mass at t=" + std::to_string(t));
    return r / s;
}

Mat ReciprocalMeasure::forward_rates(double t) const {
    const Mat a = ref_transition(0.0, t).transpose() * weight_;
    const Mat h = a * ref_transition(t, T_).transpose();
    const Mat q = ref_.at(t);
    Mat out = q;
    for (Idx x = 0; x < q.rows(); ++x) {
        if (!(h(x, x) > 1e-300)) continue;
        for (Idx y = 0; y < q.cols(); ++y)
            if (x != y) out(x, y) = q(x, y) * h(x, y) / h(x, x);
    }
    return with_diagonal(out);
}

Mat ReciprocalMeasure::reverse_rates(double t) const {
    const Mat b = weight_ * ref_transition(t, T_).transpose();
    const Mat g = b.transpose() * ref_transition(0.0, t);
    const Mat q = ref_.at(t);
    Mat out = Mat::Zero(q.rows(), q.cols());
    for (Idx x = 0; x < q.rows(); ++x) {
        for (Idx z = 0; z < q.cols(); ++z) {
            if (x == z) continue;
            // time-reversed jump x -> z is a forward jump z -> x
            out(x, z) = g(x, x) > 1e-300 ? q(z, x) * g(x, z) / g(x, x) : q(z, x);
        }
    }
    return with_diagonal(out);
}

Generator ReciprocalMeasure::forward_projection() const {
    auto self = std::make_shared<const ReciprocalMeasure>(*this);
    return Generator::from_function(n_states(), [self](double t) { return self->forward_rates(t); }, T_, true);
}

Generator ReciprocalMeasure::reverse_projection() const {
    auto self = std::make_shared<const ReciprocalMeasure>(*this);
    const double T = T_;
    return Generator::from_function(
        n_states(), [self, T](double s) { return self->reverse_rates(std::max(0.0, T - s)); }, T, true);
}

Vec markov_projection_generator(const ReciprocalMeasure& pi, double t, std::size_t x) {
    require(x < pi.n_states(), "state out of range");
    const Vec m = pi.marginal(t);
    if (m[ix(x)] <= 0.0) throw NumericalFault("state " + std::to_string(x) + " has zero mass at t=" + std::to_string(t));
    return pi.forward_rates(t).row(ix(x)).transpose();
}

Mat empirical_coupling(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t n) {
    require(!pairs.empty(), "empirical coupling needs pairs");
    Mat c = Mat::Zero(ix(n), ix(n));
    for (const auto& [a, b] : pairs) {
        require(a < n && b < n, "pair state out of range");
        c(ix(a), ix(b)) += 1.0;
    }
    return c / double(pairs.size());
}

DiscreteSb discrete_sb_exact(const Generator& q0, const Vec& pi0, const Vec& piT, double T) {
    const std::size_t n = q0.n_states();
    require(std::size_t(pi0.size()) == n && std::size_t(piT.size()) == n, "marginals must match the state count");
    require(T > 0.0, "horizon must be positive");
    validate_law(pi0, 1e-9);
    validate_law(piT, 1e-9);
    const Mat p = transition_matrix(q0, 0.0, T);
    Mat cost = Mat::Zero(ix(n), ix(n));
    std::ostringstream bad;
    for (Idx i = 0; i < ix(n); ++i)
        for (Idx j = 0; j < ix(n); ++j) {
            if (pi0[i] <= 0.0 || piT[j] <= 0.0) continue;
            if (p(i, j) <= 0.0) bad << " (" << i << "," << j << ")";
            else cost(i, j) = -std::log(p(i, j));
        }
    if (!bad.str().empty()) throw NumericalFault("reference transition vanishes on charged pairs:" + bad.str());
    ot::SinkhornConfig cfg;
    cfg.epsilon = 1.0;
    cfg.marginal_tol = 1e-13;
    cfg.max_iters = 200000;
    auto res = ot::sinkhorn_solve(pi0, piT, cost, cfg);
    if (!res.report.converged) throw NumericalFault("Sinkhorn did not reach the marginal tolerance");
    Mat coupling = res.coupling.weights;
    coupling /= coupling.sum();
    const Mat ref = pi0.asDiagonal() * p;
    const double kl = ot::kl_discrete(coupling, ref);
    return DiscreteSb{ReciprocalMeasure(q0, std::move(coupling), T), kl, std::move(res.report)};
}

Vec value_at(const Generator& q0, const Vec& terminal_cost, double T, double t) {
    require(std::size_t(terminal_cost.size()) == q0.n_states(), "terminal cost size must match the states");
    require(terminal_cost.allFinite(), "terminal cost must be finite");
    require(t >= 0.0 && t <= T, "time outside [0, T]");
    if (t == T) return terminal_cost;
    const Mat p = transition_matrix(q0, t, T);
    const Idx n = p.rows();
    Vec v(n);
    std::vector<double> terms(static_cast<std::size_t>(n));
    for (Idx x = 0; x < n; ++x) {
        for (Idx y = 0; y < n; ++y) terms[std::size_t(y)] = p(x, y) > 0.0 ? std::log(p(x, y)) - terminal_cost[y] : -kInf;
        v[x] = -log_sum_exp(terms);
    }
    return v;
}

DiscreteControl discrete_value(const Generator& q0, const Vec& terminal_cost, double T, std::size_t n_times) {
    require(n_times >= 2 && T > 0.0, "value grid needs two times and a positive horizon");
    DiscreteValue dv;
    dv.values.resize(ix(n_times), terminal_cost.size());
    for (std::size_t k = 0; k < n_times; ++k) {
        const double t = k + 1 == n_times ? T : T * double(k) / double(n_times - 1);
        dv.times.push_back(t);
        dv.values.row(ix(k)) = value_at(q0, terminal_cost, T, t).transpose();
    }
    ensure_finite(dv.values, "discrete value");
    Generator opt = Generator::from_function(
        q0.n_states(),
        [q0, terminal_cost, T](double t) {
            const Vec v = value_at(q0, terminal_cost, T, std::min(t, T));
            const Mat q = q0.at(t);
            Mat out = q;
            for (Idx x = 0; x < q.rows(); ++x)
                for (Idx y = 0; y < q.cols(); ++y)
                    if (x != y) out(x, y) = q(x, y) * std::exp(v[x] - v[y]);
            return with_diagonal(out);
        },
        T, false);
    return {std::move(dv), std::move(opt)};
}

DiscreteLoss discrete_soc_loss(const Generator& q_u, const Generator& q0, const Vec& terminal_cost,
                               const Generator& proposal, const Vec& init, double T, const DiscreteLossConfig& cfg) {
    const std::size_t n = q0.n_states();
    require(q_u.n_states() == n && proposal.n_states() == n, "generators must share the state space");
    require(std::size_t(terminal_cost.size()) == n && std::size_t(init.size()) == n, "cost and law must match the states");
    validate_law(init, 1e-9);
    DiscreteLoss out;
    if (cfg.exact) {
        switch (cfg.kind) {
        case LossKind::RelativeEntropy: {
            const double kl = ctmc_kl(q_u, q0, init, init, T, KlMethod::Exact).value;
            out.estimate = {kl + propagate_forward(q_u, init, 0.0, T).dot(terminal_cost), 0.0, 0};
            break;
        }
        case LossKind::CrossEntropy: {
            const Generator star = discrete_value(q0, terminal_cost, T, 2).optimal;
            const double a = ctmc_kl(star, q_u, init, init, T, KlMethod::Exact).value;
            const double b = ctmc_kl(star, q0, init, init, T, KlMethod::Exact).value;
            out.estimate = {a - b, 0.0, 0};
            break;
        }
        case LossKind::LogVariance:
            throw ContractError("the log-variance loss has no exact mode");
        }
        return out;
    }
    require(cfg.n_paths >= 2, "loss estimate needs at least two paths");
    // Function-valued generators are tabulated once so sampling and weights see the same rates.
    const Generator qu_t = prepared(q_u, T), q0_t = prepared(q0, T), prop_t = prepared(proposal, T);
    const Generator& sampler = cfg.kind == LossKind::RelativeEntropy ? qu_t : prop_t;
    const auto paths = simulate_ctmc_batch(sampler, init, cfg.n_paths, T, cfg.seed);
    const std::size_t m = paths.size();
    std::vector<double> f(m), w(m);
    parallel_for(m, [&](std::size_t i) {
        const auto& p = paths[i];
        const double phi = terminal_cost[ix(p.final_state())];
        const double lu = ctmc_log_rnd(p, qu_t, q0_t, init, init);
        switch (cfg.kind) {
        case LossKind::RelativeEntropy:
            f[i] = lu + phi;
            break;
        case LossKind::CrossEntropy:
            f[i] = -lu;
            w[i] = -phi - ctmc_log_rnd(p, prop_t, q0_t, init, init);
            break;
        case LossKind::LogVariance:
            f[i] = lu + phi - (cfg.offset ? (*cfg.offset)[ix(p.initial())] : 0.0);
            break;
        }
    });
    for (double v : f)
        if (!std::isfinite(v)) throw NumericalFault("log density ratio is not finite on a sampled path");
    if (cfg.kind == LossKind::RelativeEntropy) {
        out.estimate = mean_estimate(f);
    } else if (cfg.kind == LossKind::LogVariance) {
        out.estimate = variance_estimate(f);
    } else {
        const double top = *std::max_element(w.begin(), w.end());
        double sw = 0.0, sw2 = 0.0, swf = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            w[i] = std::exp(w[i] - top);
            sw += w[i];
            sw2 += w[i] * w[i];
            swf += w[i] * f[i];
        }
        const double est = swf / sw;
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) var += w[i] * w[i] * (f[i] - est) * (f[i] - est);
        out.estimate = {est, std::sqrt(var) / sw, m};
        out.effective_sample_size = sw * sw / sw2;
        out.low_ess_warning = out.effective_sample_size < 10.0;
    }
    return out;
}

namespace {

struct RateParams {
    std::vector<std::array<std::size_t, 3>> slots;  // piece, from, to
};

RateMatrix assemble(const std::vector<double>& starts, std::size_t n, const RateParams& layout, const Vec& theta) {
    std::vector<Mat> pieces(starts.size(), Mat::Zero(ix(n), ix(n)));
    for (std::size_t k = 0; k < layout.slots.size(); ++k) {
        const auto& s = layout.slots[k];
        pieces[s[0]](ix(s[1]), ix(s[2])) = theta[ix(k)];
    }
    for (auto& p : pieces) p = with_diagonal(p);
    RateMatrix r;
    r.starts = starts;
    r.pieces = std::move(pieces);
    return r;
}

}  // namespace

RateFit fit_rates_re(const RateMatrix& q0, const Vec& terminal_cost, const Vec& init, double T, const RateFitConfig& cfg) {
    require(cfg.pieces >= 1 && T > 0.0, "rate fit needs pieces and a positive horizon");
    const std::size_t n = q0.n_states();
    std::vector<double> starts;
    for (std::size_t k = 0; k < cfg.pieces; ++k) starts.push_back(T * double(k) / double(cfg.pieces));
    RateParams layout;
    std::vector<double> init_theta;
    for (std::size_t k = 0; k < cfg.pieces; ++k) {
        const Mat q = q0.at(starts[k] + 0.5 * T / double(cfg.pieces));
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t y = 0; y < n; ++y)
                if (x != y && q(ix(x), ix(y)) > 0.0) {
                    layout.slots.push_back({k, x, y});
                    init_theta.push_back(q(ix(x), ix(y)));
                }
    }
    const Generator ref(q0);
    DiscreteLossConfig lc;
    lc.exact = true;
    auto objective = [&](const Vec& th) {
        const Generator g(assemble(starts, n, layout, th));
        return discrete_soc_loss(g, ref, terminal_cost, g, init, T, lc).estimate.value;
    };
    const Idx m = ix(layout.slots.size());
    Vec theta = Eigen::Map<const Vec>(init_theta.data(), m);
    auto gradient = [&](const Vec& th) {
        Vec g(m);
        for (Idx k = 0; k < m; ++k) {
            const double h = cfg.fd_step * std::max(1.0, th[k]);
            Vec a = th, b = th;
            a[k] += h;
            if (th[k] >= h) {
                b[k] -= h;
                g[k] = (objective(a) - objective(b)) / (2.0 * h);
            } else {
                g[k] = (objective(a) - objective(th)) / h;
            }
        }
        return g;
    };
    auto project = [](Vec v) { return v.cwiseMax(0.0); };
    RateFit fit;
    double f = objective(theta);
    fit.objective_trace.push_back(f);
    Vec g = gradient(theta);
    double step = 0.1;
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        const Vec pg = theta - project(theta - g);
        if (pg.norm() < cfg.grad_tol) {
            fit.converged = true;
            break;
        }
        Vec next;
        double fn = kInf;
        for (int ls = 0; ls < 40; ++ls) {
            next = project(theta - step * g);
            fn = objective(next);
            if (fn <= f - 1e-4 * g.dot(theta - next)) break;
            step *= 0.5;
        }
        if (!(fn <= f)) break;
        const Vec gn = gradient(next);
        const Vec s = next - theta, y = gn - g;
        const double sy = s.dot(y);
        step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-6, 1e3) : std::min(1e3, step * 2.0);
        theta = next;
        f = fn;
        g = gn;
        fit.objective_trace.push_back(f);
    }
    fit.rates = assemble(starts, n, layout, theta);
    return fit;
}

DdsbmResult ddsbm_run(const Generator& q0, const Vec& pi0, const Vec& piT, double T, std::size_t n_iters,
                      const DdsbmConfig& cfg, std::uint64_t seed) {
    const std::size_t n = q0.n_states();
    const DiscreteSb sb = discrete_sb_exact(q0, pi0, piT, T);
    DdsbmResult res;
    res.sb_coupling = sb.coupling();
    Mat coupling = cfg.initial_coupling ? *cfg.initial_coupling : Mat(pi0 * piT.transpose());
    require(std::size_t(coupling.rows()) == n && std::size_t(coupling.cols()) == n, "initial coupling must be n x n");
    auto tv = [](const Mat& a, const Mat& b) { return 0.5 * (a - b).cwiseAbs().sum(); };
    auto harvest = [&](const Generator& gen, const Vec& start, std::uint64_t stream, bool reversed) {
        const auto paths = simulate_ctmc_batch(gen, start, cfg.n_paths, T, derive_seed(seed, stream));
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        pairs.reserve(paths.size());
        for (const auto& p : paths)
            pairs.emplace_back(reversed ? p.final_state() : p.initial(), reversed ? p.initial() : p.final_state());
        return empirical_coupling(pairs, n);
    };
    if (cfg.mode == DdsbmMode::Sampled) {
        require(cfg.n_paths >= 1, "sampled mode needs paths");
        RandomStream rng(seed, stream_id("ddsbm-init"));
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        std::vector<double> flat(coupling.data(), coupling.data() + coupling.size());
        for (std::size_t i = 0; i < cfg.n_paths; ++i) {
            const std::size_t c = rng.categorical(flat, flat.size(), coupling.sum());
            pairs.emplace_back(c % n, c / n);
        }
        coupling = empirical_coupling(pairs, n);
    }
    for (std::size_t it = 1; it <= n_iters; ++it) {
        DdsbmIteration rep;
        rep.iteration = it;
        const ReciprocalMeasure current(q0, coupling, T);
        Mat forward;
        if (cfg.mode == DdsbmMode::Exact) {
            forward = pi0.asDiagonal() * transition_matrix(current.forward_projection(), 0.0, T);
        } else {
            forward = harvest(current.forward_projection(), pi0, stream_id("ddsbm-forward") + it, false);
        }
        rep.forward_kl_to_sb = ot::kl_discrete(forward, sb.coupling());
        const ReciprocalMeasure mid(q0, forward, T);
        if (cfg.mode == DdsbmMode::Exact) {
            coupling = (piT.asDiagonal() * transition_matrix(mid.reverse_projection(), 0.0, T)).transpose();
        } else {
            coupling = harvest(mid.reverse_projection(), piT, stream_id("ddsbm-reverse") + it, true);
        }
        coupling /= coupling.sum();
        rep.kl_to_sb = ot::kl_discrete(coupling, sb.coupling());
        rep.tv_to_sb = tv(coupling, sb.coupling());
        res.report.push_back(rep);
    }
    res.coupling = coupling;
    return res;
}

}  // namespace bridgekit::dsb
