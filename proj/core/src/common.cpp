#include "bridgekit/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numbers>
#include <sstream>
#include <vector>

namespace bridgekit {

void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

void ensure_finite(double value, const std::string& what) {
    if (!std::isfinite(value)) throw NumericalFault(what + " is not finite");
}

void ensure_finite(const Mat& value, const std::string& what) {
    if (!value.allFinite()) throw NumericalFault(what + " has non-finite entries");
}

double log_sum_exp(std::span<const double> v) {
    double m = -kInf;
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double log_sum_exp(const Vec& v) { return log_sum_exp(std::span<const double>(v.data(), v.size())); }

McEstimate mean_estimate(std::span<const double> samples) {
    const std::size_t n = samples.size();
    require(n >= 1, "mean_estimate needs at least one sample");
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= double(n);
    double ss = 0.0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    const double var = n > 1 ? ss / double(n - 1) : 0.0;
    return {mean, std::sqrt(var / double(n)), n};
}

McEstimate variance_estimate(std::span<const double> samples) {
    const std::size_t n = samples.size();
    if (n < 2) throw NumericalFault("variance of a single sample is undefined");
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= double(n);
    double m2 = 0.0, m4 = 0.0;
    for (double x : samples) {
        const double d2 = (x - mean) * (x - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= double(n);
    m4 /= double(n);
    const double var = m2 * double(n) / double(n - 1);
    // delta-method standard error of the sample variance
    const double se = std::sqrt(std::max(0.0, (m4 - m2 * m2) / double(n)));
    return {var, se, n};
}

namespace {
Eigen::SelfAdjointEigenSolver<Mat> eig(const Mat& a) {
    Mat s = 0.5 * (a + a.transpose());
    return Eigen::SelfAdjointEigenSolver<Mat>(s);
}
}  // namespace

void require_spd(const Mat& a, const std::string& what) {
    require(a.rows() == a.cols(), what + " must be square");
    ensure_finite(a, what);
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, a.cwiseAbs().maxCoeff()))
        throw NumericalFault(what + " is not symmetric");
    const double lmin = eig(a).eigenvalues().minCoeff();
    if (!(lmin > 0.0)) {
        std::ostringstream os;
        os << what << " is not positive definite (smallest eigenvalue " << lmin << ")";
        throw NumericalFault(os.str());
    }
}

Mat sym_sqrt(const Mat& a) {
    auto es = eig(a);
    Vec l = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * l.asDiagonal() * es.eigenvectors().transpose();
}

Mat sym_inv_sqrt(const Mat& a) {
    auto es = eig(a);
    Vec l = es.eigenvalues().cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * l.asDiagonal() * es.eigenvectors().transpose();
}

Mat sym_inverse(const Mat& a) {
    auto es = eig(a);
    Vec l = es.eigenvalues().cwiseInverse();
    return es.eigenvectors() * l.asDiagonal() * es.eigenvectors().transpose();
}

double simpson(const std::function<double(double)>& f, double a, double b, int panels) {
    if (panels < 2) panels = 2;
    if (panels % 2) ++panels;
    const double h = (b - a) / panels;
    double s = f(a) + f(b);
    for (int k = 1; k < panels; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
    return s * h / 3.0;
}

GaussLegendre::GaussLegendre(int order) {
    require(order >= 1, "Gauss-Legendre order must be positive");
    nodes.resize(order);
    weights.resize(order);
    for (int i = 0; i < order; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= order; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (order == 1) { p1 = x; p0 = 1.0; }
            dp = order * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
}

double GaussLegendre::integrate(const std::function<double(double)>& f, double a, double b) const {
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(mid + half * nodes[i]);
    return s * half;
}

const char* version() { return "0.1.0"; }

}  // namespace bridgekit

#include <omp.h>

#include "bridgekit/parallel.hpp"

namespace bridgekit {

int thread_cap() {
    static const int cap = [] {
        if (const char* s = std::getenv("BRIDGEKIT_THREADS")) {
            const int v = std::atoi(s);
            if (v > 0) return v;
        }
        return omp_get_max_threads();
    }();
    return cap;
}

}  // namespace bridgekit
