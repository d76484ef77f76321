#include "bridgekit/stats.hpp"

#include "bridgekit/random.hpp"

#include <algorithm>
#include <numeric>

namespace bridgekit::stats {

namespace {
double kolmogorov_sf(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double s = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        s += term;
        if (std::abs(term) < 1e-16) break;
    }
    return std::clamp(s, 0.0, 1.0);
}
}  // namespace

TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    require(!a.empty() && !b.empty(), "KS test needs nonempty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
    }
    const double ne = double(a.size()) * b.size() / double(a.size() + b.size());
    return {d, kolmogorov_sf((std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d)};
}

TestResult ks_one_sample(std::vector<double> a, const std::function<double(double)>& cdf) {
    require(!a.empty(), "KS test needs a nonempty sample");
    std::sort(a.begin(), a.end());
    const double n = double(a.size());
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double f = cdf(a[i]);
        d = std::max({d, std::abs(double(i + 1) / n - f), std::abs(f - double(i) / n)});
    }
    return {d, kolmogorov_sf((std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d)};
}

double ks_critical_5pct(std::size_t n, std::size_t m) {
    return 1.358 * std::sqrt(double(n + m) / (double(n) * double(m)));
}

namespace {

// energy statistic from pooled data and group labels
double energy_1d(const std::vector<double>& sorted, const std::vector<char>& label, std::size_t na, std::size_t nb) {
    double sa = 0.0, sb = 0.0, sall = 0.0;
    std::size_t ka = 0, kb = 0;
    const std::size_t n = sorted.size();
    for (std::size_t k = 0; k < n; ++k) {
        const double z = sorted[k];
        sall += z * (2.0 * double(k) - double(n) + 1.0);
        if (label[k]) { sa += z * (2.0 * double(ka) - double(na) + 1.0); ++ka; }
        else { sb += z * (2.0 * double(kb) - double(nb) + 1.0); ++kb; }
    }
    const double cross = sall - sa - sb;
    return 2.0 * cross / (double(na) * nb) - 2.0 * sa / (double(na) * na) - 2.0 * sb / (double(nb) * nb);
}

double energy_nd(const Mat& pooled, const std::vector<char>& label, std::size_t na, std::size_t nb) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    const Eigen::Index n = pooled.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double dist = (pooled.row(i) - pooled.row(j)).norm();
            const bool li = label[std::size_t(i)], lj = label[std::size_t(j)];
            if (li && lj) aa += dist;
            else if (!li && !lj) bb += dist;
            else ab += dist;
        }
    return 2.0 * ab / (double(na) * nb) - 2.0 * aa / (double(na) * na) - 2.0 * bb / (double(nb) * nb);
}

}  // namespace

TestResult energy_test(const Mat& a, const Mat& b, std::size_t permutations, std::uint64_t seed) {
    require(a.rows() >= 2 && b.rows() >= 2 && a.cols() == b.cols(), "energy test needs two samples of equal dimension");
    const std::size_t na = std::size_t(a.rows()), nb = std::size_t(b.rows()), n = na + nb;
    Mat pooled(Eigen::Index(n), a.cols());
    pooled << a, b;
    std::vector<char> label(n, 0);
    std::fill(label.begin(), label.begin() + std::ptrdiff_t(na), 1);
    RandomStream rng(seed, stream_id("energy-test"));
    const bool one_d = a.cols() == 1;
    std::vector<double> sorted;
    std::vector<std::size_t> order(n);
    if (one_d) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled(Eigen::Index(i), 0) < pooled(Eigen::Index(j), 0); });
        for (std::size_t k : order) sorted.push_back(pooled(Eigen::Index(k), 0));
    }
    auto stat = [&](const std::vector<char>& lab) {
        if (!one_d) return energy_nd(pooled, lab, na, nb);
        std::vector<char> ls(n);
        for (std::size_t k = 0; k < n; ++k) ls[k] = lab[order[k]];
        return energy_1d(sorted, ls, na, nb);
    };
    const double observed = stat(label);
    std::size_t exceed = 0;
    std::vector<char> perm = label;
    for (std::size_t p = 0; p < permutations; ++p) {
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        if (stat(perm) >= observed) ++exceed;
    }
    return {observed, (double(exceed) + 1.0) / (double(permutations) + 1.0)};
}

GaussianFit fit_gaussian(const Mat& x) {
    require(x.rows() >= 2, "Gaussian fit needs at least two samples");
    Vec m = x.colwise().mean().transpose();
    Mat c = x.rowwise() - m.transpose();
    return {m, c.transpose() * c / double(x.rows() - 1)};
}

double gaussian_kl(const Vec& m0, const Mat& s0, const Vec& m1, const Mat& s1) {
    Eigen::LLT<Mat> l1(s1), l0(s0);
    if (l1.info() != Eigen::Success || l0.info() != Eigen::Success)
        throw NumericalFault("Gaussian KL needs positive definite covariances");
    const Eigen::Index k = m0.size();
    const Vec dm = m1 - m0;
    const double tr = l1.solve(s0).trace();
    const double quad = dm.dot(l1.solve(dm));
    const double ld1 = 2.0 * l1.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double ld0 = 2.0 * l0.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return 0.5 * (tr + quad - double(k) + ld1 - ld0);
}

double normal_cdf(double x, double mean, double sd) { return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0))); }

}  // namespace bridgekit::stats
