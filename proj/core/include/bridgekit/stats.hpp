#pragma once

#include "bridgekit/common.hpp"

#include <cstdint>
#include <vector>

namespace bridgekit::stats {

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value.
TestResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
TestResult ks_one_sample(std::vector<double> a, const std::function<double(double)>& cdf);

/// 5% critical value of the two-sample KS statistic.
double ks_critical_5pct(std::size_t n, std::size_t m);

/// Energy-distance two-sample test with a permutation p-value. Rows are samples.
TestResult energy_test(const Mat& a, const Mat& b, std::size_t permutations, std::uint64_t seed);

struct GaussianFit {
    Vec mean;
    Mat cov;
};

GaussianFit fit_gaussian(const Mat& samples);

/// KL(N(m0, S0) || N(m1, S1)).
double gaussian_kl(const Vec& m0, const Mat& s0, const Vec& m1, const Mat& s1);

/// Gaussian cumulative distribution function.
double normal_cdf(double x, double mean = 0.0, double sd = 1.0);

}  // namespace bridgekit::stats
