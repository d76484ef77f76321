#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

namespace bridgekit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a caller violates a documented precondition or supplies malformed input.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces non-finite values or breaks a numerical guarantee.
class NumericalFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Monte Carlo estimate with its standard error.
struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;
};

/// Time-dependent scalar coefficient.
using ScalarFn = std::function<double(double)>;

/// Vector field evaluated in place: out = f(x, t).
using VectorField = std::function<void(std::span<const double> x, double t, std::span<double> out)>;

/// Scalar function of state, e.g. a terminal cost.
using StateFn = std::function<double(std::span<const double> x)>;

/// Scalar function of state and time, e.g. a running cost.
using StateTimeFn = std::function<double(std::span<const double> x, double t)>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool condition, const std::string& message);
void ensure_finite(double value, const std::string& what);
void ensure_finite(const Mat& value, const std::string& what);

/// log(sum(exp(v))) without overflow; -inf for empty or all -inf input.
double log_sum_exp(std::span<const double> v);
double log_sum_exp(const Vec& v);

/// Sample mean and standard error of the mean.
McEstimate mean_estimate(std::span<const double> samples);

/// Sample variance with the standard error of the variance estimator.
McEstimate variance_estimate(std::span<const double> samples);

/// Symmetric square root, inverse square root and inverse of an SPD matrix.
Mat sym_sqrt(const Mat& a);
Mat sym_inv_sqrt(const Mat& a);
Mat sym_inverse(const Mat& a);

/// Throws with the smallest eigenvalue when `a` is not symmetric positive definite.
void require_spd(const Mat& a, const std::string& what);

/// Composite Simpson rule with `panels` subintervals (rounded up to even).
double simpson(const std::function<double(double)>& f, double a, double b, int panels);

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;
    explicit GaussLegendre(int order);
    double integrate(const std::function<double(double)>& f, double a, double b) const;
};

/// Library version string.
const char* version();

}  // namespace bridgekit
