#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nonprob {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Input/schema problems: bad files, missing columns, invalid combinations.
class SchemaError : public std::invalid_argument {
public:
    explicit SchemaError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Cell-level parse failures; carries the 1-based data row where possible.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures: singular systems, non-finite values, degenerate inputs.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Iterative solver gave up; keeps the last iterate and its residual norm.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& msg, VectorXd last, double residual)
        : std::runtime_error(msg), last_iterate(std::move(last)), residual_norm(residual) {}
    VectorXd last_iterate;
    double residual_norm = 0.0;
};

// min / q1 / median / q3 / max plus mean; quantiles use the linear
// interpolation convention (R type 7).
struct FiveNumberSummary {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

FiveNumberSummary five_number_summary(const VectorXd& v);
double quantile_type7(std::vector<double> sorted_or_not, double p);

double weighted_mean(const VectorXd& y, const VectorXd& w);

// Standard normal helpers (probit link, CI quantiles).
double norm_cdf(double x);
double norm_pdf(double x);
double norm_quantile(double p);

// Stable stream derivation for replicate b of a seeded run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace nonprob
