#pragma once

#include "nonprob/common.hpp"

#include <string>
#include <vector>

namespace nonprob {

enum class Family { gaussian, binomial, poisson };

Family family_from_string(const std::string& name);
std::string family_name(Family family);

// Canonical-link mean machinery: identity / logit / log.
struct GlmFamily {
    Family family = Family::gaussian;

    double mean(double eta) const;        // m = g^{-1}(eta)
    double mean_deriv(double eta) const;  // dm/deta
    double mean_deriv2(double eta) const; // d2m/deta2
    double link(double mu) const;
    double variance(double mu) const;     // v(mu), dispersion excluded
    double deviance_unit(double y, double mu) const;

    VectorXd mean(const VectorXd& eta) const;
    VectorXd mean_deriv(const VectorXd& eta) const;
};

struct OutcomeFit {
    VectorXd coefficients;
    GlmFamily family;
    std::vector<std::string> column_names;
    bool converged = false;
    int iterations = 0;
    double deviance = 0.0;
    std::vector<double> deviance_trace;  // one entry per accepted IRLS step
    VectorXd fitted;                     // means on the training rows
    std::vector<std::string> warnings;

    VectorXd linear_predictor(const MatrixXd& X) const { return X * coefficients; }
};

struct IrlsOptions {
    double tol = 1e-8;   // max absolute coefficient change
    int max_iter = 100;
    bool singular_ok = false;  // keep a minimum-norm solve instead of failing
};

// Quasi-likelihood fit by iteratively reweighted least squares with
// step-halving so the deviance never increases.
OutcomeFit irls_fit(const MatrixXd& X, const VectorXd& y, const GlmFamily& family,
                    const VectorXd& case_weights, const VectorXd* start = nullptr,
                    const std::vector<std::string>& column_names = {},
                    const IrlsOptions& options = {});

// Mean predictions on new rows; columns must match the training design.
VectorXd predict_mean(const OutcomeFit& fit, const MatrixXd& X_new,
                      const std::vector<std::string>& column_names = {});

// Weighted score X' W (y - m): zero at the fitted coefficients.
VectorXd glm_score(const MatrixXd& X, const VectorXd& y, const GlmFamily& family,
                   const VectorXd& case_weights, const VectorXd& beta);

double glm_log_likelihood(const MatrixXd& X, const VectorXd& y, const GlmFamily& family,
                          const VectorXd& case_weights, const VectorXd& beta);

}  // namespace nonprob
