#pragma once

#include "nonprob/common.hpp"
#include "nonprob/glm.hpp"
#include "nonprob/ps.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nonprob {

enum class Penalty { scad, lasso, mcp };
Penalty penalty_from_string(const std::string& name);
std::string penalty_name(Penalty penalty);

struct PenaltyConfig {
    Penalty penalty = Penalty::scad;
    int nlambda = 50;
    double lambda_min_ratio = 0.001;
    int nfolds = 10;
    double a_scad = 3.7;
    double a_mcp = 3.0;
    std::vector<double> lambda;  // explicit grid overrides nlambda (strictly decreasing)
    std::uint64_t seed = 1;
    double tol = 1e-7;
    int max_sweeps = 1000;

    double a_for(Penalty p) const { return p == Penalty::mcp ? a_mcp : a_scad; }
    void validate() const;
};

// Penalty value and its derivative in |beta|; the derivative at 0+ equals
// lambda for all three penalties.
double penalty_value(Penalty penalty, double beta, double lambda, double a);
double penalty_deriv(Penalty penalty, double beta, double lambda, double a);

struct SelectionResult {
    std::vector<int> active;       // original column indices, intercept included
    VectorXd coefficients;         // full-length, original scale, at the chosen lambda
    std::vector<double> lambda_grid;
    std::vector<double> cv_error;  // per grid point
    double lambda_chosen = 0.0;
    int lambda_index = -1;
    std::vector<std::string> warnings;
};

// Penalized quasi-likelihood selection for the outcome model, coordinate
// descent on the family's working response, lambda by cross-validation.
SelectionResult select_outcome(const MatrixXd& X, const VectorXd& y, const VectorXd& case_weights,
                               const GlmFamily& family, const PenaltyConfig& config,
                               int intercept_col = 0);

// Penalized squared-balance loss for the selection model; the unpenalized
// loss is the squared norm of the estimating-equation residual.
SelectionResult select_ps(const MatrixXd& X_np, const VectorXd& w_np, const MatrixXd& X_p,
                          const VectorXd& d_p, const PsLink& link, HFunction h,
                          const PenaltyConfig& config, int intercept_col = 0);

// Union of active sets (bias-minimized doubly robust fitting needs one
// shared column set).
std::vector<int> combine_union(const SelectionResult& outcome_sel, const SelectionResult& ps_sel);

}  // namespace nonprob
