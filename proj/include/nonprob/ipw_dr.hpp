#pragma once

#include "nonprob/common.hpp"
#include "nonprob/glm.hpp"
#include "nonprob/ps.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nonprob {

// Inverse-probability-weighted mean for one target variable.
struct IpwEstimate {
    double mu = 0.0;         // selected form
    double hajek = 0.0;
    double ht = 0.0;         // defined only when a population size was given
    bool ht_defined = false;
    std::string form;        // "hajek" or "ht"
    double naive = 0.0;      // case-weighted sample mean
    double nhat_np = 0.0;
};

// Hajek by default; the Horvitz-Thompson form is selected when a fixed
// population size is supplied.
IpwEstimate ipw_estimate(const VectorXd& y, const VectorXd& case_weights, const PsFit& ps,
                         std::optional<double> pop_size = std::nullopt,
                         bool prefer_hajek = true);

enum class DrPopSize { known, estimated };

struct DrEstimate {
    double mu = 0.0;
    double correction = 0.0;  // ipw-weighted residual term
    double projection = 0.0;  // design-weighted prediction term
    std::string variant;      // known_N | estimated_N | bias_min
    VectorXd gamma;
    VectorXd beta;
    double nhat_np = 0.0;
    double nhat_p = 0.0;
    std::vector<std::string> warnings;
};

// Doubly robust estimator from separately fitted selection and outcome
// models. The estimated-size variant normalizes the two terms by their own
// estimated totals.
DrEstimate dr_separate(const VectorXd& y, const VectorXd& case_weights, const PsFit& ps,
                       const VectorXd& pred_np, const VectorXd& pred_p, const VectorXd& d_p,
                       DrPopSize mode, std::optional<double> pop_size = std::nullopt);

// Benchmark-total form: projection reduces to mean_x' beta (linear model).
DrEstimate dr_separate_totals(const VectorXd& y, const VectorXd& case_weights, const PsFit& ps,
                              const VectorXd& pred_np, const VectorXd& beta, const VectorXd& totals,
                              double pop_size, DrPopSize mode);

struct BiasMinOptions {
    double clip = 1e-6;
    double tol_abs = 1e-6;  // max-norm target for both residual blocks
    int max_iter = 100;
    int max_halvings = 30;
};

struct BiasMinFit {
    VectorXd gamma;
    VectorXd beta;
    VectorXd residual;  // stacked residual at the solution
    bool converged = false;
    int iterations = 0;
};

// Joint (gamma, beta) solve of the bias-minimizing estimating equations.
// Both designs must share one column set; starts usually come from the
// separate fits.
BiasMinFit bias_min_solve(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                          const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                          const GlmFamily& family, const VectorXd& start_gamma,
                          const VectorXd& start_beta, const BiasMinOptions& options = {});

// Residual of the stacked system (for replaying the postcondition).
VectorXd bias_min_residual(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                           const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                           const GlmFamily& family, const VectorXd& gamma, const VectorXd& beta,
                           double clip = 1e-6);

// Full bias-minimized DR estimate assembled in the estimated-size form.
DrEstimate dr_bias_min(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                       const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                       const GlmFamily& family, const VectorXd& start_gamma,
                       const VectorXd& start_beta, const BiasMinOptions& options = {});

}  // namespace nonprob
