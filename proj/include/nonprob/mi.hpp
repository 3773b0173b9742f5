#pragma once

#include "nonprob/common.hpp"
#include "nonprob/glm.hpp"

#include <string>
#include <vector>

namespace nonprob {

enum class PmmVariant { a, b };  // a: prediction-to-prediction, b: prediction-to-observed

// Mass-imputation estimate of the population mean for one target variable.
struct MiEstimate {
    std::string method;
    double mu = 0.0;       // headline estimate (weighted mean of imputed values)
    double mu_pr2 = 0.0;   // correction-adjusted variant (model methods)
    VectorXd y_star;       // imputed values on the probability sample
    VectorXd pred_np;      // model predictions on the nonprobability sample
    VectorXd pred_p;       // model predictions on the probability sample
    double nhat_p = 0.0;
    OutcomeFit outcome;    // populated for model-based methods
    std::vector<std::string> warnings;
};

// GLM prediction estimator; both the plain projection (PR1) and the
// residual-corrected form (PR2) are computed. They agree exactly for a
// gaussian model with an intercept.
MiEstimate mi_glm(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                  const GlmFamily& family, const MatrixXd& X_p, const VectorXd& d_p,
                  const std::vector<std::string>& column_names = {});

// Benchmark-total form: linear (gaussian) models only, mu = mean_x' beta.
MiEstimate mi_glm_totals(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                         const GlmFamily& family, const VectorXd& totals, double pop_size,
                         const std::vector<std::string>& column_names = {});

// Nearest-neighbour imputation over the covariate space.
MiEstimate mi_nn(const MatrixXd& X_np_match, const VectorXd& y, const MatrixXd& X_p_match,
                 const VectorXd& d_p, int k, double eps = 1e-9);

// Predictive mean matching on the model's mean scale.
MiEstimate mi_pmm(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                  const GlmFamily& family, const MatrixXd& X_p, const VectorXd& d_p, int k,
                  PmmVariant variant, double eps = 1e-9,
                  const std::vector<std::string>& column_names = {});

// Local-polynomial (tricube-weighted) smoothing of y over continuous
// predictors, evaluated at the probability-sample rows.
struct NparOptions {
    double span = 0.75;
    int degree = 1;  // 1 or 2
};
MiEstimate mi_npar(const MatrixXd& X_np_cont, const VectorXd& y, const MatrixXd& X_p_cont,
                   const VectorXd& d_p, const NparOptions& options = {});

}  // namespace nonprob
