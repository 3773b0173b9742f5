#pragma once

#include "nonprob/common.hpp"
#include "nonprob/glm.hpp"
#include "nonprob/ps.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace nonprob {

struct VarianceResult {
    double se = 0.0;
    std::string method;        // "analytic" or "bootstrap"
    double v1 = 0.0;           // model component (analytic, where defined)
    double v2 = 0.0;           // design component (analytic, where defined)
    std::vector<double> replicates;
    int failures = 0;
    bool n_replacement_caveat = false;  // estimated-size doubly robust heuristic
    std::vector<std::string> warnings;
};

// One bootstrap draw: with-replacement rows of the nonprobability sample and
// a stratified rescaling resample of the probability sample (n_h - 1 draws
// per stratum, weights scaled by n_h / (n_h - 1)).
struct ResampleDraw {
    std::vector<Eigen::Index> np_rows;
    std::vector<Eigen::Index> p_rows;
    VectorXd p_weights;
};

ResampleDraw draw_subbootstrap(Eigen::Index n_np, const std::vector<int>& p_strata,
                               const VectorXd& d_p, std::mt19937_64& rng);

using ReplicateEstimator = std::function<double(const ResampleDraw&)>;

// Replicates with failed fits are dropped and counted; more than 20%
// failures aborts. Each replicate owns a stream derived from (seed, index).
VarianceResult bootstrap_variance(const ReplicateEstimator& estimator, Eigen::Index n_np,
                                  const std::vector<int>& p_strata, const VectorXd& d_p, int B,
                                  std::uint64_t seed);

// Stratified with-replacement variance of a total from per-unit (already
// weighted) contributions; single-unit strata contribute zero.
MatrixXd design_variance_wr(const MatrixXd& Z, const std::vector<int>& strata);

// Joint linearization over the stacked (mean, gamma) estimating equations
// plus the design component of the reference-sample totals.
VarianceResult analytic_variance_ipw(const VectorXd& y, const VectorXd& case_weights,
                                     const MatrixXd& X_np, const PsFit& ps, const MatrixXd& X_p,
                                     const VectorXd& d_p, const std::vector<int>& p_strata,
                                     double mu_hat, std::optional<double> pop_size = std::nullopt);

// Model component V1 from the outcome-fit influence, design component V2
// from the weighted mean of the predictions over the reference sample.
VarianceResult analytic_variance_mi_glm(const MatrixXd& X_np, const VectorXd& y,
                                        const VectorXd& case_weights, const OutcomeFit& fit,
                                        const MatrixXd& X_p, const VectorXd& d_p,
                                        const std::vector<int>& p_strata, double mu_hat);

// Benchmark-total mode: only the model component is estimable.
VarianceResult analytic_variance_mi_glm_totals(const MatrixXd& X_np, const VectorXd& y,
                                               const VectorXd& case_weights, const OutcomeFit& fit,
                                               const VectorXd& totals, double pop_size);

// Design-based variance of the weighted mean of imputed values (matching
// estimators in the large-donor-pool regime).
VarianceResult analytic_variance_mi_nn(const VectorXd& y_star, const VectorXd& d_p,
                                       const std::vector<int>& p_strata, double mu_hat,
                                       bool pmm_caveat = false);

enum class DrVarianceKind { separate_mle, separate_gee, bias_min };

// Stacked (mean, gamma, beta) sandwich for the doubly robust estimators;
// the estimated-size form replaces population sizes with estimated totals
// and flags the caveat.
VarianceResult analytic_variance_dr(const VectorXd& y, const VectorXd& case_weights,
                                    const MatrixXd& X_np_sel, const PsFit& ps,
                                    const MatrixXd& X_np_out, const OutcomeFit& outcome,
                                    const MatrixXd& X_p_sel, const MatrixXd& X_p_out,
                                    const VectorXd& d_p, const std::vector<int>& p_strata,
                                    double mu_hat, DrVarianceKind kind, bool estimated_n,
                                    std::optional<double> pop_size = std::nullopt);

std::pair<double, double> confidence_interval(double point, double se, double level = 0.95);

}  // namespace nonprob
