#pragma once

#include "nonprob/common.hpp"
#include "nonprob/data.hpp"

#include <string>
#include <vector>

namespace nonprob {

enum class PsLinkKind { logit, probit, cloglog };
PsLinkKind ps_link_from_string(const std::string& name);
std::string ps_link_name(PsLinkKind link);

// Selection-probability link pi(eta) with first and second derivatives.
struct PsLink {
    PsLinkKind kind = PsLinkKind::logit;

    double prob(double eta) const;
    double dprob(double eta) const;
    double d2prob(double eta) const;
    double inverse(double pi) const;
};

enum class PsMethod { mle, gee };

// h(x, gamma) in the estimating equations: x itself, or x / pi (the
// calibration variant that reproduces reference totals exactly).
enum class HFunction { x, x_over_pi };

struct PsOptions {
    double clip = 1e-6;       // propensity floor/ceiling
    double tol = 1e-9;        // relative residual tolerance
    int max_iter = 100;
    int max_halvings = 30;
    VectorXd start;           // empty: zero vector
};

struct PsFit {
    VectorXd gamma;
    PsLinkKind link = PsLinkKind::logit;
    PsMethod method = PsMethod::mle;
    HFunction h = HFunction::x;
    std::vector<std::string> column_names;
    VectorXd scores_np;       // clipped propensities on the nonprob sample
    VectorXd scores_p;        // empty when fitted against totals only
    VectorXd ipw_weights;     // 1 / scores_np
    double nhat_np = 0.0;     // case-weighted sum of ipw weights
    VectorXd final_residual;  // estimating-equation value at gamma
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> warnings;
};

double pseudo_loglik(const VectorXd& gamma, const MatrixXd& X_np, const VectorXd& w_np,
                     const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                     double clip = 1e-6);
VectorXd pseudo_score(const VectorXd& gamma, const MatrixXd& X_np, const VectorXd& w_np,
                      const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                      double clip = 1e-6);

PsFit ps_fit_mle(const MatrixXd& X_np, const VectorXd& w_np, const MatrixXd& X_p,
                 const VectorXd& d_p, const PsLink& link,
                 const std::vector<std::string>& column_names = {}, const PsOptions& options = {});

// GEE fit against a reference sample, or against population totals
// (benchmark totals permit only h = x / pi).
PsFit ps_fit_gee(const MatrixXd& X_np, const VectorXd& w_np, const MatrixXd& X_p,
                 const VectorXd& d_p, const PsLink& link, HFunction h,
                 const std::vector<std::string>& column_names = {}, const PsOptions& options = {});
PsFit ps_fit_gee_totals(const MatrixXd& X_np, const VectorXd& w_np, const VectorXd& totals,
                        const PsLink& link, HFunction h,
                        const std::vector<std::string>& column_names = {},
                        const PsOptions& options = {});

double pseudo_loglik(const VectorXd& gamma, const NonProbSample& np, const ProbSample& p,
                     const PsLink& link, double clip = 1e-6);
PsFit ps_fit_mle(const NonProbSample& np, const ProbSample& p, const PsLink& link,
                 const PsOptions& options = {});
PsFit ps_fit_gee(const NonProbSample& np, const ProbSample& p, const PsLink& link, HFunction h,
                 const PsOptions& options = {});
PsFit ps_fit_gee(const NonProbSample& np, const PopulationBenchmark& bench, const PsLink& link,
                 HFunction h, const PsOptions& options = {});

VectorXd ps_predict(const PsFit& fit, const MatrixXd& X, double clip = 1e-6);

}  // namespace nonprob
