#include "nonprob/ps.hpp"

#include <algorithm>
#include <cmath>

namespace nonprob {

namespace {

double expit(double eta) {
    if (eta >= 0) {
        const double e = std::exp(-eta);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

double clip_prob(double pi, double clip) { return std::clamp(pi, clip, 1.0 - clip); }

VectorXd clipped_probs(const PsLink& link, const VectorXd& eta, double clip) {
    VectorXd out(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) out(i) = clip_prob(link.prob(eta(i)), clip);
    return out;
}

}  // namespace

PsLinkKind ps_link_from_string(const std::string& name) {
    if (name == "logit") return PsLinkKind::logit;
    if (name == "probit") return PsLinkKind::probit;
    if (name == "cloglog") return PsLinkKind::cloglog;
    throw SchemaError("unknown propensity link: " + name);
}

std::string ps_link_name(PsLinkKind link) {
    switch (link) {
        case PsLinkKind::logit: return "logit";
        case PsLinkKind::probit: return "probit";
        case PsLinkKind::cloglog: return "cloglog";
    }
    return "";
}

double PsLink::prob(double eta) const {
    switch (kind) {
        case PsLinkKind::logit: return expit(eta);
        case PsLinkKind::probit: return norm_cdf(eta);
        case PsLinkKind::cloglog: return -std::expm1(-std::exp(eta));
    }
    return 0;
}

double PsLink::dprob(double eta) const {
    switch (kind) {
        case PsLinkKind::logit: {
            const double p = expit(eta);
            return p * (1.0 - p);
        }
        case PsLinkKind::probit: return norm_pdf(eta);
        case PsLinkKind::cloglog: return std::exp(eta - std::exp(eta));
    }
    return 0;
}

double PsLink::d2prob(double eta) const {
    switch (kind) {
        case PsLinkKind::logit: {
            const double p = expit(eta);
            return p * (1.0 - p) * (1.0 - 2.0 * p);
        }
        case PsLinkKind::probit: return -eta * norm_pdf(eta);
        case PsLinkKind::cloglog: return std::exp(eta - std::exp(eta)) * (1.0 - std::exp(eta));
    }
    return 0;
}

double PsLink::inverse(double pi) const {
    switch (kind) {
        case PsLinkKind::logit: return std::log(pi / (1.0 - pi));
        case PsLinkKind::probit: return norm_quantile(pi);
        case PsLinkKind::cloglog: return std::log(-std::log1p(-pi));
    }
    return 0;
}

double pseudo_loglik(const VectorXd& gamma, const MatrixXd& X_np, const VectorXd& w_np,
                     const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link, double clip) {
    const VectorXd eta_np = X_np * gamma;
    const VectorXd eta_p = X_p * gamma;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta_np.size(); ++i) {
        const double pi = clip_prob(link.prob(eta_np(i)), clip);
        ll += w_np(i) * std::log(pi / (1.0 - pi));
    }
    for (Eigen::Index i = 0; i < eta_p.size(); ++i) {
        const double pi = clip_prob(link.prob(eta_p(i)), clip);
        ll += d_p(i) * std::log1p(-pi);
    }
    if (!std::isfinite(ll)) throw NumericError("pseudo log-likelihood is not finite");
    return ll;
}

VectorXd pseudo_score(const VectorXd& gamma, const MatrixXd& X_np, const VectorXd& w_np,
                      const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link, double clip) {
    const VectorXd eta_np = X_np * gamma;
    const VectorXd eta_p = X_p * gamma;
    VectorXd a(eta_np.size()), b(eta_p.size());
    // units pinned at the clip bounds sit on a flat piece of the objective
    for (Eigen::Index i = 0; i < eta_np.size(); ++i) {
        const double pi = link.prob(eta_np(i));
        a(i) = (pi <= clip || pi >= 1.0 - clip)
                   ? 0.0
                   : w_np(i) * link.dprob(eta_np(i)) / (pi * (1.0 - pi));
    }
    for (Eigen::Index i = 0; i < eta_p.size(); ++i) {
        const double pi = link.prob(eta_p(i));
        b(i) = (pi <= clip || pi >= 1.0 - clip)
                   ? 0.0
                   : d_p(i) * link.dprob(eta_p(i)) / (1.0 - pi);
    }
    return X_np.transpose() * a - X_p.transpose() * b;
}

namespace {

MatrixXd pseudo_hessian(const VectorXd& gamma, const MatrixXd& X_np, const VectorXd& w_np,
                        const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link, double clip) {
    const VectorXd eta_np = X_np * gamma;
    const VectorXd eta_p = X_p * gamma;
    VectorXd da(eta_np.size()), db(eta_p.size());
    for (Eigen::Index i = 0; i < eta_np.size(); ++i) {
        const double pi = link.prob(eta_np(i));
        if (pi <= clip || pi >= 1.0 - clip) {
            da(i) = 0.0;
            continue;
        }
        const double d1 = link.dprob(eta_np(i));
        const double d2 = link.d2prob(eta_np(i));
        const double denom = pi * (1.0 - pi);
        da(i) = w_np(i) * (d2 * denom - d1 * d1 * (1.0 - 2.0 * pi)) / (denom * denom);
    }
    for (Eigen::Index i = 0; i < eta_p.size(); ++i) {
        const double pi = link.prob(eta_p(i));
        if (pi <= clip || pi >= 1.0 - clip) {
            db(i) = 0.0;
            continue;
        }
        const double d1 = link.dprob(eta_p(i));
        const double d2 = link.d2prob(eta_p(i));
        const double q = 1.0 - pi;
        db(i) = d_p(i) * (d2 * q + d1 * d1) / (q * q);
    }
    return X_np.transpose() * da.asDiagonal() * X_np - X_p.transpose() * db.asDiagonal() * X_p;
}

PsFit finalize_fit(VectorXd gamma, const MatrixXd& X_np, const VectorXd& w_np, const MatrixXd* X_p,
                   const PsLink& link, double clip, PsMethod method, HFunction h,
                   const std::vector<std::string>& column_names) {
    PsFit fit;
    fit.gamma = std::move(gamma);
    fit.link = link.kind;
    fit.method = method;
    fit.h = h;
    fit.column_names = column_names;
    fit.scores_np = clipped_probs(link, X_np * fit.gamma, clip);
    if (X_p) fit.scores_p = clipped_probs(link, *X_p * fit.gamma, clip);
    fit.ipw_weights = fit.scores_np.cwiseInverse();
    fit.nhat_np = (w_np.array() * fit.ipw_weights.array()).sum();
    return fit;
}

}  // namespace

PsFit ps_fit_mle(const MatrixXd& X_np, const VectorXd& w_np, const MatrixXd& X_p,
                 const VectorXd& d_p, const PsLink& link,
                 const std::vector<std::string>& column_names, const PsOptions& options) {
    const Eigen::Index p = X_np.cols();
    if (X_p.cols() != p) throw SchemaError("sample designs have different column counts");
    VectorXd gamma = options.start.size() ? options.start : VectorXd::Zero(p);
    if (gamma.size() != p) throw SchemaError("starting values have the wrong length");

    const double scale = std::max(1.0, d_p.sum());
    double ll = pseudo_loglik(gamma, X_np, w_np, X_p, d_p, link, options.clip);
    bool converged = false;
    int iterations = 0;

    for (int iter = 1; iter <= options.max_iter; ++iter) {
        iterations = iter;
        const VectorXd score = pseudo_score(gamma, X_np, w_np, X_p, d_p, link, options.clip);
        if (score.cwiseAbs().maxCoeff() < options.tol * scale) {
            converged = true;
            break;
        }
        const MatrixXd hess = pseudo_hessian(gamma, X_np, w_np, X_p, d_p, link, options.clip);
        Eigen::FullPivLU<MatrixXd> lu(hess);
        if (!lu.isInvertible())
            throw NumericError("singular Hessian in propensity pseudo-likelihood fit");
        VectorXd step = lu.solve(-score);

        double t = 1.0;
        VectorXd gamma_new = gamma + step;
        double ll_new = pseudo_loglik(gamma_new, X_np, w_np, X_p, d_p, link, options.clip);
        int halvings = 0;
        // accept steps within the round-off noise of the objective; near the
        // optimum the quadratic gain is below evaluation noise
        const double noise = 1e-12 * (1.0 + std::abs(ll));
        while ((!std::isfinite(ll_new) || ll_new < ll - noise) && halvings < options.max_halvings) {
            t *= 0.5;
            gamma_new = gamma + t * step;
            ll_new = pseudo_loglik(gamma_new, X_np, w_np, X_p, d_p, link, options.clip);
            ++halvings;
        }
        const double max_change = (gamma_new - gamma).cwiseAbs().maxCoeff();
        gamma = gamma_new;
        ll = ll_new;
        if (max_change < 1e-12) {
            converged =
                pseudo_score(gamma, X_np, w_np, X_p, d_p, link, options.clip).cwiseAbs().maxCoeff() <
                options.tol * scale;
            break;
        }
    }

    const VectorXd final_score = pseudo_score(gamma, X_np, w_np, X_p, d_p, link, options.clip);
    if (!converged)
        throw ConvergenceError("propensity MLE did not converge (|score| = " +
                                   std::to_string(final_score.cwiseAbs().maxCoeff()) + ")",
                               gamma, final_score.norm());

    PsFit fit = finalize_fit(std::move(gamma), X_np, w_np, &X_p, link, options.clip, PsMethod::mle,
                             HFunction::x, column_names);
    fit.converged = true;
    fit.iterations = iterations;
    fit.final_residual = final_score;
    return fit;
}

namespace {

struct GeeSystem {
    const MatrixXd& X_np;
    const VectorXd& w_np;
    const MatrixXd* X_p;      // null when fitting against totals
    const VectorXd* d_p;
    const VectorXd* totals;   // reference totals when X_p is null
    const PsLink& link;
    HFunction h;
    double clip;

    VectorXd residual(const VectorXd& gamma) const {
        const VectorXd eta_np = X_np * gamma;
        if (h == HFunction::x_over_pi) {
            VectorXd inv(eta_np.size());
            for (Eigen::Index i = 0; i < eta_np.size(); ++i)
                inv(i) = w_np(i) / clip_prob(link.prob(eta_np(i)), clip);
            VectorXd lhs = X_np.transpose() * inv;
            if (X_p) return lhs - X_p->transpose() * *d_p;
            return lhs - *totals;
        }
        VectorXd lhs = X_np.transpose() * w_np;
        const VectorXd eta_p = *X_p * gamma;
        VectorXd dpi(eta_p.size());
        for (Eigen::Index i = 0; i < eta_p.size(); ++i)
            dpi(i) = (*d_p)(i)*clip_prob(link.prob(eta_p(i)), clip);
        return lhs - X_p->transpose() * dpi;
    }

    MatrixXd jacobian(const VectorXd& gamma) const {
        // units sitting at the clip bounds are flat in the residual
        if (h == HFunction::x_over_pi) {
            const VectorXd eta_np = X_np * gamma;
            VectorXd g(eta_np.size());
            for (Eigen::Index i = 0; i < eta_np.size(); ++i) {
                const double pi_raw = link.prob(eta_np(i));
                const double pi = clip_prob(pi_raw, clip);
                const bool pinned = pi_raw <= clip || pi_raw >= 1.0 - clip;
                g(i) = pinned ? 0.0 : -w_np(i) * link.dprob(eta_np(i)) / (pi * pi);
            }
            return X_np.transpose() * g.asDiagonal() * X_np;
        }
        const VectorXd eta_p = *X_p * gamma;
        VectorXd g(eta_p.size());
        for (Eigen::Index i = 0; i < eta_p.size(); ++i) {
            const double pi_raw = link.prob(eta_p(i));
            const bool pinned = pi_raw <= clip || pi_raw >= 1.0 - clip;
            g(i) = pinned ? 0.0 : -(*d_p)(i)*link.dprob(eta_p(i));
        }
        return X_p->transpose() * g.asDiagonal() * *X_p;
    }

    MatrixXd fd_jacobian(const VectorXd& gamma) const {
        const Eigen::Index p = gamma.size();
        MatrixXd J(p, p);
        const double h_step = 1e-6;
        for (Eigen::Index j = 0; j < p; ++j) {
            VectorXd up = gamma, dn = gamma;
            up(j) += h_step;
            dn(j) -= h_step;
            J.col(j) = (residual(up) - residual(dn)) / (2.0 * h_step);
        }
        return J;
    }
};

PsFit solve_gee(const GeeSystem& sys, const std::vector<std::string>& column_names,
                const PsOptions& options, double scale) {
    const Eigen::Index p = sys.X_np.cols();
    VectorXd gamma;
    if (options.start.size()) {
        gamma = options.start;
        if (gamma.size() != p) throw SchemaError("starting values have the wrong length");
    } else {
        // start at the closed-form intercept-only solution when there is one
        gamma = VectorXd::Zero(p);
        for (Eigen::Index c = 0; c < p; ++c) {
            if (!(sys.X_np.col(c).array() == 1.0).all()) continue;
            double target_total = 0.0;
            if (sys.X_p) {
                target_total = sys.d_p->sum();
            } else {
                target_total = (*sys.totals)(c);
            }
            if (target_total > 0.0) {
                const double pbar =
                    std::clamp(sys.w_np.sum() / target_total, 1e-3, 1.0 - 1e-3);
                gamma(c) = sys.link.inverse(pbar);
            }
            break;
        }
    }

    VectorXd res = sys.residual(gamma);
    double norm = res.cwiseAbs().maxCoeff();
    bool converged = norm < options.tol * scale;
    int iterations = 0;

    for (int iter = 1; iter <= options.max_iter && !converged; ++iter) {
        iterations = iter;
        MatrixXd J = sys.jacobian(gamma);
        Eigen::FullPivLU<MatrixXd> lu(J);
        if (!lu.isInvertible()) {
            lu.compute(sys.fd_jacobian(gamma));
            if (!lu.isInvertible())
                throw NumericError("singular Jacobian in GEE propensity fit");
        }
        const VectorXd step = lu.solve(-res);

        double t = 1.0;
        VectorXd gamma_new = gamma + step;
        VectorXd res_new = sys.residual(gamma_new);
        int halvings = 0;
        while (!(res_new.cwiseAbs().maxCoeff() < norm * (1.0 + 1e-12)) &&
               halvings < options.max_halvings) {
            t *= 0.5;
            gamma_new = gamma + t * step;
            res_new = sys.residual(gamma_new);
            ++halvings;
        }
        if (!(res_new.cwiseAbs().maxCoeff() < norm * (1.0 + 1e-12))) {
            // Newton stalled; fall back to damped least-squares steps on the
            // squared residual, which always admits a descent direction
            const MatrixXd JtJ = J.transpose() * J;
            const VectorXd g = J.transpose() * res;
            const double base = std::max(JtJ.diagonal().maxCoeff(), 1e-12);
            bool improved = false;
            for (double mu : {1e-8, 1e-5, 1e-3, 1e-1, 1.0, 1e2}) {
                MatrixXd damped = JtJ;
                damped.diagonal().array() += mu * base;
                const VectorXd lm_step = damped.ldlt().solve(-g);
                VectorXd cand = gamma + lm_step;
                VectorXd cand_res = sys.residual(cand);
                if (cand_res.cwiseAbs().maxCoeff() < norm * (1.0 - 1e-10)) {
                    gamma_new = std::move(cand);
                    res_new = std::move(cand_res);
                    improved = true;
                    break;
                }
            }
            if (!improved) break;  // genuinely stuck; report non-convergence
        }
        const double max_change = (gamma_new - gamma).cwiseAbs().maxCoeff();
        gamma = gamma_new;
        res = res_new;
        norm = res.cwiseAbs().maxCoeff();
        converged = norm < options.tol * scale;
        if (max_change < 1e-14 && !converged) break;
    }

    if (!converged)
        throw ConvergenceError("GEE propensity fit did not converge (residual max " +
                                   std::to_string(norm) + ", tolerance " +
                                   std::to_string(options.tol * scale) + ")",
                               gamma, res.norm());

    PsFit fit = finalize_fit(std::move(gamma), sys.X_np, sys.w_np, sys.X_p, sys.link, sys.clip,
                             PsMethod::gee, sys.h, column_names);
    fit.converged = true;
    fit.iterations = iterations;
    fit.final_residual = res;
    return fit;
}

}  // namespace

PsFit ps_fit_gee(const MatrixXd& X_np, const VectorXd& w_np, const MatrixXd& X_p,
                 const VectorXd& d_p, const PsLink& link, HFunction h,
                 const std::vector<std::string>& column_names, const PsOptions& options) {
    if (X_p.cols() != X_np.cols()) throw SchemaError("sample designs have different column counts");
    GeeSystem sys{X_np, w_np, &X_p, &d_p, nullptr, link, h, options.clip};
    return solve_gee(sys, column_names, options, std::max(1.0, d_p.sum()));
}

PsFit ps_fit_gee_totals(const MatrixXd& X_np, const VectorXd& w_np, const VectorXd& totals,
                        const PsLink& link, HFunction h,
                        const std::vector<std::string>& column_names, const PsOptions& options) {
    if (h == HFunction::x)
        throw SchemaError("population totals support only the h = x / pi estimating equations");
    if (totals.size() != X_np.cols())
        throw SchemaError("totals length does not match the design column count");
    GeeSystem sys{X_np, w_np, nullptr, nullptr, &totals, link, h, options.clip};
    return solve_gee(sys, column_names, options, std::max(1.0, totals.cwiseAbs().maxCoeff()));
}

double pseudo_loglik(const VectorXd& gamma, const NonProbSample& np, const ProbSample& p,
                     const PsLink& link, double clip) {
    return pseudo_loglik(gamma, np.design.X, np.case_weights, p.design.X, p.design_weights, link,
                         clip);
}

PsFit ps_fit_mle(const NonProbSample& np, const ProbSample& p, const PsLink& link,
                 const PsOptions& options) {
    return ps_fit_mle(np.design.X, np.case_weights, p.design.X, p.design_weights, link,
                      np.design.column_names, options);
}

PsFit ps_fit_gee(const NonProbSample& np, const ProbSample& p, const PsLink& link, HFunction h,
                 const PsOptions& options) {
    return ps_fit_gee(np.design.X, np.case_weights, p.design.X, p.design_weights, link, h,
                      np.design.column_names, options);
}

PsFit ps_fit_gee(const NonProbSample& np, const PopulationBenchmark& bench, const PsLink& link,
                 HFunction h, const PsOptions& options) {
    return ps_fit_gee_totals(np.design.X, np.case_weights, bench.totals_for(np.design), link, h,
                             np.design.column_names, options);
}

VectorXd ps_predict(const PsFit& fit, const MatrixXd& X, double clip) {
    if (X.cols() != fit.gamma.size())
        throw SchemaError("prediction design has the wrong number of columns");
    PsLink link{fit.link};
    return clipped_probs(link, X * fit.gamma, clip);
}

}  // namespace nonprob
