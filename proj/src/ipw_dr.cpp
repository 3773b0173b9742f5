#include "nonprob/ipw_dr.hpp"

#include <algorithm>
#include <cmath>

namespace nonprob {

IpwEstimate ipw_estimate(const VectorXd& y, const VectorXd& case_weights, const PsFit& ps,
                         std::optional<double> pop_size, bool prefer_hajek) {
    if (y.size() != ps.scores_np.size())
        throw SchemaError("target and propensity scores have different lengths");
    if (pop_size && *pop_size <= 0) throw SchemaError("population size must be positive");

    IpwEstimate est;
    const VectorXd wy = case_weights.array() * y.array();
    const double weighted_total = (wy.array() * ps.ipw_weights.array()).sum();
    est.nhat_np = ps.nhat_np;
    est.hajek = weighted_total / ps.nhat_np;
    est.naive = weighted_mean(y, case_weights);
    if (pop_size) {
        est.ht = weighted_total / *pop_size;
        est.ht_defined = true;
    }
    const bool use_ht = pop_size && !prefer_hajek;
    est.form = use_ht ? "ht" : "hajek";
    est.mu = use_ht ? est.ht : est.hajek;
    return est;
}

DrEstimate dr_separate(const VectorXd& y, const VectorXd& case_weights, const PsFit& ps,
                       const VectorXd& pred_np, const VectorXd& pred_p, const VectorXd& d_p,
                       DrPopSize mode, std::optional<double> pop_size) {
    if (mode == DrPopSize::known && !pop_size)
        throw SchemaError("known-size doubly robust form requires the population size");

    DrEstimate est;
    est.gamma = ps.gamma;
    est.nhat_np = ps.nhat_np;
    est.nhat_p = d_p.sum();

    const double resid_total =
        (case_weights.array() * (y - pred_np).array() * ps.ipw_weights.array()).sum();
    const double proj_total = (d_p.array() * pred_p.array()).sum();

    if (mode == DrPopSize::known) {
        est.variant = "known_N";
        est.correction = resid_total / *pop_size;
        est.projection = proj_total / *pop_size;
    } else {
        est.variant = "estimated_N";
        est.correction = resid_total / est.nhat_np;
        est.projection = proj_total / est.nhat_p;
    }
    est.mu = est.correction + est.projection;
    return est;
}

DrEstimate dr_separate_totals(const VectorXd& y, const VectorXd& case_weights, const PsFit& ps,
                              const VectorXd& pred_np, const VectorXd& beta, const VectorXd& totals,
                              double pop_size, DrPopSize mode) {
    if (pop_size <= 0) throw SchemaError("population size is required with covariate totals");

    DrEstimate est;
    est.gamma = ps.gamma;
    est.beta = beta;
    est.nhat_np = ps.nhat_np;
    est.nhat_p = pop_size;

    const double resid_total =
        (case_weights.array() * (y - pred_np).array() * ps.ipw_weights.array()).sum();
    est.correction = resid_total / (mode == DrPopSize::known ? pop_size : est.nhat_np);
    est.projection = totals.dot(beta) / pop_size;
    est.variant = mode == DrPopSize::known ? "known_N" : "estimated_N";
    est.mu = est.correction + est.projection;
    return est;
}

namespace {

struct BiasMinSystem {
    const MatrixXd& X_np;
    const VectorXd& y;
    const VectorXd& w;
    const MatrixXd& X_p;
    const VectorXd& d_p;
    const PsLink& link;
    const GlmFamily& family;
    double clip;

    Eigen::Index dim() const { return X_np.cols(); }

    VectorXd residual(const VectorXd& gamma, const VectorXd& beta) const {
        const Eigen::Index L = dim();
        const VectorXd eta_g = X_np * gamma;
        const VectorXd eta_b = X_np * beta;
        VectorXd f1_w(X_np.rows()), f2_w(X_np.rows());
        for (Eigen::Index i = 0; i < X_np.rows(); ++i) {
            const double pi = std::clamp(link.prob(eta_g(i)), clip, 1.0 - clip);
            const double m = family.mean(eta_b(i));
            f1_w(i) = w(i) * (1.0 / pi - 1.0) * (y(i) - m);
            f2_w(i) = w(i) * family.mean_deriv(eta_b(i)) / pi;
        }
        VectorXd res(2 * L);
        res.head(L) = X_np.transpose() * f1_w;
        const VectorXd md_p = family.mean_deriv(X_p * beta);
        res.tail(L) = X_np.transpose() * f2_w - X_p.transpose() * (d_p.array() * md_p.array()).matrix();
        return res;
    }

    MatrixXd jacobian(const VectorXd& gamma, const VectorXd& beta) const {
        const Eigen::Index L = dim();
        const VectorXd eta_g = X_np * gamma;
        const VectorXd eta_b = X_np * beta;
        VectorXd a11(X_np.rows()), a12(X_np.rows()), a21(X_np.rows()), a22(X_np.rows());
        for (Eigen::Index i = 0; i < X_np.rows(); ++i) {
            const double pi_raw = link.prob(eta_g(i));
            const double pi = std::clamp(pi_raw, clip, 1.0 - clip);
            const bool pinned = pi_raw <= clip || pi_raw >= 1.0 - clip;
            const double dpi = pinned ? 0.0 : link.dprob(eta_g(i));
            const double m = family.mean(eta_b(i));
            const double md = family.mean_deriv(eta_b(i));
            const double md2 = family.mean_deriv2(eta_b(i));
            a11(i) = -w(i) * dpi / (pi * pi) * (y(i) - m);
            a12(i) = -w(i) * (1.0 / pi - 1.0) * md;
            a21(i) = -w(i) * md * dpi / (pi * pi);
            a22(i) = w(i) * md2 / pi;
        }
        MatrixXd J(2 * L, 2 * L);
        J.topLeftCorner(L, L) = X_np.transpose() * a11.asDiagonal() * X_np;
        J.topRightCorner(L, L) = X_np.transpose() * a12.asDiagonal() * X_np;
        J.bottomLeftCorner(L, L) = X_np.transpose() * a21.asDiagonal() * X_np;
        VectorXd md2_p(X_p.rows());
        const VectorXd eta_bp = X_p * beta;
        for (Eigen::Index i = 0; i < X_p.rows(); ++i)
            md2_p(i) = d_p(i) * family.mean_deriv2(eta_bp(i));
        J.bottomRightCorner(L, L) =
            X_np.transpose() * a22.asDiagonal() * X_np - X_p.transpose() * md2_p.asDiagonal() * X_p;
        return J;
    }
};

}  // namespace

VectorXd bias_min_residual(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                           const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                           const GlmFamily& family, const VectorXd& gamma, const VectorXd& beta,
                           double clip) {
    BiasMinSystem sys{X_np, y, case_weights, X_p, d_p, link, family, clip};
    return sys.residual(gamma, beta);
}

BiasMinFit bias_min_solve(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                          const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                          const GlmFamily& family, const VectorXd& start_gamma,
                          const VectorXd& start_beta, const BiasMinOptions& options) {
    const Eigen::Index L = X_np.cols();
    if (X_p.cols() != L)
        throw SchemaError(
            "bias-minimized fitting requires the selection and outcome designs to share one "
            "column set; pass the combined (union) design to both");
    if (start_gamma.size() != L || start_beta.size() != L)
        throw SchemaError("starting values have the wrong length");

    BiasMinSystem sys{X_np, y, case_weights, X_p, d_p, link, family, options.clip};
    VectorXd gamma = start_gamma, beta = start_beta;
    VectorXd res = sys.residual(gamma, beta);
    double norm = res.cwiseAbs().maxCoeff();

    BiasMinFit fit;
    for (int iter = 1; iter <= options.max_iter && norm >= options.tol_abs; ++iter) {
        fit.iterations = iter;
        MatrixXd J = sys.jacobian(gamma, beta);
        Eigen::FullPivLU<MatrixXd> lu(J);
        if (!lu.isInvertible())
            throw NumericError("singular Jacobian in the bias-minimizing system");
        const VectorXd step = lu.solve(-res);

        double t = 1.0;
        VectorXd g_new = gamma + step.head(L);
        VectorXd b_new = beta + step.tail(L);
        VectorXd res_new = sys.residual(g_new, b_new);
        int halvings = 0;
        while (!(res_new.cwiseAbs().maxCoeff() < norm * (1.0 + 1e-12)) &&
               halvings < options.max_halvings) {
            t *= 0.5;
            g_new = gamma + t * step.head(L);
            b_new = beta + t * step.tail(L);
            res_new = sys.residual(g_new, b_new);
            ++halvings;
        }
        const double change =
            std::max((g_new - gamma).cwiseAbs().maxCoeff(), (b_new - beta).cwiseAbs().maxCoeff());
        gamma = g_new;
        beta = b_new;
        res = res_new;
        norm = res.cwiseAbs().maxCoeff();
        if (change < 1e-14 && norm >= options.tol_abs) break;
    }

    if (norm >= options.tol_abs) {
        VectorXd stacked(2 * L);
        stacked << gamma, beta;
        throw ConvergenceError(
            "bias-minimizing system did not converge (outcome block " +
                std::to_string(res.head(L).cwiseAbs().maxCoeff()) + ", selection block " +
                std::to_string(res.tail(L).cwiseAbs().maxCoeff()) + ")",
            stacked, norm);
    }
    fit.gamma = gamma;
    fit.beta = beta;
    fit.residual = res;
    fit.converged = true;
    return fit;
}

DrEstimate dr_bias_min(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                       const MatrixXd& X_p, const VectorXd& d_p, const PsLink& link,
                       const GlmFamily& family, const VectorXd& start_gamma,
                       const VectorXd& start_beta, const BiasMinOptions& options) {
    const BiasMinFit fit = bias_min_solve(X_np, y, case_weights, X_p, d_p, link, family,
                                          start_gamma, start_beta, options);

    DrEstimate est;
    est.variant = "bias_min";
    est.gamma = fit.gamma;
    est.beta = fit.beta;

    const VectorXd eta_g = X_np * fit.gamma;
    VectorXd pi(X_np.rows());
    for (Eigen::Index i = 0; i < X_np.rows(); ++i)
        pi(i) = std::clamp(link.prob(eta_g(i)), options.clip, 1.0 - options.clip);
    const VectorXd pred_np = family.mean(X_np * fit.beta);
    const VectorXd pred_p = family.mean(X_p * fit.beta);

    est.nhat_np = (case_weights.array() / pi.array()).sum();
    est.nhat_p = d_p.sum();
    est.correction =
        (case_weights.array() * (y - pred_np).array() / pi.array()).sum() / est.nhat_np;
    est.projection = (d_p.array() * pred_p.array()).sum() / est.nhat_p;
    est.mu = est.correction + est.projection;
    return est;
}

}  // namespace nonprob
