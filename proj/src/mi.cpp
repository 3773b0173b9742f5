#include "nonprob/mi.hpp"

#include "nonprob/knn.hpp"

#include <algorithm>
#include <cmath>

namespace nonprob {

namespace {

double imputed_mean(const VectorXd& y_star, const VectorXd& d_p) {
    return weighted_mean(y_star, d_p);
}

VectorXd donor_average(const MatchResult& match, const VectorXd& y) {
    VectorXd out(static_cast<Eigen::Index>(match.indices.size()));
    for (std::size_t q = 0; q < match.indices.size(); ++q) {
        double s = 0.0;
        for (int idx : match.indices[q]) s += y(idx);
        out(static_cast<Eigen::Index>(q)) = s / static_cast<double>(match.indices[q].size());
    }
    return out;
}

}  // namespace

MiEstimate mi_glm(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                  const GlmFamily& family, const MatrixXd& X_p, const VectorXd& d_p,
                  const std::vector<std::string>& column_names) {
    MiEstimate est;
    est.method = "glm";
    est.outcome = irls_fit(X_np, y, family, case_weights, nullptr, column_names);
    est.pred_np = est.outcome.fitted;
    est.pred_p = predict_mean(est.outcome, X_p);
    est.y_star = est.pred_p;
    est.nhat_p = d_p.sum();

    est.mu = imputed_mean(est.y_star, d_p);
    const double correction =
        (case_weights.array() * (y - est.pred_np).array()).sum() / est.nhat_p;
    est.mu_pr2 = est.mu + correction;
    est.warnings = est.outcome.warnings;
    return est;
}

MiEstimate mi_glm_totals(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                         const GlmFamily& family, const VectorXd& totals, double pop_size,
                         const std::vector<std::string>& column_names) {
    if (family.family != Family::gaussian)
        throw SchemaError(
            "population totals support only a linear (gaussian) outcome model: the projection "
            "term does not reduce to totals otherwise");
    if (pop_size <= 0) throw SchemaError("population size is required with covariate totals");
    if (totals.size() != X_np.cols())
        throw SchemaError("totals length does not match the design column count");

    MiEstimate est;
    est.method = "glm";
    est.outcome = irls_fit(X_np, y, family, case_weights, nullptr, column_names);
    est.pred_np = est.outcome.fitted;
    est.nhat_p = pop_size;

    const VectorXd mu_x = totals / pop_size;
    est.mu = mu_x.dot(est.outcome.coefficients);

    const double w_total = case_weights.sum();
    const double ybar = weighted_mean(y, case_weights);
    const VectorXd xbar = (X_np.transpose() * case_weights) / w_total;
    est.mu_pr2 = w_total / pop_size * (ybar - xbar.dot(est.outcome.coefficients)) + est.mu;
    est.warnings = est.outcome.warnings;
    return est;
}

MiEstimate mi_nn(const MatrixXd& X_np_match, const VectorXd& y, const MatrixXd& X_p_match,
                 const VectorXd& d_p, int k, double eps) {
    MiEstimate est;
    est.method = "nn";
    const MatchResult match = knn_query(X_np_match, X_p_match, k, eps);
    est.y_star = donor_average(match, y);
    est.nhat_p = d_p.sum();
    est.mu = imputed_mean(est.y_star, d_p);
    est.mu_pr2 = est.mu;
    return est;
}

MiEstimate mi_pmm(const MatrixXd& X_np, const VectorXd& y, const VectorXd& case_weights,
                  const GlmFamily& family, const MatrixXd& X_p, const VectorXd& d_p, int k,
                  PmmVariant variant, double eps, const std::vector<std::string>& column_names) {
    MiEstimate est;
    est.method = variant == PmmVariant::a ? "pmm_a" : "pmm_b";
    est.outcome = irls_fit(X_np, y, family, case_weights, nullptr, column_names);
    est.pred_np = est.outcome.fitted;
    est.pred_p = predict_mean(est.outcome, X_p);
    est.nhat_p = d_p.sum();
    est.warnings = est.outcome.warnings;

    const VectorXd& donor_values = variant == PmmVariant::a ? est.pred_np : y;
    if ((donor_values.array() == donor_values(0)).all())
        est.warnings.push_back(
            "all donor values used for matching are identical; ties resolved by donor order");

    MatrixXd donors(donor_values.size(), 1);
    donors.col(0) = donor_values;
    MatrixXd queries(est.pred_p.size(), 1);
    queries.col(0) = est.pred_p;

    const MatchResult match = knn_query(donors, queries, k, eps);
    est.y_star = donor_average(match, y);
    est.mu = imputed_mean(est.y_star, d_p);
    est.mu_pr2 = est.mu;
    return est;
}

MiEstimate mi_npar(const MatrixXd& X_np_cont, const VectorXd& y, const MatrixXd& X_p_cont,
                   const VectorXd& d_p, const NparOptions& options) {
    const Eigen::Index n = X_np_cont.rows();
    const Eigen::Index d = X_np_cont.cols();
    if (d > 4)
        throw SchemaError("local-polynomial smoothing supports at most 4 continuous predictors");
    if (n < 30) throw SchemaError("local-polynomial smoothing needs at least 30 donor rows");
    if (options.degree != 1 && options.degree != 2)
        throw SchemaError("local-polynomial degree must be 1 or 2");
    if (options.span <= 0.0 || options.span > 1.0)
        throw SchemaError("span must lie in (0, 1]");

    MiEstimate est;
    est.method = "npar";
    est.nhat_p = d_p.sum();

    // donor bounding box; queries outside it are evaluated at the nearest
    // boundary point
    VectorXd lo = X_np_cont.colwise().minCoeff();
    VectorXd hi = X_np_cont.colwise().maxCoeff();
    Eigen::Index clamped = 0;

    const auto window = std::max<Eigen::Index>(
        options.degree == 1 ? d + 2 : (d + 1) * (d + 2) / 2 + 1,
        static_cast<Eigen::Index>(std::ceil(options.span * static_cast<double>(n))));

    est.y_star.resize(X_p_cont.rows());
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index q = 0; q < X_p_cont.rows(); ++q) {
        VectorXd x0 = X_p_cont.row(q).transpose();
        bool outside = false;
        for (Eigen::Index j = 0; j < d; ++j) {
            if (x0(j) < lo(j) || x0(j) > hi(j)) outside = true;
            x0(j) = std::clamp(x0(j), lo(j), hi(j));
        }
        if (outside) ++clamped;

        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = (X_np_cont.row(i).transpose() - x0).norm();
            dist[static_cast<std::size_t>(i)] = {r, i};
        }
        std::nth_element(dist.begin(), dist.begin() + window - 1, dist.end());
        const double dmax = std::max(dist[static_cast<std::size_t>(window - 1)].first, 1e-300);

        // tricube weights over the window, centred polynomial basis
        const Eigen::Index q_terms =
            options.degree == 1 ? d + 1 : 1 + d + d * (d + 1) / 2;
        MatrixXd Z(window, q_terms);
        VectorXd wts(window), yy(window);
        for (Eigen::Index t = 0; t < window; ++t) {
            const auto [r, i] = dist[static_cast<std::size_t>(t)];
            const double u = std::min(r / dmax, 1.0);
            const double c = 1.0 - u * u * u;
            wts(t) = std::max(c * c * c, 1e-12);
            yy(t) = y(i);
            VectorXd delta = X_np_cont.row(i).transpose() - x0;
            Eigen::Index col = 0;
            Z(t, col++) = 1.0;
            for (Eigen::Index j = 0; j < d; ++j) Z(t, col++) = delta(j);
            if (options.degree == 2)
                for (Eigen::Index j = 0; j < d; ++j)
                    for (Eigen::Index l = j; l < d; ++l) Z(t, col++) = delta(j) * delta(l);
        }
        const MatrixXd Zw = wts.asDiagonal() * Z;
        const VectorXd coef =
            (Z.transpose() * Zw).colPivHouseholderQr().solve(Z.transpose() * (wts.asDiagonal() * yy));
        est.y_star(q) = coef(0);
    }

    if (clamped > 0)
        est.warnings.push_back(std::to_string(clamped) +
                               " query rows lie outside the donor range; evaluated at the nearest "
                               "boundary point");
    est.mu = imputed_mean(est.y_star, d_p);
    est.mu_pr2 = est.mu;
    return est;
}

}  // namespace nonprob
