#include "nonprob/variance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace nonprob {

ResampleDraw draw_subbootstrap(Eigen::Index n_np, const std::vector<int>& p_strata,
                               const VectorXd& d_p, std::mt19937_64& rng) {
    ResampleDraw draw;
    draw.np_rows.resize(static_cast<std::size_t>(n_np));
    std::uniform_int_distribution<Eigen::Index> pick_np(0, n_np - 1);
    for (auto& r : draw.np_rows) r = pick_np(rng);

    if (!p_strata.empty()) {
        std::map<int, std::vector<Eigen::Index>> groups;
        for (std::size_t i = 0; i < p_strata.size(); ++i)
            groups[p_strata[i]].push_back(static_cast<Eigen::Index>(i));
        std::vector<double> weights;
        for (const auto& [h, rows] : groups) {
            const auto n_h = static_cast<Eigen::Index>(rows.size());
            if (n_h < 2)
                throw SchemaError(
                    "stratum with a single sampled unit cannot be resampled; merge strata");
            std::uniform_int_distribution<Eigen::Index> pick(0, n_h - 1);
            const double factor = static_cast<double>(n_h) / static_cast<double>(n_h - 1);
            for (Eigen::Index t = 0; t + 1 < n_h; ++t) {
                const Eigen::Index row = rows[static_cast<std::size_t>(pick(rng))];
                draw.p_rows.push_back(row);
                weights.push_back(d_p(row) * factor);
            }
        }
        draw.p_weights = Eigen::Map<VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
    }
    return draw;
}

VarianceResult bootstrap_variance(const ReplicateEstimator& estimator, Eigen::Index n_np,
                                  const std::vector<int>& p_strata, const VectorXd& d_p, int B,
                                  std::uint64_t seed) {
    if (B < 2) throw SchemaError("bootstrap needs at least 2 replicates");
    VarianceResult result;
    result.method = "bootstrap";
    result.replicates.reserve(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        const ResampleDraw draw = draw_subbootstrap(n_np, p_strata, d_p, rng);
        try {
            const double value = estimator(draw);
            if (!std::isfinite(value)) throw NumericError("non-finite replicate estimate");
            result.replicates.push_back(value);
        } catch (const SchemaError&) {
            throw;  // structural problems are not replicate noise
        } catch (const std::exception&) {
            ++result.failures;
        }
    }
    if (result.failures * 5 > B)
        throw NumericError("more than 20% of bootstrap replicates failed (" +
                           std::to_string(result.failures) + " of " + std::to_string(B) + ")");
    if (result.replicates.size() < 2)
        throw NumericError("fewer than 2 successful bootstrap replicates");

    const auto m = static_cast<double>(result.replicates.size());
    double mean = 0.0;
    for (double r : result.replicates) mean += r;
    mean /= m;
    double ss = 0.0;
    for (double r : result.replicates) ss += (r - mean) * (r - mean);
    result.se = std::sqrt(ss / (m - 1.0));
    if (result.failures > 0)
        result.warnings.push_back(std::to_string(result.failures) +
                                  " bootstrap replicates failed and were dropped");
    return result;
}

MatrixXd design_variance_wr(const MatrixXd& Z, const std::vector<int>& strata) {
    const Eigen::Index dim = Z.cols();
    MatrixXd V = MatrixXd::Zero(dim, dim);
    if (Z.rows() == 0) return V;
    if (static_cast<Eigen::Index>(strata.size()) != Z.rows())
        throw SchemaError("strata labels do not match the contribution rows");

    std::map<int, std::vector<Eigen::Index>> groups;
    for (std::size_t i = 0; i < strata.size(); ++i)
        groups[strata[i]].push_back(static_cast<Eigen::Index>(i));
    for (const auto& [h, rows] : groups) {
        const auto n_h = static_cast<double>(rows.size());
        if (rows.size() < 2) continue;  // certainty unit, no estimable variability
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(dim);
        for (auto r : rows) mean += Z.row(r);
        mean /= n_h;
        MatrixXd acc = MatrixXd::Zero(dim, dim);
        for (auto r : rows) {
            const Eigen::RowVectorXd c = Z.row(r) - mean;
            acc += c.transpose() * c;
        }
        V += acc * (n_h / (n_h - 1.0));
    }
    return V;
}

namespace {

// sandwich over stacked estimating equations: H theta-derivatives,
// Bq per-nonprob-unit contributions (selection-indicator randomness),
// Zp per-prob-unit weighted contributions (design randomness)
double sandwich_mu_variance(const MatrixXd& H, const MatrixXd& Bq, const VectorXd& one_minus_pi,
                            const MatrixXd& Zp, const std::vector<int>& strata) {
    const MatrixXd Mq = Bq.transpose() * one_minus_pi.asDiagonal() * Bq;
    MatrixXd M = Mq;
    if (Zp.rows() > 0) M += design_variance_wr(Zp, strata);

    Eigen::FullPivLU<MatrixXd> lu(H);
    if (!lu.isInvertible())
        throw NumericError("singular linearization matrix; use the bootstrap variance instead");
    const MatrixXd Hinv = lu.inverse();
    const MatrixXd V = Hinv * M * Hinv.transpose();
    return std::max(V(0, 0), 0.0);
}

struct SelectionPieces {
    MatrixXd dU;       // derivative of the selection equations w.r.t. gamma
    MatrixXd np_unit;  // n_np x L unit contributions
    MatrixXd p_unit;   // n_p x L weighted unit contributions
};

SelectionPieces selection_pieces(const MatrixXd& X_np, const VectorXd& w, const PsFit& ps,
                                 const MatrixXd& X_p, const VectorXd& d_p) {
    const PsLink link{ps.link};
    const Eigen::Index L = X_np.cols();
    const Eigen::Index n_np = X_np.rows();
    const Eigen::Index n_p = X_p.rows();
    const VectorXd eta_np = X_np * ps.gamma;
    const VectorXd eta_p = X_p * ps.gamma;

    SelectionPieces out;
    out.np_unit.resize(n_np, L);
    out.p_unit.resize(n_p, L);

    if (ps.method == PsMethod::mle) {
        VectorXd a(n_np), b(n_p), da(n_np), db(n_p);
        for (Eigen::Index i = 0; i < n_np; ++i) {
            const double pi = ps.scores_np(i);
            const double d1 = link.dprob(eta_np(i));
            const double d2 = link.d2prob(eta_np(i));
            const double denom = pi * (1.0 - pi);
            a(i) = w(i) * d1 / denom;
            da(i) = w(i) * (d2 * denom - d1 * d1 * (1.0 - 2.0 * pi)) / (denom * denom);
        }
        for (Eigen::Index i = 0; i < n_p; ++i) {
            const double pi = link.prob(eta_p(i));
            const double d1 = link.dprob(eta_p(i));
            const double d2 = link.d2prob(eta_p(i));
            const double q = 1.0 - std::min(pi, 1.0 - 1e-12);
            b(i) = d_p(i) * d1 / q;
            db(i) = d_p(i) * (d2 * q + d1 * d1) / (q * q);
        }
        out.dU = X_np.transpose() * da.asDiagonal() * X_np - X_p.transpose() * db.asDiagonal() * X_p;
        out.np_unit = a.asDiagonal() * X_np;
        out.p_unit = (-b).asDiagonal() * X_p;
        return out;
    }

    if (ps.h == HFunction::x_over_pi) {
        VectorXd g(n_np);
        for (Eigen::Index i = 0; i < n_np; ++i) {
            const double pi = ps.scores_np(i);
            g(i) = -w(i) * link.dprob(eta_np(i)) / (pi * pi);
        }
        out.dU = X_np.transpose() * g.asDiagonal() * X_np;
        out.np_unit = (w.array() * ps.ipw_weights.array()).matrix().asDiagonal() * X_np;
        out.p_unit = (-d_p).asDiagonal() * X_p;
    } else {
        VectorXd g(n_p), pi_p(n_p);
        for (Eigen::Index i = 0; i < n_p; ++i) {
            pi_p(i) = link.prob(eta_p(i));
            g(i) = -d_p(i) * link.dprob(eta_p(i));
        }
        out.dU = X_p.transpose() * g.asDiagonal() * X_p;
        out.np_unit = w.asDiagonal() * X_np;
        out.p_unit = (-(d_p.array() * pi_p.array())).matrix().asDiagonal() * X_p;
    }
    return out;
}

}  // namespace

VarianceResult analytic_variance_ipw(const VectorXd& y, const VectorXd& case_weights,
                                     const MatrixXd& X_np, const PsFit& ps, const MatrixXd& X_p,
                                     const VectorXd& d_p, const std::vector<int>& p_strata,
                                     double mu_hat, std::optional<double> pop_size) {
    const Eigen::Index L = X_np.cols();
    const Eigen::Index n_np = X_np.rows();
    const bool hajek = !pop_size.has_value();
    const double nhat = hajek ? ps.nhat_np : *pop_size;

    const SelectionPieces sel = selection_pieces(X_np, case_weights, ps, X_p, d_p);
    const PsLink link{ps.link};
    const VectorXd eta_np = X_np * ps.gamma;

    MatrixXd H = MatrixXd::Zero(1 + L, 1 + L);
    H(0, 0) = -nhat;
    VectorXd dmu_dgamma = VectorXd::Zero(L);
    MatrixXd Bq(n_np, 1 + L);
    for (Eigen::Index i = 0; i < n_np; ++i) {
        const double pi = ps.scores_np(i);
        const double centered = hajek ? y(i) - mu_hat : y(i);
        const double term = case_weights(i) * centered / pi;
        Bq(i, 0) = term;
        dmu_dgamma -= term * (link.dprob(eta_np(i)) / pi) * X_np.row(i).transpose();
    }
    H.block(0, 1, 1, L) = dmu_dgamma.transpose();
    H.block(1, 1, L, L) = sel.dU;
    Bq.rightCols(L) = sel.np_unit;

    MatrixXd Zp(X_p.rows(), 1 + L);
    Zp.col(0).setZero();
    Zp.rightCols(L) = sel.p_unit;

    const VectorXd one_minus_pi = VectorXd::Ones(n_np) - ps.scores_np;

    VarianceResult result;
    result.method = "analytic";
    result.se = std::sqrt(sandwich_mu_variance(H, Bq, one_minus_pi, Zp, p_strata));
    return result;
}

VarianceResult analytic_variance_mi_glm(const MatrixXd& X_np, const VectorXd& y,
                                        const VectorXd& case_weights, const OutcomeFit& fit,
                                        const MatrixXd& X_p, const VectorXd& d_p,
                                        const std::vector<int>& p_strata, double mu_hat) {
    const Eigen::Index n_np = X_np.rows();
    const double nhat_p = d_p.sum();

    const VectorXd eta_np = X_np * fit.coefficients;
    const VectorXd md_np = fit.family.mean_deriv(eta_np);
    const VectorXd resid = y - fit.family.mean(eta_np);

    const MatrixXd A = X_np.transpose() * (case_weights.array() * md_np.array()).matrix().asDiagonal() * X_np;
    const MatrixXd B =
        X_np.transpose() *
        (case_weights.array().square() * resid.array().square()).matrix().asDiagonal() * X_np;

    const VectorXd eta_p = X_p * fit.coefficients;
    const VectorXd md_p = fit.family.mean_deriv(eta_p);
    const VectorXd c = X_p.transpose() * (d_p.array() * md_p.array()).matrix() / nhat_p;

    Eigen::FullPivLU<MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw NumericError("singular information matrix; use the bootstrap variance instead");
    const VectorXd Ainv_c = lu.solve(c);

    VarianceResult result;
    result.method = "analytic";
    result.v1 = Ainv_c.dot(B * Ainv_c);

    const VectorXd pred_p = fit.family.mean(eta_p);
    MatrixXd e(X_p.rows(), 1);
    e.col(0) = d_p.array() * (pred_p.array() - mu_hat) / nhat_p;
    result.v2 = design_variance_wr(e, p_strata)(0, 0);
    result.se = std::sqrt(result.v1 + result.v2);
    (void)n_np;
    return result;
}

VarianceResult analytic_variance_mi_glm_totals(const MatrixXd& X_np, const VectorXd& y,
                                               const VectorXd& case_weights, const OutcomeFit& fit,
                                               const VectorXd& totals, double pop_size) {
    const VectorXd eta_np = X_np * fit.coefficients;
    const VectorXd md_np = fit.family.mean_deriv(eta_np);
    const VectorXd resid = y - fit.family.mean(eta_np);
    const MatrixXd A = X_np.transpose() * (case_weights.array() * md_np.array()).matrix().asDiagonal() * X_np;
    const MatrixXd B =
        X_np.transpose() *
        (case_weights.array().square() * resid.array().square()).matrix().asDiagonal() * X_np;
    const VectorXd c = totals / pop_size;

    Eigen::FullPivLU<MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw NumericError("singular information matrix; use the bootstrap variance instead");
    const VectorXd Ainv_c = lu.solve(c);

    VarianceResult result;
    result.method = "analytic";
    result.v1 = Ainv_c.dot(B * Ainv_c);
    result.v2 = 0.0;
    result.se = std::sqrt(result.v1);
    return result;
}

VarianceResult analytic_variance_mi_nn(const VectorXd& y_star, const VectorXd& d_p,
                                       const std::vector<int>& p_strata, double mu_hat,
                                       bool pmm_caveat) {
    const double nhat_p = d_p.sum();
    MatrixXd e(y_star.size(), 1);
    e.col(0) = d_p.array() * (y_star.array() - mu_hat) / nhat_p;

    VarianceResult result;
    result.method = "analytic";
    result.v2 = design_variance_wr(e, p_strata)(0, 0);
    result.se = std::sqrt(result.v2);
    if (pmm_caveat)
        result.warnings.push_back(
            "matching on predictions: the bootstrap variance is recommended for this estimator");
    return result;
}

VarianceResult analytic_variance_dr(const VectorXd& y, const VectorXd& case_weights,
                                    const MatrixXd& X_np_sel, const PsFit& ps,
                                    const MatrixXd& X_np_out, const OutcomeFit& outcome,
                                    const MatrixXd& X_p_sel, const MatrixXd& X_p_out,
                                    const VectorXd& d_p, const std::vector<int>& p_strata,
                                    double mu_hat, DrVarianceKind kind, bool estimated_n,
                                    std::optional<double> pop_size) {
    const Eigen::Index Ls = X_np_sel.cols();
    const Eigen::Index Lo = X_np_out.cols();
    const Eigen::Index n_np = X_np_sel.rows();
    const Eigen::Index n_p = X_p_sel.rows();
    const PsLink link{ps.link};
    const GlmFamily family = outcome.family;

    if (!estimated_n && !pop_size)
        throw SchemaError("known-size variance requires the population size");
    const double nhat_p = d_p.sum();
    const double rho = estimated_n ? nhat_p / ps.nhat_np : 1.0;
    const double n_for_mu = estimated_n ? nhat_p : *pop_size;

    const VectorXd eta_g = X_np_sel * ps.gamma;
    const VectorXd eta_b = X_np_out * outcome.coefficients;
    const VectorXd eta_bp = X_p_out * outcome.coefficients;
    const VectorXd m_np = family.mean(eta_b);
    const VectorXd md_np = family.mean_deriv(eta_b);
    const VectorXd m_p = family.mean(eta_bp);
    const VectorXd md_p = family.mean_deriv(eta_bp);

    const Eigen::Index dim = 1 + Ls + Lo;
    MatrixXd H = MatrixXd::Zero(dim, dim);
    MatrixXd Bq = MatrixXd::Zero(n_np, dim);
    MatrixXd Zp = MatrixXd::Zero(n_p, dim);

    // mean equation
    H(0, 0) = -n_for_mu;
    for (Eigen::Index i = 0; i < n_np; ++i) {
        const double pi = ps.scores_np(i);
        const double r = y(i) - m_np(i);
        const double base = rho * case_weights(i) / pi;
        Bq(i, 0) = base * r;
        H.block(0, 1, 1, Ls) -=
            base * r * (link.dprob(eta_g(i)) / pi) * X_np_sel.row(i);
        H.block(0, 1 + Ls, 1, Lo) -= base * md_np(i) * X_np_out.row(i);
    }
    for (Eigen::Index i = 0; i < n_p; ++i) {
        const double centered = estimated_n ? m_p(i) - mu_hat : m_p(i);
        Zp(i, 0) = d_p(i) * centered;
        H.block(0, 1 + Ls, 1, Lo) += d_p(i) * md_p(i) * X_p_out.row(i);
    }

    if (kind == DrVarianceKind::bias_min) {
        // joint system: residual-balance block and projection-derivative block
        for (Eigen::Index i = 0; i < n_np; ++i) {
            const double pi = ps.scores_np(i);
            const double r = y(i) - m_np(i);
            const double w = case_weights(i);
            Bq.block(i, 1, 1, Ls) = w * (1.0 / pi - 1.0) * r * X_np_sel.row(i);
            Bq.block(i, 1 + Ls, 1, Lo) = w * md_np(i) / pi * X_np_out.row(i);
        }
        for (Eigen::Index i = 0; i < n_p; ++i)
            Zp.block(i, 1 + Ls, 1, Lo) = -d_p(i) * md_p(i) * X_p_out.row(i);

        VectorXd a11(n_np), a12(n_np), a21(n_np), a22(n_np);
        for (Eigen::Index i = 0; i < n_np; ++i) {
            const double pi = ps.scores_np(i);
            const double dpi = link.dprob(eta_g(i));
            const double r = y(i) - m_np(i);
            const double w = case_weights(i);
            a11(i) = -w * dpi / (pi * pi) * r;
            a12(i) = -w * (1.0 / pi - 1.0) * md_np(i);
            a21(i) = -w * md_np(i) * dpi / (pi * pi);
            a22(i) = w * family.mean_deriv2(eta_b(i)) / pi;
        }
        H.block(1, 1, Ls, Ls) = X_np_sel.transpose() * a11.asDiagonal() * X_np_sel;
        H.block(1, 1 + Ls, Ls, Lo) = X_np_sel.transpose() * a12.asDiagonal() * X_np_out;
        H.block(1 + Ls, 1, Lo, Ls) = X_np_out.transpose() * a21.asDiagonal() * X_np_sel;
        VectorXd md2_p(n_p);
        for (Eigen::Index i = 0; i < n_p; ++i)
            md2_p(i) = d_p(i) * family.mean_deriv2(eta_bp(i));
        H.block(1 + Ls, 1 + Ls, Lo, Lo) =
            X_np_out.transpose() * a22.asDiagonal() * X_np_out -
            X_p_out.transpose() * md2_p.asDiagonal() * X_p_out;
    } else {
        const SelectionPieces sel = selection_pieces(X_np_sel, case_weights, ps, X_p_sel, d_p);
        H.block(1, 1, Ls, Ls) = sel.dU;
        Bq.block(0, 1, n_np, Ls) = sel.np_unit;
        Zp.block(0, 1, n_p, Ls) = sel.p_unit;

        // outcome score block
        const VectorXd wmd = (case_weights.array() * md_np.array()).matrix();
        H.block(1 + Ls, 1 + Ls, Lo, Lo) = -(X_np_out.transpose() * wmd.asDiagonal() * X_np_out);
        for (Eigen::Index i = 0; i < n_np; ++i)
            Bq.block(i, 1 + Ls, 1, Lo) = case_weights(i) * (y(i) - m_np(i)) * X_np_out.row(i);
    }

    const VectorXd one_minus_pi = VectorXd::Ones(n_np) - ps.scores_np;

    VarianceResult result;
    result.method = "analytic";
    result.se = std::sqrt(sandwich_mu_variance(H, Bq, one_minus_pi, Zp, p_strata));
    if (estimated_n) {
        result.n_replacement_caveat = true;
        result.warnings.push_back(
            "analytic variance for the estimated-size doubly robust form replaces the population "
            "size with estimated totals; interpret with caution");
    }
    return result;
}

std::pair<double, double> confidence_interval(double point, double se, double level) {
    if (level <= 0.0 || level >= 1.0) throw SchemaError("confidence level must lie in (0, 1)");
    if (se < 0.0) throw SchemaError("standard error must be non-negative");
    const double z = norm_quantile(0.5 + level / 2.0);
    return {point - z * se, point + z * se};
}

}  // namespace nonprob
