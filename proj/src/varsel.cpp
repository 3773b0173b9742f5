#include "nonprob/varsel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace nonprob {

Penalty penalty_from_string(const std::string& name) {
    if (name == "SCAD" || name == "scad") return Penalty::scad;
    if (name == "lasso") return Penalty::lasso;
    if (name == "MCP" || name == "mcp") return Penalty::mcp;
    throw SchemaError("unknown penalty: " + name);
}

std::string penalty_name(Penalty penalty) {
    switch (penalty) {
        case Penalty::scad: return "SCAD";
        case Penalty::lasso: return "lasso";
        case Penalty::mcp: return "MCP";
    }
    return "";
}

void PenaltyConfig::validate() const {
    if (a_scad <= 2.0) throw SchemaError("SCAD tuning parameter must exceed 2");
    if (a_mcp <= 1.0) throw SchemaError("MCP tuning parameter must exceed 1");
    if (nfolds < 2) throw SchemaError("cross-validation needs at least 2 folds");
    if (nlambda < 1) throw SchemaError("lambda grid must have at least one value");
    if (lambda_min_ratio <= 0 || lambda_min_ratio >= 1)
        throw SchemaError("lambda_min ratio must lie in (0, 1)");
    for (std::size_t i = 1; i < lambda.size(); ++i)
        if (lambda[i] >= lambda[i - 1])
            throw SchemaError("explicit lambda grid must be strictly decreasing");
}

double penalty_value(Penalty penalty, double beta, double lambda, double a) {
    const double b = std::abs(beta);
    switch (penalty) {
        case Penalty::lasso: return lambda * b;
        case Penalty::scad:
            if (b <= lambda) return lambda * b;
            if (b <= a * lambda)
                return (2.0 * a * lambda * b - b * b - lambda * lambda) / (2.0 * (a - 1.0));
            return (a + 1.0) * lambda * lambda / 2.0;
        case Penalty::mcp:
            if (b <= a * lambda) return lambda * b - b * b / (2.0 * a);
            return a * lambda * lambda / 2.0;
    }
    return 0;
}

double penalty_deriv(Penalty penalty, double beta, double lambda, double a) {
    const double b = std::abs(beta);
    switch (penalty) {
        case Penalty::lasso: return lambda;
        case Penalty::scad:
            if (b <= lambda) return lambda;
            if (b <= a * lambda) return (a * lambda - b) / (a - 1.0);
            return 0.0;
        case Penalty::mcp:
            if (b <= a * lambda) return lambda - b / a;
            return 0.0;
    }
    return 0;
}

namespace {

double soft(double z, double t) {
    if (std::abs(z) <= t) return 0.0;
    return z > 0 ? z - t : z + t;
}

// minimize 0.5 v b^2 - z b + pen(|b|) over b
double solve_coordinate(double z, double v, Penalty pen, double lambda, double a) {
    double cands[6];
    int nc = 0;
    cands[nc++] = 0.0;
    switch (pen) {
        case Penalty::lasso:
            cands[nc++] = soft(z, lambda) / v;
            break;
        case Penalty::scad: {
            cands[nc++] = soft(z, lambda) / v;
            const double mid = v - 1.0 / (a - 1.0);
            if (mid > 1e-12) cands[nc++] = soft(z, a * lambda / (a - 1.0)) / mid;
            cands[nc++] = z / v;
            cands[nc++] = std::copysign(lambda, z);
            cands[nc++] = std::copysign(a * lambda, z);
            break;
        }
        case Penalty::mcp: {
            const double inner = v - 1.0 / a;
            if (inner > 1e-12) cands[nc++] = soft(z, lambda) / inner;
            cands[nc++] = z / v;
            cands[nc++] = std::copysign(a * lambda, z);
            break;
        }
    }
    double best = 0.0, fbest = 0.0;  // f(0) = 0
    for (int i = 1; i < nc; ++i) {
        const double b = cands[i];
        if (!std::isfinite(b)) continue;
        const double f = 0.5 * v * b * b - z * b + penalty_value(pen, b, lambda, a);
        if (f < fbest - 1e-15) {
            fbest = f;
            best = b;
        }
    }
    return best;
}

// objective: (1 / (2 denom)) sum w_i (z_i - x_i' beta)^2 + sum_j pen(|beta_j|)
VectorXd coordinate_descent(const MatrixXd& X, const VectorXd& z, const VectorXd& w, double denom,
                            Penalty pen, double lambda, double a,
                            const std::vector<bool>& penalized, VectorXd beta, double tol,
                            int max_sweeps) {
    const Eigen::Index p = X.cols();
    VectorXd v(p);
    MatrixXd Xw = w.asDiagonal() * X;
    for (Eigen::Index j = 0; j < p; ++j) v(j) = X.col(j).dot(Xw.col(j)) / denom;
    VectorXd r = z - X * beta;

    auto update = [&](Eigen::Index j) -> double {
        if (v(j) <= 1e-12) return 0.0;  // degenerate column stays put
        const double zj = Xw.col(j).dot(r) / denom + v(j) * beta(j);
        const double bj = penalized[static_cast<std::size_t>(j)]
                              ? solve_coordinate(zj, v(j), pen, lambda, a)
                              : zj / v(j);
        const double delta = bj - beta(j);
        if (delta != 0.0) {
            r -= delta * X.col(j);
            beta(j) = bj;
        }
        return std::abs(delta) * std::sqrt(v(j));
    };

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) change = std::max(change, update(j));
        if (change < tol) break;
        // cycle the active set before the next full sweep
        std::vector<Eigen::Index> active;
        for (Eigen::Index j = 0; j < p; ++j)
            if (beta(j) != 0.0 || !penalized[static_cast<std::size_t>(j)]) active.push_back(j);
        for (int inner = 0; inner < max_sweeps; ++inner) {
            double ichange = 0.0;
            for (Eigen::Index j : active) ichange = std::max(ichange, update(j));
            if (ichange < tol) break;
        }
    }
    return beta;
}

struct Standardizer {
    VectorXd center;
    VectorXd scale;
    std::vector<bool> dropped;  // zero-variance columns other than the intercept

    static Standardizer fit(const MatrixXd& X, const VectorXd& w, int intercept_col) {
        Standardizer s;
        const Eigen::Index p = X.cols();
        s.center = VectorXd::Zero(p);
        s.scale = VectorXd::Ones(p);
        s.dropped.assign(static_cast<std::size_t>(p), false);
        const double wsum = w.sum();
        for (Eigen::Index j = 0; j < p; ++j) {
            if (j == intercept_col) continue;
            // center only when an intercept can absorb the shift
            const double mu = intercept_col >= 0 ? X.col(j).dot(w) / wsum : 0.0;
            const double var = (X.col(j).array() - mu).square().matrix().dot(w) / wsum;
            if (var < 1e-14) {
                s.dropped[static_cast<std::size_t>(j)] = true;
                continue;
            }
            s.center(j) = mu;
            s.scale(j) = std::sqrt(var);
        }
        return s;
    }

    MatrixXd apply(const MatrixXd& X, int intercept_col) const {
        MatrixXd out = X;
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            if (j == intercept_col || dropped[static_cast<std::size_t>(j)]) continue;
            out.col(j) = (X.col(j).array() - center(j)) / scale(j);
        }
        return out;
    }

    VectorXd to_original(const VectorXd& beta_std, int intercept_col) const {
        VectorXd beta = beta_std;
        double shift = 0.0;
        for (Eigen::Index j = 0; j < beta.size(); ++j) {
            if (j == intercept_col) continue;
            if (dropped[static_cast<std::size_t>(j)]) {
                beta(j) = 0.0;
                continue;
            }
            beta(j) = beta_std(j) / scale(j);
            shift += beta_std(j) * center(j) / scale(j);
        }
        if (intercept_col >= 0) beta(intercept_col) -= shift;
        return beta;
    }
};

std::vector<double> make_grid(double lambda_max, const PenaltyConfig& config) {
    if (!config.lambda.empty()) return config.lambda;
    std::vector<double> grid(static_cast<std::size_t>(config.nlambda));
    if (config.nlambda == 1) {
        grid[0] = lambda_max;
        return grid;
    }
    const double lmin = std::log(lambda_max * config.lambda_min_ratio);
    const double lmax = std::log(lambda_max);
    for (int i = 0; i < config.nlambda; ++i)
        grid[static_cast<std::size_t>(i)] =
            std::exp(lmax + (lmin - lmax) * i / (config.nlambda - 1.0));
    return grid;
}

std::vector<int> fold_ids(std::size_t n, int nfolds, std::mt19937_64& rng) {
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i % static_cast<std::size_t>(nfolds));
    std::shuffle(ids.begin(), ids.end(), rng);
    return ids;
}

std::vector<bool> penalized_flags(Eigen::Index p, int intercept_col, const Standardizer& std_) {
    std::vector<bool> flags(static_cast<std::size_t>(p), true);
    if (intercept_col >= 0) flags[static_cast<std::size_t>(intercept_col)] = false;
    for (Eigen::Index j = 0; j < p; ++j)
        if (std_.dropped[static_cast<std::size_t>(j)]) flags[static_cast<std::size_t>(j)] = false;
    return flags;
}

// ----- outcome path -----------------------------------------------------

// one penalized GLM fit at a fixed lambda, warm-started
VectorXd glm_penalized_fit(const MatrixXd& Xs, const VectorXd& y, const VectorXd& w_norm,
                           const GlmFamily& family, Penalty pen, double lambda, double a,
                           const std::vector<bool>& penalized, VectorXd beta,
                           const PenaltyConfig& config) {
    const auto n = static_cast<double>(Xs.rows());
    if (family.family == Family::gaussian)
        return coordinate_descent(Xs, y, w_norm, n, pen, lambda, a, penalized, std::move(beta),
                                  config.tol, config.max_sweeps);
    for (int outer = 0; outer < 50; ++outer) {
        const VectorXd eta = Xs * beta;
        const VectorXd mu = family.mean(eta);
        VectorXd md = family.mean_deriv(eta).cwiseMax(1e-10);
        const VectorXd w_irls = w_norm.array() * md.array();
        const VectorXd z = eta.array() + (y - mu).array() / md.array();
        VectorXd beta_new = coordinate_descent(Xs, z, w_irls, n, pen, lambda, a, penalized, beta,
                                               config.tol, config.max_sweeps);
        const double change = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = std::move(beta_new);
        if (change < 10 * config.tol) break;
    }
    return beta;
}

std::vector<VectorXd> glm_path(const MatrixXd& Xs, const VectorXd& y, const VectorXd& w_norm,
                               const GlmFamily& family, Penalty pen, double a,
                               const std::vector<double>& grid,
                               const std::vector<bool>& penalized, int intercept_col,
                               const PenaltyConfig& config) {
    VectorXd beta = VectorXd::Zero(Xs.cols());
    if (intercept_col >= 0) {
        double ybar = weighted_mean(y, w_norm);
        if (family.family == Family::binomial) ybar = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
        if (family.family == Family::poisson) ybar = std::max(ybar, 1e-6);
        beta(intercept_col) = family.link(ybar);
    }
    std::vector<VectorXd> path;
    path.reserve(grid.size());
    for (double lambda : grid) {
        beta = glm_penalized_fit(Xs, y, w_norm, family, pen, lambda, a, penalized, beta, config);
        path.push_back(beta);
    }
    return path;
}

double glm_lambda_max(const MatrixXd& Xs, const VectorXd& y, const VectorXd& w_norm,
                      const GlmFamily& family, const std::vector<bool>& penalized,
                      int intercept_col) {
    const auto n = static_cast<double>(Xs.rows());
    VectorXd mu0;
    if (intercept_col >= 0) {
        mu0 = VectorXd::Constant(y.size(), weighted_mean(y, w_norm));
    } else {
        mu0 = family.mean(VectorXd::Zero(y.size()));
    }
    const VectorXd g = Xs.transpose() * (w_norm.array() * (y - mu0).array()).matrix() / n;
    double lmax = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j)
        if (penalized[static_cast<std::size_t>(j)]) lmax = std::max(lmax, std::abs(g(j)));
    if (lmax <= 0.0) lmax = 1.0;  // nothing to shrink; degenerate but valid
    return lmax;
}

}  // namespace

SelectionResult select_outcome(const MatrixXd& X, const VectorXd& y, const VectorXd& case_weights,
                               const GlmFamily& family, const PenaltyConfig& config,
                               int intercept_col) {
    config.validate();
    const Eigen::Index n = X.rows();
    if (n <= config.nfolds)
        throw SchemaError("sample size must exceed the number of cross-validation folds");

    const VectorXd w_norm = case_weights * (static_cast<double>(n) / case_weights.sum());
    const Standardizer std_ = Standardizer::fit(X, w_norm, intercept_col);
    const MatrixXd Xs = std_.apply(X, intercept_col);
    const auto penalized = penalized_flags(X.cols(), intercept_col, std_);
    const Penalty pen = config.penalty;
    const double a = config.a_for(pen);

    const double lambda_max = glm_lambda_max(Xs, y, w_norm, family, penalized, intercept_col);
    const std::vector<double> grid = make_grid(lambda_max, config);

    // cross-validated deviance
    std::mt19937_64 rng(config.seed);
    const auto folds = fold_ids(static_cast<std::size_t>(n), config.nfolds, rng);
    std::vector<double> cv(grid.size(), 0.0);
    for (int f = 0; f < config.nfolds; ++f) {
        std::vector<Eigen::Index> tr, va;
        for (Eigen::Index i = 0; i < n; ++i)
            (folds[static_cast<std::size_t>(i)] == f ? va : tr).push_back(i);
        MatrixXd Xtr(tr.size(), X.cols()), Xva(va.size(), X.cols());
        VectorXd ytr(tr.size()), wtr(tr.size()), yva(va.size()), wva(va.size());
        for (std::size_t i = 0; i < tr.size(); ++i) {
            Xtr.row(static_cast<Eigen::Index>(i)) = Xs.row(tr[i]);
            ytr(static_cast<Eigen::Index>(i)) = y(tr[i]);
            wtr(static_cast<Eigen::Index>(i)) = w_norm(tr[i]);
        }
        for (std::size_t i = 0; i < va.size(); ++i) {
            Xva.row(static_cast<Eigen::Index>(i)) = Xs.row(va[i]);
            yva(static_cast<Eigen::Index>(i)) = y(va[i]);
            wva(static_cast<Eigen::Index>(i)) = w_norm(va[i]);
        }
        const auto path =
            glm_path(Xtr, ytr, wtr, family, pen, a, grid, penalized, intercept_col, config);
        for (std::size_t l = 0; l < grid.size(); ++l) {
            const VectorXd mu = family.mean(Xva * path[l]);
            double dev = 0.0;
            for (Eigen::Index i = 0; i < yva.size(); ++i) {
                const double m = family.family == Family::gaussian
                                     ? mu(i)
                                     : std::clamp(mu(i), 1e-10,
                                                  family.family == Family::binomial ? 1.0 - 1e-10
                                                                                    : 1e300);
                dev += wva(i) * family.deviance_unit(yva(i), m);
            }
            cv[l] += dev;
        }
    }

    // full-data path; ties in CV go to the larger lambda (sparser model)
    const auto path = glm_path(Xs, y, w_norm, family, pen, a, grid, penalized, intercept_col, config);
    std::size_t best = 0;
    for (std::size_t l = 1; l < grid.size(); ++l)
        if (cv[l] < cv[best] - 1e-12) best = l;

    SelectionResult result;
    result.lambda_grid = grid;
    result.cv_error = cv;
    result.lambda_index = static_cast<int>(best);
    result.lambda_chosen = grid[best];
    result.coefficients = std_.to_original(path[best], intercept_col);
    for (Eigen::Index j = 0; j < result.coefficients.size(); ++j)
        if (j == intercept_col || result.coefficients(j) != 0.0)
            result.active.push_back(static_cast<int>(j));
    const std::size_t min_active = intercept_col >= 0 ? 1 : 0;
    if (result.active.size() <= min_active)
        result.warnings.push_back(
            "all penalized coefficients were shrunk to zero; returning the intercept-only model");
    return result;
}

namespace {

// ----- selection-model (balance) path ------------------------------------

struct PsLossSystem {
    const MatrixXd& Xs_np;
    const VectorXd& w_np;
    const MatrixXd& Xs_p;
    const VectorXd& d_p;
    PsLink link;
    HFunction h;
    double scale;
    double clip = 1e-6;

    VectorXd residual(const VectorXd& gamma) const {
        const VectorXd eta_np = Xs_np * gamma;
        if (h == HFunction::x_over_pi) {
            VectorXd inv(eta_np.size());
            for (Eigen::Index i = 0; i < eta_np.size(); ++i)
                inv(i) = w_np(i) / std::clamp(link.prob(eta_np(i)), clip, 1.0 - clip);
            return (Xs_np.transpose() * inv - Xs_p.transpose() * d_p) / scale;
        }
        const VectorXd eta_p = Xs_p * gamma;
        VectorXd dpi(eta_p.size());
        for (Eigen::Index i = 0; i < eta_p.size(); ++i)
            dpi(i) = d_p(i) * std::clamp(link.prob(eta_p(i)), clip, 1.0 - clip);
        return (Xs_np.transpose() * w_np - Xs_p.transpose() * dpi) / scale;
    }

    MatrixXd jacobian(const VectorXd& gamma) const {
        if (h == HFunction::x_over_pi) {
            const VectorXd eta_np = Xs_np * gamma;
            VectorXd g(eta_np.size());
            for (Eigen::Index i = 0; i < eta_np.size(); ++i) {
                const double pi = std::clamp(link.prob(eta_np(i)), clip, 1.0 - clip);
                g(i) = -w_np(i) * link.dprob(eta_np(i)) / (pi * pi);
            }
            return Xs_np.transpose() * g.asDiagonal() * Xs_np / scale;
        }
        const VectorXd eta_p = Xs_p * gamma;
        VectorXd g(eta_p.size());
        for (Eigen::Index i = 0; i < eta_p.size(); ++i) g(i) = -d_p(i) * link.dprob(eta_p(i));
        return Xs_p.transpose() * g.asDiagonal() * Xs_p / scale;
    }

    double loss(const VectorXd& gamma) const { return 0.5 * residual(gamma).squaredNorm(); }

    double penalized_loss(const VectorXd& gamma, Penalty pen, double lambda, double a,
                          const std::vector<bool>& penalized) const {
        double total = loss(gamma);
        for (Eigen::Index j = 0; j < gamma.size(); ++j)
            if (penalized[static_cast<std::size_t>(j)])
                total += penalty_value(pen, gamma(j), lambda, a);
        return total;
    }
};

double link_inverse(const PsLink& link, double p) {
    switch (link.kind) {
        case PsLinkKind::logit: return std::log(p / (1.0 - p));
        case PsLinkKind::probit: return norm_quantile(p);
        case PsLinkKind::cloglog: return std::log(-std::log1p(-p));
    }
    return 0;
}

// Gauss-Newton with an inner penalized least-squares step
VectorXd ps_penalized_fit(const PsLossSystem& sys, Penalty pen, double lambda, double a,
                          const std::vector<bool>& penalized, VectorXd gamma,
                          const PenaltyConfig& config) {
    double f = sys.penalized_loss(gamma, pen, lambda, a, penalized);
    for (int outer = 0; outer < 30; ++outer) {
        const VectorXd res = sys.residual(gamma);
        const MatrixXd J = sys.jacobian(gamma);
        const VectorXd b = J * gamma - res;
        VectorXd gamma_new = coordinate_descent(J, b, VectorXd::Ones(J.rows()), 1.0, pen, lambda, a,
                                                penalized, gamma, config.tol, 200);
        double f_new = sys.penalized_loss(gamma_new, pen, lambda, a, penalized);
        int halvings = 0;
        while (f_new > f + 1e-12 && halvings < 20) {
            gamma_new = 0.5 * (gamma_new + gamma);
            f_new = sys.penalized_loss(gamma_new, pen, lambda, a, penalized);
            ++halvings;
        }
        const double change = (gamma_new - gamma).cwiseAbs().maxCoeff();
        const double gain = f - f_new;
        gamma = std::move(gamma_new);
        f = f_new;
        // inner solves are only tol-accurate, so iterate stalls show up as
        // tiny coefficient moves or vanishing objective gains
        if (change < 1e-6 || gain < 1e-11 * (1.0 + std::abs(f))) break;
    }
    return gamma;
}

}  // namespace

SelectionResult select_ps(const MatrixXd& X_np, const VectorXd& w_np, const MatrixXd& X_p,
                          const VectorXd& d_p, const PsLink& link, HFunction h,
                          const PenaltyConfig& config, int intercept_col) {
    config.validate();
    if (X_np.cols() != X_p.cols())
        throw SchemaError("sample designs have different column counts");
    const Eigen::Index p = X_np.cols();

    // shared standardization over the combined, weight-representative rows
    MatrixXd X_comb(X_np.rows() + X_p.rows(), p);
    X_comb << X_np, X_p;
    VectorXd w_comb(X_comb.rows());
    w_comb << w_np, d_p;
    const Standardizer std_ = Standardizer::fit(X_comb, w_comb, intercept_col);
    const MatrixXd Xs_np = std_.apply(X_np, intercept_col);
    const MatrixXd Xs_p = std_.apply(X_p, intercept_col);
    const auto penalized = penalized_flags(p, intercept_col, std_);
    const Penalty pen = config.penalty;
    const double a = config.a_for(pen);

    const double scale = std::max(1.0, d_p.sum());
    PsLossSystem sys{Xs_np, w_np, Xs_p, d_p, link, h, scale};

    // intercept-only solution is available in closed form for both h choices
    VectorXd gamma0 = VectorXd::Zero(p);
    if (intercept_col >= 0) {
        const double pbar = std::clamp(w_np.sum() / d_p.sum(), 1e-6, 1.0 - 1e-6);
        gamma0(intercept_col) = link_inverse(link, pbar);
    }
    const VectorXd grad0 = sys.jacobian(gamma0).transpose() * sys.residual(gamma0);
    double lambda_max = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
        if (penalized[static_cast<std::size_t>(j)]) lambda_max = std::max(lambda_max, std::abs(grad0(j)));
    if (lambda_max <= 0.0) lambda_max = 1.0;
    const std::vector<double> grid = make_grid(lambda_max, config);

    // folds stratified by sample membership
    std::mt19937_64 rng(config.seed);
    const auto folds_np = fold_ids(static_cast<std::size_t>(X_np.rows()), config.nfolds, rng);
    const auto folds_p = fold_ids(static_cast<std::size_t>(X_p.rows()), config.nfolds, rng);

    std::vector<double> cv(grid.size(), 0.0);
    for (int f = 0; f < config.nfolds; ++f) {
        std::vector<Eigen::Index> tr_np, va_np, tr_p, va_p;
        for (Eigen::Index i = 0; i < X_np.rows(); ++i)
            (folds_np[static_cast<std::size_t>(i)] == f ? va_np : tr_np).push_back(i);
        for (Eigen::Index i = 0; i < X_p.rows(); ++i)
            (folds_p[static_cast<std::size_t>(i)] == f ? va_p : tr_p).push_back(i);
        if (tr_np.empty() || tr_p.empty() || va_p.empty()) continue;

        MatrixXd Xtr_np(tr_np.size(), p), Xva_np(va_np.size(), p);
        MatrixXd Xtr_p(tr_p.size(), p), Xva_p(va_p.size(), p);
        VectorXd wtr(tr_np.size()), wva(va_np.size()), dtr(tr_p.size()), dva(va_p.size());
        for (std::size_t i = 0; i < tr_np.size(); ++i) {
            Xtr_np.row(static_cast<Eigen::Index>(i)) = Xs_np.row(tr_np[i]);
            wtr(static_cast<Eigen::Index>(i)) = w_np(tr_np[i]);
        }
        for (std::size_t i = 0; i < va_np.size(); ++i) {
            Xva_np.row(static_cast<Eigen::Index>(i)) = Xs_np.row(va_np[i]);
            wva(static_cast<Eigen::Index>(i)) = w_np(va_np[i]);
        }
        for (std::size_t i = 0; i < tr_p.size(); ++i) {
            Xtr_p.row(static_cast<Eigen::Index>(i)) = Xs_p.row(tr_p[i]);
            dtr(static_cast<Eigen::Index>(i)) = d_p(tr_p[i]);
        }
        for (std::size_t i = 0; i < va_p.size(); ++i) {
            Xva_p.row(static_cast<Eigen::Index>(i)) = Xs_p.row(va_p[i]);
            dva(static_cast<Eigen::Index>(i)) = d_p(va_p[i]);
        }

        PsLossSystem train{Xtr_np, wtr, Xtr_p, dtr, link, h, std::max(1.0, dtr.sum())};
        PsLossSystem valid{Xva_np, wva, Xva_p, dva, link, h, std::max(1.0, dva.sum())};
        VectorXd gamma = gamma0;
        for (std::size_t l = 0; l < grid.size(); ++l) {
            gamma = ps_penalized_fit(train, pen, grid[l], a, penalized, gamma, config);
            cv[l] += valid.loss(gamma);
        }
    }

    VectorXd gamma = gamma0;
    std::vector<VectorXd> path;
    path.reserve(grid.size());
    for (double lambda : grid) {
        gamma = ps_penalized_fit(sys, pen, lambda, a, penalized, gamma, config);
        path.push_back(gamma);
    }
    std::size_t best = 0;
    for (std::size_t l = 1; l < grid.size(); ++l)
        if (cv[l] < cv[best] - 1e-12) best = l;

    SelectionResult result;
    result.lambda_grid = grid;
    result.cv_error = cv;
    result.lambda_index = static_cast<int>(best);
    result.lambda_chosen = grid[best];
    result.coefficients = std_.to_original(path[best], intercept_col);
    for (Eigen::Index j = 0; j < result.coefficients.size(); ++j)
        if (j == intercept_col || result.coefficients(j) != 0.0)
            result.active.push_back(static_cast<int>(j));
    const std::size_t min_active = intercept_col >= 0 ? 1 : 0;
    if (result.active.size() <= min_active)
        result.warnings.push_back(
            "all penalized coefficients were shrunk to zero; returning the intercept-only model");
    return result;
}

std::vector<int> combine_union(const SelectionResult& outcome_sel, const SelectionResult& ps_sel) {
    std::vector<int> merged = outcome_sel.active;
    merged.insert(merged.end(), ps_sel.active.begin(), ps_sel.active.end());
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    return merged;
}

}  // namespace nonprob
