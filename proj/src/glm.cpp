#include "nonprob/glm.hpp"

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

double log1pexp(double eta) {
    return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta)));
}

int find_intercept_column(const MatrixXd& X) {
    for (Eigen::Index c = 0; c < X.cols(); ++c)
        if ((X.col(c).array() == 1.0).all()) return static_cast<int>(c);
    return -1;
}

}  // namespace

Family family_from_string(const std::string& name) {
    if (name == "gaussian") return Family::gaussian;
    if (name == "binomial") return Family::binomial;
    if (name == "poisson") return Family::poisson;
    throw SchemaError("unknown family: " + name);
}

std::string family_name(Family family) {
    switch (family) {
        case Family::gaussian: return "gaussian";
        case Family::binomial: return "binomial";
        case Family::poisson: return "poisson";
    }
    return "";
}

double GlmFamily::mean(double eta) const {
    switch (family) {
        case Family::gaussian: return eta;
        case Family::binomial: return expit(eta);
        case Family::poisson: return std::exp(eta);
    }
    return 0;
}

double GlmFamily::mean_deriv(double eta) const {
    switch (family) {
        case Family::gaussian: return 1.0;
        case Family::binomial: {
            const double m = expit(eta);
            return m * (1.0 - m);
        }
        case Family::poisson: return std::exp(eta);
    }
    return 0;
}

double GlmFamily::mean_deriv2(double eta) const {
    switch (family) {
        case Family::gaussian: return 0.0;
        case Family::binomial: {
            const double m = expit(eta);
            return m * (1.0 - m) * (1.0 - 2.0 * m);
        }
        case Family::poisson: return std::exp(eta);
    }
    return 0;
}

double GlmFamily::link(double mu) const {
    switch (family) {
        case Family::gaussian: return mu;
        case Family::binomial: return std::log(mu / (1.0 - mu));
        case Family::poisson: return std::log(mu);
    }
    return 0;
}

double GlmFamily::variance(double mu) const {
    switch (family) {
        case Family::gaussian: return 1.0;
        case Family::binomial: return mu * (1.0 - mu);
        case Family::poisson: return mu;
    }
    return 0;
}

double GlmFamily::deviance_unit(double y, double mu) const {
    switch (family) {
        case Family::gaussian: {
            const double r = y - mu;
            return r * r;
        }
        case Family::binomial: {
            double d = 0.0;
            if (y > 0) d += y * std::log(y / mu);
            if (y < 1) d += (1.0 - y) * std::log((1.0 - y) / (1.0 - mu));
            return 2.0 * d;
        }
        case Family::poisson: {
            double d = mu - y;
            if (y > 0) d += y * std::log(y / mu);
            return 2.0 * d;
        }
    }
    return 0;
}

VectorXd GlmFamily::mean(const VectorXd& eta) const {
    VectorXd out(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) out(i) = mean(eta(i));
    return out;
}

VectorXd GlmFamily::mean_deriv(const VectorXd& eta) const {
    VectorXd out(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) out(i) = mean_deriv(eta(i));
    return out;
}

namespace {

double total_deviance(const GlmFamily& family, const VectorXd& y, const VectorXd& mu,
                      const VectorXd& w) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) dev += w(i) * family.deviance_unit(y(i), mu(i));
    return dev;
}

void check_response_range(const GlmFamily& family, const VectorXd& y) {
    if (family.family == Family::binomial && ((y.array() < 0).any() || (y.array() > 1).any()))
        throw SchemaError("binomial responses must lie in [0, 1]");
    if (family.family == Family::poisson && (y.array() < 0).any())
        throw SchemaError("poisson responses must be non-negative");
}

}  // namespace

OutcomeFit irls_fit(const MatrixXd& X, const VectorXd& y, const GlmFamily& family,
                    const VectorXd& case_weights, const VectorXd* start,
                    const std::vector<std::string>& column_names, const IrlsOptions& options) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (y.size() != n) throw SchemaError("design and response have different row counts");
    if (case_weights.size() != n) throw SchemaError("case weights have the wrong length");
    check_response_range(family, y);

    OutcomeFit fit;
    fit.family = family;
    fit.column_names = column_names;

    VectorXd beta = VectorXd::Zero(p);
    if (start) {
        if (start->size() != p) throw SchemaError("starting values have the wrong length");
        beta = *start;
    } else {
        const int icol = find_intercept_column(X);
        if (icol >= 0) {
            double ybar = weighted_mean(y, case_weights);
            if (family.family == Family::binomial) ybar = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
            if (family.family == Family::poisson) ybar = std::max(ybar, 1e-6);
            beta(icol) = family.link(ybar);
        }
    }

    VectorXd eta = X * beta;
    VectorXd mu = family.mean(eta);
    double dev = total_deviance(family, y, mu, case_weights);
    fit.deviance_trace.push_back(dev);

    for (int iter = 1; iter <= options.max_iter; ++iter) {
        const VectorXd md = family.mean_deriv(eta);
        // canonical link: IRLS weight = w * m'(eta)
        VectorXd w = case_weights.array() * md.array().max(1e-12);
        VectorXd z = eta.array() + (y - mu).array() / md.array().max(1e-12);

        const MatrixXd Xw = w.asDiagonal() * X;
        const MatrixXd XtWX = X.transpose() * Xw;
        Eigen::ColPivHouseholderQR<MatrixXd> qr(XtWX);
        qr.setThreshold(1e-10);
        if (qr.rank() < p && !options.singular_ok) {
            std::string msg = "rank-deficient design; aliased columns:";
            const auto& perm = qr.colsPermutation().indices();
            for (Eigen::Index k = qr.rank(); k < p; ++k) {
                const auto idx = static_cast<std::size_t>(perm(k));
                msg += " ";
                msg += idx < column_names.size() ? column_names[idx] : std::to_string(perm(k));
            }
            throw NumericError(msg);
        }
        VectorXd beta_new = qr.solve(X.transpose() * (w.asDiagonal() * z));

        // step-halving keeps the deviance non-increasing
        VectorXd eta_new = X * beta_new;
        VectorXd mu_new = family.mean(eta_new);
        double dev_new = total_deviance(family, y, mu_new, case_weights);
        int halvings = 0;
        while ((!std::isfinite(dev_new) || dev_new > dev * (1.0 + 1e-12) + 1e-12) && halvings < 30) {
            beta_new = 0.5 * (beta_new + beta);
            eta_new = X * beta_new;
            mu_new = family.mean(eta_new);
            dev_new = total_deviance(family, y, mu_new, case_weights);
            ++halvings;
        }

        const double max_change = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = beta_new;
        eta = eta_new;
        mu = mu_new;
        dev = dev_new;
        fit.deviance_trace.push_back(dev);
        fit.iterations = iter;
        if (max_change < options.tol) {
            fit.converged = true;
            break;
        }
    }

    if (!fit.converged) {
        const double grad = glm_score(X, y, family, case_weights, beta).cwiseAbs().maxCoeff();
        throw ConvergenceError("IRLS did not converge in " + std::to_string(options.max_iter) +
                                   " iterations (max |score| = " + std::to_string(grad) + ")",
                               beta, grad);
    }

    fit.coefficients = beta;
    fit.fitted = mu;
    fit.deviance = dev;

    if (family.family == Family::binomial) {
        Eigen::Index extreme = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (mu(i) < 1e-10 || mu(i) > 1.0 - 1e-10) ++extreme;
        if (extreme > n / 10)
            fit.warnings.push_back("possible separation: " + std::to_string(extreme) + " of " +
                                   std::to_string(n) + " fitted probabilities are within 1e-10 of 0 or 1");
    }
    return fit;
}

VectorXd predict_mean(const OutcomeFit& fit, const MatrixXd& X_new,
                      const std::vector<std::string>& column_names) {
    if (X_new.cols() != fit.coefficients.size())
        throw SchemaError("prediction design has " + std::to_string(X_new.cols()) +
                          " columns, model has " + std::to_string(fit.coefficients.size()));
    if (!column_names.empty() && !fit.column_names.empty() && column_names != fit.column_names)
        throw SchemaError("prediction design columns do not match the training design");
    return fit.family.mean(X_new * fit.coefficients);
}

VectorXd glm_score(const MatrixXd& X, const VectorXd& y, const GlmFamily& family,
                   const VectorXd& case_weights, const VectorXd& beta) {
    const VectorXd mu = family.mean(X * beta);
    return X.transpose() * (case_weights.array() * (y - mu).array()).matrix();
}

double glm_log_likelihood(const MatrixXd& X, const VectorXd& y, const GlmFamily& family,
                          const VectorXd& case_weights, const VectorXd& beta) {
    const VectorXd eta = X * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double unit = 0.0;
        switch (family.family) {
            case Family::gaussian: {
                const double r = y(i) - eta(i);
                unit = -0.5 * r * r;
                break;
            }
            case Family::binomial:
                unit = y(i) * eta(i) - log1pexp(eta(i));
                break;
            case Family::poisson:
                unit = y(i) * eta(i) - std::exp(eta(i));
                break;
        }
        ll += case_weights(i) * unit;
    }
    return ll;
}

}  // namespace nonprob
