#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonprob/glm.hpp"

#include <cmath>
#include <random>

using namespace nonprob;

namespace {

MatrixXd with_intercept(const VectorXd& x) {
    MatrixXd X(x.size(), 2);
    X.col(0).setOnes();
    X.col(1) = x;
    return X;
}

// Independent Newton solver for the poisson log-link likelihood, used as the
// oracle for irls_fit.
VectorXd poisson_newton(const MatrixXd& X, const VectorXd& y) {
    VectorXd beta = VectorXd::Zero(X.cols());
    for (int it = 0; it < 200; ++it) {
        VectorXd mu = (X * beta).array().exp();
        VectorXd grad = X.transpose() * (y - mu);
        MatrixXd hess = X.transpose() * mu.asDiagonal() * X;
        VectorXd step = hess.ldlt().solve(grad);
        beta += step;
        if (step.cwiseAbs().maxCoeff() < 1e-12) break;
    }
    return beta;
}

}  // namespace

TEST_CASE("intercept-only binomial fits the sample mean exactly") {
    VectorXd y(4);
    y << 1, 0, 0, 0;
    MatrixXd X = MatrixXd::Ones(4, 1);
    auto fit = irls_fit(X, y, {Family::binomial}, VectorXd::Ones(4));
    CHECK(fit.converged);
    CHECK(fit.fitted(0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(fit.coefficients(0) == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-10));
}

TEST_CASE("gaussian IRLS equals ordinary least squares") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> norm;
    const int n = 60;
    MatrixXd X(n, 3);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1;
        X(i, 1) = norm(rng);
        X(i, 2) = norm(rng);
        y(i) = 2 + 0.5 * X(i, 1) - X(i, 2) + norm(rng);
    }
    auto fit = irls_fit(X, y, {Family::gaussian}, VectorXd::Ones(n));
    VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
    CHECK((fit.coefficients - ols).cwiseAbs().maxCoeff() < 1e-10);

    // case-weighted residuals sum to zero with an intercept
    VectorXd resid = y - fit.fitted;
    CHECK(std::abs(resid.sum()) < 1e-10);
}

TEST_CASE("poisson fit matches an independent Newton solver and recovers truth") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> norm;
    const int n = 10000;
    MatrixXd X(n, 2);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1;
        X(i, 1) = norm(rng);
        std::poisson_distribution<int> pois(std::exp(0.5 - 0.2 * X(i, 1)));
        y(i) = pois(rng);
    }
    auto fit = irls_fit(X, y, {Family::poisson}, VectorXd::Ones(n));
    VectorXd oracle = poisson_newton(X, y);
    CHECK((fit.coefficients - oracle).cwiseAbs().maxCoeff() < 1e-8);

    // within 3 SE of the generating values
    VectorXd mu = fit.fitted;
    MatrixXd info = X.transpose() * mu.asDiagonal() * X;
    MatrixXd cov = info.ldlt().solve(MatrixXd::Identity(2, 2));
    CHECK(std::abs(fit.coefficients(0) - 0.5) < 3 * std::sqrt(cov(0, 0)));
    CHECK(std::abs(fit.coefficients(1) + 0.2) < 3 * std::sqrt(cov(1, 1)));
}

TEST_CASE("score at the optimum is zero and matches finite differences elsewhere") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif;
    for (auto family : {Family::gaussian, Family::binomial, Family::poisson}) {
        GlmFamily fam{family};
        const int n = 40, p = 3;
        MatrixXd X(n, p);
        VectorXd y(n), w(n);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = 1;
            X(i, 1) = norm(rng);
            X(i, 2) = norm(rng);
            w(i) = 0.5 + unif(rng);
            switch (family) {
                case Family::gaussian: y(i) = norm(rng); break;
                case Family::binomial: y(i) = unif(rng) < 0.4 ? 1 : 0; break;
                case Family::poisson: y(i) = static_cast<double>(rng() % 5); break;
            }
        }
        auto fit = irls_fit(X, y, fam, w);
        CHECK(glm_score(X, y, fam, w, fit.coefficients).cwiseAbs().maxCoeff() < 1e-6);

        VectorXd beta(p);
        beta << 0.1, -0.2, 0.05;
        VectorXd score = glm_score(X, y, fam, w, beta);
        const double h = 1e-6;
        for (int j = 0; j < p; ++j) {
            VectorXd up = beta, dn = beta;
            up(j) += h;
            dn(j) -= h;
            const double fd = (glm_log_likelihood(X, y, fam, w, up) -
                               glm_log_likelihood(X, y, fam, w, dn)) /
                              (2 * h);
            CHECK(score(j) == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("deviance trace is non-increasing") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> norm;
    const int n = 200;
    MatrixXd X(n, 2);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1;
        X(i, 1) = norm(rng);
        y(i) = (1.0 / (1.0 + std::exp(-(0.3 + 2 * X(i, 1)))) > norm(rng) * 0.2 + 0.5) ? 1 : 0;
    }
    auto fit = irls_fit(X, y, {Family::binomial}, VectorXd::Ones(n));
    for (std::size_t i = 1; i < fit.deviance_trace.size(); ++i)
        CHECK(fit.deviance_trace[i] <= fit.deviance_trace[i - 1] * (1 + 1e-12) + 1e-12);
}

TEST_CASE("rank deficiency names the aliased column") {
    MatrixXd X(5, 3);
    X.col(0).setOnes();
    X.col(1) << 1, 2, 3, 4, 5;
    X.col(2) = 2 * X.col(1);  // aliased
    VectorXd y(5);
    y << 1, 2, 3, 4, 5;
    try {
        irls_fit(X, y, {Family::gaussian}, VectorXd::Ones(5), nullptr, {"(Intercept)", "x", "x2"});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("aliased") != std::string::npos);
        CHECK((msg.find("x") != std::string::npos));
    }
}

TEST_CASE("predictions stay in the family range and column checks fire") {
    VectorXd y(4);
    y << 1, 0, 1, 0;
    MatrixXd X = with_intercept((VectorXd(4) << -1, 0, 1, 2).finished());
    auto fit = irls_fit(X, y, {Family::binomial}, VectorXd::Ones(4), nullptr, {"(Intercept)", "x"});

    // eta = 0 with a zero coefficient vector gives 0.5
    OutcomeFit flat = fit;
    flat.coefficients.setZero();
    VectorXd pr = predict_mean(flat, X);
    CHECK(pr(0) == 0.5);

    VectorXd pred = predict_mean(fit, X);
    CHECK((pred.array() > 0).all());
    CHECK((pred.array() < 1).all());

    MatrixXd bad(2, 1);
    bad.setOnes();
    CHECK_THROWS_AS(predict_mean(fit, bad), SchemaError);
    MatrixXd renamed = X;
    CHECK_THROWS_AS(predict_mean(fit, renamed, {"(Intercept)", "z"}), SchemaError);
}

TEST_CASE("gaussian identity predictions equal the linear predictor") {
    MatrixXd X = with_intercept((VectorXd(3) << 0, 1, 2).finished());
    VectorXd y(3);
    y << 1, 3, 5;
    auto fit = irls_fit(X, y, {Family::gaussian}, VectorXd::Ones(3));
    CHECK(predict_mean(fit, X).isApprox(X * fit.coefficients, 1e-12));
}
