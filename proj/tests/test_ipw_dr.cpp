#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonprob/ipw_dr.hpp"
#include "nonprob/mi.hpp"

#include <cmath>
#include <random>

using namespace nonprob;

namespace {

PsFit fixed_scores(const VectorXd& pi, const VectorXd& w) {
    PsFit fit;
    fit.scores_np = pi;
    fit.ipw_weights = pi.cwiseInverse();
    fit.nhat_np = (w.array() * fit.ipw_weights.array()).sum();
    fit.converged = true;
    return fit;
}

}  // namespace

TEST_CASE("constant scores give the textbook values") {
    VectorXd y(5);
    y << 1, 2, 3, 4, 5;
    VectorXd w = VectorXd::Ones(5);
    auto ps = fixed_scores(VectorXd::Constant(5, 0.5), w);
    auto est = ipw_estimate(y, w, ps, 10.0, false);
    CHECK(est.ht == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(est.hajek == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(est.form == "ht");
    CHECK(est.naive == doctest::Approx(3.0));
}

TEST_CASE("hajek form ignores the scores for constant outcomes") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(0.05, 0.95);
    VectorXd pi(40);
    for (int i = 0; i < 40; ++i) pi(i) = unif(rng);
    VectorXd w = VectorXd::Ones(40);
    VectorXd y = VectorXd::Constant(40, 2.5);
    auto est = ipw_estimate(y, w, fixed_scores(pi, w));
    CHECK(est.mu == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(est.form == "hajek");
}

TEST_CASE("hajek estimate is bounded by the observed outcome range") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> upi(0.02, 0.9);
    std::normal_distribution<double> norm;
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 5 + static_cast<int>(rng() % 50);
        VectorXd pi(n), y(n);
        for (int i = 0; i < n; ++i) {
            pi(i) = upi(rng);
            y(i) = norm(rng) * 10;
        }
        VectorXd w = VectorXd::Ones(n);
        auto est = ipw_estimate(y, w, fixed_scores(pi, w));
        CHECK(est.mu >= y.minCoeff() - 1e-12);
        CHECK(est.mu <= y.maxCoeff() + 1e-12);
    }
}

TEST_CASE("scaling outcomes scales every estimator form") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> upi(0.05, 0.9);
    std::normal_distribution<double> norm;
    const int n = 30;
    VectorXd pi(n), y(n);
    for (int i = 0; i < n; ++i) {
        pi(i) = upi(rng);
        y(i) = norm(rng);
    }
    VectorXd w = VectorXd::Ones(n);
    auto ps = fixed_scores(pi, w);
    const double c = -3.7;
    auto base = ipw_estimate(y, w, ps, 100.0);
    auto scaled = ipw_estimate((c * y.array()).matrix(), w, ps, 100.0);
    CHECK(scaled.hajek == doctest::Approx(c * base.hajek).epsilon(1e-12));
    CHECK(scaled.ht == doctest::Approx(c * base.ht).epsilon(1e-12));
}

TEST_CASE("doubly robust decomposition is exact and modes differ as built") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> upi(0.1, 0.8);
    const int n_np = 60, n_p = 40;
    VectorXd y(n_np), pi(n_np), pred_np(n_np), pred_p(n_p), d(n_p);
    for (int i = 0; i < n_np; ++i) {
        y(i) = norm(rng);
        pi(i) = upi(rng);
        pred_np(i) = norm(rng) * 0.5;
    }
    for (int i = 0; i < n_p; ++i) {
        pred_p(i) = norm(rng) * 0.5;
        d(i) = 2.0 + upi(rng);
    }
    VectorXd w = VectorXd::Ones(n_np);
    auto ps = fixed_scores(pi, w);

    auto est = dr_separate(y, w, ps, pred_np, pred_p, d, DrPopSize::estimated);
    CHECK(est.mu - est.projection == doctest::Approx(est.correction).epsilon(1e-12));

    auto known = dr_separate(y, w, ps, pred_np, pred_p, d, DrPopSize::known, 500.0);
    CHECK(known.variant == "known_N");
    CHECK(known.correction ==
          doctest::Approx((w.array() * (y - pred_np).array() / pi.array()).sum() / 500.0));

    CHECK_THROWS_AS(dr_separate(y, w, ps, pred_np, pred_p, d, DrPopSize::known), SchemaError);
}

TEST_CASE("a perfect outcome model removes the correction term") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> upi(0.1, 0.8);
    const int n_np = 50, n_p = 30;
    VectorXd y(n_np), pi(n_np), pred_p(n_p), d(n_p);
    for (int i = 0; i < n_np; ++i) {
        y(i) = norm(rng);
        pi(i) = upi(rng);
    }
    for (int i = 0; i < n_p; ++i) {
        pred_p(i) = norm(rng);
        d(i) = 3.0;
    }
    VectorXd w = VectorXd::Ones(n_np);
    auto ps = fixed_scores(pi, w);
    auto est = dr_separate(y, w, ps, y, pred_p, d, DrPopSize::estimated);
    CHECK(est.correction == doctest::Approx(0.0));
    CHECK(est.mu == doctest::Approx(weighted_mean(pred_p, d)));
}

TEST_CASE("constant outcome with a saturated model returns the constant") {
    const int n_np = 20, n_p = 15;
    VectorXd y = VectorXd::Constant(n_np, 7.0);
    VectorXd pred_np = y;
    VectorXd pred_p = VectorXd::Constant(n_p, 7.0);
    VectorXd pi = VectorXd::Constant(n_np, 0.3);
    VectorXd d = VectorXd::Constant(n_p, 4.0);
    VectorXd w = VectorXd::Ones(n_np);
    auto est = dr_separate(y, w, fixed_scores(pi, w), pred_np, pred_p, d, DrPopSize::estimated);
    CHECK(est.mu == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("benchmark-total doubly robust path uses the linear projection") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> norm;
    const int n = 80;
    MatrixXd X(n, 2);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1;
        X(i, 1) = norm(rng);
        y(i) = 1.0 + 2.0 * X(i, 1) + 0.1 * norm(rng);
    }
    VectorXd w = VectorXd::Ones(n);
    auto fit = irls_fit(X, y, {Family::gaussian}, w);
    VectorXd pi = VectorXd::Constant(n, 0.4);
    auto ps = fixed_scores(pi, w);
    VectorXd totals(2);
    totals << 200.0, 60.0;
    auto est = dr_separate_totals(y, w, ps, fit.fitted, fit.coefficients, totals, 200.0,
                                  DrPopSize::estimated);
    CHECK(est.projection ==
          doctest::Approx(fit.coefficients(0) + 0.3 * fit.coefficients(1)).epsilon(1e-10));
    CHECK(est.mu - est.projection == doctest::Approx(est.correction).epsilon(1e-12));
}

TEST_CASE("bias-minimizing system: zero-residual outcomes kill the first block") {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> norm;
    const int n_np = 40, n_p = 25;
    MatrixXd X_np(n_np, 2), X_p(n_p, 2);
    for (int i = 0; i < n_np; ++i) {
        X_np(i, 0) = 1;
        X_np(i, 1) = norm(rng);
    }
    for (int i = 0; i < n_p; ++i) {
        X_p(i, 0) = 1;
        X_p(i, 1) = norm(rng);
    }
    VectorXd beta0(2);
    beta0 << 0.7, -1.2;
    VectorXd y = X_np * beta0;  // exact linear outcome
    VectorXd w = VectorXd::Ones(n_np);
    VectorXd d = VectorXd::Constant(n_p, 2.0);

    VectorXd gamma(2);
    gamma << 0.4, 0.9;  // arbitrary
    VectorXd res = bias_min_residual(X_np, y, w, X_p, d, PsLink{PsLinkKind::logit},
                                     GlmFamily{Family::gaussian}, gamma, beta0);
    CHECK(res.head(2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("bias-minimizing solve reaches a tight root and matches separate fits loosely") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif;
    const PsLink link{PsLinkKind::logit};
    const GlmFamily fam{Family::gaussian};

    const int N = 20000;
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<double> xp;
    VectorXd gamma_true(2), beta_true(2);
    gamma_true << -2.0, 0.7;
    beta_true << 1.0, 1.0;
    for (int i = 0; i < N; ++i) {
        const double x = norm(rng);
        const double pi = link.prob(gamma_true(0) + gamma_true(1) * x);
        if (unif(rng) < pi) {
            xs.push_back(x);
            ys.push_back(beta_true(0) + beta_true(1) * x + 0.5 * norm(rng));
        }
    }
    const int n_p = 500;
    for (int i = 0; i < n_p; ++i) xp.push_back(norm(rng));

    const auto n_np = static_cast<Eigen::Index>(xs.size());
    MatrixXd X_np(n_np, 2), X_p(n_p, 2);
    VectorXd y(n_np);
    for (Eigen::Index i = 0; i < n_np; ++i) {
        X_np(i, 0) = 1;
        X_np(i, 1) = xs[static_cast<std::size_t>(i)];
        y(i) = ys[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < n_p; ++i) {
        X_p(i, 0) = 1;
        X_p(i, 1) = xp[static_cast<std::size_t>(i)];
    }
    VectorXd w = VectorXd::Ones(n_np);
    VectorXd d = VectorXd::Constant(n_p, static_cast<double>(N) / n_p);

    auto ps = ps_fit_mle(X_np, w, X_p, d, link);
    auto outcome = irls_fit(X_np, y, fam, w);

    auto est = dr_bias_min(X_np, y, w, X_p, d, link, fam, ps.gamma, outcome.coefficients);
    VectorXd res = bias_min_residual(X_np, y, w, X_p, d, link, fam, est.gamma, est.beta);
    CHECK(res.cwiseAbs().maxCoeff() < 1e-6);

    auto sep = dr_separate(y, w, ps, outcome.fitted, predict_mean(outcome, X_p), d,
                           DrPopSize::estimated);
    CHECK(std::abs(est.mu - sep.mu) < 0.05);  // both near the same population mean
    CHECK(std::abs(est.mu - 1.0) < 0.1);

    SUBCASE("dimension mismatch is rejected") {
        MatrixXd X_bad = X_p.leftCols(1);
        CHECK_THROWS_AS(dr_bias_min(X_np, y, w, X_bad, d, link, fam, ps.gamma,
                                    outcome.coefficients),
                        SchemaError);
    }
}
