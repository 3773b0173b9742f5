#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonprob/ps.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace nonprob;

namespace {

struct TwoSamples {
    MatrixXd X_np, X_p;
    VectorXd w_np, d_p;
};

TwoSamples random_instance(std::mt19937_64& rng, int n_np, int n_p, int p) {
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif(1.0, 4.0);
    TwoSamples s;
    s.X_np.resize(n_np, p);
    s.X_p.resize(n_p, p);
    for (int i = 0; i < n_np; ++i) {
        s.X_np(i, 0) = 1;
        for (int j = 1; j < p; ++j) s.X_np(i, j) = norm(rng);
    }
    for (int i = 0; i < n_p; ++i) {
        s.X_p(i, 0) = 1;
        for (int j = 1; j < p; ++j) s.X_p(i, j) = norm(rng);
    }
    s.w_np = VectorXd::Ones(n_np);
    s.d_p.resize(n_p);
    for (int i = 0; i < n_p; ++i) s.d_p(i) = unif(rng);
    return s;
}

}  // namespace

TEST_CASE("pseudo log-likelihood closed-form values at gamma = 0") {
    MatrixXd X_np = MatrixXd::Ones(2, 1);
    MatrixXd X_p = MatrixXd::Ones(2, 1);
    VectorXd w = VectorXd::Ones(2), d = VectorXd::Ones(2);
    VectorXd gamma = VectorXd::Zero(1);
    const double ll = pseudo_loglik(gamma, X_np, w, X_p, d, PsLink{PsLinkKind::logit});
    CHECK(ll == doctest::Approx(-2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("raising the intercept trades the two terms in opposite directions") {
    std::mt19937_64 rng(3);
    auto s = random_instance(rng, 30, 40, 3);
    PsLink link{PsLinkKind::logit};
    auto term_values = [&](double g0) {
        VectorXd gamma = VectorXd::Zero(3);
        gamma(0) = g0;
        double first = 0, second = 0;
        VectorXd eta_np = s.X_np * gamma, eta_p = s.X_p * gamma;
        for (int i = 0; i < eta_np.size(); ++i) {
            const double pi = link.prob(eta_np(i));
            first += std::log(pi / (1 - pi));
        }
        for (int i = 0; i < eta_p.size(); ++i) second += s.d_p(i) * std::log1p(-link.prob(eta_p(i)));
        return std::make_pair(first, second);
    };
    auto [f0, s0] = term_values(0.0);
    auto [f1, s1] = term_values(0.5);
    CHECK(f1 > f0);
    CHECK(s1 < s0);
}

TEST_CASE("pseudo log-likelihood matches a direct reimplementation") {
    std::mt19937_64 rng(5);
    auto s = random_instance(rng, 7, 9, 2);
    VectorXd gamma(2);
    gamma << 0.3, -0.7;
    PsLink link{PsLinkKind::logit};

    double expected = 0;
    for (int i = 0; i < 7; ++i) {
        const double eta = gamma(0) * s.X_np(i, 0) + gamma(1) * s.X_np(i, 1);
        const double pi = 1.0 / (1.0 + std::exp(-eta));
        expected += std::log(pi / (1.0 - pi));
    }
    for (int i = 0; i < 9; ++i) {
        const double eta = gamma(0) * s.X_p(i, 0) + gamma(1) * s.X_p(i, 1);
        expected += s.d_p(i) * std::log(1.0 - 1.0 / (1.0 + std::exp(-eta)));
    }
    CHECK(pseudo_loglik(gamma, s.X_np, s.w_np, s.X_p, s.d_p, link) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("analytic pseudo-score matches finite differences for all links") {
    std::mt19937_64 rng(7);
    for (auto kind : {PsLinkKind::logit, PsLinkKind::probit, PsLinkKind::cloglog}) {
        PsLink link{kind};
        for (int rep = 0; rep < 25; ++rep) {
            auto s = random_instance(rng, 12, 15, 3);
            VectorXd gamma(3);
            std::normal_distribution<double> norm(0.0, 0.4);
            for (int j = 0; j < 3; ++j) gamma(j) = norm(rng);

            VectorXd score = pseudo_score(gamma, s.X_np, s.w_np, s.X_p, s.d_p, link);
            const double h = 1e-6;
            for (int j = 0; j < 3; ++j) {
                VectorXd up = gamma, dn = gamma;
                up(j) += h;
                dn(j) -= h;
                const double fd = (pseudo_loglik(up, s.X_np, s.w_np, s.X_p, s.d_p, link) -
                                   pseudo_loglik(dn, s.X_np, s.w_np, s.X_p, s.d_p, link)) /
                                  (2 * h);
                CHECK(score(j) == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("intercept-only MLE solves the score equation in closed form") {
    // pi_hat = n_np / sum(d_p), the 9344 / 51870 pattern
    const int n_np = 934;
    MatrixXd X_np = MatrixXd::Ones(n_np, 1);
    MatrixXd X_p = MatrixXd::Ones(100, 1);
    VectorXd w = VectorXd::Ones(n_np);
    VectorXd d = VectorXd::Constant(100, 51.870);
    auto fit = ps_fit_mle(X_np, w, X_p, d, PsLink{PsLinkKind::logit});
    CHECK(fit.converged);
    const double expected = 934.0 / 5187.0;
    CHECK(fit.scores_np.mean() == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("logistic selection recovery within 3 SE") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif;
    const int N = 10000;
    VectorXd gamma_true(2);
    gamma_true << -1.5, 0.8;
    PsLink link{PsLinkKind::logit};

    std::vector<double> np_x;
    std::vector<double> p_x;
    for (int i = 0; i < N; ++i) {
        const double x = norm(rng);
        const double pi = link.prob(gamma_true(0) + gamma_true(1) * x);
        if (unif(rng) < pi) np_x.push_back(x);
    }
    const int n_p = 800;
    for (int i = 0; i < n_p; ++i) p_x.push_back(norm(rng));

    MatrixXd X_np(np_x.size(), 2), X_p(n_p, 2);
    for (std::size_t i = 0; i < np_x.size(); ++i) {
        X_np(static_cast<Eigen::Index>(i), 0) = 1;
        X_np(static_cast<Eigen::Index>(i), 1) = np_x[i];
    }
    for (int i = 0; i < n_p; ++i) {
        X_p(i, 0) = 1;
        X_p(i, 1) = p_x[static_cast<std::size_t>(i)];
    }
    VectorXd w = VectorXd::Ones(static_cast<Eigen::Index>(np_x.size()));
    VectorXd d = VectorXd::Constant(n_p, static_cast<double>(N) / n_p);

    auto fit = ps_fit_mle(X_np, w, X_p, d, link);
    // crude SE scale: 3 / sqrt(n_np) per coordinate is conservative here
    const double tol = 3.0 / std::sqrt(static_cast<double>(np_x.size())) * 4.0;
    CHECK(std::abs(fit.gamma(0) - gamma_true(0)) < tol);
    CHECK(std::abs(fit.gamma(1) - gamma_true(1)) < tol);
}

TEST_CASE("calibration variant reproduces reference totals exactly") {
    std::mt19937_64 rng(13);
    auto s = random_instance(rng, 200, 150, 3);
    auto fit = ps_fit_gee(s.X_np, s.w_np, s.X_p, s.d_p, PsLink{PsLinkKind::logit},
                          HFunction::x_over_pi);
    CHECK(fit.converged);
    VectorXd lhs = s.X_np.transpose() * fit.ipw_weights;
    VectorXd rhs = s.X_p.transpose() * s.d_p;
    for (int j = 0; j < 3; ++j)
        CHECK(std::abs(lhs(j) - rhs(j)) <= 1e-8 * std::abs(rhs(j)));
}

TEST_CASE("intercept-only calibration matches the weight total exactly") {
    MatrixXd X_np = MatrixXd::Ones(5, 1);
    MatrixXd X_p = MatrixXd::Ones(3, 1);
    VectorXd w = VectorXd::Ones(5);
    VectorXd d(3);
    d << 2, 3, 5;
    auto fit = ps_fit_gee(X_np, w, X_p, d, PsLink{PsLinkKind::logit}, HFunction::x_over_pi);
    CHECK(fit.nhat_np == doctest::Approx(10.0).epsilon(1e-10));
}

TEST_CASE("GEE with h = x coincides with the MLE for the logit link") {
    std::mt19937_64 rng(17);
    auto s = random_instance(rng, 120, 100, 3);
    auto mle = ps_fit_mle(s.X_np, s.w_np, s.X_p, s.d_p, PsLink{PsLinkKind::logit});
    auto gee = ps_fit_gee(s.X_np, s.w_np, s.X_p, s.d_p, PsLink{PsLinkKind::logit}, HFunction::x);
    CHECK((mle.gamma - gee.gamma).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("totals-only fits permit only the calibration h-function") {
    MatrixXd X_np = MatrixXd::Ones(5, 1);
    VectorXd w = VectorXd::Ones(5);
    VectorXd totals = VectorXd::Constant(1, 12.0);
    CHECK_THROWS_AS(
        ps_fit_gee_totals(X_np, w, totals, PsLink{PsLinkKind::logit}, HFunction::x),
        SchemaError);
    auto fit = ps_fit_gee_totals(X_np, w, totals, PsLink{PsLinkKind::logit}, HFunction::x_over_pi);
    CHECK(fit.nhat_np == doctest::Approx(12.0).epsilon(1e-10));
    CHECK(fit.scores_p.size() == 0);
}

TEST_CASE("probit and cloglog MLE satisfy their own score equations") {
    std::mt19937_64 rng(19);
    for (auto kind : {PsLinkKind::probit, PsLinkKind::cloglog}) {
        auto s = random_instance(rng, 150, 120, 3);
        PsLink link{kind};
        auto fit = ps_fit_mle(s.X_np, s.w_np, s.X_p, s.d_p, link);
        CHECK(fit.converged);
        VectorXd score = pseudo_score(fit.gamma, s.X_np, s.w_np, s.X_p, s.d_p, link);
        CHECK(score.cwiseAbs().maxCoeff() < 1e-6 * s.d_p.sum());
    }
}

TEST_CASE("ps_predict closed forms and clipping") {
    PsFit fit;
    fit.link = PsLinkKind::logit;
    fit.gamma = VectorXd::Zero(1);
    MatrixXd X = MatrixXd::Ones(1, 1);
    CHECK(ps_predict(fit, X)(0) == 0.5);

    fit.link = PsLinkKind::cloglog;
    CHECK(ps_predict(fit, X)(0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));

    fit.link = PsLinkKind::logit;
    fit.gamma = VectorXd::Constant(1, 50.0);
    CHECK(ps_predict(fit, X)(0) == 1.0 - 1e-6);
    fit.gamma = VectorXd::Constant(1, -50.0);
    CHECK(ps_predict(fit, X)(0) == 1e-6);
}

TEST_CASE("fitted scores are invariant to row order") {
    std::mt19937_64 rng(23);
    auto s = random_instance(rng, 60, 50, 3);
    auto fit = ps_fit_mle(s.X_np, s.w_np, s.X_p, s.d_p, PsLink{PsLinkKind::logit});

    std::vector<int> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixXd X_shuf(60, 3);
    for (int i = 0; i < 60; ++i) X_shuf.row(i) = s.X_np.row(perm[static_cast<std::size_t>(i)]);
    auto fit2 = ps_fit_mle(X_shuf, s.w_np, s.X_p, s.d_p, PsLink{PsLinkKind::logit});
    for (int i = 0; i < 60; ++i)
        CHECK(fit2.scores_np(i) ==
              doctest::Approx(fit.scores_np(perm[static_cast<std::size_t>(i)])).epsilon(1e-9));
}
