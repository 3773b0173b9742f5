#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonprob/diagnostics.hpp"

#include <algorithm>
#include <random>

using namespace nonprob;

namespace {

struct Pair {
    MatrixXd X_np, X_p;
    VectorXd w, d;
    std::vector<std::string> cols{"(Intercept)", "x1", "x2"};
};

Pair make_pair(std::mt19937_64& rng, int n_np = 250, int n_p = 200) {
    std::normal_distribution<double> norm;
    Pair s;
    s.X_np.resize(n_np, 3);
    s.X_p.resize(n_p, 3);
    for (int i = 0; i < n_np; ++i) {
        s.X_np(i, 0) = 1;
        s.X_np(i, 1) = norm(rng) + 0.4;
        s.X_np(i, 2) = norm(rng);
    }
    for (int i = 0; i < n_p; ++i) {
        s.X_p(i, 0) = 1;
        s.X_p(i, 1) = norm(rng);
        s.X_p(i, 2) = norm(rng);
    }
    s.w = VectorXd::Ones(n_np);
    s.d = VectorXd::Constant(n_p, 4.0);
    return s;
}

}  // namespace

TEST_CASE("calibrated fits balance exactly; the report equals the solver residual") {
    std::mt19937_64 rng(3);
    auto s = make_pair(rng);
    auto fit = ps_fit_gee(s.X_np, s.w, s.X_p, s.d, PsLink{PsLinkKind::logit},
                          HFunction::x_over_pi);
    VectorXd totals = s.X_p.transpose() * s.d;
    auto report = check_balance(fit, s.X_np, s.w, s.cols, totals);
    for (Eigen::Index j = 0; j < report.difference.size(); ++j) {
        CHECK(std::abs(report.difference(j)) <= 1e-6 * std::max(1.0, std::abs(totals(j))));
        CHECK(report.difference(j) == doctest::Approx(fit.final_residual(j)).epsilon(1e-9));
    }
}

TEST_CASE("likelihood fits leave visible imbalance on shifted covariates") {
    std::mt19937_64 rng(5);
    auto s = make_pair(rng);
    auto fit = ps_fit_mle(s.X_np, s.w, s.X_p, s.d, PsLink{PsLinkKind::logit});
    VectorXd totals = s.X_p.transpose() * s.d;
    auto report = check_balance(fit, s.X_np, s.w, s.cols, totals, {"x1", "x2"});
    CHECK(report.columns == std::vector<std::string>{"x1", "x2"});
    CHECK(report.difference.cwiseAbs().maxCoeff() > 1.0);

    SUBCASE("unknown column") {
        CHECK_THROWS_AS(check_balance(fit, s.X_np, s.w, s.cols, totals, {"nope"}), SchemaError);
    }

    SUBCASE("intercept is calibrated under the gee fit") {
        auto gee = ps_fit_gee(s.X_np, s.w, s.X_p, s.d, PsLink{PsLinkKind::logit},
                              HFunction::x_over_pi);
        auto rep = check_balance(gee, s.X_np, s.w, s.cols, totals, {"(Intercept)"});
        CHECK(std::abs(rep.difference(0)) < 1e-6 * totals(0));
    }
}

TEST_CASE("weight summary five numbers plus the weight total") {
    PsFit fit;
    fit.scores_np = VectorXd::Constant(4, 0.5);
    fit.ipw_weights = fit.scores_np.cwiseInverse();
    fit.nhat_np = fit.ipw_weights.sum();
    auto s = weight_summary(fit);
    CHECK(s.sum_ipw == 8.0);
    CHECK(s.ipw.min == 2.0);
    CHECK(s.ipw.max == 2.0);
    CHECK(s.ipw.mean == 2.0);
    CHECK_FALSE(s.has_prob_sample);
}

TEST_CASE("summary quantiles match an independent sort-based computation") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(0.01, 0.99);
    VectorXd pi(101);
    for (int i = 0; i < 101; ++i) pi(i) = unif(rng);
    PsFit fit;
    fit.scores_np = pi;
    fit.scores_p = pi.head(50);
    fit.ipw_weights = pi.cwiseInverse();
    fit.nhat_np = fit.ipw_weights.sum();
    auto s = weight_summary(fit);

    std::vector<double> sorted(pi.data(), pi.data() + pi.size());
    std::sort(sorted.begin(), sorted.end());
    CHECK(s.ps_np.min == sorted.front());
    CHECK(s.ps_np.max == sorted.back());
    CHECK(s.ps_np.median == sorted[50]);  // odd count: middle order statistic
    const double q1 = sorted[25];
    CHECK(s.ps_np.q1 == doctest::Approx(q1));
    CHECK(s.has_prob_sample);
}

TEST_CASE("comparison table ordering, naive delta, and csv round-trip") {
    std::vector<EstimateRow> rows{
        {"dr", "y", 0.7035, 0.0117, 0.6806, 0.7263},
        {"naive", "y", 0.6605, 0.0, 0.6605, 0.6605},
        {"ipw_mle", "y", 0.72236281234567, 0.042077113, 0.6399, 0.8048},
    };
    auto table = compare_estimates(rows, 0.6605);
    CHECK(table.rows.front().label == "naive");
    CHECK(table.rows.back().label == "ipw_mle");

    const std::string csv = comparison_csv(table);
    CHECK(csv.find("naive,y,0.6605,0,") != std::string::npos);

    auto parsed = parse_comparison_csv(csv);
    REQUIRE(parsed.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const double a = parsed.rows[i].mean;
        const double b = table.rows[i].mean;
        CHECK(std::abs(a - b) <= 5e-10 * std::max(1.0, std::abs(b)));  // 10 significant digits
    }

    SUBCASE("deterministic ordering under ties") {
        std::vector<EstimateRow> tied{{"b", "y", 0.5, 0, 0, 0}, {"a", "y", 0.5, 0, 0, 0}};
        auto t2 = compare_estimates(tied, 0.5);
        CHECK(t2.rows.front().label == "a");
    }
}
