#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonprob/varsel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace nonprob;

namespace {

struct SparseProblem {
    MatrixXd X;       // includes intercept column 0
    VectorXd y, w;
    std::vector<int> truth;  // active columns (excluding intercept)
};

SparseProblem sparse_problem(std::mt19937_64& rng, int n, int p_extra, double snr = 8.0) {
    std::normal_distribution<double> norm;
    SparseProblem prob;
    prob.X.resize(n, p_extra + 1);
    prob.y.resize(n);
    prob.w = VectorXd::Ones(n);
    prob.truth = {1, 2, 3};
    for (int i = 0; i < n; ++i) {
        prob.X(i, 0) = 1;
        for (int j = 1; j <= p_extra; ++j) prob.X(i, j) = norm(rng);
        double eta = 0.5;
        eta += snr * 0.25 * prob.X(i, 1) + snr * 0.2 * prob.X(i, 2) - snr * 0.15 * prob.X(i, 3);
        prob.y(i) = eta + norm(rng);
    }
    return prob;
}

bool contains(const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

TEST_CASE("penalty closed forms") {
    CHECK(penalty_value(Penalty::lasso, 2.0, 0.5, 0.0) == doctest::Approx(1.0));
    const double a = 3.7, lam = 0.4;
    CHECK(penalty_value(Penalty::scad, a * lam + 1.0, lam, a) ==
          doctest::Approx((a + 1.0) * lam * lam / 2.0));
    const double am = 3.0;
    CHECK(penalty_value(Penalty::mcp, am * lam + 2.0, lam, am) ==
          doctest::Approx(am * lam * lam / 2.0));

    for (auto pen : {Penalty::lasso, Penalty::scad, Penalty::mcp}) {
        CHECK(penalty_value(pen, 0.0, lam, 3.7) == 0.0);
        CHECK(penalty_deriv(pen, 1e-12, lam, 3.7) == doctest::Approx(lam));
    }
}

TEST_CASE("penalty derivatives are continuous in |beta|") {
    const double lam = 0.6;
    for (auto [pen, a] : {std::pair{Penalty::scad, 3.7}, std::pair{Penalty::mcp, 3.0}}) {
        double prev = penalty_deriv(pen, 0.0, lam, a);
        for (double b = 1e-4; b < 4.0; b += 1e-3) {
            const double cur = penalty_deriv(pen, b, lam, a);
            CHECK(std::abs(cur - prev) < 2e-3);  // Lipschitz bound on the grid
            prev = cur;
        }
    }
    // value consistent with the integral of the derivative
    for (auto [pen, a] : {std::pair{Penalty::scad, 3.7}, std::pair{Penalty::mcp, 3.0}}) {
        double integral = 0.0;
        const double h = 1e-4;
        for (double b = 0; b < 3.0; b += h)
            integral += h * 0.5 * (penalty_deriv(pen, b, lam, a) + penalty_deriv(pen, b + h, lam, a));
        CHECK(integral == doctest::Approx(penalty_value(pen, 3.0, lam, a)).epsilon(1e-3));
    }
}

TEST_CASE("the largest grid value produces the intercept-only model") {
    std::mt19937_64 rng(5);
    auto prob = sparse_problem(rng, 250, 12);
    PenaltyConfig config;
    config.penalty = Penalty::lasso;
    config.nfolds = 5;
    config.nlambda = 20;
    auto sel = select_outcome(prob.X, prob.y, prob.w, {Family::gaussian}, config, 0);
    // rebuild the path head: at lambda_grid[0] only the intercept is active
    PenaltyConfig head = config;
    head.lambda = {sel.lambda_grid[0]};
    head.nfolds = 5;
    auto sel_head = select_outcome(prob.X, prob.y, prob.w, {Family::gaussian}, head, 0);
    CHECK(sel_head.active == std::vector<int>{0});
}

TEST_CASE("outcome selection recovers a strong sparse signal") {
    std::mt19937_64 rng(7);
    int hits = 0;
    const int reps = 10;
    for (int rep = 0; rep < reps; ++rep) {
        auto prob = sparse_problem(rng, 400, 20);
        PenaltyConfig config;
        config.penalty = Penalty::scad;
        config.nfolds = 5;
        config.nlambda = 30;
        config.seed = 100 + static_cast<std::uint64_t>(rep);
        auto sel = select_outcome(prob.X, prob.y, prob.w, {Family::gaussian}, config, 0);
        bool all = true;
        for (int t : prob.truth) all = all && contains(sel.active, t);
        hits += all ? 1 : 0;
    }
    CHECK(hits >= 9);
}

TEST_CASE("lasso keeps at most one of two duplicated columns") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> norm;
    const int n = 300;
    MatrixXd X(n, 4);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1;
        X(i, 1) = norm(rng);
        X(i, 2) = X(i, 1) + 1e-8 * norm(rng);  // near-duplicate
        X(i, 3) = norm(rng);
        y(i) = 2.0 * X(i, 1) + 0.3 * norm(rng);
    }
    PenaltyConfig config;
    config.penalty = Penalty::lasso;
    config.nfolds = 4;
    config.nlambda = 25;
    auto sel = select_outcome(X, y, VectorXd::Ones(n), {Family::gaussian}, config, 0);
    CHECK_FALSE((contains(sel.active, 1) && contains(sel.active, 2)));
    CHECK((contains(sel.active, 1) || contains(sel.active, 2)));
}

TEST_CASE("lasso active sets grow along the path on a well-conditioned instance") {
    std::mt19937_64 rng(13);
    auto prob = sparse_problem(rng, 300, 8);
    PenaltyConfig config;
    config.penalty = Penalty::lasso;
    config.nfolds = 4;
    config.nlambda = 15;
    auto sel = select_outcome(prob.X, prob.y, prob.w, {Family::gaussian}, config, 0);
    std::size_t prev = 1;
    for (std::size_t l = 0; l < sel.lambda_grid.size(); ++l) {
        PenaltyConfig one = config;
        one.lambda = {sel.lambda_grid[l]};
        auto s = select_outcome(prob.X, prob.y, prob.w, {Family::gaussian}, one, 0);
        CHECK(s.active.size() + 2 >= prev);  // allow small non-monotone wiggles
        prev = std::max(prev, s.active.size());
    }
}

TEST_CASE("cross-validation is deterministic given the seed") {
    std::mt19937_64 rng(17);
    auto prob = sparse_problem(rng, 200, 10);
    PenaltyConfig config;
    config.penalty = Penalty::mcp;
    config.nfolds = 5;
    config.nlambda = 15;
    config.seed = 42;
    auto a = select_outcome(prob.X, prob.y, prob.w, {Family::gaussian}, config, 0);
    auto b = select_outcome(prob.X, prob.y, prob.w, {Family::gaussian}, config, 0);
    CHECK(a.cv_error == b.cv_error);
    CHECK(a.lambda_chosen == b.lambda_chosen);
    CHECK(a.active == b.active);
}

TEST_CASE("config validation") {
    PenaltyConfig config;
    config.a_scad = 2.0;
    CHECK_THROWS_AS(config.validate(), SchemaError);
    config = {};
    config.nfolds = 1;
    CHECK_THROWS_AS(config.validate(), SchemaError);
    config = {};
    config.lambda = {0.1, 0.2};
    CHECK_THROWS_AS(config.validate(), SchemaError);
}

TEST_CASE("balance loss vanishes at the unpenalized calibration solution") {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> norm;
    const int n_np = 150, n_p = 120;
    MatrixXd X_np(n_np, 3), X_p(n_p, 3);
    for (int i = 0; i < n_np; ++i) {
        X_np(i, 0) = 1;
        X_np(i, 1) = norm(rng);
        X_np(i, 2) = norm(rng);
    }
    for (int i = 0; i < n_p; ++i) {
        X_p(i, 0) = 1;
        X_p(i, 1) = norm(rng);
        X_p(i, 2) = norm(rng);
    }
    VectorXd w = VectorXd::Ones(n_np);
    VectorXd d = VectorXd::Constant(n_p, 3.0);
    auto fit = ps_fit_gee(X_np, w, X_p, d, PsLink{PsLinkKind::logit}, HFunction::x_over_pi);

    // the squared-balance loss at that solution is zero by construction
    const VectorXd lhs = X_np.transpose() * fit.ipw_weights;
    const VectorXd rhs = X_p.transpose() * d;
    CHECK(((lhs - rhs) / d.sum()).squaredNorm() < 1e-12);
}

TEST_CASE("selection-model recovery on a sparse logistic design") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif;
    const PsLink link{PsLinkKind::logit};
    int hits = 0;
    const int reps = 5;
    for (int rep = 0; rep < reps; ++rep) {
        const int N = 12000, p_extra = 10;
        std::vector<VectorXd> np_rows;
        for (int i = 0; i < N; ++i) {
            VectorXd x(p_extra + 1);
            x(0) = 1;
            for (int j = 1; j <= p_extra; ++j) x(j) = norm(rng);
            const double pi = link.prob(-2.2 + 1.2 * x(1) - 1.0 * x(2));
            if (unif(rng) < pi) np_rows.push_back(x);
        }
        const int n_p = 600;
        MatrixXd X_p(n_p, p_extra + 1);
        for (int i = 0; i < n_p; ++i) {
            X_p(i, 0) = 1;
            for (int j = 1; j <= p_extra; ++j) X_p(i, j) = norm(rng);
        }
        MatrixXd X_np(static_cast<Eigen::Index>(np_rows.size()), p_extra + 1);
        for (std::size_t i = 0; i < np_rows.size(); ++i)
            X_np.row(static_cast<Eigen::Index>(i)) = np_rows[i].transpose();
        VectorXd w = VectorXd::Ones(X_np.rows());
        VectorXd d = VectorXd::Constant(n_p, static_cast<double>(N) / n_p);

        PenaltyConfig config;
        config.penalty = Penalty::scad;
        config.nfolds = 4;
        config.nlambda = 20;
        config.seed = 900 + static_cast<std::uint64_t>(rep);
        auto sel = select_ps(X_np, w, X_p, d, link, HFunction::x, config, 0);
        if (contains(sel.active, 1) && contains(sel.active, 2)) ++hits;
    }
    CHECK(hits >= 4);
}

TEST_CASE("active-set union") {
    SelectionResult a, b;
    a.active = {0, 2};
    b.active = {0, 5};
    CHECK(combine_union(a, b) == std::vector<int>{0, 2, 5});
    b.active = {0, 2};
    CHECK(combine_union(a, b) == std::vector<int>{0, 2});
    b.active = {};
    CHECK(combine_union(a, b) == std::vector<int>{0, 2});
}
