#include "nonprob/simulate.hpp"

#include "nonprob/glm.hpp"
#include "nonprob/ipw_dr.hpp"
#include "nonprob/mi.hpp"
#include "nonprob/ps.hpp"
#include "nonprob/variance.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

namespace nonprob {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split(s, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

CovariateSpec parse_covariate(const std::string& text) {
    // "x1:normal(0,1)"
    CovariateSpec spec;
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        spec.name = trim(text);
        return spec;
    }
    spec.name = trim(text.substr(0, colon));
    std::string rest = trim(text.substr(colon + 1));
    const auto paren = rest.find('(');
    if (paren == std::string::npos) {
        spec.dist = rest;
        return spec;
    }
    spec.dist = trim(rest.substr(0, paren));
    const auto close = rest.find(')', paren);
    const auto args = parse_doubles(rest.substr(paren + 1, close - paren - 1));
    if (!args.empty()) spec.p1 = args[0];
    if (args.size() > 1) spec.p2 = args[1];
    return spec;
}

}  // namespace

SimulationSpec parse_simulation_config(const std::string& text) {
    SimulationSpec spec;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) continue;
        if (key == "pop_size") spec.pop_size = std::stol(value);
        else if (key == "replicates") spec.replicates = std::stoi(value);
        else if (key == "seed") spec.seed = std::stoull(value);
        else if (key == "prob_sample_size") spec.prob_sample_size = std::stoi(value);
        else if (key == "covariates") {
            spec.covariates.clear();
            for (const auto& tok : split(value, ';'))
                if (!tok.empty()) spec.covariates.push_back(parse_covariate(tok));
        } else if (key == "outcome_coefs") spec.outcome_coefs = parse_doubles(value);
        else if (key == "outcome_family") spec.outcome_family = value;
        else if (key == "outcome_sigma") spec.outcome_sigma = std::stod(value);
        else if (key == "selection_coefs") spec.selection_coefs = parse_doubles(value);
        else if (key == "selection_link") spec.selection_link = value;
        else if (key == "outcome_fit_terms") spec.outcome_fit_terms = split(value, ',');
        else if (key == "selection_fit_terms") spec.selection_fit_terms = split(value, ',');
        else if (key == "estimators") spec.estimators = split(value, ',');
        else if (key == "var_method") spec.var_method = value;
        else if (key == "num_boot") spec.num_boot = std::stoi(value);
        else if (key == "ci_level") spec.ci_level = std::stod(value);
        else throw SchemaError("unknown simulation config key: " + key);
    }
    return spec;
}

namespace {

struct Population {
    MatrixXd X;          // pop_size x k covariates (no intercept column)
    VectorXd y;
    VectorXd pi;         // true selection scores
    double mean_y = 0.0;
    double expected_naive = 0.0;
};

Eigen::Index covariate_index(const SimulationSpec& spec, const std::string& name) {
    for (std::size_t j = 0; j < spec.covariates.size(); ++j)
        if (spec.covariates[j].name == name) return static_cast<Eigen::Index>(j);
    throw SchemaError("unknown covariate in fit terms: " + name);
}

MatrixXd design_for_terms(const SimulationSpec& spec, const MatrixXd& X,
                          const std::vector<std::string>& terms) {
    MatrixXd out(X.rows(), static_cast<Eigen::Index>(terms.size()) + 1);
    out.col(0).setOnes();
    for (std::size_t j = 0; j < terms.size(); ++j)
        out.col(static_cast<Eigen::Index>(j) + 1) = X.col(covariate_index(spec, terms[j]));
    return out;
}

Population draw_population(const SimulationSpec& spec, std::mt19937_64& rng) {
    const auto N = static_cast<Eigen::Index>(spec.pop_size);
    const auto k = static_cast<Eigen::Index>(spec.covariates.size());
    if (spec.outcome_coefs.size() != spec.covariates.size() + 1)
        throw SchemaError("outcome_coefs must have one value per covariate plus the intercept");
    if (spec.selection_coefs.size() != spec.covariates.size() + 1)
        throw SchemaError("selection_coefs must have one value per covariate plus the intercept");

    Population pop;
    pop.X.resize(N, k);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif;
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& cov = spec.covariates[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < N; ++i) {
            if (cov.dist == "normal")
                pop.X(i, j) = cov.p1 + cov.p2 * norm(rng);
            else if (cov.dist == "uniform")
                pop.X(i, j) = cov.p1 + (cov.p2 - cov.p1) * unif(rng);
            else if (cov.dist == "bernoulli")
                pop.X(i, j) = unif(rng) < cov.p1 ? 1.0 : 0.0;
            else
                throw SchemaError("unknown covariate distribution: " + cov.dist);
        }
    }

    const GlmFamily family{family_from_string(spec.outcome_family)};
    const PsLink link{ps_link_from_string(spec.selection_link)};
    pop.y.resize(N);
    pop.pi.resize(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        double eta_y = spec.outcome_coefs[0];
        double eta_s = spec.selection_coefs[0];
        for (Eigen::Index j = 0; j < k; ++j) {
            eta_y += spec.outcome_coefs[static_cast<std::size_t>(j) + 1] * pop.X(i, j);
            eta_s += spec.selection_coefs[static_cast<std::size_t>(j) + 1] * pop.X(i, j);
        }
        const double m = family.mean(eta_y);
        switch (family.family) {
            case Family::gaussian: pop.y(i) = m + spec.outcome_sigma * norm(rng); break;
            case Family::binomial: pop.y(i) = unif(rng) < m ? 1.0 : 0.0; break;
            case Family::poisson: {
                std::poisson_distribution<long> pois(m);
                pop.y(i) = static_cast<double>(pois(rng));
                break;
            }
        }
        pop.pi(i) = link.prob(eta_s);
    }
    pop.mean_y = pop.y.mean();
    pop.expected_naive = (pop.pi.array() * pop.y.array()).sum() / pop.pi.sum();
    return pop;
}

struct ReplicateValue {
    double estimate = 0.0;
    double se = -1.0;  // < 0: no SE produced
};

ReplicateValue run_one(const std::string& name, const SimulationSpec& spec, const Population& pop,
                       const MatrixXd& X_np_sel, const MatrixXd& X_np_out, const VectorXd& y_np,
                       const MatrixXd& X_p_sel, const MatrixXd& X_p_out, const VectorXd& d_p,
                       const std::vector<int>& strata) {
    const VectorXd w = VectorXd::Ones(y_np.size());
    const GlmFamily family{family_from_string(spec.outcome_family)};
    const PsLink link{ps_link_from_string(spec.selection_link)};
    ReplicateValue out;

    if (name == "naive") {
        out.estimate = y_np.mean();
        const double sd = std::sqrt((y_np.array() - out.estimate).square().sum() /
                                    (static_cast<double>(y_np.size()) - 1.0));
        out.se = sd / std::sqrt(static_cast<double>(y_np.size()));
        return out;
    }
    if (name == "ipw_mle" || name == "ipw_gee") {
        PsFit ps = name == "ipw_mle"
                       ? ps_fit_mle(X_np_sel, w, X_p_sel, d_p, link)
                       : ps_fit_gee(X_np_sel, w, X_p_sel, d_p, link, HFunction::x_over_pi);
        auto est = ipw_estimate(y_np, w, ps);
        out.estimate = est.mu;
        if (spec.var_method == "analytic")
            out.se = analytic_variance_ipw(y_np, w, X_np_sel, ps, X_p_sel, d_p, strata, est.mu).se;
        return out;
    }
    if (name == "mi_glm") {
        auto est = mi_glm(X_np_out, y_np, w, family, X_p_out, d_p);
        out.estimate = est.mu;
        if (spec.var_method == "analytic")
            out.se = analytic_variance_mi_glm(X_np_out, y_np, w, est.outcome, X_p_out, d_p, strata,
                                              est.mu)
                         .se;
        return out;
    }
    if (name == "mi_nn") {
        auto est = mi_nn(X_np_out.rightCols(X_np_out.cols() - 1), y_np,
                         X_p_out.rightCols(X_p_out.cols() - 1), d_p, 5);
        out.estimate = est.mu;
        out.se = analytic_variance_mi_nn(est.y_star, d_p, strata, est.mu).se;
        return out;
    }
    if (name == "mi_pmm") {
        auto est = mi_pmm(X_np_out, y_np, w, family, X_p_out, d_p, 5, PmmVariant::a);
        out.estimate = est.mu;
        out.se = analytic_variance_mi_nn(est.y_star, d_p, strata, est.mu, true).se;
        return out;
    }
    if (name == "dr" || name == "dr_bias_min") {
        auto ps = ps_fit_mle(X_np_sel, w, X_p_sel, d_p, link);
        auto outcome = irls_fit(X_np_out, y_np, family, w);
        if (name == "dr") {
            auto est = dr_separate(y_np, w, ps, outcome.fitted, predict_mean(outcome, X_p_out),
                                   d_p, DrPopSize::estimated);
            out.estimate = est.mu;
            if (spec.var_method == "analytic")
                out.se = analytic_variance_dr(y_np, w, X_np_sel, ps, X_np_out, outcome, X_p_sel,
                                              X_p_out, d_p, strata, est.mu,
                                              DrVarianceKind::separate_mle, true)
                             .se;
        } else {
            if (X_np_sel.cols() != X_np_out.cols())
                throw SchemaError("bias-minimized fitting needs matching fit terms");
            auto est = dr_bias_min(X_np_out, y_np, w, X_p_out, d_p, link, family, ps.gamma,
                                   outcome.coefficients);
            out.estimate = est.mu;
            if (spec.var_method == "analytic") {
                PsFit joint = ps;
                joint.gamma = est.gamma;
                joint.scores_np = ps_predict(joint, X_np_sel);
                joint.ipw_weights = joint.scores_np.cwiseInverse();
                joint.nhat_np = joint.ipw_weights.sum();
                OutcomeFit ofit = outcome;
                ofit.coefficients = est.beta;
                out.se = analytic_variance_dr(y_np, w, X_np_sel, joint, X_np_out, ofit, X_p_sel,
                                              X_p_out, d_p, strata, est.mu,
                                              DrVarianceKind::bias_min, true)
                             .se;
            }
        }
        return out;
    }
    throw SchemaError("unknown estimator in simulation: " + name);
}

}  // namespace

SimulationReport run_simulation(const SimulationSpec& spec) {
    if (spec.covariates.empty()) throw SchemaError("simulation needs at least one covariate");
    if (spec.replicates < 1) throw SchemaError("simulation needs at least one replicate");
    std::mt19937_64 pop_rng(derive_seed(spec.seed, 0xF00D));
    const Population pop = draw_population(spec, pop_rng);

    std::vector<std::string> sel_terms = spec.selection_fit_terms;
    std::vector<std::string> out_terms = spec.outcome_fit_terms;
    if (sel_terms.empty())
        for (const auto& c : spec.covariates) sel_terms.push_back(c.name);
    if (out_terms.empty())
        for (const auto& c : spec.covariates) out_terms.push_back(c.name);

    std::vector<std::string> names = spec.estimators;
    if (names.empty()) names = {"naive", "ipw_mle", "mi_glm", "dr"};

    SimulationReport report;
    report.population_mean = pop.mean_y;
    report.expected_naive = pop.expected_naive;
    report.naive_bias = pop.expected_naive - pop.mean_y;
    report.replicates = spec.replicates;
    report.seed = spec.seed;

    std::map<std::string, std::vector<double>> estimates;
    std::map<std::string, std::vector<double>> ses;
    std::map<std::string, int> covered, with_ci, failures;
    double total_n_np = 0.0;

    const auto N = static_cast<Eigen::Index>(spec.pop_size);
    std::vector<int> strata(static_cast<std::size_t>(spec.prob_sample_size), 0);
    for (int rep = 0; rep < spec.replicates; ++rep) {
        std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(rep) + 1));
        std::uniform_real_distribution<double> unif;

        std::vector<Eigen::Index> np_rows;
        for (Eigen::Index i = 0; i < N; ++i)
            if (unif(rng) < pop.pi(i)) np_rows.push_back(i);
        if (np_rows.size() < 10) {
            for (const auto& name : names) ++failures[name];
            continue;
        }
        total_n_np += static_cast<double>(np_rows.size());

        // simple random sample without replacement for the reference survey
        std::vector<Eigen::Index> p_rows(static_cast<std::size_t>(spec.prob_sample_size));
        {
            std::vector<Eigen::Index> reservoir(p_rows.size());
            for (Eigen::Index i = 0; i < N; ++i) {
                if (i < static_cast<Eigen::Index>(reservoir.size())) {
                    reservoir[static_cast<std::size_t>(i)] = i;
                } else {
                    std::uniform_int_distribution<Eigen::Index> pick(0, i);
                    const Eigen::Index slot = pick(rng);
                    if (slot < static_cast<Eigen::Index>(reservoir.size()))
                        reservoir[static_cast<std::size_t>(slot)] = i;
                }
            }
            p_rows = std::move(reservoir);
        }

        MatrixXd X_np(static_cast<Eigen::Index>(np_rows.size()), pop.X.cols());
        VectorXd y_np(static_cast<Eigen::Index>(np_rows.size()));
        for (std::size_t i = 0; i < np_rows.size(); ++i) {
            X_np.row(static_cast<Eigen::Index>(i)) = pop.X.row(np_rows[i]);
            y_np(static_cast<Eigen::Index>(i)) = pop.y(np_rows[i]);
        }
        MatrixXd X_p(static_cast<Eigen::Index>(p_rows.size()), pop.X.cols());
        for (std::size_t i = 0; i < p_rows.size(); ++i)
            X_p.row(static_cast<Eigen::Index>(i)) = pop.X.row(p_rows[i]);
        const VectorXd d_p = VectorXd::Constant(
            static_cast<Eigen::Index>(p_rows.size()),
            static_cast<double>(spec.pop_size) / spec.prob_sample_size);

        SimulationSpec wide = spec;  // fit designs built against the population covariates
        const MatrixXd X_np_sel = design_for_terms(wide, X_np, sel_terms);
        const MatrixXd X_np_out = design_for_terms(wide, X_np, out_terms);
        const MatrixXd X_p_sel = design_for_terms(wide, X_p, sel_terms);
        const MatrixXd X_p_out = design_for_terms(wide, X_p, out_terms);

        for (const auto& name : names) {
            try {
                const ReplicateValue v = run_one(name, spec, pop, X_np_sel, X_np_out, y_np,
                                                 X_p_sel, X_p_out, d_p, strata);
                if (!std::isfinite(v.estimate)) throw NumericError("non-finite estimate");
                estimates[name].push_back(v.estimate);
                if (v.se >= 0.0) {
                    ses[name].push_back(v.se);
                    const auto ci = confidence_interval(v.estimate, v.se, spec.ci_level);
                    ++with_ci[name];
                    if (ci.first <= pop.mean_y && pop.mean_y <= ci.second) ++covered[name];
                }
            } catch (const std::exception&) {
                ++failures[name];
            }
        }
    }

    report.mean_n_np = total_n_np / spec.replicates;
    for (const auto& name : names) {
        EstimatorPerformance perf;
        perf.name = name;
        perf.failures = failures[name];
        const auto& est = estimates[name];
        if (!est.empty()) {
            double mean = 0;
            for (double e : est) mean += e;
            mean /= static_cast<double>(est.size());
            perf.mean_estimate = mean;
            perf.bias = mean - pop.mean_y;
            double ss = 0;
            for (double e : est) ss += (e - mean) * (e - mean);
            perf.emp_se = est.size() > 1
                              ? std::sqrt(ss / (static_cast<double>(est.size()) - 1.0))
                              : 0.0;
            const auto& s = ses[name];
            if (!s.empty()) {
                double ms = 0;
                for (double v : s) ms += v;
                perf.mean_reported_se = ms / static_cast<double>(s.size());
            }
            perf.coverage = with_ci[name] > 0
                                ? static_cast<double>(covered[name]) / with_ci[name]
                                : 0.0;
        }
        if (perf.failures * 5 > spec.replicates) report.failure_gate_exceeded = true;
        report.estimators.push_back(perf);
    }
    return report;
}

std::string render_simulation_text(const SimulationReport& report) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(5);
    out << "A nonprob simulation report\n";
    out << " - replicates: " << report.replicates << " (seed " << report.seed << ")\n";
    out << " - population mean: " << report.population_mean << "\n";
    out << " - expected naive estimate: " << report.expected_naive << " (bias "
        << report.naive_bias << ")\n";
    out << " - mean nonprob sample size: " << report.mean_n_np << "\n";
    out << "estimator        bias      emp_se    mean_se   coverage  failures\n";
    for (const auto& e : report.estimators) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-15s %9.5f %9.5f %9.5f %9.3f %9d\n", e.name.c_str(),
                      e.bias, e.emp_se, e.mean_reported_se, e.coverage, e.failures);
        out << buf;
    }
    return out.str();
}

std::string render_simulation_json(const SimulationReport& report) {
    nlohmann::ordered_json j;
    j["population_mean"] = report.population_mean;
    j["expected_naive"] = report.expected_naive;
    j["naive_bias"] = report.naive_bias;
    j["mean_n_nonprob"] = report.mean_n_np;
    j["replicates"] = report.replicates;
    j["seed"] = report.seed;
    j["estimators"] = nlohmann::ordered_json::array();
    for (const auto& e : report.estimators) {
        j["estimators"].push_back({{"name", e.name},
                                   {"mean_estimate", e.mean_estimate},
                                   {"bias", e.bias},
                                   {"emp_se", e.emp_se},
                                   {"mean_reported_se", e.mean_reported_se},
                                   {"coverage", e.coverage},
                                   {"failures", e.failures}});
    }
    j["failure_gate_exceeded"] = report.failure_gate_exceeded;
    return j.dump(2) + "\n";
}

}  // namespace nonprob
