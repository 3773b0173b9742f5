#pragma once

#include "nonprob/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nonprob {

// One synthetic covariate; dist is normal(p1, p2), uniform(p1, p2) or
// bernoulli(p1).
struct CovariateSpec {
    std::string name;
    std::string dist = "normal";
    double p1 = 0.0;
    double p2 = 1.0;
};

struct SimulationSpec {
    long pop_size = 100000;
    int replicates = 500;
    std::uint64_t seed = 1;
    int prob_sample_size = 1000;
    std::vector<CovariateSpec> covariates;
    std::vector<double> outcome_coefs;    // intercept first
    std::string outcome_family = "gaussian";
    double outcome_sigma = 1.0;
    std::vector<double> selection_coefs;  // intercept first
    std::string selection_link = "logit";
    std::vector<std::string> outcome_fit_terms;    // covariates given to the outcome model
    std::vector<std::string> selection_fit_terms;  // covariates given to the selection model
    std::vector<std::string> estimators;  // naive, ipw_mle, ipw_gee, mi_glm, mi_nn, mi_pmm, dr,
                                          // dr_bias_min
    std::string var_method = "analytic";
    int num_boot = 50;
    double ci_level = 0.95;
};

SimulationSpec parse_simulation_config(const std::string& text);

struct EstimatorPerformance {
    std::string name;
    double mean_estimate = 0.0;
    double bias = 0.0;
    double emp_se = 0.0;           // sd of the replicate estimates
    double mean_reported_se = 0.0;
    double coverage = 0.0;         // CI coverage of the population mean
    int failures = 0;
};

struct SimulationReport {
    double population_mean = 0.0;
    double expected_naive = 0.0;  // computed directly from the population and true scores
    double naive_bias = 0.0;
    double mean_n_np = 0.0;
    int replicates = 0;
    std::uint64_t seed = 0;
    std::vector<EstimatorPerformance> estimators;
    bool failure_gate_exceeded = false;  // any estimator above 20% failures
};

SimulationReport run_simulation(const SimulationSpec& spec);

std::string render_simulation_text(const SimulationReport& report);
std::string render_simulation_json(const SimulationReport& report);

}  // namespace nonprob
