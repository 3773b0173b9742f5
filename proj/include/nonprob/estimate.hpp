#pragma once

#include "nonprob/common.hpp"
#include "nonprob/data.hpp"
#include "nonprob/diagnostics.hpp"
#include "nonprob/varsel.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nonprob {

enum class EstimatorKind { ipw, mi, dr };

// Which estimator the argument combination selects: selection only -> IPW,
// outcome only -> MI, both -> DR. A target list is required when no outcome
// formula is given.
EstimatorKind dispatch_estimator(bool has_selection, bool has_outcome, bool has_target);
std::string estimator_kind_name(EstimatorKind kind);

struct ControlSelection {
    std::string method = "logit";  // logit | probit | cloglog
    std::string est_method = "mle";
    int gee_h = 1;  // 1: h = x / pi (calibration), 2: h = x
    double clip = 1e-6;
    std::vector<double> start;
    PenaltyConfig penalty;
};

struct ControlOutcome {
    std::string method = "glm";  // glm | nn | pmm | npar
    std::string family = "gaussian";
    int k = 5;
    int pmm_match_type = 1;  // 1: prediction-to-prediction, 2: prediction-to-observed
    double eps = 1e-9;
    double npar_span = 0.75;
    int npar_degree = 1;
    PenaltyConfig penalty;
};

struct ControlInference {
    std::string var_method = "analytic";  // analytic | bootstrap
    int num_boot = 100;
    std::string rep_type = "subbootstrap";
    bool vars_selection = false;
    bool bias_correction = false;
    bool vars_combine = false;
    std::uint64_t seed = 1;
    double ci_level = 0.95;
    bool se = true;
};

struct RunConfig {
    std::string data_path;  // nonprobability sample CSV
    std::string prob_path;  // reference probability sample CSV (optional)
    std::string prob_weight_col;
    std::vector<std::string> prob_strata_cols;
    std::string weight_col;  // case weights in the nonprobability sample
    std::string pop_totals_path;
    std::string pop_means_path;
    double pop_size = -1.0;  // explicit population size (fixes the size)
    std::vector<std::pair<std::string, std::string>> subset;  // equality row filters

    std::string selection;  // "~ x1 + x2"
    std::string outcome;    // "y1 + y2 ~ x1 + x2"
    std::string target;     // "~ y1 + y2"

    ControlSelection control_selection;
    ControlOutcome control_outcome;
    ControlInference control_inference;

    bool verbose = false;
    std::string out_dir;
};

struct TargetResult {
    std::string target;
    double mean = 0.0;
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double naive = 0.0;
    bool se_defined = false;
};

struct NamedSummary {
    std::string name;
    FiveNumberSummary summary;
};

struct EstimateReport {
    std::string estimator_type;  // printed descriptor
    std::string method;
    std::string aux_source;  // "survey" or "population totals"
    bool vars_selection = false;
    bool bias_correction = false;
    std::string variance_method;  // analytic | bootstrap | none
    bool pop_size_fixed = false;

    Eigen::Index n_nonprob = 0;
    Eigen::Index n_prob = 0;
    double pop_size = 0.0;

    std::vector<TargetResult> results;

    bool has_weights = false;
    WeightSummary weights;
    std::vector<NamedSummary> residual_summaries;
    std::vector<NamedSummary> pred_np_summaries;
    std::vector<NamedSummary> pred_p_summaries;

    std::vector<std::pair<std::string, double>> selection_coefficients;
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>>
        outcome_coefficients;  // per target

    int boot_replicates = 0;
    int boot_failures = 0;
    bool n_replacement_caveat = false;
    std::uint64_t seed = 1;
    std::vector<std::string> warnings;
};

EstimateReport run_estimate(const RunConfig& config);

std::string render_print(const EstimateReport& report);
std::string render_summary(const EstimateReport& report);
std::string render_json(const EstimateReport& report);
std::string render_comparison_csv(const EstimateReport& report);

}  // namespace nonprob
