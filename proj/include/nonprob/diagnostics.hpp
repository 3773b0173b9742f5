#pragma once

#include "nonprob/common.hpp"
#include "nonprob/ps.hpp"

#include <string>
#include <vector>

namespace nonprob {

// Differences between IPW-weighted nonprobability totals and reference
// totals, in total scale.
struct BalanceReport {
    std::vector<std::string> columns;
    VectorXd difference;
    VectorXd relative;  // difference / max(1, |reference|)
    HFunction h = HFunction::x;
    int digits = 10;

    VectorXd rounded() const;
};

// columns: subset of design columns to report (empty = all).
BalanceReport check_balance(const PsFit& fit, const MatrixXd& X_np, const VectorXd& w_np,
                            const std::vector<std::string>& design_columns,
                            const VectorXd& reference_totals,
                            const std::vector<std::string>& columns = {}, int digits = 10);

struct WeightSummary {
    double sum_ipw = 0.0;  // case-weighted sum of the IPW weights
    FiveNumberSummary ipw;
    FiveNumberSummary ps_np;
    FiveNumberSummary ps_p;
    bool has_prob_sample = false;
};

WeightSummary weight_summary(const PsFit& fit);

struct EstimateRow {
    std::string label;
    std::string target;
    double mean = 0.0;
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
};

struct ComparisonTable {
    std::vector<EstimateRow> rows;  // sorted by (mean, label)
    double naive = 0.0;
};

ComparisonTable compare_estimates(std::vector<EstimateRow> rows, double naive);
std::string comparison_csv(const ComparisonTable& table);
ComparisonTable parse_comparison_csv(const std::string& text);

}  // namespace nonprob
