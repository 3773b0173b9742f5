#pragma once

#include "nonprob/common.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nonprob {

// Raw CSV contents, column major. Cells stay as text until a formula decides
// which columns are numeric.
struct RawTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> cells;

    std::size_t nrows() const { return columns.empty() ? 0 : cells.front().size(); }
    bool has_column(const std::string& name) const;
    const std::vector<std::string>& column(const std::string& name) const;
};

RawTable read_csv(const std::string& path);
RawTable read_csv_text(const std::string& text, const std::string& origin = "<string>");

// Row indices with no missing value in any referenced column.
std::vector<std::size_t> complete_row_indices(const RawTable& table,
                                              const std::vector<std::string>& referenced);
// Row indices whose cell in `col` equals `value` (exact match on trimmed text).
std::vector<std::size_t> rows_equal(const RawTable& table, const std::string& col,
                                    const std::string& value);
RawTable filter_rows(const RawTable& table, const std::vector<std::size_t>& rows);

// Model formula: "y1 + y2 ~ x1 + size" or "~ x - 1". Responses only on the
// left side; "-1" / "+0" drop the intercept.
struct FormulaSpec {
    std::vector<std::string> responses;
    std::vector<std::string> predictors;
    bool intercept = true;

    static FormulaSpec parse(const std::string& text);
    bool same_predictors(const FormulaSpec& other) const;
};

// Per-term values kept in raw form so designs can be re-expanded after level
// alignment across samples.
struct TermData {
    std::string name;
    bool categorical = false;
    std::vector<double> numeric;
    std::vector<std::string> labels;
    std::vector<std::string> levels;  // sorted unique labels used for expansion
};

struct DesignMatrix {
    MatrixXd X;
    std::vector<std::string> column_names;
    int intercept_col = -1;

    Eigen::Index cols() const { return X.cols(); }
    int column_index(const std::string& name) const;  // -1 when absent
};

// Treatment coding, lexicographically first level as reference. Without an
// intercept the first categorical term expands to all of its levels.
DesignMatrix expand_design(const std::vector<TermData>& terms, bool intercept);

struct NonProbSample {
    std::vector<std::pair<std::string, VectorXd>> outcomes;
    DesignMatrix design;
    VectorXd case_weights;
    std::vector<std::string> unit_ids;
    std::vector<TermData> terms;
    FormulaSpec formula;
    std::vector<std::string> warnings;

    Eigen::Index n() const { return design.X.rows(); }
    const VectorXd& outcome(const std::string& name) const;
};

struct ProbSample {
    DesignMatrix design;
    VectorXd design_weights;
    std::vector<int> strata;                  // codes into strata_labels
    std::vector<std::string> strata_labels;   // {""} when no strata given
    std::vector<TermData> terms;
    FormulaSpec formula;
    std::vector<std::string> warnings;

    Eigen::Index n() const { return design.X.rows(); }
    double weight_total() const { return design_weights.sum(); }
};

struct PopulationBenchmark {
    std::vector<std::string> names;
    VectorXd totals;
    double pop_size = -1.0;  // <= 0 means "estimated" (unknown)

    bool pop_size_known() const { return pop_size > 0.0; }
    // Totals reordered to the design's columns; throws listing offenders.
    VectorXd totals_for(const DesignMatrix& design) const;
    VectorXd means_for(const DesignMatrix& design) const;
};

NonProbSample load_nonprob_csv(const std::string& path, const FormulaSpec& formula,
                               const std::string& weight_col = "",
                               const std::string& id_col = "");
NonProbSample build_nonprob(const RawTable& table, const FormulaSpec& formula,
                            const std::string& weight_col = "",
                            const std::string& id_col = "");

ProbSample load_prob_csv(const std::string& path, const FormulaSpec& formula,
                         const std::string& weight_col,
                         const std::vector<std::string>& strata_cols = {});
ProbSample build_prob(const RawTable& table, const FormulaSpec& formula,
                      const std::string& weight_col,
                      const std::vector<std::string>& strata_cols = {});

// Unions categorical levels across the two samples and re-expands both
// designs so they share one column set. Idempotent.
void align_designs(NonProbSample& np, ProbSample& p);

PopulationBenchmark load_benchmark(const std::string& path, const std::string& kind,
                                   std::optional<double> pop_size = std::nullopt);
PopulationBenchmark build_benchmark(const std::vector<std::pair<std::string, double>>& entries,
                                    const std::string& kind,
                                    std::optional<double> pop_size = std::nullopt);

}  // namespace nonprob
