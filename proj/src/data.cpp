#include "nonprob/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace nonprob {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

bool is_missing(const std::string& cell) {
    const std::string t = trim(cell);
    return t.empty() || t == "NA";
}

bool parse_double(const std::string& cell, double& out) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size() && std::isfinite(out);
}

// Codes like "04" carry meaning in their leading zero; keep them categorical.
bool leading_zero_code(const std::string& cell) {
    const std::string t = trim(cell);
    return t.size() >= 2 && t[0] == '0' && t[1] >= '0' && t[1] <= '9';
}

bool column_is_numeric(const std::vector<std::string>& cells) {
    double tmp;
    for (const auto& c : cells) {
        if (is_missing(c)) continue;
        if (!parse_double(c, tmp) || leading_zero_code(c)) return false;
    }
    return true;
}

std::vector<std::string> sorted_unique(const std::vector<std::string>& labels) {
    std::set<std::string> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

const std::vector<std::string>& require_column(const RawTable& table, const std::string& name,
                                               const char* what) {
    if (!table.has_column(name))
        throw SchemaError(std::string(what) + " column '" + name + "' not found in input");
    return table.column(name);
}


VectorXd numeric_column(const RawTable& table, const std::string& name,
                        const std::vector<std::size_t>& rows, const char* what) {
    const auto& cells = require_column(table, name, what);
    VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double v;
        if (!parse_double(cells[rows[i]], v))
            throw ParseError(std::string(what) + " column '" + name + "': non-numeric value '" +
                             cells[rows[i]] + "' at data row " + std::to_string(rows[i] + 1));
        out(static_cast<Eigen::Index>(i)) = v;
    }
    return out;
}

std::vector<TermData> build_terms(const RawTable& table, const std::vector<std::string>& predictors,
                                  const std::vector<std::size_t>& rows) {
    std::vector<TermData> terms;
    terms.reserve(predictors.size());
    for (const auto& name : predictors) {
        const auto& cells = require_column(table, name, "predictor");
        TermData term;
        term.name = name;
        if (column_is_numeric(cells)) {
            term.numeric.reserve(rows.size());
            double v;
            for (auto r : rows) {
                parse_double(cells[r], v);
                term.numeric.push_back(v);
            }
        } else {
            term.categorical = true;
            term.labels.reserve(rows.size());
            for (auto r : rows) term.labels.push_back(trim(cells[r]));
            term.levels = sorted_unique(term.labels);
        }
        terms.push_back(std::move(term));
    }
    return terms;
}

}  // namespace

bool RawTable::has_column(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
}

const std::vector<std::string>& RawTable::column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw SchemaError("column '" + name + "' not found");
    return cells[static_cast<std::size_t>(it - columns.begin())];
}

RawTable read_csv_text(const std::string& text, const std::string& origin) {
    RawTable table;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty CSV: " + origin);
    table.columns = split_csv_line(line);
    for (auto& c : table.columns) c = trim(c);
    table.cells.assign(table.columns.size(), {});
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != table.columns.size())
            throw ParseError(origin + ": line " + std::to_string(lineno) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(table.columns.size()));
        for (std::size_t c = 0; c < fields.size(); ++c) table.cells[c].push_back(fields[c]);
    }
    return table;
}

RawTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return read_csv_text(buf.str(), path);
}

std::vector<std::size_t> complete_row_indices(const RawTable& table,
                                              const std::vector<std::string>& referenced) {
    std::vector<std::size_t> keep;
    const std::size_t n = table.nrows();
    for (std::size_t r = 0; r < n; ++r) {
        bool ok = true;
        for (const auto& col : referenced) {
            if (is_missing(table.column(col)[r])) {
                ok = false;
                break;
            }
        }
        if (ok) keep.push_back(r);
    }
    return keep;
}

std::vector<std::size_t> rows_equal(const RawTable& table, const std::string& col,
                                    const std::string& value) {
    const auto& cells = table.column(col);
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < cells.size(); ++r)
        if (trim(cells[r]) == value) keep.push_back(r);
    return keep;
}

RawTable filter_rows(const RawTable& table, const std::vector<std::size_t>& rows) {
    RawTable out;
    out.columns = table.columns;
    out.cells.resize(table.cells.size());
    for (std::size_t c = 0; c < table.cells.size(); ++c) {
        out.cells[c].reserve(rows.size());
        for (auto r : rows) out.cells[c].push_back(table.cells[c][r]);
    }
    return out;
}

FormulaSpec FormulaSpec::parse(const std::string& text) {
    FormulaSpec spec;
    const auto tilde = text.find('~');
    if (tilde == std::string::npos) throw SchemaError("formula must contain '~': " + text);
    const std::string lhs = text.substr(0, tilde);
    const std::string rhs = text.substr(tilde + 1);

    for (std::size_t start = 0; start < lhs.size();) {
        auto next = lhs.find('+', start);
        if (next == std::string::npos) next = lhs.size();
        std::string term = trim(lhs.substr(start, next - start));
        if (!term.empty()) spec.responses.push_back(term);
        start = next + 1;
    }

    // Right side: '+' separated terms, with "-1"/"+0" toggling the intercept.
    std::string cur;
    char sign = '+';
    auto flush = [&](char next_sign) {
        std::string term = trim(cur);
        cur.clear();
        if (!term.empty()) {
            if (term == "1") {
                if (sign == '-') spec.intercept = false;
            } else if (term == "0") {
                spec.intercept = false;
            } else if (sign == '-') {
                throw SchemaError("only '-1' removal is supported in formulas: -" + term);
            } else {
                spec.predictors.push_back(term);
            }
        }
        sign = next_sign;
    };
    for (char c : rhs) {
        if (c == '+' || c == '-')
            flush(c);
        else
            cur += c;
    }
    flush('+');

    std::set<std::string> seen;
    for (const auto& p : spec.predictors)
        if (!seen.insert(p).second) throw SchemaError("duplicate term in formula: " + p);
    return spec;
}

bool FormulaSpec::same_predictors(const FormulaSpec& other) const {
    return predictors == other.predictors && intercept == other.intercept;
}

int DesignMatrix::column_index(const std::string& name) const {
    auto it = std::find(column_names.begin(), column_names.end(), name);
    return it == column_names.end() ? -1 : static_cast<int>(it - column_names.begin());
}

DesignMatrix expand_design(const std::vector<TermData>& terms, bool intercept) {
    Eigen::Index n = 0;
    for (const auto& t : terms) {
        const auto rows =
            static_cast<Eigen::Index>(t.categorical ? t.labels.size() : t.numeric.size());
        if (n == 0) n = rows;
        if (rows != n) throw SchemaError("terms have inconsistent row counts");
    }

    DesignMatrix design;
    std::vector<VectorXd> cols;
    if (intercept) {
        design.column_names.emplace_back("(Intercept)");
        cols.push_back(VectorXd::Ones(n));
        design.intercept_col = 0;
    }
    bool full_coding_used = intercept;  // first categorical gets all levels when no intercept
    for (const auto& t : terms) {
        if (!t.categorical) {
            design.column_names.push_back(t.name);
            cols.push_back(Eigen::Map<const VectorXd>(t.numeric.data(), n));
            continue;
        }
        if (t.levels.empty()) throw SchemaError("categorical term '" + t.name + "' has no levels");
        const std::size_t first = full_coding_used ? 1 : 0;  // drop reference level
        full_coding_used = true;
        for (std::size_t l = first; l < t.levels.size(); ++l) {
            design.column_names.push_back(t.name + t.levels[l]);
            VectorXd col = VectorXd::Zero(n);
            for (Eigen::Index i = 0; i < n; ++i)
                if (t.labels[static_cast<std::size_t>(i)] == t.levels[l]) col(i) = 1.0;
            cols.push_back(std::move(col));
        }
    }

    design.X.resize(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) design.X.col(static_cast<Eigen::Index>(c)) = cols[c];
    return design;
}

const VectorXd& NonProbSample::outcome(const std::string& name) const {
    for (const auto& [key, values] : outcomes)
        if (key == name) return values;
    throw SchemaError("outcome '" + name + "' not present in sample");
}

NonProbSample build_nonprob(const RawTable& table, const FormulaSpec& formula,
                            const std::string& weight_col, const std::string& id_col) {
    std::vector<std::string> referenced = formula.responses;
    referenced.insert(referenced.end(), formula.predictors.begin(), formula.predictors.end());
    if (!weight_col.empty()) referenced.push_back(weight_col);
    for (const auto& col : referenced) require_column(table, col, "referenced");

    const auto rows = complete_row_indices(table, referenced);
    if (rows.empty()) throw SchemaError("no complete rows left after removing missing values");

    NonProbSample sample;
    sample.formula = formula;
    sample.terms = build_terms(table, formula.predictors, rows);
    sample.design = expand_design(sample.terms, formula.intercept);
    for (const auto& y : formula.responses)
        sample.outcomes.emplace_back(y, numeric_column(table, y, rows, "outcome"));

    if (weight_col.empty()) {
        sample.case_weights = VectorXd::Ones(static_cast<Eigen::Index>(rows.size()));
    } else {
        sample.case_weights = numeric_column(table, weight_col, rows, "case weight");
        if ((sample.case_weights.array() < 0).any())
            throw SchemaError("case weights must be non-negative");
    }

    if (!id_col.empty()) {
        const auto& ids = require_column(table, id_col, "id");
        for (auto r : rows) sample.unit_ids.push_back(ids[r]);
    } else {
        for (auto r : rows) sample.unit_ids.push_back(std::to_string(r + 1));
    }
    return sample;
}

NonProbSample load_nonprob_csv(const std::string& path, const FormulaSpec& formula,
                               const std::string& weight_col, const std::string& id_col) {
    return build_nonprob(read_csv(path), formula, weight_col, id_col);
}

ProbSample build_prob(const RawTable& table, const FormulaSpec& formula,
                      const std::string& weight_col,
                      const std::vector<std::string>& strata_cols) {
    if (weight_col.empty())
        throw SchemaError("a probability sample requires a design weight column");
    if (!formula.responses.empty())
        throw SchemaError("probability sample formula cannot have a response side");

    std::vector<std::string> referenced = formula.predictors;
    referenced.push_back(weight_col);
    for (const auto& s : strata_cols) referenced.push_back(s);
    for (const auto& col : referenced) require_column(table, col, "referenced");

    const auto rows = complete_row_indices(table, referenced);
    if (rows.empty()) throw SchemaError("no complete rows left after removing missing values");

    ProbSample sample;
    sample.formula = formula;
    sample.terms = build_terms(table, formula.predictors, rows);
    sample.design = expand_design(sample.terms, formula.intercept);
    sample.design_weights = numeric_column(table, weight_col, rows, "design weight");
    if ((sample.design_weights.array() <= 0).any())
        throw SchemaError("design weights must be strictly positive");

    if (strata_cols.empty()) {
        sample.strata_labels = {""};
        sample.strata.assign(rows.size(), 0);
    } else {
        std::vector<std::string> combined(rows.size());
        for (const auto& s : strata_cols) {
            const auto& cells = table.column(s);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (!combined[i].empty()) combined[i] += ".";
                combined[i] += trim(cells[rows[i]]);
            }
        }
        sample.strata_labels = sorted_unique(combined);
        sample.strata.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto it = std::lower_bound(sample.strata_labels.begin(), sample.strata_labels.end(),
                                       combined[i]);
            sample.strata[i] = static_cast<int>(it - sample.strata_labels.begin());
        }
    }
    return sample;
}

ProbSample load_prob_csv(const std::string& path, const FormulaSpec& formula,
                         const std::string& weight_col,
                         const std::vector<std::string>& strata_cols) {
    return build_prob(read_csv(path), formula, weight_col, strata_cols);
}

void align_designs(NonProbSample& np, ProbSample& p) {
    if (!np.formula.same_predictors(p.formula))
        throw SchemaError("samples were built from different predictor sets");
    if (np.terms.size() != p.terms.size())
        throw SchemaError("samples have inconsistent term counts");

    for (std::size_t t = 0; t < np.terms.size(); ++t) {
        TermData& a = np.terms[t];
        TermData& b = p.terms[t];
        if (a.categorical != b.categorical)
            throw SchemaError("term '" + a.name + "' is numeric in one sample and categorical in the other");
        if (!a.categorical) continue;

        std::set<std::string> levels(a.levels.begin(), a.levels.end());
        levels.insert(b.levels.begin(), b.levels.end());
        std::vector<std::string> merged(levels.begin(), levels.end());
        for (const auto& lvl : merged) {
            const bool in_a = std::find(a.levels.begin(), a.levels.end(), lvl) != a.levels.end();
            const bool in_b = std::find(b.levels.begin(), b.levels.end(), lvl) != b.levels.end();
            if (!in_a)
                np.warnings.push_back("level '" + lvl + "' of '" + a.name +
                                      "' absent from the nonprobability sample; its column is all zero");
            if (!in_b)
                p.warnings.push_back("level '" + lvl + "' of '" + b.name +
                                     "' absent from the probability sample; its column is all zero");
        }
        a.levels = merged;
        b.levels = merged;
    }

    np.design = expand_design(np.terms, np.formula.intercept);
    p.design = expand_design(p.terms, p.formula.intercept);
    if (np.design.column_names != p.design.column_names)
        throw SchemaError("design columns could not be reconciled across samples");
}

PopulationBenchmark build_benchmark(const std::vector<std::pair<std::string, double>>& entries,
                                    const std::string& kind, std::optional<double> pop_size) {
    if (kind != "totals" && kind != "means")
        throw SchemaError("benchmark kind must be 'totals' or 'means'");
    PopulationBenchmark bench;
    if (pop_size) {
        if (*pop_size <= 0) throw SchemaError("population size must be positive");
        bench.pop_size = *pop_size;
    }
    if (kind == "means" && !bench.pop_size_known())
        throw SchemaError("population means require a population size");

    bench.totals.resize(static_cast<Eigen::Index>(entries.size()));
    Eigen::Index i = 0;
    for (const auto& [name, value] : entries) {
        bench.names.push_back(name);
        bench.totals(i++) = kind == "means" ? value * bench.pop_size : value;
    }
    // An intercept total is the population count; use it when N was not given.
    if (!bench.pop_size_known()) {
        for (std::size_t j = 0; j < bench.names.size(); ++j)
            if (bench.names[j] == "(Intercept)")
                bench.pop_size = bench.totals(static_cast<Eigen::Index>(j));
    }
    return bench;
}

PopulationBenchmark load_benchmark(const std::string& path, const std::string& kind,
                                   std::optional<double> pop_size) {
    const RawTable table = read_csv(path);
    if (!table.has_column("name") || !table.has_column("value"))
        throw SchemaError("benchmark file must have columns name,value: " + path);
    const auto& names = table.column("name");
    const auto& values = table.column("value");
    std::vector<std::pair<std::string, double>> entries;
    for (std::size_t r = 0; r < names.size(); ++r) {
        double v;
        if (!parse_double(values[r], v))
            throw ParseError("benchmark value '" + values[r] + "' at data row " +
                             std::to_string(r + 1) + " is not numeric");
        entries.emplace_back(trim(names[r]), v);
    }
    return build_benchmark(entries, kind, pop_size);
}

VectorXd PopulationBenchmark::totals_for(const DesignMatrix& design) const {
    VectorXd out(design.cols());
    std::vector<std::string> missing;
    for (Eigen::Index c = 0; c < design.cols(); ++c) {
        auto it = std::find(names.begin(), names.end(), design.column_names[static_cast<std::size_t>(c)]);
        if (it == names.end()) {
            missing.push_back(design.column_names[static_cast<std::size_t>(c)]);
            continue;
        }
        out(c) = totals(static_cast<Eigen::Index>(it - names.begin()));
    }
    if (!missing.empty()) {
        std::string msg = "benchmark is missing totals for design columns:";
        for (const auto& m : missing) msg += " " + m;
        throw SchemaError(msg);
    }
    return out;
}

VectorXd PopulationBenchmark::means_for(const DesignMatrix& design) const {
    if (!pop_size_known())
        throw SchemaError("benchmark population size is required to form covariate means");
    return totals_for(design) / pop_size;
}

}  // namespace nonprob
