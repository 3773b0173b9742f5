#include "nonprob/estimate.hpp"

#include "nonprob/glm.hpp"
#include "nonprob/ipw_dr.hpp"
#include "nonprob/knn.hpp"
#include "nonprob/mi.hpp"
#include "nonprob/ps.hpp"
#include "nonprob/variance.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace nonprob {

EstimatorKind dispatch_estimator(bool has_selection, bool has_outcome, bool has_target) {
    if (has_selection && has_outcome) return EstimatorKind::dr;
    if (has_outcome) return EstimatorKind::mi;
    if (has_selection) {
        if (!has_target)
            throw SchemaError("a target list is required when no outcome formula is given");
        return EstimatorKind::ipw;
    }
    throw SchemaError("specify a selection formula, an outcome formula, or both");
}

std::string estimator_kind_name(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::ipw: return "inverse probability weighting";
        case EstimatorKind::mi: return "mass imputation";
        case EstimatorKind::dr: return "doubly robust";
    }
    return "";
}

namespace {

MatrixXd gather_cols(const MatrixXd& X, const std::vector<int>& cols) {
    MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = X.col(cols[j]);
    return out;
}

MatrixXd gather_rows(const MatrixXd& X, const std::vector<Eigen::Index>& rows) {
    MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    return out;
}

VectorXd gather(const VectorXd& v, const std::vector<Eigen::Index>& rows) {
    VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
    return out;
}

std::vector<std::string> names_for(const std::vector<std::string>& all,
                                   const std::vector<int>& cols) {
    std::vector<std::string> out;
    for (int c : cols) out.push_back(all[static_cast<std::size_t>(c)]);
    return out;
}

// Column indices of the union design that belong to a model with the given
// predictor terms (reference levels follow the shared expansion).
std::vector<int> columns_for_terms(const DesignMatrix& design, const std::vector<TermData>& terms,
                                   bool model_intercept,
                                   const std::vector<std::string>& wanted_terms) {
    std::vector<int> cols;
    if (model_intercept && design.intercept_col >= 0) cols.push_back(design.intercept_col);
    int cursor = design.intercept_col >= 0 ? 1 : 0;
    for (const auto& term : terms) {
        const int width =
            term.categorical ? static_cast<int>(term.levels.size()) - 1 : 1;
        const bool wanted = std::find(wanted_terms.begin(), wanted_terms.end(), term.name) !=
                            wanted_terms.end();
        for (int k = 0; k < width; ++k) {
            if (wanted) cols.push_back(cursor + k);
            }
        cursor += width;
    }
    return cols;
}

struct Loaded {
    NonProbSample np;
    std::optional<ProbSample> p;
    std::optional<PopulationBenchmark> bench;
    std::vector<std::string> targets;
    std::vector<int> sel_cols;
    std::vector<int> out_cols;
    FormulaSpec sel_spec, out_spec;
};

std::vector<std::string> dedup(std::vector<std::string> v) {
    std::vector<std::string> out;
    for (auto& s : v)
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
    return out;
}

Loaded load_inputs(const RunConfig& config, EstimatorKind kind) {
    Loaded data;
    const bool has_selection = !config.selection.empty();
    const bool has_outcome = !config.outcome.empty();

    if (has_selection) data.sel_spec = FormulaSpec::parse(config.selection);
    if (has_outcome) data.out_spec = FormulaSpec::parse(config.outcome);
    if (!config.target.empty()) {
        const FormulaSpec tspec = FormulaSpec::parse(config.target);
        data.targets = tspec.predictors;
    }
    if (has_outcome) {
        if (data.out_spec.responses.empty())
            throw SchemaError("the outcome formula needs at least one response variable");
        data.targets = dedup(data.out_spec.responses);
    }
    if (data.targets.empty()) throw SchemaError("no target variables specified");

    // one shared design over the union of predictors keeps rows and
    // categorical codings consistent across the two models
    FormulaSpec union_spec;
    union_spec.responses = data.targets;
    std::vector<std::string> preds = data.sel_spec.predictors;
    preds.insert(preds.end(), data.out_spec.predictors.begin(), data.out_spec.predictors.end());
    union_spec.predictors = dedup(std::move(preds));
    union_spec.intercept = data.sel_spec.intercept || data.out_spec.intercept ||
                           (!has_selection && !has_outcome);
    if (union_spec.predictors.empty())
        throw SchemaError("at least one predictor is required");

    RawTable raw = read_csv(config.data_path);
    for (const auto& [col, value] : config.subset) raw = filter_rows(raw, rows_equal(raw, col, value));
    data.np = build_nonprob(raw, union_spec, config.weight_col);

    if (!config.prob_path.empty()) {
        FormulaSpec p_spec = union_spec;
        p_spec.responses.clear();
        data.p = load_prob_csv(config.prob_path, p_spec, config.prob_weight_col,
                               config.prob_strata_cols);
        align_designs(data.np, *data.p);
    }
    if (!config.pop_totals_path.empty() || !config.pop_means_path.empty()) {
        if (data.p) throw SchemaError("give either a probability sample or population totals, not both");
        const bool means = !config.pop_means_path.empty();
        std::optional<double> n;
        if (config.pop_size > 0) n = config.pop_size;
        data.bench = load_benchmark(means ? config.pop_means_path : config.pop_totals_path,
                                    means ? "means" : "totals", n);
    }
    if (!data.p && !data.bench)
        throw SchemaError("a probability sample or population totals/means are required");

    data.sel_cols = columns_for_terms(data.np.design, data.np.terms,
                                      has_selection ? data.sel_spec.intercept : true,
                                      data.sel_spec.predictors);
    data.out_cols = columns_for_terms(data.np.design, data.np.terms,
                                      has_outcome ? data.out_spec.intercept : true,
                                      has_outcome ? data.out_spec.predictors
                                                  : union_spec.predictors);
    if (kind == EstimatorKind::ipw) data.out_cols.clear();
    return data;
}

// columns that are identically zero carry no sample information; excluding
// them keeps the fits full rank when a factor level lives in one source only
std::vector<int> drop_empty_columns(const std::vector<int>& cols, const MatrixXd& X_np,
                                    const MatrixXd* X_p, std::vector<std::string>& warnings,
                                    const std::vector<std::string>& names) {
    std::vector<int> kept;
    for (int c : cols) {
        const bool empty_np = X_np.col(c).isZero();
        const bool empty_p = X_p && X_p->col(c).isZero();
        if (empty_np || empty_p) {
            warnings.push_back("column " + names[static_cast<std::size_t>(c)] +
                               " is identically zero in one sample and was dropped from the fit");
            continue;
        }
        kept.push_back(c);
    }
    return kept;
}

struct FittedSelection {
    PsFit fit;
    std::vector<int> cols;
};

FittedSelection fit_selection(const RunConfig& config, const Loaded& data,
                              const std::vector<int>& cols,
                              const std::vector<Eigen::Index>* np_rows = nullptr,
                              const MatrixXd* X_p_override = nullptr,
                              const VectorXd* d_override = nullptr) {
    const ControlSelection& ctl = config.control_selection;
    const PsLink link{ps_link_from_string(ctl.method)};
    PsOptions options;
    options.clip = ctl.clip;
    if (!ctl.start.empty()) {
        options.start = Eigen::Map<const VectorXd>(ctl.start.data(),
                                                   static_cast<Eigen::Index>(ctl.start.size()));
        if (options.start.size() != static_cast<Eigen::Index>(cols.size()))
            throw SchemaError("selection starting values have the wrong length");
    }

    MatrixXd X_np = gather_cols(data.np.design.X, cols);
    VectorXd w = data.np.case_weights;
    if (np_rows) {
        X_np = gather_rows(X_np, *np_rows);
        w = gather(w, *np_rows);
    }
    const auto col_names = names_for(data.np.design.column_names, cols);

    FittedSelection out;
    out.cols = cols;
    if (data.p || X_p_override) {
        MatrixXd X_p = X_p_override ? gather_cols(*X_p_override, cols)
                                    : gather_cols(data.p->design.X, cols);
        VectorXd d = d_override ? *d_override : data.p->design_weights;
        if (ctl.est_method == "gee") {
            const HFunction h = ctl.gee_h == 1 ? HFunction::x_over_pi : HFunction::x;
            out.fit = ps_fit_gee(X_np, w, X_p, d, link, h, col_names, options);
        } else {
            out.fit = ps_fit_mle(X_np, w, X_p, d, link, col_names, options);
        }
    } else {
        if (ctl.est_method != "gee" || ctl.gee_h != 1)
            throw SchemaError(
                "population totals support only the calibrated selection fit "
                "(est-method gee with gee-h 1)");
        const VectorXd totals = data.bench->totals_for(data.np.design);
        VectorXd sub(static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j)
            sub(static_cast<Eigen::Index>(j)) = totals(cols[j]);
        out.fit = ps_fit_gee_totals(X_np, w, sub, link, HFunction::x_over_pi, col_names, options);
    }
    return out;
}

double benchmark_pop_size(const RunConfig& config, const Loaded& data) {
    if (config.pop_size > 0) return config.pop_size;
    if (data.bench && data.bench->pop_size_known()) return data.bench->pop_size;
    if (data.p) return data.p->weight_total();
    throw SchemaError("population size is required and could not be derived");
}

struct TargetEstimate {
    double mu = 0.0;
    double naive = 0.0;
    std::optional<MiEstimate> mi;
    std::optional<IpwEstimate> ipw;
    std::optional<DrEstimate> dr;
    OutcomeFit outcome;  // valid for model-based methods
    bool has_outcome_fit = false;
};

// One full point estimation for a target on (possibly resampled) data.
TargetEstimate estimate_target(const RunConfig& config, EstimatorKind kind, const Loaded& data,
                               const std::vector<int>& sel_cols, const std::vector<int>& out_cols,
                               const std::string& target, const PsFit* ps_full,
                               const std::vector<Eigen::Index>* np_rows = nullptr,
                               const std::vector<Eigen::Index>* p_rows = nullptr,
                               const VectorXd* p_weights = nullptr) {
    const ControlOutcome& out_ctl = config.control_outcome;
    const GlmFamily family{family_from_string(out_ctl.family)};
    const bool fixed_n = config.pop_size > 0;

    MatrixXd X_out_np = out_cols.empty() ? MatrixXd() : gather_cols(data.np.design.X, out_cols);
    VectorXd y = data.np.outcome(target);
    VectorXd w = data.np.case_weights;
    MatrixXd X_out_p;
    VectorXd d;
    std::vector<int> strata;
    if (data.p) {
        if (!out_cols.empty()) X_out_p = gather_cols(data.p->design.X, out_cols);
        d = data.p->design_weights;
    }
    if (np_rows) {
        if (X_out_np.size() > 0) X_out_np = gather_rows(X_out_np, *np_rows);
        y = gather(y, *np_rows);
        w = gather(w, *np_rows);
    }
    if (p_rows && data.p) {
        if (X_out_p.size() > 0) X_out_p = gather_rows(X_out_p, *p_rows);
        d = *p_weights;
    }
    const auto out_names = names_for(data.np.design.column_names, out_cols);

    TargetEstimate est;
    est.naive = weighted_mean(y, w);

    // selection side (ipw / dr)
    PsFit ps;
    if (kind != EstimatorKind::mi) {
        if (ps_full && !np_rows) {
            ps = *ps_full;
        } else {
            MatrixXd X_p_full;
            if (data.p && p_rows) X_p_full = gather_rows(data.p->design.X, *p_rows);
            auto fitted = fit_selection(config, data, sel_cols, np_rows,
                                        (data.p && p_rows) ? &X_p_full : nullptr,
                                        p_rows ? p_weights : nullptr);
            ps = std::move(fitted.fit);
        }
    }

    switch (kind) {
        case EstimatorKind::ipw: {
            std::optional<double> n;
            if (fixed_n) n = config.pop_size;
            est.ipw = ipw_estimate(y, w, ps, n, !fixed_n);
            est.mu = est.ipw->mu;
            break;
        }
        case EstimatorKind::mi: {
            if (out_ctl.method == "glm") {
                if (data.p) {
                    est.mi = mi_glm(X_out_np, y, w, family, X_out_p, d, out_names);
                } else {
                    const VectorXd totals = data.bench->totals_for(data.np.design);
                    VectorXd sub(static_cast<Eigen::Index>(out_cols.size()));
                    for (std::size_t j = 0; j < out_cols.size(); ++j)
                        sub(static_cast<Eigen::Index>(j)) = totals(out_cols[j]);
                    est.mi = mi_glm_totals(X_out_np, y, w, family, sub,
                                           benchmark_pop_size(config, data), out_names);
                }
            } else if (out_ctl.method == "nn") {
                const int drop = data.np.design.intercept_col;
                std::vector<int> match_cols;
                for (int c : out_cols)
                    if (c != drop) match_cols.push_back(c);
                MatrixXd M_np = gather_cols(data.np.design.X, match_cols);
                MatrixXd M_p = gather_cols(data.p->design.X, match_cols);
                if (np_rows) M_np = gather_rows(M_np, *np_rows);
                if (p_rows) M_p = gather_rows(M_p, *p_rows);
                est.mi = mi_nn(M_np, y, M_p, d, out_ctl.k, out_ctl.eps);
            } else if (out_ctl.method == "pmm") {
                const PmmVariant variant =
                    out_ctl.pmm_match_type == 2 ? PmmVariant::b : PmmVariant::a;
                est.mi = mi_pmm(X_out_np, y, w, family, X_out_p, d, out_ctl.k, variant,
                                out_ctl.eps, out_names);
            } else if (out_ctl.method == "npar") {
                const int drop = data.np.design.intercept_col;
                std::vector<int> match_cols;
                for (int c : out_cols)
                    if (c != drop) match_cols.push_back(c);
                MatrixXd M_np = gather_cols(data.np.design.X, match_cols);
                MatrixXd M_p = gather_cols(data.p->design.X, match_cols);
                if (np_rows) M_np = gather_rows(M_np, *np_rows);
                if (p_rows) M_p = gather_rows(M_p, *p_rows);
                est.mi = mi_npar(M_np, y, M_p, d, {out_ctl.npar_span, out_ctl.npar_degree});
            } else {
                throw SchemaError("unknown outcome method: " + out_ctl.method);
            }
            est.mu = est.mi->mu;
            if (est.mi->outcome.coefficients.size() > 0) {
                est.outcome = est.mi->outcome;
                est.has_outcome_fit = true;
            }
            break;
        }
        case EstimatorKind::dr: {
            auto outcome = irls_fit(X_out_np, y, family, w, nullptr, out_names);
            est.outcome = outcome;
            est.has_outcome_fit = true;
            const DrPopSize mode = fixed_n ? DrPopSize::known : DrPopSize::estimated;
            if (config.control_inference.bias_correction) {
                if (sel_cols != out_cols)
                    throw SchemaError(
                        "bias correction requires the selection and outcome models to share one "
                        "column set; enable --vars-combine or use identical formulas");
                const PsLink link{ps_link_from_string(config.control_selection.method)};
                MatrixXd X_p_sub;
                if (data.p) {
                    X_p_sub = gather_cols(data.p->design.X, sel_cols);
                    if (p_rows) X_p_sub = gather_rows(X_p_sub, *p_rows);
                } else {
                    throw SchemaError("bias correction requires a probability sample");
                }
                MatrixXd X_np_sub = gather_cols(data.np.design.X, sel_cols);
                if (np_rows) X_np_sub = gather_rows(X_np_sub, *np_rows);
                est.dr = dr_bias_min(X_np_sub, y, w, X_p_sub, d, link, family, ps.gamma,
                                     outcome.coefficients);
            } else if (data.p) {
                est.dr = dr_separate(y, w, ps, outcome.fitted, predict_mean(outcome, X_out_p), d,
                                     mode, fixed_n ? std::optional<double>(config.pop_size)
                                                   : std::nullopt);
            } else {
                const VectorXd totals = data.bench->totals_for(data.np.design);
                VectorXd sub(static_cast<Eigen::Index>(out_cols.size()));
                for (std::size_t j = 0; j < out_cols.size(); ++j)
                    sub(static_cast<Eigen::Index>(j)) = totals(out_cols[j]);
                est.dr = dr_separate_totals(y, w, ps, outcome.fitted, outcome.coefficients, sub,
                                            benchmark_pop_size(config, data), mode);
            }
            est.dr->beta = outcome.coefficients;
            est.mu = est.dr->mu;
            break;
        }
    }
    if (kind != EstimatorKind::mi && !est.dr) {
        // keep the selection fit available for summaries
    }
    (void)strata;
    return est;
}

std::string method_string(const RunConfig& config, EstimatorKind kind) {
    const auto& sel = config.control_selection;
    const auto& out = config.control_outcome;
    switch (kind) {
        case EstimatorKind::ipw: return sel.method + " (" + sel.est_method + ")";
        case EstimatorKind::mi:
            if (out.method == "glm" || out.method == "pmm")
                return out.method + " (" + out.family + ")";
            return out.method;
        case EstimatorKind::dr: return out.method + " (" + out.family + ")";
    }
    return "";
}

NamedSummary summarize(const std::string& name, const VectorXd& v) {
    return {name, five_number_summary(v)};
}

}  // namespace

EstimateReport run_estimate(const RunConfig& config) {
    const EstimatorKind kind =
        dispatch_estimator(!config.selection.empty(), !config.outcome.empty(),
                           !config.target.empty());
    const ControlInference& inf = config.control_inference;
    if (inf.var_method != "analytic" && inf.var_method != "bootstrap")
        throw SchemaError("variance method must be 'analytic' or 'bootstrap'");
    if (inf.rep_type != "subbootstrap")
        throw SchemaError("unsupported probability-sample replication type: " + inf.rep_type);
    if (inf.bias_correction && kind != EstimatorKind::dr)
        throw SchemaError("bias correction applies only to the doubly robust estimator");

    Loaded data = load_inputs(config, kind);
    const GlmFamily family{family_from_string(config.control_outcome.family)};

    if (data.bench) {
        if (kind != EstimatorKind::ipw) {
            if (config.control_outcome.method != "glm")
                throw SchemaError("population totals support only the model-based (glm) outcome method");
            if (family.family != Family::gaussian)
                throw SchemaError(
                    "population totals require a gaussian outcome model: the projection term "
                    "does not reduce to totals otherwise");
        }
        if (kind != EstimatorKind::mi &&
            (config.control_selection.est_method != "gee" || config.control_selection.gee_h != 1))
            throw SchemaError(
                "population totals support only the calibrated selection fit "
                "(est-method gee with gee-h 1)");
        if (inf.vars_selection && kind != EstimatorKind::mi)
            throw SchemaError(
                "selection-model variable selection needs a probability sample, not totals");
    }

    EstimateReport report;
    report.estimator_type = estimator_kind_name(kind);
    report.method = method_string(config, kind);
    report.aux_source = data.p ? "survey" : "population totals";
    report.vars_selection = inf.vars_selection;
    report.bias_correction = inf.bias_correction;
    report.variance_method = inf.se ? inf.var_method : "none";
    report.pop_size_fixed = config.pop_size > 0;
    report.n_nonprob = data.np.n();
    report.n_prob = data.p ? data.p->n() : 0;
    report.pop_size = benchmark_pop_size(config, data);
    report.seed = inf.seed;
    for (const auto& wmsg : data.np.warnings) report.warnings.push_back(wmsg);
    if (data.p)
        for (const auto& wmsg : data.p->warnings) report.warnings.push_back(wmsg);

    // structurally empty columns cannot be fitted
    const MatrixXd* Xp_ptr = data.p ? &data.p->design.X : nullptr;
    std::vector<int> sel_cols = drop_empty_columns(data.sel_cols, data.np.design.X, Xp_ptr,
                                                   report.warnings, data.np.design.column_names);
    std::vector<int> base_out_cols = drop_empty_columns(
        data.out_cols, data.np.design.X, Xp_ptr, report.warnings, data.np.design.column_names);

    // two-step variable selection: select, then refit unpenalized
    std::optional<SelectionResult> sel_selection;
    if (inf.vars_selection && kind != EstimatorKind::mi) {
        PenaltyConfig pc = config.control_selection.penalty;
        pc.seed = derive_seed(inf.seed, 11);
        const PsLink link{ps_link_from_string(config.control_selection.method)};
        const HFunction h = (config.control_selection.est_method == "gee" &&
                             config.control_selection.gee_h == 1)
                                ? HFunction::x_over_pi
                                : HFunction::x;
        MatrixXd X_np_sel = gather_cols(data.np.design.X, sel_cols);
        MatrixXd X_p_sel = gather_cols(data.p->design.X, sel_cols);
        int icol = -1;
        for (std::size_t j = 0; j < sel_cols.size(); ++j)
            if (sel_cols[j] == data.np.design.intercept_col) icol = static_cast<int>(j);
        auto sel = select_ps(X_np_sel, data.np.case_weights, X_p_sel, data.p->design_weights,
                             link, h, pc, icol);
        for (const auto& wmsg : sel.warnings) report.warnings.push_back(wmsg);
        std::vector<int> active;
        for (int a : sel.active) active.push_back(sel_cols[static_cast<std::size_t>(a)]);
        sel_selection = std::move(sel);
        sel_cols = active;
        report.selection_coefficients.clear();
    }

    // selection fit shared across targets
    std::optional<FittedSelection> ps_fitted;
    if (kind != EstimatorKind::mi && !inf.bias_correction) {
        ps_fitted = fit_selection(config, data, sel_cols);
        for (const auto& wmsg : ps_fitted->fit.warnings) report.warnings.push_back(wmsg);
    }

    const std::vector<int> strata = data.p ? data.p->strata : std::vector<int>{};
    const bool fixed_n = config.pop_size > 0;

    for (std::size_t t = 0; t < data.targets.size(); ++t) {
        const std::string& target = data.targets[t];
        std::vector<int> out_cols = base_out_cols;

        if (inf.vars_selection && kind != EstimatorKind::ipw) {
            PenaltyConfig pc = config.control_outcome.penalty;
            pc.seed = derive_seed(inf.seed, 13 + t);
            MatrixXd X_out = gather_cols(data.np.design.X, out_cols);
            int icol = -1;
            for (std::size_t j = 0; j < out_cols.size(); ++j)
                if (out_cols[j] == data.np.design.intercept_col) icol = static_cast<int>(j);
            auto sel = select_outcome(X_out, data.np.outcome(target), data.np.case_weights, family,
                                      pc, icol);
            for (const auto& wmsg : sel.warnings) report.warnings.push_back(wmsg);
            std::vector<int> active;
            for (int a : sel.active) active.push_back(out_cols[static_cast<std::size_t>(a)]);
            if (inf.vars_combine && sel_selection) {
                std::vector<int> merged = active;
                merged.insert(merged.end(), sel_cols.begin(), sel_cols.end());
                std::sort(merged.begin(), merged.end());
                merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
                out_cols = merged;
                sel_cols = merged;
                ps_fitted.reset();  // refit on the combined columns
            } else {
                out_cols = active;
            }
        }
        if (kind == EstimatorKind::dr && inf.bias_correction && sel_cols != out_cols)
            throw SchemaError(
                "bias correction requires the selection and outcome models to share one column "
                "set; enable --vars-combine");

        if (kind != EstimatorKind::mi && !ps_fitted && !inf.bias_correction)
            ps_fitted = fit_selection(config, data, sel_cols);

        // bias correction needs separate-fit starting values
        std::optional<FittedSelection> ps_for_target = ps_fitted;
        if (inf.bias_correction) {
            ps_for_target = fit_selection(config, data, sel_cols);
        }

        TargetEstimate est =
            estimate_target(config, kind, data, sel_cols, out_cols, target,
                            ps_for_target ? &ps_for_target->fit : nullptr);

        TargetResult result;
        result.target = target;
        result.mean = est.mu;
        result.naive = est.naive;

        // variance
        if (inf.se) {
            VectorXd y = data.np.outcome(target);
            const VectorXd& w = data.np.case_weights;
            VarianceResult var;
            if (inf.var_method == "bootstrap") {
                auto closure = [&](const ResampleDraw& draw) {
                    return estimate_target(config, kind, data, sel_cols, out_cols, target, nullptr,
                                           &draw.np_rows, data.p ? &draw.p_rows : nullptr,
                                           data.p ? &draw.p_weights : nullptr)
                        .mu;
                };
                var = bootstrap_variance(closure, data.np.n(), strata,
                                         data.p ? data.p->design_weights : VectorXd(),
                                         inf.num_boot, inf.seed);
                report.boot_replicates = inf.num_boot;
                report.boot_failures = var.failures;
            } else {
                const PsFit* ps = nullptr;
                if (est.dr && inf.bias_correction) {
                    // rebuild a PsFit view at the jointly fitted gamma
                    static thread_local PsFit joint;
                    joint = ps_for_target->fit;
                    joint.gamma = est.dr->gamma;
                    MatrixXd X_np_sel = gather_cols(data.np.design.X, sel_cols);
                    joint.scores_np = ps_predict(joint, X_np_sel, config.control_selection.clip);
                    joint.ipw_weights = joint.scores_np.cwiseInverse();
                    joint.nhat_np = (w.array() * joint.ipw_weights.array()).sum();
                    ps = &joint;
                } else if (ps_for_target) {
                    ps = &ps_for_target->fit;
                }
                switch (kind) {
                    case EstimatorKind::ipw: {
                        MatrixXd X_np_sel = gather_cols(data.np.design.X, sel_cols);
                        MatrixXd X_p_sel = data.p ? gather_cols(data.p->design.X, sel_cols)
                                                  : MatrixXd(0, X_np_sel.cols());
                        var = analytic_variance_ipw(
                            y, w, X_np_sel, *ps, X_p_sel,
                            data.p ? data.p->design_weights : VectorXd(), strata, est.mu,
                            fixed_n ? std::optional<double>(config.pop_size) : std::nullopt);
                        break;
                    }
                    case EstimatorKind::mi: {
                        if (config.control_outcome.method == "glm") {
                            MatrixXd X_out = gather_cols(data.np.design.X, out_cols);
                            if (data.p) {
                                var = analytic_variance_mi_glm(
                                    X_out, y, w, est.mi->outcome,
                                    gather_cols(data.p->design.X, out_cols),
                                    data.p->design_weights, strata, est.mu);
                            } else {
                                const VectorXd totals = data.bench->totals_for(data.np.design);
                                VectorXd sub(static_cast<Eigen::Index>(out_cols.size()));
                                for (std::size_t j = 0; j < out_cols.size(); ++j)
                                    sub(static_cast<Eigen::Index>(j)) = totals[out_cols[j]];
                                var = analytic_variance_mi_glm_totals(X_out, y, w, est.mi->outcome,
                                                                      sub, report.pop_size);
                            }
                        } else {
                            var = analytic_variance_mi_nn(est.mi->y_star, data.p->design_weights,
                                                          strata, est.mu,
                                                          config.control_outcome.method != "nn");
                        }
                        break;
                    }
                    case EstimatorKind::dr: {
                        MatrixXd X_np_sel = gather_cols(data.np.design.X, sel_cols);
                        MatrixXd X_out = gather_cols(data.np.design.X, out_cols);
                        MatrixXd X_p_sel = data.p ? gather_cols(data.p->design.X, sel_cols)
                                                  : MatrixXd(0, X_np_sel.cols());
                        MatrixXd X_p_out = data.p ? gather_cols(data.p->design.X, out_cols)
                                                  : MatrixXd(0, X_out.cols());
                        const DrVarianceKind dk =
                            inf.bias_correction ? DrVarianceKind::bias_min
                            : config.control_selection.est_method == "gee"
                                ? DrVarianceKind::separate_gee
                                : DrVarianceKind::separate_mle;
                        OutcomeFit ofit = est.outcome;
                        if (inf.bias_correction) ofit.coefficients = est.dr->beta;
                        var = analytic_variance_dr(
                            y, w, X_np_sel, *ps, X_out, ofit, X_p_sel, X_p_out,
                            data.p ? data.p->design_weights : VectorXd(), strata, est.mu, dk,
                            !fixed_n,
                            fixed_n ? std::optional<double>(config.pop_size) : std::nullopt);
                        break;
                    }
                }
            }
            result.se = var.se;
            result.se_defined = true;
            auto ci = confidence_interval(result.mean, result.se, inf.ci_level);
            result.ci_lower = ci.first;
            result.ci_upper = ci.second;
            report.n_replacement_caveat = report.n_replacement_caveat || var.n_replacement_caveat;
            for (const auto& wmsg : var.warnings) report.warnings.push_back(wmsg);
        }
        report.results.push_back(result);

        // summaries and coefficients
        if (est.mi) {
            for (const auto& wmsg : est.mi->warnings) report.warnings.push_back(wmsg);
            if (est.mi->pred_np.size() > 0)
                report.pred_np_summaries.push_back(summarize(target, est.mi->pred_np));
            if (est.mi->pred_p.size() > 0)
                report.pred_p_summaries.push_back(summarize(target, est.mi->pred_p));
            else if (est.mi->y_star.size() > 0)
                report.pred_p_summaries.push_back(summarize(target, est.mi->y_star));
            if (est.has_outcome_fit) {
                VectorXd resid = data.np.outcome(target) - est.mi->pred_np;
                report.residual_summaries.push_back(summarize(target, resid));
            }
        }
        if (kind == EstimatorKind::dr && est.has_outcome_fit) {
            MatrixXd X_out = gather_cols(data.np.design.X, out_cols);
            OutcomeFit ofit = est.outcome;
            if (inf.bias_correction) ofit.coefficients = est.dr->beta;
            const VectorXd pred_np = predict_mean(ofit, X_out);
            report.residual_summaries.push_back(
                summarize(target, data.np.outcome(target) - pred_np));
            report.pred_np_summaries.push_back(summarize(target, pred_np));
            if (data.p) {
                report.pred_p_summaries.push_back(
                    summarize(target, predict_mean(ofit, gather_cols(data.p->design.X, out_cols))));
            }
        }
        if (est.has_outcome_fit) {
            std::vector<std::pair<std::string, double>> coefs;
            const auto names = names_for(data.np.design.column_names, out_cols);
            const VectorXd& b = inf.bias_correction && est.dr ? est.dr->beta
                                                              : est.outcome.coefficients;
            for (std::size_t j = 0; j < names.size(); ++j)
                coefs.emplace_back(names[j], b(static_cast<Eigen::Index>(j)));
            report.outcome_coefficients.emplace_back(target, std::move(coefs));
        }
        if (kind != EstimatorKind::mi && report.selection_coefficients.empty()) {
            const auto names = names_for(data.np.design.column_names, sel_cols);
            const VectorXd& g = inf.bias_correction && est.dr ? est.dr->gamma
                                                              : ps_for_target->fit.gamma;
            for (std::size_t j = 0; j < names.size(); ++j)
                report.selection_coefficients.emplace_back(names[j],
                                                           g(static_cast<Eigen::Index>(j)));
        }
        if (kind != EstimatorKind::mi && !report.has_weights) {
            if (inf.bias_correction && est.dr) {
                PsFit joint = ps_for_target->fit;
                joint.gamma = est.dr->gamma;
                MatrixXd X_np_sel = gather_cols(data.np.design.X, sel_cols);
                joint.scores_np = ps_predict(joint, X_np_sel, config.control_selection.clip);
                joint.ipw_weights = joint.scores_np.cwiseInverse();
                joint.nhat_np =
                    (data.np.case_weights.array() * joint.ipw_weights.array()).sum();
                if (data.p)
                    joint.scores_p = ps_predict(joint, gather_cols(data.p->design.X, sel_cols),
                                                config.control_selection.clip);
                report.weights = weight_summary(joint);
            } else {
                report.weights = weight_summary(ps_for_target->fit);
            }
            report.has_weights = true;
        }
    }

    // emit artifacts
    if (!config.out_dir.empty()) {
        std::filesystem::create_directories(config.out_dir);
        std::ofstream(config.out_dir + "/report.json") << render_json(report);
        std::ofstream(config.out_dir + "/summary.txt")
            << render_print(report) << "\n" << render_summary(report);
        std::ofstream(config.out_dir + "/comparison.csv") << render_comparison_csv(report);
    }
    return report;
}

namespace {

std::string fmt(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string fmt_size(double v) {
    if (std::abs(v - std::round(v)) < 1e-9) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.0f", v);
        return buf;
    }
    return fmt(v, 2);
}

std::string dist_line(const FiveNumberSummary& s) {
    return "min: " + fmt(s.min, 4) + "; mean: " + fmt(s.mean, 4) + "; median: " +
           fmt(s.median, 4) + "; max: " + fmt(s.max, 4);
}

const char* kRule = "----------------------------------------------------------------";

}  // namespace

std::string render_print(const EstimateReport& report) {
    std::ostringstream out;
    out << "A nonprob estimate\n";
    out << " - estimator type: " << report.estimator_type << "\n";
    out << " - method: " << report.method << "\n";
    out << " - auxiliary variables source: " << report.aux_source << "\n";
    out << " - vars selection: " << (report.vars_selection ? "true" : "false") << "\n";
    out << " - variance estimator: " << report.variance_method << "\n";
    out << " - population size fixed: " << (report.pop_size_fixed ? "true" : "false") << "\n";
    const bool multi = report.results.size() > 1;
    for (const auto& r : report.results) {
        const std::string tag = multi ? " [" + r.target + "]" : "";
        out << " - naive (uncorrected) estimator" << tag << ": " << fmt(r.naive, 4) << "\n";
        if (r.se_defined) {
            out << " - selected estimator" << tag << ": " << fmt(r.mean, 4) << " (se="
                << fmt(r.se, 4) << ", ci=(" << fmt(r.ci_lower, 4) << ", " << fmt(r.ci_upper, 4)
                << "))\n";
        } else {
            out << " - selected estimator" << tag << ": " << fmt(r.mean, 4) << "\n";
        }
    }
    return out.str();
}

std::string render_summary(const EstimateReport& report) {
    std::ostringstream out;
    out << "A nonprob summary\n";
    out << " - estimator type: " << report.estimator_type << "\n";
    out << " - nonprob sample size: " << report.n_nonprob << " ("
        << fmt(100.0 * static_cast<double>(report.n_nonprob) / report.pop_size, 1) << "%)\n";
    if (report.n_prob > 0)
        out << " - prob sample size: " << report.n_prob << " ("
            << fmt(100.0 * static_cast<double>(report.n_prob) / report.pop_size, 1) << "%)\n";
    out << " - population size: " << fmt_size(report.pop_size) << " (fixed: "
        << (report.pop_size_fixed ? "true" : "false") << ")\n";
    if (report.has_weights) {
        out << kRule << "\n";
        out << " - sum of IPW weights: " << fmt(report.weights.sum_ipw, 2) << "\n";
        out << " - distribution of IPW weights (nonprob sample):\n";
        out << "   - " << dist_line(report.weights.ipw) << "\n";
        out << " - distribution of IPW probabilities (nonprob sample):\n";
        out << "   - " << dist_line(report.weights.ps_np) << "\n";
        if (report.weights.has_prob_sample) {
            out << " - distribution of IPW probabilities (prob sample):\n";
            out << "   - " << dist_line(report.weights.ps_p) << "\n";
        }
    }
    if (!report.residual_summaries.empty() || !report.pred_np_summaries.empty()) {
        out << kRule << "\n";
        if (!report.residual_summaries.empty()) {
            out << " - distribution of outcome residuals:\n";
            for (const auto& s : report.residual_summaries)
                out << "   - " << s.name << ": " << dist_line(s.summary) << "\n";
        }
        if (!report.pred_np_summaries.empty()) {
            out << " - distribution of outcome predictions (nonprob sample):\n";
            for (const auto& s : report.pred_np_summaries)
                out << "   - " << s.name << ": " << dist_line(s.summary) << "\n";
        }
        if (!report.pred_p_summaries.empty()) {
            out << " - distribution of outcome predictions (prob sample):\n";
            for (const auto& s : report.pred_p_summaries)
                out << "   - " << s.name << ": " << dist_line(s.summary) << "\n";
        }
    }
    out << kRule << "\n";
    return out.str();
}

std::string render_json(const EstimateReport& report) {
    nlohmann::ordered_json j;
    j["estimator"] = {{"type", report.estimator_type},
                      {"method", report.method},
                      {"aux_source", report.aux_source},
                      {"vars_selection", report.vars_selection},
                      {"bias_correction", report.bias_correction},
                      {"variance", report.variance_method},
                      {"pop_size_fixed", report.pop_size_fixed}};
    j["sizes"] = {{"nonprob", report.n_nonprob},
                  {"prob", report.n_prob},
                  {"population", report.pop_size}};
    j["results"] = nlohmann::ordered_json::array();
    for (const auto& r : report.results) {
        nlohmann::ordered_json row;
        row["target"] = r.target;
        row["mean"] = r.mean;
        row["naive"] = r.naive;
        if (r.se_defined) {
            row["se"] = r.se;
            row["ci_lower"] = r.ci_lower;
            row["ci_upper"] = r.ci_upper;
        }
        j["results"].push_back(row);
    }
    auto dump_summary = [](const FiveNumberSummary& s) {
        return nlohmann::ordered_json{{"min", s.min},   {"q1", s.q1},   {"median", s.median},
                                      {"q3", s.q3},     {"max", s.max}, {"mean", s.mean}};
    };
    if (report.has_weights) {
        j["weights"] = {{"sum", report.weights.sum_ipw},
                        {"ipw_nonprob", dump_summary(report.weights.ipw)},
                        {"ps_nonprob", dump_summary(report.weights.ps_np)}};
        if (report.weights.has_prob_sample)
            j["weights"]["ps_prob"] = dump_summary(report.weights.ps_p);
    }
    auto dump_named = [&](const std::vector<NamedSummary>& v) {
        nlohmann::ordered_json obj;
        for (const auto& s : v) obj[s.name] = dump_summary(s.summary);
        return obj;
    };
    if (!report.residual_summaries.empty())
        j["outcome_residuals"] = dump_named(report.residual_summaries);
    if (!report.pred_np_summaries.empty())
        j["outcome_pred_nonprob"] = dump_named(report.pred_np_summaries);
    if (!report.pred_p_summaries.empty())
        j["outcome_pred_prob"] = dump_named(report.pred_p_summaries);
    if (!report.selection_coefficients.empty()) {
        nlohmann::ordered_json coefs;
        for (const auto& [name, value] : report.selection_coefficients) coefs[name] = value;
        j["selection_coefficients"] = coefs;
    }
    if (!report.outcome_coefficients.empty()) {
        nlohmann::ordered_json all;
        for (const auto& [target, coefs] : report.outcome_coefficients) {
            nlohmann::ordered_json obj;
            for (const auto& [name, value] : coefs) obj[name] = value;
            all[target] = obj;
        }
        j["outcome_coefficients"] = all;
    }
    if (report.boot_replicates > 0)
        j["bootstrap"] = {{"replicates", report.boot_replicates},
                          {"failures", report.boot_failures}};
    j["n_replacement_caveat"] = report.n_replacement_caveat;
    j["seed"] = report.seed;
    j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

std::string render_comparison_csv(const EstimateReport& report) {
    std::vector<EstimateRow> rows;
    for (const auto& r : report.results)
        rows.push_back({report.estimator_type, r.target, r.mean, r.se, r.ci_lower, r.ci_upper});
    const double naive = report.results.empty() ? 0.0 : report.results.front().naive;
    return comparison_csv(compare_estimates(std::move(rows), naive));
}

}  // namespace nonprob
