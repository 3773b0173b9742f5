#include "nonprob/diagnostics.hpp"

#include "nonprob/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace nonprob {

VectorXd BalanceReport::rounded() const {
    const double f = std::pow(10.0, digits);
    VectorXd out = difference;
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = std::round(out(i) * f) / f;
    return out;
}

BalanceReport check_balance(const PsFit& fit, const MatrixXd& X_np, const VectorXd& w_np,
                            const std::vector<std::string>& design_columns,
                            const VectorXd& reference_totals,
                            const std::vector<std::string>& columns, int digits) {
    if (static_cast<Eigen::Index>(design_columns.size()) != X_np.cols())
        throw SchemaError("design column names do not match the design matrix");
    if (reference_totals.size() != X_np.cols())
        throw SchemaError("reference totals do not match the design matrix");

    std::vector<Eigen::Index> keep;
    if (columns.empty()) {
        for (Eigen::Index j = 0; j < X_np.cols(); ++j) keep.push_back(j);
    } else {
        for (const auto& name : columns) {
            auto it = std::find(design_columns.begin(), design_columns.end(), name);
            if (it == design_columns.end())
                throw SchemaError("unknown column in balance request: " + name);
            keep.push_back(static_cast<Eigen::Index>(it - design_columns.begin()));
        }
    }

    const VectorXd weighted = X_np.transpose() * (w_np.array() * fit.ipw_weights.array()).matrix();

    BalanceReport report;
    report.h = fit.h;
    report.digits = digits;
    report.difference.resize(static_cast<Eigen::Index>(keep.size()));
    report.relative.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const Eigen::Index j = keep[i];
        report.columns.push_back(design_columns[static_cast<std::size_t>(j)]);
        const double diff = weighted(j) - reference_totals(j);
        report.difference(static_cast<Eigen::Index>(i)) = diff;
        report.relative(static_cast<Eigen::Index>(i)) =
            diff / std::max(1.0, std::abs(reference_totals(j)));
    }
    return report;
}

WeightSummary weight_summary(const PsFit& fit) {
    WeightSummary s;
    s.sum_ipw = fit.nhat_np;
    s.ipw = five_number_summary(fit.ipw_weights);
    s.ps_np = five_number_summary(fit.scores_np);
    if (fit.scores_p.size() > 0) {
        s.ps_p = five_number_summary(fit.scores_p);
        s.has_prob_sample = true;
    }
    return s;
}

ComparisonTable compare_estimates(std::vector<EstimateRow> rows, double naive) {
    std::stable_sort(rows.begin(), rows.end(), [](const EstimateRow& a, const EstimateRow& b) {
        if (a.mean != b.mean) return a.mean < b.mean;
        return a.label < b.label;
    });
    return {std::move(rows), naive};
}

std::string comparison_csv(const ComparisonTable& table) {
    std::ostringstream out;
    out << "estimator,target,mean,SE,ci_lower,ci_upper,delta_naive\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    for (const auto& r : table.rows) {
        out << r.label << ',' << r.target << ',' << fmt(r.mean) << ',' << fmt(r.se) << ','
            << fmt(r.ci_lower) << ',' << fmt(r.ci_upper) << ',' << fmt(r.mean - table.naive)
            << '\n';
    }
    return out.str();
}

ComparisonTable parse_comparison_csv(const std::string& text) {
    const RawTable raw = read_csv_text(text, "comparison");
    ComparisonTable table;
    const auto& labels = raw.column("estimator");
    const auto& targets = raw.column("target");
    const auto& means = raw.column("mean");
    const auto& ses = raw.column("SE");
    const auto& los = raw.column("ci_lower");
    const auto& his = raw.column("ci_upper");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        EstimateRow row;
        row.label = labels[i];
        row.target = targets[i];
        row.mean = std::stod(means[i]);
        row.se = std::stod(ses[i]);
        row.ci_lower = std::stod(los[i]);
        row.ci_upper = std::stod(his[i]);
        table.rows.push_back(row);
    }
    return table;
}

}  // namespace nonprob
