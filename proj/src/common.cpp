#include "nonprob/common.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace nonprob {

double quantile_type7(std::vector<double> v, double p) {
    if (v.empty()) throw NumericError("quantile of empty vector");
    std::sort(v.begin(), v.end());
    if (p <= 0.0) return v.front();
    if (p >= 1.0) return v.back();
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

FiveNumberSummary five_number_summary(const VectorXd& v) {
    if (v.size() == 0) throw NumericError("summary of empty vector");
    std::vector<double> s(v.data(), v.data() + v.size());
    std::sort(s.begin(), s.end());
    FiveNumberSummary out;
    out.min = s.front();
    out.max = s.back();
    out.q1 = quantile_type7(s, 0.25);
    out.median = quantile_type7(s, 0.5);
    out.q3 = quantile_type7(s, 0.75);
    out.mean = v.mean();
    return out;
}

double weighted_mean(const VectorXd& y, const VectorXd& w) {
    const double sw = w.sum();
    if (sw <= 0.0) throw NumericError("weighted mean with non-positive weight total");
    return y.dot(w) / sw;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

double norm_quantile(double p) {
    static const boost::math::normal_distribution<double> dist(0.0, 1.0);
    return boost::math::quantile(dist, p);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace nonprob
