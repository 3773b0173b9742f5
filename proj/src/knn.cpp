#include "nonprob/knn.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

namespace nonprob {

namespace {

void check_inputs(const MatrixXd& donors, const MatrixXd& queries, int k) {
    if (donors.rows() == 0) throw SchemaError("empty donor set");
    if (k <= 0) throw SchemaError("k must be positive");
    if (k > donors.rows())
        throw SchemaError("k = " + std::to_string(k) + " exceeds the number of donors (" +
                          std::to_string(donors.rows()) + ")");
    if (donors.cols() != queries.cols())
        throw SchemaError("donors and queries have different dimensionality");
}

// Shared metric so both search paths produce bit-identical distances.
double dist2(const MatrixXd& a, Eigen::Index ai, const MatrixXd& b, Eigen::Index bi) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < a.cols(); ++d) {
        const double diff = a(ai, d) - b(bi, d);
        s += diff * diff;
    }
    return s;
}

struct KdNode {
    int axis = -1;          // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // index range for leaves
};

class KdTree {
public:
    explicit KdTree(const MatrixXd& points) : pts_(points), order_(points.rows()) {
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        root_ = build(0, static_cast<int>(order_.size()));
    }

    // Best-k under exact (distance, index) ordering.
    void search(const MatrixXd& queries, Eigen::Index qi, int k,
                std::vector<std::pair<double, int>>& heap) const {
        heap.clear();
        search_node(root_, queries, qi, k, heap);
    }

    // Every donor with squared distance <= r2.
    void within(const MatrixXd& queries, Eigen::Index qi, double r2,
                std::vector<std::pair<double, int>>& out) const {
        out.clear();
        within_node(root_, queries, qi, r2, out);
    }

private:
    static constexpr int kLeafSize = 16;

    int build(int begin, int end) {
        KdNode node;
        node.begin = begin;
        node.end = end;
        if (end - begin > kLeafSize) {
            // widest-spread axis keeps the tree useful on degenerate columns
            int axis = 0;
            double best_spread = -1.0;
            for (Eigen::Index d = 0; d < pts_.cols(); ++d) {
                double lo = pts_(order_[static_cast<std::size_t>(begin)], d);
                double hi = lo;
                for (int i = begin + 1; i < end; ++i) {
                    const double v = pts_(order_[static_cast<std::size_t>(i)], d);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                if (hi - lo > best_spread) {
                    best_spread = hi - lo;
                    axis = static_cast<int>(d);
                }
            }
            if (best_spread > 0.0) {
                const int mid = begin + (end - begin) / 2;
                std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                                 [&](int a, int b) {
                                     const double va = pts_(a, axis), vb = pts_(b, axis);
                                     return va < vb || (va == vb && a < b);
                                 });
                node.axis = axis;
                node.split = pts_(order_[static_cast<std::size_t>(mid)], axis);
                nodes_.push_back(node);
                const int id = static_cast<int>(nodes_.size()) - 1;
                const int left = build(begin, mid);
                const int right = build(mid, end);
                nodes_[static_cast<std::size_t>(id)].left = left;
                nodes_[static_cast<std::size_t>(id)].right = right;
                return id;
            }
        }
        nodes_.push_back(node);  // leaf (small range or zero spread)
        return static_cast<int>(nodes_.size()) - 1;
    }

    static bool better(const std::pair<double, int>& a, const std::pair<double, int>& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
    }

    // max-heap under `better`, so the worst kept candidate sits at the front
    void consider(int donor, const MatrixXd& queries, Eigen::Index qi, int k,
                  std::vector<std::pair<double, int>>& heap) const {
        const std::pair<double, int> cand{dist2(queries, qi, pts_, donor), donor};
        if (static_cast<int>(heap.size()) < k) {
            heap.push_back(cand);
            std::push_heap(heap.begin(), heap.end(), better);
        } else if (better(cand, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), better);
            heap.back() = cand;
            std::push_heap(heap.begin(), heap.end(), better);
        }
    }

    void search_node(int id, const MatrixXd& queries, Eigen::Index qi, int k,
                     std::vector<std::pair<double, int>>& heap) const {
        const KdNode& node = nodes_[static_cast<std::size_t>(id)];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i)
                consider(order_[static_cast<std::size_t>(i)], queries, qi, k, heap);
            return;
        }
        const double delta = queries(qi, node.axis) - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search_node(near, queries, qi, k, heap);
        if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().first)
            search_node(far, queries, qi, k, heap);
    }

    void within_node(int id, const MatrixXd& queries, Eigen::Index qi, double r2,
                     std::vector<std::pair<double, int>>& out) const {
        const KdNode& node = nodes_[static_cast<std::size_t>(id)];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int donor = order_[static_cast<std::size_t>(i)];
                const double d2 = dist2(queries, qi, pts_, donor);
                if (d2 <= r2) out.emplace_back(d2, donor);
            }
            return;
        }
        const double delta = queries(qi, node.axis) - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        within_node(near, queries, qi, r2, out);
        if (delta * delta <= r2) within_node(far, queries, qi, r2, out);
    }

    const MatrixXd& pts_;
    std::vector<int> order_;
    std::vector<KdNode> nodes_;
    int root_ = -1;
};

}  // namespace

MatchResult knn_query(const MatrixXd& donors, const MatrixXd& queries, int k, double eps) {
    check_inputs(donors, queries, k);
    const KdTree tree(donors);
    MatchResult result;
    result.eps = eps;
    result.k = k;
    result.indices.resize(static_cast<std::size_t>(queries.rows()));
    result.distances.resize(static_cast<std::size_t>(queries.rows()));

    std::vector<std::pair<double, int>> heap, pool;
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        tree.search(queries, q, k, heap);
        double dk = 0.0;
        for (const auto& [d2, idx] : heap) dk = std::max(dk, std::sqrt(d2));

        const double radius = dk + eps;
        tree.within(queries, q, radius * radius, pool);

        std::vector<std::pair<double, int>> certain;  // strictly inside the tie band
        std::vector<int> tied;
        for (const auto& [d2, idx] : pool) {
            const double d = std::sqrt(d2);
            if (d < dk - eps)
                certain.emplace_back(d, idx);
            else
                tied.push_back(idx);
        }
        std::sort(tied.begin(), tied.end());
        const std::size_t need = static_cast<std::size_t>(k) - certain.size();
        for (std::size_t t = 0; t < need; ++t) {
            const int idx = tied[t];
            certain.emplace_back(std::sqrt(dist2(queries, q, donors, idx)), idx);
        }
        std::sort(certain.begin(), certain.end());

        auto& idx_out = result.indices[static_cast<std::size_t>(q)];
        auto& dist_out = result.distances[static_cast<std::size_t>(q)];
        for (const auto& [d, idx] : certain) {
            idx_out.push_back(idx);
            dist_out.push_back(d);
        }
    }
    return result;
}

MatchResult brute_force_knn(const MatrixXd& donors, const MatrixXd& queries, int k, double eps) {
    check_inputs(donors, queries, k);
    MatchResult result;
    result.eps = eps;
    result.k = k;
    result.indices.resize(static_cast<std::size_t>(queries.rows()));
    result.distances.resize(static_cast<std::size_t>(queries.rows()));

    const auto n = static_cast<std::size_t>(donors.rows());
    std::vector<std::pair<double, int>> all(n);
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        for (std::size_t j = 0; j < n; ++j)
            all[j] = {std::sqrt(dist2(queries, q, donors, static_cast<Eigen::Index>(j))),
                      static_cast<int>(j)};
        std::sort(all.begin(), all.end());
        const double dk = all[static_cast<std::size_t>(k) - 1].first;

        std::vector<std::pair<double, int>> selected;
        std::vector<std::pair<double, int>> tied;
        for (const auto& cand : all) {
            if (cand.first > dk + eps) break;
            if (cand.first < dk - eps)
                selected.push_back(cand);
            else
                tied.push_back(cand);
        }
        std::sort(tied.begin(), tied.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
        const std::size_t need = static_cast<std::size_t>(k) - selected.size();
        selected.insert(selected.end(), tied.begin(), tied.begin() + static_cast<long>(need));
        std::sort(selected.begin(), selected.end());

        auto& idx_out = result.indices[static_cast<std::size_t>(q)];
        auto& dist_out = result.distances[static_cast<std::size_t>(q)];
        for (const auto& [d, idx] : selected) {
            idx_out.push_back(idx);
            dist_out.push_back(d);
        }
    }
    return result;
}

}  // namespace nonprob
