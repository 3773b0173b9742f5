#pragma once

#include "nonprob/common.hpp"

#include <vector>

namespace nonprob {

// k nearest donors per query row. Distances are non-decreasing within each
// query; donors whose distances differ by at most eps count as tied and the
// lowest donor index wins.
struct MatchResult {
    std::vector<std::vector<int>> indices;
    std::vector<std::vector<double>> distances;
    double eps = 1e-9;
    int k = 0;
};

// kd-tree search, Euclidean metric.
MatchResult knn_query(const MatrixXd& donors, const MatrixXd& queries, int k, double eps = 1e-9);

// Exact O(donors x queries) scan used as the oracle for knn_query.
MatchResult brute_force_knn(const MatrixXd& donors, const MatrixXd& queries, int k,
                            double eps = 1e-9);

}  // namespace nonprob
