#pragma once

#include <limits>
#include <numeric>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/distribution.hpp"
#include "calrec/structure/distance.hpp"
#include "calrec/structure/labeling.hpp"

namespace calrec {

/// Average-linkage merging on euclidean distances until k clusters remain.
/// Among equally close pairs the one with the smallest (i, j) merges first.
inline std::vector<int> average_linkage(const Matrix& X, int k) {
    const auto n = static_cast<std::size_t>(X.rows());
    if (k < 1 || static_cast<std::size_t>(k) > n) throw DataError("agglomerative: need 1 <= k <= n");
    const double inf = std::numeric_limits<double>::infinity();

    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            d[i * n + j] = d[j * n + i] = (X.row(static_cast<Eigen::Index>(i)) - X.row(static_cast<Eigen::Index>(j))).norm();

    std::vector<bool> alive(n, true);
    std::vector<std::size_t> size(n, 1), parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});

    // nearest live partner with a larger index, per row
    std::vector<std::size_t> nn(n, n);
    std::vector<double> nn_d(n, inf);
    auto refresh = [&](std::size_t r) {
        nn[r] = n;
        nn_d[r] = inf;
        for (std::size_t c = r + 1; c < n; ++c)
            if (alive[c] && d[r * n + c] < nn_d[r]) {
                nn_d[r] = d[r * n + c];
                nn[r] = c;
            }
    };
    for (std::size_t r = 0; r < n; ++r) refresh(r);

    for (std::size_t clusters = n; clusters > static_cast<std::size_t>(k); --clusters) {
        std::size_t a = n;
        for (std::size_t r = 0; r < n; ++r)
            if (alive[r] && nn[r] < n && (a == n || nn_d[r] < nn_d[a])) a = r;
        const std::size_t b = nn[a];

        // Lance-Williams update for average linkage; b folds into a
        for (std::size_t c = 0; c < n; ++c) {
            if (!alive[c] || c == a || c == b) continue;
            const double v = (static_cast<double>(size[a]) * d[a * n + c] + static_cast<double>(size[b]) * d[b * n + c]) /
                             static_cast<double>(size[a] + size[b]);
            d[a * n + c] = d[c * n + a] = v;
        }
        alive[b] = false;
        size[a] += size[b];
        parent[b] = a;

        refresh(a);
        for (std::size_t r = 0; r < n; ++r) {
            if (!alive[r] || r == a) continue;
            if (r < a) {
                if (nn[r] == a || nn[r] == b) refresh(r);
                else if (d[r * n + a] < nn_d[r] || (d[r * n + a] == nn_d[r] && a < nn[r])) {
                    nn_d[r] = d[r * n + a];
                    nn[r] = a;
                }
            } else if (r < b && nn[r] == b) {
                refresh(r);
            }
        }
    }

    auto root = [&](std::size_t i) {
        while (parent[i] != i) i = parent[i];
        return i;
    };
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(root(i));
    return canonical_labels(labels);
}

inline Labeling fit_agglomerative(int k, const DistributionMatrix& X) {
    AlgorithmConfig cfg;
    cfg.n_clusters = k;
    return make_labeling(X.rows, average_linkage(X.data, k), Algorithm::agglomerative, cfg);
}

}  // namespace calrec
