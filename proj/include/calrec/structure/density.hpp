#pragma once

#include <algorithm>
#include <deque>
#include <limits>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/distribution.hpp"
#include "calrec/structure/distance.hpp"
#include "calrec/structure/labeling.hpp"

namespace calrec {

/// DBSCAN over a precomputed distance matrix. Neighbourhoods are closed balls
/// (d <= eps) and include the point itself.
inline std::vector<int> dbscan(const DistanceMatrix& D, double eps, int min_samples) {
    if (!(eps > 0.0) || min_samples < 1) throw ConfigError("dbscan: need eps > 0 and min_samples >= 1");
    const std::size_t n = D.size();
    std::vector<std::vector<std::size_t>> nbrs(n);
    std::vector<bool> core(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            if (D(i, j) <= eps) nbrs[i].push_back(j);
        core[i] = static_cast<int>(nbrs[i].size()) >= min_samples;
    }
    std::vector<int> labels(n, -1);
    int next = 0;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (!core[seed] || labels[seed] != -1) continue;
        const int id = next++;
        std::deque<std::size_t> queue{seed};
        labels[seed] = id;
        while (!queue.empty()) {
            const auto p = queue.front();
            queue.pop_front();
            for (auto q : nbrs[p]) {
                if (labels[q] != -1) continue;
                labels[q] = id;
                if (core[q]) queue.push_back(q);
            }
        }
    }
    return labels;
}

struct OpticsResult {
    std::vector<std::size_t> ordering;
    std::vector<double> reachability;    // +inf where undefined
    std::vector<double> core_distances;  // +inf for points that can never be core
};

/// OPTICS ordering with an unbounded generating radius. The core distance is
/// the distance to the min_samples-th nearest point, the point itself included.
inline OpticsResult optics_order(const DistanceMatrix& D, int min_samples) {
    if (min_samples < 1) throw ConfigError("optics: min_samples must be >= 1");
    const std::size_t n = D.size();
    const double inf = std::numeric_limits<double>::infinity();
    OpticsResult r;
    r.reachability.assign(n, inf);
    r.core_distances.assign(n, inf);
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<std::size_t>(min_samples) > n) break;
        std::vector<double> row(D.row(i).begin(), D.row(i).end());
        std::nth_element(row.begin(), row.begin() + (min_samples - 1), row.end());
        r.core_distances[i] = row[static_cast<std::size_t>(min_samples - 1)];
    }
    std::vector<bool> processed(n, false);
    for (std::size_t step = 0; step < n; ++step) {
        std::size_t point = n;
        for (std::size_t i = 0; i < n; ++i)
            if (!processed[i] && (point == n || r.reachability[i] < r.reachability[point])) point = i;
        processed[point] = true;
        r.ordering.push_back(point);
        if (r.core_distances[point] == inf) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (processed[j]) continue;
            const double reach = std::max(r.core_distances[point], D(point, j));
            if (reach < r.reachability[j]) r.reachability[j] = reach;
        }
    }
    return r;
}

/// DBSCAN-equivalent extraction from an OPTICS ordering at radius eps.
inline std::vector<int> optics_eps_cut(const OpticsResult& r, double eps) {
    const std::size_t n = r.ordering.size();
    std::vector<int> labels(n, -1);
    int current = -1;
    for (auto p : r.ordering) {
        const bool far_reach = r.reachability[p] > eps;
        const bool near_core = r.core_distances[p] <= eps;
        if (far_reach && near_core) ++current;
        labels[p] = current;
        if (far_reach && !near_core) labels[p] = -1;
    }
    return labels;
}

enum class DensityMethod { dbscan, optics };

inline Labeling fit_density(DensityMethod method, double eps, int min_samples, const DistanceMatrix& D,
                            const std::vector<UserId>& users) {
    if (D.size() != users.size()) throw DataError("fit_density: distance matrix and users differ in size");
    if (!(eps > 0.0) || min_samples < 1) throw ConfigError("fit_density: need eps > 0 and min_samples >= 1");
    AlgorithmConfig cfg;
    cfg.eps = eps;
    cfg.min_samples = min_samples;
    cfg.metric = D.metric();
    if (method == DensityMethod::dbscan) return make_labeling(users, dbscan(D, eps, min_samples), Algorithm::dbscan, cfg);
    return make_labeling(users, optics_eps_cut(optics_order(D, min_samples), eps), Algorithm::optics, cfg);
}

inline Labeling fit_density(DensityMethod method, double eps, int min_samples, Metric metric, const DistributionMatrix& X) {
    return fit_density(method, eps, min_samples, pairwise_distances(X, metric), X.rows);
}

}  // namespace calrec
