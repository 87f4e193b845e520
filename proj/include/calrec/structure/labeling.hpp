#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/structure/distance.hpp"

namespace calrec {

enum class Algorithm {
    kmeans,
    bisecting_kmeans,
    fuzzy_cmeans,
    agglomerative,
    dbscan,
    optics,
    gaussian_mixture,
    isolation_forest,
    local_outlier_factor,
    elliptic_envelope,
};

inline constexpr Algorithm all_algorithms[] = {
    Algorithm::kmeans,         Algorithm::bisecting_kmeans, Algorithm::fuzzy_cmeans,
    Algorithm::agglomerative,  Algorithm::dbscan,           Algorithm::optics,
    Algorithm::gaussian_mixture, Algorithm::isolation_forest, Algorithm::local_outlier_factor,
    Algorithm::elliptic_envelope,
};

inline std::string_view algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::kmeans: return "kmeans";
        case Algorithm::bisecting_kmeans: return "bisecting_kmeans";
        case Algorithm::fuzzy_cmeans: return "fuzzy_cmeans";
        case Algorithm::agglomerative: return "agglomerative";
        case Algorithm::dbscan: return "dbscan";
        case Algorithm::optics: return "optics";
        case Algorithm::gaussian_mixture: return "gaussian_mixture";
        case Algorithm::isolation_forest: return "isolation_forest";
        case Algorithm::local_outlier_factor: return "lof";
        case Algorithm::elliptic_envelope: return "elliptic_envelope";
    }
    return "?";
}

inline Algorithm parse_algorithm(std::string_view name) {
    for (Algorithm a : all_algorithms)
        if (algorithm_name(a) == name) return a;
    throw ConfigError("unknown structure algorithm '" + std::string(name) + "'");
}

inline bool is_outlier_detector(Algorithm a) {
    return a == Algorithm::isolation_forest || a == Algorithm::local_outlier_factor ||
           a == Algorithm::elliptic_envelope;
}

/// Hyperparameters of one structure learner; only the fields the algorithm
/// uses are set.
struct AlgorithmConfig {
    std::optional<int> n_clusters;
    std::optional<int> n_components;
    std::optional<double> eps;
    std::optional<int> min_samples;
    std::optional<Metric> metric;
    std::optional<int> n_estimators;
    std::optional<int> n_neighbors;
    std::optional<double> nu;

    [[nodiscard]] std::vector<std::pair<std::string, std::string>> params() const {
        std::vector<std::pair<std::string, std::string>> out;
        if (n_clusters) out.emplace_back("n_clusters", std::to_string(*n_clusters));
        if (n_components) out.emplace_back("n_components", std::to_string(*n_components));
        if (eps) out.emplace_back("eps", format_double(*eps));
        if (min_samples) out.emplace_back("min_samples", std::to_string(*min_samples));
        if (metric) out.emplace_back("metric", std::string(metric_name(*metric)));
        if (n_estimators) out.emplace_back("n_estimators", std::to_string(*n_estimators));
        if (n_neighbors) out.emplace_back("n_neighbors", std::to_string(*n_neighbors));
        if (nu) out.emplace_back("nu", format_double(*nu));
        return out;
    }

    [[nodiscard]] std::string describe() const {
        std::string s;
        for (const auto& [k, v] : params()) s += (s.empty() ? "" : " ") + k + "=" + v;
        return s;
    }

    friend bool operator==(const AlgorithmConfig&, const AlgorithmConfig&) = default;
};

/// Group label per user. Clusterers emit 0..n_groups-1 (density methods may
/// add -1 for noise); outlier detectors emit 0 = inlier, 1 = outlier.
struct Labeling {
    std::vector<UserId> users;
    std::vector<int> labels;
    int n_groups = 0;
    Algorithm algorithm = Algorithm::kmeans;
    AlgorithmConfig config;

    [[nodiscard]] bool outlier_labels() const { return is_outlier_detector(algorithm); }
};

inline int count_groups(const std::vector<int>& labels) {
    std::set<int> ids;
    for (int l : labels)
        if (l >= 0) ids.insert(l);
    return static_cast<int>(ids.size());
}

/// Renumbers non-noise labels 0, 1, ... in order of first appearance.
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
    std::map<int, int> remap;
    std::vector<int> out;
    out.reserve(labels.size());
    for (int l : labels) {
        if (l < 0) {
            out.push_back(-1);
            continue;
        }
        auto [it, _] = remap.emplace(l, static_cast<int>(remap.size()));
        out.push_back(it->second);
    }
    return out;
}

inline Labeling make_labeling(const std::vector<UserId>& users, std::vector<int> labels, Algorithm algorithm,
                              AlgorithmConfig config) {
    if (users.size() != labels.size()) throw DataError("labeling: users and labels differ in length");
    if (!is_outlier_detector(algorithm)) labels = canonical_labels(labels);
    Labeling out{users, std::move(labels), 0, algorithm, std::move(config)};
    out.n_groups = count_groups(out.labels);
    return out;
}

}  // namespace calrec
