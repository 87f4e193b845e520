#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/csv.hpp"
#include "calrec/distribution.hpp"
#include "calrec/metrics.hpp"
#include "calrec/structure/agglomerative.hpp"
#include "calrec/structure/density.hpp"
#include "calrec/structure/distance.hpp"
#include "calrec/structure/labeling.hpp"
#include "calrec/structure/mixture.hpp"
#include "calrec/structure/outlier.hpp"
#include "calrec/structure/partitional.hpp"

namespace calrec {

inline const std::vector<int>& primes_to_97() {
    static const std::vector<int> p{2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                    43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};
    return p;
}

inline std::vector<int> one_and_primes() {
    std::vector<int> v{1};
    v.insert(v.end(), primes_to_97().begin(), primes_to_97().end());
    return v;
}

/// Candidate values per hyperparameter.
struct SearchSpace {
    std::vector<int> n_clusters;
    std::vector<int> n_components;
    std::vector<double> eps;
    std::vector<int> min_samples;
    std::vector<Metric> metrics;
    std::vector<int> n_estimators;
    std::vector<int> n_neighbors;
    std::vector<double> nu;

    /// The full grids: primes 2..97 (with 1 prepended where a single
    /// component/estimator/neighbour is meaningful), eps 0.05..0.55, all eleven
    /// metric names, nu in {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}.
    static SearchSpace full() {
        SearchSpace s;
        s.n_clusters = primes_to_97();
        s.n_components = one_and_primes();
        for (int i = 1; i <= 11; ++i) s.eps.push_back(i * 0.05);
        s.min_samples = primes_to_97();
        s.metrics.assign(std::begin(all_metrics), std::end(all_metrics));
        s.n_estimators = one_and_primes();
        s.n_neighbors = one_and_primes();
        s.nu = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
        return s;
    }
};

/// Configurations for `algorithm` in enumeration order (ties in the search
/// resolve to the earliest).
inline std::vector<AlgorithmConfig> enumerate_configs(Algorithm algorithm, const SearchSpace& space) {
    std::vector<AlgorithmConfig> out;
    auto add = [&](auto&& set) {
        AlgorithmConfig c;
        set(c);
        out.push_back(c);
    };
    switch (algorithm) {
        case Algorithm::kmeans:
        case Algorithm::bisecting_kmeans:
        case Algorithm::fuzzy_cmeans:
        case Algorithm::agglomerative:
            for (int k : space.n_clusters) add([&](auto& c) { c.n_clusters = k; });
            break;
        case Algorithm::gaussian_mixture:
            for (int k : space.n_components) add([&](auto& c) { c.n_components = k; });
            break;
        case Algorithm::dbscan:
        case Algorithm::optics:
            for (Metric m : space.metrics)
                for (double e : space.eps)
                    for (int ms : space.min_samples)
                        add([&](auto& c) {
                            c.eps = e;
                            c.min_samples = ms;
                            c.metric = m;
                        });
            break;
        case Algorithm::isolation_forest:
            for (int t : space.n_estimators) add([&](auto& c) { c.n_estimators = t; });
            break;
        case Algorithm::local_outlier_factor:
            for (Metric m : space.metrics)
                for (int k : space.n_neighbors)
                    add([&](auto& c) {
                        c.metric = m;
                        c.n_neighbors = k;
                    });
            break;
        case Algorithm::elliptic_envelope:
            for (double v : space.nu) add([&](auto& c) { c.nu = v; });
            break;
    }
    return out;
}

/// Distance matrices of one data matrix. Euclidean is kept for the lifetime
/// of the cache; other metrics are computed on demand and only the most recent
/// one is retained, which suits the metric-major configuration order.
class DistanceCache {
public:
    explicit DistanceCache(const Matrix& X) : X_(X) {}

    const DistanceMatrix& get(Metric m) {
        if (m == Metric::euclidean) {
            if (!euclidean_) euclidean_ = pairwise_distances(X_, m);
            return *euclidean_;
        }
        if (!other_ || other_->metric() != m) other_ = pairwise_distances(X_, m);
        return *other_;
    }

private:
    const Matrix& X_;
    std::optional<DistanceMatrix> euclidean_;
    std::optional<DistanceMatrix> other_;
};

namespace detail {

template <typename T>
const T& need(const std::optional<T>& v, const char* name, Algorithm a) {
    if (!v) throw ConfigError(std::string(algorithm_name(a)) + ": missing parameter " + name);
    return *v;
}

}  // namespace detail

/// Fits one configured learner.
inline Labeling fit_structure(Algorithm algorithm, const AlgorithmConfig& cfg, const DistributionMatrix& X,
                              std::uint64_t seed, DistanceCache* cache = nullptr) {
    std::optional<DistanceCache> local;
    if (!cache) cache = &local.emplace(X.data);
    using detail::need;
    switch (algorithm) {
        case Algorithm::kmeans:
            return fit_partitional(PartitionalMethod::kmeans, need(cfg.n_clusters, "n_clusters", algorithm), X, seed);
        case Algorithm::bisecting_kmeans:
            return fit_partitional(PartitionalMethod::bisecting, need(cfg.n_clusters, "n_clusters", algorithm), X, seed);
        case Algorithm::fuzzy_cmeans:
            return fit_partitional(PartitionalMethod::fuzzy, need(cfg.n_clusters, "n_clusters", algorithm), X, seed);
        case Algorithm::agglomerative: {
            const int k = need(cfg.n_clusters, "n_clusters", algorithm);
            if (k > static_cast<int>(X.n_users())) throw DataError("agglomerative: k > n");
            return fit_agglomerative(k, X);
        }
        case Algorithm::dbscan:
        case Algorithm::optics: {
            const Metric m = need(cfg.metric, "metric", algorithm);
            return fit_density(algorithm == Algorithm::dbscan ? DensityMethod::dbscan : DensityMethod::optics,
                               need(cfg.eps, "eps", algorithm), need(cfg.min_samples, "min_samples", algorithm),
                               cache->get(m), X.rows);
        }
        case Algorithm::gaussian_mixture:
            return fit_gaussian_mixture(need(cfg.n_components, "n_components", algorithm), X, seed);
        case Algorithm::isolation_forest: {
            OutlierParams p;
            p.n_estimators = need(cfg.n_estimators, "n_estimators", algorithm);
            return fit_outlier(OutlierMethod::iforest, p, X, seed);
        }
        case Algorithm::local_outlier_factor: {
            const Metric m = need(cfg.metric, "metric", algorithm);
            const int k = need(cfg.n_neighbors, "n_neighbors", algorithm);
            AlgorithmConfig c;
            c.n_neighbors = k;
            c.metric = m;
            const auto lof = local_outlier_factor(cache->get(m), k);
            std::vector<int> labels(lof.size());
            for (std::size_t i = 0; i < lof.size(); ++i) labels[i] = lof[i] > OutlierParams{}.lof_threshold;
            return make_labeling(X.rows, std::move(labels), algorithm, c);
        }
        case Algorithm::elliptic_envelope: {
            OutlierParams p;
            p.nu = need(cfg.nu, "nu", algorithm);
            return fit_outlier(OutlierMethod::envelope, p, X, seed);
        }
    }
    throw ConfigError("fit_structure: unknown algorithm");
}

/// Mean silhouette of a labeling, or -1 when fewer than two groups exist.
inline double silhouette_or_floor(const DistanceMatrix& D, const std::vector<int>& labels) {
    std::set<int> groups(labels.begin(), labels.end());
    if (groups.size() < 2) return -1.0;
    return silhouette(D, labels);
}

struct GridResult {
    AlgorithmConfig config;
    std::size_t config_index = 0;
    std::uint64_t seed = 0;  // seed the chosen configuration was fitted with
    Labeling labeling;
    double silhouette = -1.0;
    std::size_t evaluated = 0;
    std::size_t failed = 0;
};

inline std::uint64_t config_seed(std::uint64_t seed, std::size_t index) {
    return derive_seed(seed, {0x5eed, static_cast<std::uint64_t>(index)});
}

/// Fits every configuration and keeps the one with the highest mean
/// (euclidean) silhouette. Configurations that fail or yield fewer than two
/// groups score -1. The earliest configuration wins ties.
inline GridResult grid_search(Algorithm algorithm, const SearchSpace& space, const DistributionMatrix& X,
                              std::uint64_t seed) {
    const auto configs = enumerate_configs(algorithm, space);
    if (configs.empty())
        throw ConfigError("grid_search: empty search space for " + std::string(algorithm_name(algorithm)));
    DistanceCache cache(X.data);
    const DistanceMatrix& euclid = cache.get(Metric::euclidean);

    std::optional<GridResult> best;
    std::size_t failed = 0;
    for (std::size_t c = 0; c < configs.size(); ++c) {
        const auto s = config_seed(seed, c);
        Labeling lab;
        try {
            lab = fit_structure(algorithm, configs[c], X, s, &cache);
        } catch (const DataError&) {
            ++failed;
            continue;
        }
        const double score = silhouette_or_floor(euclid, lab.labels);
        if (!best || score > best->silhouette) best = GridResult{configs[c], c, s, std::move(lab), score, 0, 0};
    }
    if (!best)
        throw DataError("grid_search: every configuration of " + std::string(algorithm_name(algorithm)) + " failed");
    if (best->silhouette <= -1.0)
        warn("grid_search: every configuration of " + std::string(algorithm_name(algorithm)) +
             " is degenerate; returning " + best->config.describe());
    best->evaluated = configs.size();
    best->failed = failed;
    return *best;
}

// ---------------------------------------------------------------------------
// Files: labelings as `user_id,label`; chosen configurations as
// `algorithm,parameter,value,silhouette`.

inline void save_labeling_csv(const Labeling& lab, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "user_id" << "label";
    w.end();
    for (std::size_t i = 0; i < lab.users.size(); ++i) {
        w << lab.users[i] << lab.labels[i];
        w.end();
    }
}

inline Labeling load_labeling_csv(const std::filesystem::path& path, Algorithm algorithm, AlgorithmConfig config = {}) {
    auto in = csv::open_input(path);
    std::string line;
    std::getline(in, line);
    std::vector<UserId> users;
    std::vector<int> labels;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line);
        UserId u = 0;
        int l = 0;
        if (f.size() != 2 || !parse_int(f[0], u) || !parse_int(f[1], l)) detail::parse_fail(path, row, "expected user_id,label");
        users.push_back(u);
        labels.push_back(l);
    }
    return make_labeling(users, std::move(labels), algorithm, std::move(config));
}

struct ChosenConfig {
    Algorithm algorithm;
    AlgorithmConfig config;
    double silhouette = -1.0;
};

inline void save_chosen_configs_csv(const std::vector<ChosenConfig>& chosen, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "algorithm" << "parameter" << "value" << "silhouette";
    w.end();
    for (const auto& c : chosen)
        for (const auto& [k, v] : c.config.params()) {
            w << algorithm_name(c.algorithm) << k << v << c.silhouette;
            w.end();
        }
}

}  // namespace calrec
