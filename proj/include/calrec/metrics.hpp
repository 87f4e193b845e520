#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/csv.hpp"
#include "calrec/distribution.hpp"
#include "calrec/ingest.hpp"
#include "calrec/structure/distance.hpp"
#include "calrec/structure/labeling.hpp"

namespace calrec {

// ---------------------------------------------------------------------------
// Silhouette

/// Mean silhouette over all points. Noise (-1) counts as a group of its own;
/// members of singleton groups score 0.
inline double silhouette(const DistanceMatrix& D, const std::vector<int>& labels) {
    const std::size_t n = D.size();
    if (labels.size() != n) throw DataError("silhouette: labels and distances differ in size");
    std::map<int, std::size_t> group_index;
    for (int l : labels) group_index.emplace(l, group_index.size());
    const std::size_t G = group_index.size();
    if (G < 2) throw DataError("silhouette undefined: fewer than 2 groups");

    std::vector<std::size_t> gid(n), gsize(G, 0);
    for (std::size_t i = 0; i < n; ++i) {
        gid[i] = group_index.at(labels[i]);
        ++gsize[gid[i]];
    }
    double total = 0.0;
    std::vector<double> sums(G);
    for (std::size_t i = 0; i < n; ++i) {
        if (gsize[gid[i]] == 1) continue;
        std::fill(sums.begin(), sums.end(), 0.0);
        const auto row = D.row(i);
        for (std::size_t j = 0; j < n; ++j) sums[gid[j]] += row[j];
        const double a = sums[gid[i]] / static_cast<double>(gsize[gid[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < G; ++g)
            if (g != gid[i]) b = std::min(b, sums[g] / static_cast<double>(gsize[g]));
        const double m = std::max(a, b);
        if (m > 0.0) total += (b - a) / m;
    }
    return total / static_cast<double>(n);
}

inline double silhouette(const DistributionMatrix& X, const Labeling& labels, Metric metric = Metric::euclidean) {
    return silhouette(pairwise_distances(X, metric), labels.labels);
}

// ---------------------------------------------------------------------------
// Label agreement

namespace detail {

/// Maximum-weight assignment on a non-negative rectangular matrix. Returns,
/// for each row, the matched column or -1.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& w) {
    const std::size_t rows = w.size(), cols = rows ? w[0].size() : 0;
    const std::size_t n = std::max(rows, cols);
    double top = 0.0;
    for (const auto& r : w)
        for (double v : r) top = std::max(top, v);
    auto cost = [&](std::size_t i, std::size_t j) { return (i < rows && j < cols) ? top - w[i][j] : top; };

    // Hungarian algorithm, 1-based potentials
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> match(rows, -1);
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j] >= 1 && p[j] - 1 < rows && j - 1 < cols) match[p[j] - 1] = static_cast<int>(j - 1);
    return match;
}

}  // namespace detail

/// Number of users whose labels agree once b's labels are mapped one-to-one
/// onto a's so that agreement is maximal. Outlier labelings are compared as-is.
inline std::size_t aligned_agreement(const std::vector<int>& a, const std::vector<int>& b, bool identity) {
    if (a.size() != b.size()) throw DataError("jaccard: labelings differ in length");
    if (identity) {
        std::size_t m = 0;
        for (std::size_t i = 0; i < a.size(); ++i) m += a[i] == b[i];
        return m;
    }
    std::map<int, std::size_t> ia, ib;
    for (int l : a) ia.emplace(l, ia.size());
    for (int l : b) ib.emplace(l, ib.size());
    std::vector<std::vector<double>> table(ia.size(), std::vector<double>(ib.size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) table[ia.at(a[i])][ib.at(b[i])] += 1.0;
    const auto match = detail::max_weight_assignment(table);
    double m = 0.0;
    for (std::size_t r = 0; r < match.size(); ++r)
        if (match[r] >= 0) m += table[r][static_cast<std::size_t>(match[r])];
    return static_cast<std::size_t>(std::llround(m));
}

/// |A n B| / |A u B| over (user, label) pairs after alignment: m / (2n - m).
inline double jaccard_labels(const Labeling& a, const Labeling& b) {
    if (a.labels.size() != b.labels.size()) throw DataError("jaccard: labelings differ in length");
    if (a.users != b.users) throw DataError("jaccard: labelings cover different users");
    if (a.labels.empty()) return 1.0;
    const bool identity = a.outlier_labels() && b.outlier_labels();
    const auto m = static_cast<double>(aligned_agreement(a.labels, b.labels, identity));
    const auto n = static_cast<double>(a.labels.size());
    return m / (2.0 * n - m);
}

// ---------------------------------------------------------------------------
// Ranking metrics

using UserLists = std::map<UserId, RankedList>;
using UserRelevance = std::map<UserId, std::set<ItemId>>;

namespace detail {

inline void check_lists(const UserLists& lists, const char* who) {
    if (lists.empty()) throw DataError(std::string(who) + ": no lists");
    for (const auto& [u, l] : lists)
        if (l.empty()) throw DataError(std::string(who) + ": empty list for user " + std::to_string(u));
}

}  // namespace detail

/// Mean over users of the average precision at the ranks of relevant hits.
inline double map_at_n(const UserLists& lists, const UserRelevance& relevant) {
    detail::check_lists(lists, "map_at_n");
    double total = 0.0;
    for (const auto& [u, list] : lists) {
        auto it = relevant.find(u);
        if (it == relevant.end() || it->second.empty()) continue;
        double hits = 0.0, ap = 0.0;
        for (std::size_t r = 0; r < list.size(); ++r)
            if (it->second.contains(list.entries[r].item)) {
                hits += 1.0;
                ap += hits / static_cast<double>(r + 1);
            }
        if (hits > 0.0) total += ap / hits;
    }
    return total / static_cast<double>(lists.size());
}

/// Mean over users of 1 / rank of the first relevant item (0 without a hit).
inline double mrr(const UserLists& lists, const UserRelevance& relevant) {
    detail::check_lists(lists, "mrr");
    double total = 0.0;
    for (const auto& [u, list] : lists) {
        auto it = relevant.find(u);
        if (it == relevant.end()) continue;
        for (std::size_t r = 0; r < list.size(); ++r)
            if (it->second.contains(list.entries[r].item)) {
                total += 1.0 / static_cast<double>(r + 1);
                break;
            }
    }
    return total / static_cast<double>(lists.size());
}

/// Calibration error of one user's list, averaged over rank prefixes. Genres
/// considered are those where P or the full-list Q is non-zero.
inline double user_calibration_error(const GenreDistribution& p, const RankedList& list, const GenreCatalog& catalog,
                                     Denominator mode = Denominator::per_genre) {
    if (list.empty()) throw DataError("mace: empty list for user " + std::to_string(list.owner));
    const auto full = list_distribution(list, catalog, Stage::calibrated, mode);
    if (full.size() != p.size()) throw DataError("mace: genre axis mismatch");
    std::vector<std::size_t> support;
    for (std::size_t g = 0; g < p.size(); ++g)
        if (p.values[g] > 0.0 || full.values[g] > 0.0) support.push_back(g);
    if (support.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t k = 1; k <= list.size(); ++k) {
        const auto qk = list_distribution(list.head(k), catalog, Stage::calibrated, mode);
        double ace = 0.0;
        for (auto g : support) ace += std::abs(p.values[g] - qk.values[g]);
        total += ace / static_cast<double>(support.size());
    }
    return total / static_cast<double>(list.size());
}

inline double mace(const std::map<UserId, GenreDistribution>& p, const UserLists& lists, const GenreCatalog& catalog,
                   Denominator mode = Denominator::per_genre) {
    detail::check_lists(lists, "mace");
    double total = 0.0;
    for (const auto& [u, list] : lists) {
        auto it = p.find(u);
        if (it == p.end()) throw DataError("mace: no preference distribution for user " + std::to_string(u));
        total += user_calibration_error(it->second, list, catalog, mode);
    }
    return total / static_cast<double>(lists.size());
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
    std::string dataset;
    std::string score_mode;
    std::string algorithm;  // "-" for ranking metrics
    std::string stage;      // PREF or C@lambda
    int fold = 0;
    std::string metric;
    double value = 0.0;

    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline void save_reports_csv(const std::vector<MetricReport>& reports, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "dataset" << "score_mode" << "algorithm" << "stage" << "fold" << "metric" << "value";
    w.end();
    for (const auto& r : reports) {
        w << r.dataset << r.score_mode << r.algorithm << r.stage << r.fold << r.metric << r.value;
        w.end();
    }
}

inline std::vector<MetricReport> load_reports_csv(const std::filesystem::path& path) {
    auto in = csv::open_input(path);
    std::string line;
    std::getline(in, line);
    std::vector<MetricReport> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line);
        MetricReport r;
        if (f.size() != 7 || !parse_int(f[4], r.fold) || !parse_double(f[6], r.value))
            detail::parse_fail(path, row, "expected dataset,score_mode,algorithm,stage,fold,metric,value");
        r.dataset = f[0];
        r.score_mode = f[1];
        r.algorithm = f[2];
        r.stage = f[3];
        r.metric = f[5];
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace calrec
