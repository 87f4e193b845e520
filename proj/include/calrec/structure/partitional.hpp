#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/distribution.hpp"
#include "calrec/structure/labeling.hpp"

namespace calrec {

struct KMeansResult {
    std::vector<int> labels;
    Matrix centroids;
    std::vector<double> inertia_history;  // after each assignment step
    int iterations = 0;
};

namespace detail {

inline double sq_dist(const Matrix& X, Eigen::Index i, const Matrix& C, Eigen::Index c) {
    return (X.row(i) - C.row(c)).squaredNorm();
}

/// k-means++ seeding: first centre uniform, then D^2-weighted draws.
inline Matrix kmeans_pp(const Matrix& X, int k, std::mt19937_64& rng) {
    const Eigen::Index n = X.rows();
    Matrix C(k, X.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    C.row(0) = X.row(pick(rng));
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = sq_dist(X, i, C, 0);
    for (int c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng), acc = 0.0;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0.0 && acc >= target) {
                    chosen = i;
                    break;
                }
            }
            while (d2[chosen] == 0.0 && chosen > 0) --chosen;
        } else {
            chosen = pick(rng);
        }
        C.row(c) = X.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(X, i, C, c));
    }
    return C;
}

inline double assign_nearest(const Matrix& X, const Matrix& C, std::vector<int>& labels, std::vector<double>& d2) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        int best = 0;
        double bd = sq_dist(X, i, C, 0);
        for (Eigen::Index c = 1; c < C.rows(); ++c) {
            const double d = sq_dist(X, i, C, c);
            if (d < bd) {
                bd = d;
                best = static_cast<int>(c);
            }
        }
        labels[i] = best;
        d2[i] = bd;
        inertia += bd;
    }
    return inertia;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeds until no centroid moves more than
/// `tol` (or `max_iter` passes). Empty clusters are re-seeded at the point
/// farthest from its centroid.
inline KMeansResult kmeans(const Matrix& X, int k, std::mt19937_64& rng, int max_iter = 300, double tol = 1e-6) {
    const Eigen::Index n = X.rows();
    if (k < 1 || k > n) throw DataError("kmeans: need 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    KMeansResult r;
    r.centroids = detail::kmeans_pp(X, k, rng);
    r.labels.assign(static_cast<std::size_t>(n), 0);
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (int it = 0; it < max_iter; ++it) {
        r.inertia_history.push_back(detail::assign_nearest(X, r.centroids, r.labels, d2));
        ++r.iterations;
        Matrix next = Matrix::Zero(k, X.cols());
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            next.row(r.labels[i]) += X.row(i);
            ++count[r.labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (count[c] > 0) {
                next.row(c) /= count[c];
                continue;
            }
            auto far = std::max_element(d2.begin(), d2.end()) - d2.begin();
            next.row(c) = X.row(far);
            d2[far] = 0.0;
        }
        double shift = 0.0;
        for (int c = 0; c < k; ++c) shift = std::max(shift, (next.row(c) - r.centroids.row(c)).norm());
        r.centroids = std::move(next);
        if (shift <= tol) break;
    }
    detail::assign_nearest(X, r.centroids, r.labels, d2);
    return r;
}

/// Starts from one cluster and splits the cluster with the largest inertia in
/// two with 2-means until k clusters exist.
inline std::vector<int> bisecting_kmeans(const Matrix& X, int k, std::mt19937_64& rng) {
    const Eigen::Index n = X.rows();
    if (k < 1 || k > n) throw DataError("bisecting_kmeans: need 1 <= k <= n");
    std::vector<std::vector<Eigen::Index>> clusters(1);
    clusters[0].resize(static_cast<std::size_t>(n));
    std::iota(clusters[0].begin(), clusters[0].end(), Eigen::Index{0});

    auto inertia = [&](const std::vector<Eigen::Index>& members) {
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(X.cols());
        for (auto i : members) mean += X.row(i);
        mean /= static_cast<double>(members.size());
        double s = 0.0;
        for (auto i : members) s += (X.row(i) - mean).squaredNorm();
        return s;
    };
    std::vector<double> sse{inertia(clusters[0])};

    while (static_cast<int>(clusters.size()) < k) {
        std::size_t target = clusters.size();
        for (std::size_t c = 0; c < clusters.size(); ++c)
            if (clusters[c].size() >= 2 && sse[c] > 0.0 && (target == clusters.size() || sse[c] > sse[target])) target = c;
        if (target == clusters.size()) throw DataError("bisecting_kmeans: no splittable cluster left before reaching k");

        Matrix sub(static_cast<Eigen::Index>(clusters[target].size()), X.cols());
        for (std::size_t r = 0; r < clusters[target].size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = X.row(clusters[target][r]);
        auto split = kmeans(sub, 2, rng);
        std::vector<Eigen::Index> left, right;
        for (std::size_t r = 0; r < clusters[target].size(); ++r)
            (split.labels[r] == 0 ? left : right).push_back(clusters[target][r]);
        if (left.empty() || right.empty()) throw DataError("bisecting_kmeans: degenerate split");
        clusters[target] = std::move(left);
        sse[target] = inertia(clusters[target]);
        sse.push_back(inertia(right));
        clusters.push_back(std::move(right));
    }
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    for (std::size_t c = 0; c < clusters.size(); ++c)
        for (auto i : clusters[c]) labels[i] = static_cast<int>(c);
    return labels;
}

struct FuzzyResult {
    Matrix memberships;  // n x k, rows sum to 1
    Matrix centers;
    std::vector<int> labels;  // argmax membership
    int iterations = 0;
};

/// Fuzzy c-means with fuzzifier m = 2, centres seeded by k-means++.
inline FuzzyResult fuzzy_cmeans(const Matrix& X, int k, std::mt19937_64& rng, int max_iter = 300, double tol = 1e-6) {
    const Eigen::Index n = X.rows();
    if (k < 1 || k > n) throw DataError("fuzzy_cmeans: need 1 <= k <= n");
    FuzzyResult r;
    r.centers = detail::kmeans_pp(X, k, rng);
    r.memberships = Matrix::Zero(n, k);

    auto update_memberships = [&](Matrix& U) {
        std::vector<double> d2(static_cast<std::size_t>(k));
        for (Eigen::Index i = 0; i < n; ++i) {
            int zeros = 0;
            for (int c = 0; c < k; ++c) {
                d2[c] = detail::sq_dist(X, i, r.centers, c);
                zeros += d2[c] == 0.0;
            }
            if (zeros > 0) {
                for (int c = 0; c < k; ++c) U(i, c) = d2[c] == 0.0 ? 1.0 / zeros : 0.0;
                continue;
            }
            // m = 2: u_ic = 1 / sum_l (d_ic / d_il)^2 = (1/d2_ic) / sum_l (1/d2_il)
            double inv_sum = 0.0;
            for (int c = 0; c < k; ++c) inv_sum += 1.0 / d2[c];
            for (int c = 0; c < k; ++c) U(i, c) = (1.0 / d2[c]) / inv_sum;
        }
    };

    update_memberships(r.memberships);
    for (int it = 0; it < max_iter; ++it) {
        ++r.iterations;
        for (int c = 0; c < k; ++c) {
            Eigen::RowVectorXd num = Eigen::RowVectorXd::Zero(X.cols());
            double den = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double w = r.memberships(i, c) * r.memberships(i, c);
                num += w * X.row(i);
                den += w;
            }
            if (den > 0.0) r.centers.row(c) = num / den;
        }
        Matrix next(n, k);
        update_memberships(next);
        const double change = (next - r.memberships).cwiseAbs().maxCoeff();
        r.memberships = std::move(next);
        if (change < tol) break;
    }
    r.labels.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        r.memberships.row(i).maxCoeff(&best);
        r.labels[i] = static_cast<int>(best);
    }
    return r;
}

enum class PartitionalMethod { kmeans, bisecting, fuzzy };

inline Labeling fit_partitional(PartitionalMethod method, int k, const DistributionMatrix& X, std::uint64_t seed) {
    const auto n = static_cast<int>(X.n_users());
    if (k <= 1 || k > n)
        throw DataError("fit_partitional: need 1 < k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    std::mt19937_64 rng(seed);
    AlgorithmConfig cfg;
    cfg.n_clusters = k;
    switch (method) {
        case PartitionalMethod::kmeans:
            return make_labeling(X.rows, kmeans(X.data, k, rng).labels, Algorithm::kmeans, cfg);
        case PartitionalMethod::bisecting:
            return make_labeling(X.rows, bisecting_kmeans(X.data, k, rng), Algorithm::bisecting_kmeans, cfg);
        case PartitionalMethod::fuzzy:
            return make_labeling(X.rows, fuzzy_cmeans(X.data, k, rng).labels, Algorithm::fuzzy_cmeans, cfg);
    }
    throw ConfigError("fit_partitional: unknown method");
}

}  // namespace calrec
