#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/distribution.hpp"
#include "calrec/structure/distance.hpp"
#include "calrec/structure/labeling.hpp"

namespace calrec {

// ---------------------------------------------------------------------------
// Isolation forest

/// Expected path length of an unsuccessful BST search over n points.
inline double average_path_length(double n) {
    if (n <= 1.0) return 0.0;
    if (n <= 2.0) return 1.0;
    constexpr double euler_gamma = 0.5772156649015329;
    return 2.0 * (std::log(n - 1.0) + euler_gamma) - 2.0 * (n - 1.0) / n;
}

class IsolationForest {
public:
    IsolationForest(int n_estimators, int max_samples = 256) : n_estimators_(n_estimators), max_samples_(max_samples) {
        if (n_estimators < 1) throw ConfigError("isolation_forest: n_estimators must be >= 1");
    }

    void fit(const Matrix& X, std::mt19937_64& rng) {
        const Eigen::Index n = X.rows();
        if (n < 1) throw DataError("isolation_forest: empty input");
        psi_ = static_cast<int>(std::min<Eigen::Index>(max_samples_, n));
        const int height_limit = static_cast<int>(std::ceil(std::log2(std::max(psi_, 2))));
        trees_.clear();
        std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), Eigen::Index{0});
        for (int t = 0; t < n_estimators_; ++t) {
            std::vector<Eigen::Index> sample = all;
            std::shuffle(sample.begin(), sample.end(), rng);
            sample.resize(static_cast<std::size_t>(psi_));
            Tree tree;
            build(tree, X, sample, 0, height_limit, rng);
            trees_.push_back(std::move(tree));
        }
    }

    /// s(x) = 2^(-E[h(x)] / c(psi)); values near 1 indicate anomalies.
    [[nodiscard]] double score(std::span<const double> x) const {
        double total = 0.0;
        for (const auto& tree : trees_) total += path_length(tree, x);
        const double mean = total / static_cast<double>(trees_.size());
        const double c = average_path_length(psi_);
        return c > 0.0 ? std::exp2(-mean / c) : 0.5;
    }

private:
    struct Node {
        int feature = -1;  // -1: leaf
        double threshold = 0.0;
        int left = -1, right = -1;
        int size = 0;
    };
    using Tree = std::vector<Node>;

    static int build(Tree& tree, const Matrix& X, std::vector<Eigen::Index> rows, int depth, int limit,
                     std::mt19937_64& rng) {
        const int id = static_cast<int>(tree.size());
        tree.push_back(Node{});
        tree[id].size = static_cast<int>(rows.size());
        if (rows.size() <= 1 || depth >= limit) return id;

        std::vector<int> varying;
        std::vector<double> lo(static_cast<std::size_t>(X.cols())), hi(static_cast<std::size_t>(X.cols()));
        for (Eigen::Index f = 0; f < X.cols(); ++f) {
            lo[f] = hi[f] = X(rows[0], f);
            for (auto r : rows) {
                lo[f] = std::min(lo[f], X(r, f));
                hi[f] = std::max(hi[f], X(r, f));
            }
            if (lo[f] < hi[f]) varying.push_back(static_cast<int>(f));
        }
        if (varying.empty()) return id;

        std::uniform_int_distribution<std::size_t> pick(0, varying.size() - 1);
        const int f = varying[pick(rng)];
        std::uniform_real_distribution<double> cut(lo[f], hi[f]);
        double t = cut(rng);
        while (t <= lo[f]) t = cut(rng);  // both sides non-empty

        std::vector<Eigen::Index> left, right;
        for (auto r : rows) (X(r, f) < t ? left : right).push_back(r);
        tree[id].feature = f;
        tree[id].threshold = t;
        const int l = build(tree, X, std::move(left), depth + 1, limit, rng);
        const int rr = build(tree, X, std::move(right), depth + 1, limit, rng);
        tree[id].left = l;
        tree[id].right = rr;
        return id;
    }

    static double path_length(const Tree& tree, std::span<const double> x) {
        int node = 0, depth = 0;
        while (tree[node].feature >= 0) {
            node = x[tree[node].feature] < tree[node].threshold ? tree[node].left : tree[node].right;
            ++depth;
        }
        return depth + average_path_length(tree[node].size);
    }

    int n_estimators_;
    int max_samples_;
    int psi_ = 0;
    std::vector<Tree> trees_;
};

// ---------------------------------------------------------------------------
// Local outlier factor

/// LOF with exactly k nearest neighbours per point (self excluded, ties by index).
inline std::vector<double> local_outlier_factor(const DistanceMatrix& D, int k) {
    const std::size_t n = D.size();
    if (k < 1 || static_cast<std::size_t>(k) >= n) throw DataError("lof: need 1 <= n_neighbors < n");
    std::vector<std::vector<std::size_t>> nbrs(n);
    std::vector<double> kdist(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> idx;
        idx.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) idx.push_back(j);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](std::size_t a, std::size_t b) {
            return D(i, a) != D(i, b) ? D(i, a) < D(i, b) : a < b;
        });
        idx.resize(static_cast<std::size_t>(k));
        kdist[i] = D(i, idx.back());
        nbrs[i] = std::move(idx);
    }
    std::vector<double> lrd(n);
    for (std::size_t i = 0; i < n; ++i) {
        double reach = 0.0;
        for (auto j : nbrs[i]) reach += std::max(kdist[j], D(i, j));
        lrd[i] = 1.0 / (reach / k + 1e-10);
    }
    std::vector<double> lof(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (auto j : nbrs[i]) s += lrd[j];
        lof[i] = (s / k) / lrd[i];
    }
    return lof;
}

// ---------------------------------------------------------------------------
// Elliptic envelope (empirical mean and covariance)

/// Squared Mahalanobis distances under the sample mean/covariance. A singular
/// covariance gets 1e-6 on the diagonal once before giving up.
inline std::vector<double> mahalanobis_sq(const Matrix& X) {
    const Eigen::Index n = X.rows();
    if (n < 1) throw DataError("elliptic_envelope: empty input");
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const Matrix centered = X.rowwise() - mu;
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);

    auto usable = [](const Eigen::LLT<Eigen::MatrixXd>& llt) {
        if (llt.info() != Eigen::Success) return false;
        const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
        return diag.minCoeff() > 1e-12 * std::max(1.0, diag.maxCoeff());
    };
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (!usable(llt)) {
        cov.diagonal().array() += 1e-6;
        llt.compute(cov);
        if (!usable(llt)) throw DataError("elliptic_envelope: covariance singular after regularisation");
    }
    Eigen::MatrixXd z = centered.transpose();
    llt.matrixL().solveInPlace(z);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out[i] = z.col(i).squaredNorm();
    return out;
}

enum class OutlierMethod { iforest, lof, envelope };

struct OutlierParams {
    int n_estimators = 100;
    int n_neighbors = 20;
    Metric metric = Metric::euclidean;
    double nu = 0.1;
    double iforest_threshold = 0.5;  // outlier iff score > threshold
    double lof_threshold = 1.5;      // outlier iff LOF > threshold
};

inline Labeling fit_outlier(OutlierMethod method, const OutlierParams& params, const DistributionMatrix& X,
                            std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(X.data.rows());
    std::vector<int> labels(n, 0);
    AlgorithmConfig cfg;
    Algorithm algorithm = Algorithm::isolation_forest;
    switch (method) {
        case OutlierMethod::iforest: {
            cfg.n_estimators = params.n_estimators;
            std::mt19937_64 rng(seed);
            IsolationForest forest(params.n_estimators);
            forest.fit(X.data, rng);
            for (std::size_t i = 0; i < n; ++i)
                labels[i] = forest.score(row_span(X.data, static_cast<Eigen::Index>(i))) > params.iforest_threshold;
            break;
        }
        case OutlierMethod::lof: {
            algorithm = Algorithm::local_outlier_factor;
            cfg.n_neighbors = params.n_neighbors;
            cfg.metric = params.metric;
            const auto lof = local_outlier_factor(pairwise_distances(X.data, params.metric), params.n_neighbors);
            for (std::size_t i = 0; i < n; ++i) labels[i] = lof[i] > params.lof_threshold;
            break;
        }
        case OutlierMethod::envelope: {
            algorithm = Algorithm::elliptic_envelope;
            cfg.nu = params.nu;
            if (!(params.nu > 0.0 && params.nu <= 0.5)) throw ConfigError("elliptic_envelope: nu must lie in (0, 0.5]");
            const auto d2 = mahalanobis_sq(X.data);
            const auto n_out = std::min(n, static_cast<std::size_t>(std::ceil(params.nu * static_cast<double>(n) - 1e-9)));
            std::vector<std::size_t> idx(n);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d2[a] > d2[b]; });
            for (std::size_t r = 0; r < n_out; ++r) labels[idx[r]] = 1;
            break;
        }
    }
    return make_labeling(X.rows, std::move(labels), algorithm, cfg);
}

}  // namespace calrec
