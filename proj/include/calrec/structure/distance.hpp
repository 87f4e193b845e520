#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/distribution.hpp"

namespace calrec {

/// The eleven metric names accepted by the density and neighbour learners.
/// cityblock/l1/manhattan and euclidean/l2 are aliases of one another.
enum class Metric { cityblock, cosine, euclidean, l1, l2, manhattan, braycurtis, canberra, chebyshev, correlation, hamming };

inline constexpr Metric all_metrics[] = {Metric::cityblock, Metric::cosine,     Metric::euclidean, Metric::l1,
                                         Metric::l2,        Metric::manhattan,  Metric::braycurtis, Metric::canberra,
                                         Metric::chebyshev, Metric::correlation, Metric::hamming};

inline std::string_view metric_name(Metric m) {
    switch (m) {
        case Metric::cityblock: return "cityblock";
        case Metric::cosine: return "cosine";
        case Metric::euclidean: return "euclidean";
        case Metric::l1: return "l1";
        case Metric::l2: return "l2";
        case Metric::manhattan: return "manhattan";
        case Metric::braycurtis: return "braycurtis";
        case Metric::canberra: return "canberra";
        case Metric::chebyshev: return "chebyshev";
        case Metric::correlation: return "correlation";
        case Metric::hamming: return "hamming";
    }
    return "?";
}

inline Metric parse_metric(std::string_view name) {
    for (Metric m : all_metrics)
        if (metric_name(m) == name) return m;
    throw ConfigError("unknown metric '" + std::string(name) + "'");
}

inline std::span<const double> row_span(const Matrix& X, Eigen::Index i) {
    return {X.data() + i * X.cols(), static_cast<std::size_t>(X.cols())};
}

namespace detail {

/// 1 - cos(a, b), with the zero-vector convention: 0 between two zero
/// vectors, 1 between a zero and a non-zero vector.
inline double angular(std::span<const double> a, std::span<const double> b, double mean_a, double mean_b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double x = a[k] - mean_a, y = b[k] - mean_b;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 && nb == 0.0) return 0.0;
    if (na == 0.0 || nb == 0.0) return 1.0;
    return std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
}

}  // namespace detail

inline double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
    if (a.size() != b.size()) throw DataError("distance: dimension mismatch");
    if (std::equal(a.begin(), a.end(), b.begin())) return 0.0;
    const std::size_t n = a.size();
    switch (metric) {
        case Metric::cityblock:
        case Metric::l1:
        case Metric::manhattan: {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += std::abs(a[k] - b[k]);
            return s;
        }
        case Metric::euclidean:
        case Metric::l2: {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
            return std::sqrt(s);
        }
        case Metric::cosine: return detail::angular(a, b, 0.0, 0.0);
        case Metric::correlation: {
            double ma = 0.0, mb = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                ma += a[k];
                mb += b[k];
            }
            return detail::angular(a, b, ma / static_cast<double>(n), mb / static_cast<double>(n));
        }
        case Metric::braycurtis: {
            double num = 0.0, den = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                num += std::abs(a[k] - b[k]);
                den += std::abs(a[k] + b[k]);
            }
            return den == 0.0 ? 0.0 : num / den;
        }
        case Metric::canberra: {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double den = std::abs(a[k]) + std::abs(b[k]);
                if (den > 0.0) s += std::abs(a[k] - b[k]) / den;
            }
            return s;
        }
        case Metric::chebyshev: {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s = std::max(s, std::abs(a[k] - b[k]));
            return s;
        }
        case Metric::hamming: {
            std::size_t diff = 0;
            for (std::size_t k = 0; k < n; ++k) diff += a[k] != b[k];
            return static_cast<double>(diff) / static_cast<double>(n);
        }
    }
    return 0.0;
}

/// Symmetric n x n dissimilarities with a zero diagonal.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    DistanceMatrix(std::size_t n, Metric metric) : n_(n), metric_(metric), d_(n * n, 0.0) {}

    [[nodiscard]] std::size_t size() const { return n_; }
    [[nodiscard]] Metric metric() const { return metric_; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
    void set(std::size_t i, std::size_t j, double v) {
        d_[i * n_ + j] = v;
        d_[j * n_ + i] = v;
    }
    [[nodiscard]] std::span<const double> row(std::size_t i) const { return {d_.data() + i * n_, n_}; }

private:
    std::size_t n_ = 0;
    Metric metric_ = Metric::euclidean;
    std::vector<double> d_;
};

inline DistanceMatrix pairwise_distances(const Matrix& X, Metric metric) {
    const auto n = static_cast<std::size_t>(X.rows());
    DistanceMatrix D(n, metric);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            D.set(i, j, distance(row_span(X, static_cast<Eigen::Index>(i)), row_span(X, static_cast<Eigen::Index>(j)), metric));
    return D;
}

inline DistanceMatrix pairwise_distances(const DistributionMatrix& X, Metric metric) {
    return pairwise_distances(X.data, metric);
}

}  // namespace calrec
