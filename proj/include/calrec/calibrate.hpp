#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/csv.hpp"
#include "calrec/distribution.hpp"
#include "calrec/ingest.hpp"

namespace calrec {

enum class Divergence { emanon2, kl };

inline std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
    return grid;
}

struct CalibrationConfig {
    std::vector<double> lambda_grid = default_lambda_grid();
    double alpha = 0.01;
    std::size_t list_size = 10;
    Divergence divergence = Divergence::emanon2;
    double epsilon = 1e-5;
    bool blend_target = true;  // compare P against Q~ rather than Q
    Denominator denominator = Denominator::per_genre;

    void validate() const {
        if (lambda_grid.empty()) throw ConfigError("calibration: lambda grid is empty");
        for (double l : lambda_grid)
            if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("calibration: lambda " + format_double(l) + " outside [0,1]");
        if (list_size < 1) throw ConfigError("calibration: list size must be >= 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("calibration: alpha must lie in (0,1)");
        if (!(epsilon > 0.0)) throw ConfigError("calibration: epsilon must be positive");
    }
};

/// Sum over genres of (p - q)^2 / min(p, q)^2. Genres where both are zero are
/// skipped; the minimum is floored at epsilon.
inline double emanon2(const GenreDistribution& p, const GenreDistribution& q, double epsilon = 1e-5) {
    if (p.size() != q.size()) throw DataError("emanon2: genre axis mismatch");
    double total = 0.0;
    for (std::size_t g = 0; g < p.size(); ++g) {
        const double a = p.values[g], b = q.values[g];
        if (a == 0.0 && b == 0.0) continue;
        const double diff = a - b;
        const double m = std::max(std::min(a, b), epsilon);
        total += diff * diff / (m * m);
    }
    return total;
}

/// KL(p || q~) after normalising both to sum 1; q~ is floored at epsilon
/// wherever p is positive.
inline double kl_divergence(const GenreDistribution& p, const GenreDistribution& q_tilde, double epsilon = 1e-5) {
    if (p.size() != q_tilde.size()) throw DataError("kl_divergence: genre axis mismatch");
    double sp = 0.0, sq = 0.0;
    for (std::size_t g = 0; g < p.size(); ++g) {
        sp += p.values[g];
        sq += q_tilde.values[g];
    }
    if (sp <= 0.0) return 0.0;
    double total = 0.0;
    for (std::size_t g = 0; g < p.size(); ++g) {
        const double pg = p.values[g] / sp;
        if (pg <= 0.0) continue;
        const double qg = std::max(sq > 0.0 ? q_tilde.values[g] / sq : 0.0, epsilon);
        total += pg * std::log(pg / qg);
    }
    return total;
}

inline double divergence(const GenreDistribution& p, const GenreDistribution& q, const CalibrationConfig& cfg) {
    return cfg.divergence == Divergence::kl ? kl_divergence(p, q, cfg.epsilon) : emanon2(p, q, cfg.epsilon);
}

namespace detail {

inline double dcg(const std::vector<double>& gains) {
    double total = 0.0;
    for (std::size_t i = 0; i < gains.size(); ++i)
        total += (std::exp2(gains[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return total;
}

}  // namespace detail

/// DCG of the list over DCG of the same items re-sorted by score. An all-zero
/// ideal gain counts as a perfect list.
inline double ndcg(const RankedList& list) {
    if (list.empty()) throw DataError("ndcg: empty list");
    std::vector<double> gains;
    gains.reserve(list.size());
    for (const auto& e : list.entries) gains.push_back(e.score);
    const double actual = detail::dcg(gains);
    std::sort(gains.begin(), gains.end(), std::greater<>());
    const double ideal = detail::dcg(gains);
    if (ideal == 0.0) return 1.0;
    return std::min(1.0, actual / ideal);
}

/// Miscalibration of a list against P, as used inside the trade-off.
inline double list_miscalibration(const RankedList& list, const GenreDistribution& p, const GenreCatalog& catalog,
                                  const CalibrationConfig& cfg) {
    auto q = list_distribution(list, catalog, Stage::calibrated, cfg.denominator);
    if (cfg.blend_target) q = blend(q, p, cfg.alpha);
    return divergence(p, q, cfg);
}

/// (1 - lambda) * NDCG(list) - lambda * divergence(P, Q~(list)).
inline double tradeoff_objective(const RankedList& list, const GenreDistribution& p, double lambda,
                                 const GenreCatalog& catalog, const CalibrationConfig& cfg) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("tradeoff_objective: lambda outside [0,1]");
    double value = 0.0;
    if (lambda < 1.0) value += (1.0 - lambda) * ndcg(list);
    if (lambda > 0.0) value -= lambda * list_miscalibration(list, p, catalog, cfg);
    return value;
}

/// Builds the list position by position, each time appending the candidate that
/// maximises the trade-off of the extended prefix. Ties prefer the higher
/// predicted score, then the lower item id.
inline RankedList greedy_select(const RankedList& candidates, const GenreDistribution& p, double lambda,
                                const GenreCatalog& catalog, const CalibrationConfig& cfg) {
    const std::size_t N = cfg.list_size;
    if (candidates.size() < N)
        throw DataError("greedy_select: user " + std::to_string(candidates.owner) + " has " +
                        std::to_string(candidates.size()) + " candidates, fewer than N=" + std::to_string(N));
    std::vector<RankedEntry> pool = candidates.entries;
    std::sort(pool.begin(), pool.end(), ranks_before);  // tie order == scan order
    std::vector<bool> used(pool.size(), false);

    RankedList list{candidates.owner, {}};
    list.entries.reserve(N);
    for (std::size_t pos = 0; pos < N; ++pos) {
        std::size_t best = pool.size();
        double best_value = 0.0;
        list.entries.emplace_back();
        for (std::size_t c = 0; c < pool.size(); ++c) {
            if (used[c]) continue;
            list.entries.back() = pool[c];
            const double v = tradeoff_objective(list, p, lambda, catalog, cfg);
            if (best == pool.size() || v > best_value) {
                best = c;
                best_value = v;
            }
        }
        used[best] = true;
        list.entries.back() = pool[best];
    }
    return list;
}

struct LambdaList {
    double lambda = 0.0;
    RankedList list;
};

/// One calibrated list per lambda; lambda = 0 is the raw top-N candidate head.
inline std::vector<LambdaList> sweep_lambda(const RankedList& candidates, const GenreDistribution& p,
                                            const GenreCatalog& catalog, const CalibrationConfig& cfg) {
    if (cfg.lambda_grid.empty()) throw ConfigError("sweep_lambda: empty lambda grid");
    std::vector<LambdaList> out;
    for (double lambda : cfg.lambda_grid) {
        if (lambda == 0.0) {
            if (candidates.size() < cfg.list_size) throw DataError("sweep_lambda: fewer candidates than N");
            RankedList head = candidates;
            std::sort(head.entries.begin(), head.entries.end(), ranks_before);
            out.push_back({lambda, head.head(cfg.list_size)});
        } else {
            out.push_back({lambda, greedy_select(candidates, p, lambda, catalog, cfg)});
        }
    }
    return out;
}

/// `C@0.0`, `C@0.1`, ...
inline std::string stage_label(double lambda) {
    const long tenths = std::lround(lambda * 10.0);
    if (std::abs(lambda * 10.0 - static_cast<double>(tenths)) < 1e-9)
        return "C@" + std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
    return "C@" + format_double(lambda);
}

// Calibrated lists: user_id,lambda,rank,item_id,predicted_score

struct CalibratedRow {
    UserId user;
    double lambda;
    RankedList list;
};

inline void save_calibrated_csv(const std::vector<CalibratedRow>& rows, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "user_id" << "lambda" << "rank" << "item_id" << "predicted_score";
    w.end();
    for (const auto& r : rows)
        for (std::size_t k = 0; k < r.list.size(); ++k) {
            w << r.user << r.lambda << k + 1 << r.list.entries[k].item << r.list.entries[k].score;
            w.end();
        }
}

inline std::vector<CalibratedRow> load_calibrated_csv(const std::filesystem::path& path) {
    auto in = csv::open_input(path);
    std::string line;
    std::getline(in, line);
    std::vector<CalibratedRow> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line);
        UserId u = 0;
        double lambda = 0.0;
        std::size_t rank = 0;
        RankedEntry e;
        if (f.size() != 5 || !parse_int(f[0], u) || !parse_double(f[1], lambda) || !parse_int(f[2], rank) ||
            !parse_int(f[3], e.item) || !parse_double(f[4], e.score))
            detail::parse_fail(path, row, "expected user_id,lambda,rank,item_id,predicted_score");
        if (out.empty() || out.back().user != u || out.back().lambda != lambda) out.push_back({u, lambda, {u, {}}});
        if (rank != out.back().list.size() + 1) detail::parse_fail(path, row, "ranks must be consecutive from 1");
        out.back().list.entries.push_back(e);
    }
    return out;
}

}  // namespace calrec
