#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/csv.hpp"
#include "calrec/ingest.hpp"

namespace calrec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Stage { preference, candidate, calibrated };

/// How the per-genre ratio is normalised. `per_genre` divides by the weight of
/// the items carrying the genre; `global` divides by the weight of all items.
enum class Denominator { per_genre, global };

/// Genre proportions for one user on the catalog's genre axis. Values lie in
/// [0,1] but are not required to sum to 1.
struct GenreDistribution {
    UserId owner = 0;
    Stage stage = Stage::preference;
    std::vector<double> values;

    [[nodiscard]] std::size_t size() const { return values.size(); }
    double operator[](std::size_t g) const { return values[g]; }

    friend bool operator==(const GenreDistribution&, const GenreDistribution&) = default;
};

struct DistributionMatrix {
    std::vector<UserId> rows;
    std::vector<std::string> cols;
    Matrix data;

    [[nodiscard]] std::size_t n_users() const { return rows.size(); }
    [[nodiscard]] std::size_t n_genres() const { return cols.size(); }
};

/// p(g|i): each of the item's k genres gets 1/k.
inline std::vector<std::pair<int, double>> genre_proportions(ItemId item, const GenreCatalog& catalog) {
    const auto* gs = catalog.genres_of(item);
    if (gs == nullptr || gs->empty())
        throw DataError("item " + std::to_string(item) + " has no genres (run preprocess first)");
    const double share = 1.0 / static_cast<double>(gs->size());
    std::vector<std::pair<int, double>> out;
    out.reserve(gs->size());
    for (int g : *gs) out.emplace_back(g, share);
    return out;
}

namespace detail {

inline std::vector<double> weighted_genre_ratio(std::span<const std::pair<ItemId, double>> weighted_items,
                                                const GenreCatalog& catalog, Denominator mode) {
    const std::size_t G = catalog.size();
    std::vector<double> num(G, 0.0), den(G, 0.0);
    double total = 0.0;
    for (const auto& [item, w] : weighted_items) {
        for (const auto& [g, share] : genre_proportions(item, catalog)) {
            num[g] += w * share;
            den[g] += w;
        }
        total += w;
    }
    std::vector<double> out(G, 0.0);
    for (std::size_t g = 0; g < G; ++g) {
        const double d = mode == Denominator::per_genre ? den[g] : total;
        if (num[g] > 0.0 && d > 0.0) out[g] = num[g] / d;
    }
    return out;
}

}  // namespace detail

/// P(g|u) from the user's (item, score) pairs.
inline GenreDistribution preference_distribution(std::span<const std::pair<ItemId, double>> user_items,
                                                 const GenreCatalog& catalog, UserId owner = 0,
                                                 Denominator mode = Denominator::per_genre) {
    if (user_items.empty()) throw DataError("preference_distribution: user " + std::to_string(owner) + " has no items");
    return {owner, Stage::preference, detail::weighted_genre_ratio(user_items, catalog, mode)};
}

/// Q(g|u) of a ranked list, weighted by the predicted scores.
inline GenreDistribution list_distribution(const RankedList& list, const GenreCatalog& catalog,
                                           Stage stage = Stage::calibrated, Denominator mode = Denominator::per_genre) {
    if (list.empty()) throw DataError("list_distribution: empty list for user " + std::to_string(list.owner));
    std::vector<std::pair<ItemId, double>> weighted;
    weighted.reserve(list.size());
    for (const auto& e : list.entries) weighted.emplace_back(e.item, e.score);
    return {list.owner, stage, detail::weighted_genre_ratio(weighted, catalog, mode)};
}

/// Q~ = (1 - alpha) q + alpha p, genre by genre.
inline GenreDistribution blend(const GenreDistribution& q, const GenreDistribution& p, double alpha = 0.01) {
    if (q.size() != p.size())
        throw DataError("blend: genre axis mismatch (" + std::to_string(q.size()) + " vs " + std::to_string(p.size()) + ")");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("blend: alpha must lie in [0,1]");
    GenreDistribution out{q.owner, q.stage, std::vector<double>(q.size())};
    for (std::size_t g = 0; g < q.size(); ++g) out.values[g] = (1.0 - alpha) * q.values[g] + alpha * p.values[g];
    return out;
}

/// Stacks distributions into a users x genres matrix, rows sorted by user id.
inline DistributionMatrix distribution_matrix(std::span<const GenreDistribution> dists, const GenreCatalog& catalog) {
    std::vector<const GenreDistribution*> order;
    order.reserve(dists.size());
    for (const auto& d : dists) {
        if (d.size() > catalog.size()) throw DataError("distribution_matrix: distribution wider than the genre axis");
        if (d.stage != dists.front().stage) throw DataError("distribution_matrix: mixed stages");
        order.push_back(&d);
    }
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->owner < b->owner; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (order[i]->owner == order[i - 1]->owner)
            throw DataError("distribution_matrix: duplicate user " + std::to_string(order[i]->owner));

    DistributionMatrix m;
    m.cols = catalog.genres;
    m.data = Matrix::Zero(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(catalog.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
        m.rows.push_back(order[i]->owner);
        for (std::size_t g = 0; g < order[i]->size(); ++g)
            m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) = order[i]->values[g];
    }
    return m;
}

inline void save_matrix_csv(const DistributionMatrix& m, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "user_id";
    for (const auto& c : m.cols) w << c;
    w.end();
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        w << m.rows[i];
        for (Eigen::Index g = 0; g < m.data.cols(); ++g) w << m.data(static_cast<Eigen::Index>(i), g);
        w.end();
    }
}

inline DistributionMatrix load_matrix_csv(const std::filesystem::path& path) {
    auto in = csv::open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header");
    auto header = csv::split(line);
    if (header.empty() || header[0] != "user_id") throw ParseError(path.string() + ": header must start with user_id");
    DistributionMatrix m;
    m.cols.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line);
        if (f.size() != header.size()) detail::parse_fail(path, row, "wrong field count");
        UserId u = 0;
        if (!parse_int(f[0], u)) detail::parse_fail(path, row, "bad user id");
        std::vector<double> vals(m.cols.size());
        for (std::size_t g = 0; g < vals.size(); ++g)
            if (!parse_double(f[g + 1], vals[g])) detail::parse_fail(path, row, "bad value");
        m.rows.push_back(u);
        rows.push_back(std::move(vals));
    }
    m.data = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t g = 0; g < rows[i].size(); ++g)
            m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) = rows[i][g];
    return m;
}

}  // namespace calrec
