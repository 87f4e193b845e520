#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/csv.hpp"

namespace calrec {

// ---------------------------------------------------------------------------
// Domain types

/// Genre axis plus the genre set of every known item. The order of `genres`
/// defines the column order of every distribution downstream.
struct GenreCatalog {
    std::vector<std::string> genres;
    std::map<ItemId, std::vector<int>> item_genres;  // sorted genre indices

    [[nodiscard]] std::size_t size() const { return genres.size(); }

    [[nodiscard]] const std::vector<int>* genres_of(ItemId item) const {
        auto it = item_genres.find(item);
        return it == item_genres.end() ? nullptr : &it->second;
    }

    friend bool operator==(const GenreCatalog&, const GenreCatalog&) = default;
};

struct ScoreScale {
    double min = 0.0;
    double max = 5.0;

    friend bool operator==(const ScoreScale&, const ScoreScale&) = default;
};

struct Interaction {
    UserId user = 0;
    ItemId item = 0;
    double score = 0.0;
    std::int64_t timestamp = 0;

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct InteractionSet {
    std::vector<Interaction> records;
    ScoreScale scale;

    [[nodiscard]] std::size_t size() const { return records.size(); }
    [[nodiscard]] bool empty() const { return records.empty(); }

    friend bool operator==(const InteractionSet&, const InteractionSet&) = default;
};

struct FoldAssignment {
    int k = 0;
    std::map<std::pair<UserId, ItemId>, int> assignment;
};

/// Column mapping for generic CSV rating files.
struct CsvSchema {
    std::string user_column = "user_id";
    std::string item_column = "item_id";
    std::string score_column = "score";
    std::string timestamp_column;  // empty: no timestamp column
    char delimiter = ',';
    ScoreScale scale{0.0, 5.0};
};

// ---------------------------------------------------------------------------
// Helpers

/// Per-user (item, score) lists, users and items in ascending id order.
inline std::map<UserId, std::vector<std::pair<ItemId, double>>> group_by_user(const InteractionSet& set) {
    std::map<UserId, std::vector<std::pair<ItemId, double>>> out;
    for (const auto& r : set.records) out[r.user].emplace_back(r.item, r.score);
    for (auto& [_, items] : out) std::sort(items.begin(), items.end());
    return out;
}

inline void check_unique_pairs(const InteractionSet& set, const std::string& source) {
    std::set<std::pair<UserId, ItemId>> seen;
    std::vector<std::pair<UserId, ItemId>> dups;
    for (const auto& r : set.records)
        if (!seen.emplace(r.user, r.item).second) dups.emplace_back(r.user, r.item);
    if (dups.empty()) return;
    std::string msg = source + ": duplicate (user,item) pairs:";
    for (std::size_t i = 0; i < dups.size() && i < 10; ++i)
        msg += " (" + std::to_string(dups[i].first) + "," + std::to_string(dups[i].second) + ")";
    if (dups.size() > 10) msg += " ... (" + std::to_string(dups.size()) + " total)";
    throw ParseError(msg);
}

namespace detail {

inline std::vector<std::string_view> split_on(std::string_view line, std::string_view sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(line.substr(start));
            return parts;
        }
        parts.push_back(line.substr(start, pos - start));
        start = pos + sep.size();
    }
}

inline std::string_view trim_cr(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
    return s;
}

inline bool blank(std::string_view s) {
    return s.find_first_not_of(" \t\r") == std::string_view::npos;
}

[[noreturn]] inline void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

/// Builds a catalog from raw (item, genre names) pairs with a lexicographic axis.
inline GenreCatalog make_catalog(const std::vector<std::pair<ItemId, std::vector<std::string>>>& raw) {
    std::set<std::string> names;
    for (const auto& [_, gs] : raw) names.insert(gs.begin(), gs.end());
    GenreCatalog cat;
    cat.genres.assign(names.begin(), names.end());
    std::map<std::string, int> index;
    for (std::size_t g = 0; g < cat.genres.size(); ++g) index[cat.genres[g]] = static_cast<int>(g);
    for (const auto& [item, gs] : raw) {
        std::vector<int> idx;
        for (const auto& name : gs) idx.push_back(index.at(name));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        cat.item_genres[item] = std::move(idx);
    }
    return cat;
}

inline std::vector<std::string> split_genres(std::string_view field) {
    std::vector<std::string> out;
    if (field.empty() || field == "(no genres listed)") return out;
    for (auto g : split_on(field, "|"))
        if (!g.empty()) out.emplace_back(g);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loaders

inline GenreCatalog load_movielens_movies(const std::filesystem::path& movies_path) {
    auto in = csv::open_input(movies_path);
    std::vector<std::pair<ItemId, std::vector<std::string>>> raw;
    std::set<ItemId> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto text = detail::trim_cr(line);
        if (detail::blank(text)) continue;
        auto first = text.find("::");
        auto last = text.rfind("::");
        if (first == std::string_view::npos || first == last)
            detail::parse_fail(movies_path, lineno, "expected MovieID::Title::Genres");
        ItemId item = 0;
        if (!parse_int(text.substr(0, first), item)) detail::parse_fail(movies_path, lineno, "bad MovieID");
        if (!ids.insert(item).second) detail::parse_fail(movies_path, lineno, "duplicate MovieID " + std::to_string(item));
        raw.emplace_back(item, detail::split_genres(text.substr(last + 2)));
    }
    return detail::make_catalog(raw);
}

inline InteractionSet load_movielens_ratings(const std::filesystem::path& ratings_path) {
    auto in = csv::open_input(ratings_path);
    InteractionSet set;
    set.scale = {0.0, 5.0};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto text = detail::trim_cr(line);
        if (detail::blank(text)) continue;
        auto parts = detail::split_on(text, "::");
        if (parts.size() != 4) detail::parse_fail(ratings_path, lineno, "expected UserID::MovieID::Rating::Timestamp");
        Interaction r;
        if (!parse_int(parts[0], r.user)) detail::parse_fail(ratings_path, lineno, "bad UserID");
        if (!parse_int(parts[1], r.item)) detail::parse_fail(ratings_path, lineno, "bad MovieID");
        if (!parse_double(parts[2], r.score)) detail::parse_fail(ratings_path, lineno, "bad Rating");
        if (!parse_int(parts[3], r.timestamp)) detail::parse_fail(ratings_path, lineno, "bad Timestamp");
        if (r.score < set.scale.min || r.score > set.scale.max)
            detail::parse_fail(ratings_path, lineno, "rating outside the 0-5 scale");
        set.records.push_back(r);
    }
    check_unique_pairs(set, ratings_path.string());
    return set;
}

/// MovieLens `::`-separated ratings.dat and movies.dat.
inline std::pair<InteractionSet, GenreCatalog> load_movielens(const std::filesystem::path& ratings_path,
                                                              const std::filesystem::path& movies_path) {
    return {load_movielens_ratings(ratings_path), load_movielens_movies(movies_path)};
}

inline InteractionSet load_csv(const std::filesystem::path& ratings_path, const CsvSchema& schema) {
    auto in = csv::open_input(ratings_path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(ratings_path.string() + ": missing header row");
    auto header = csv::split(line, schema.delimiter);
    auto column = [&](const std::string& name) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ConfigError(ratings_path.string() + ": missing column '" + name + "'");
        return static_cast<int>(it - header.begin());
    };
    const int uc = column(schema.user_column);
    const int ic = column(schema.item_column);
    const int sc = column(schema.score_column);
    const int tc = schema.timestamp_column.empty() ? -1 : column(schema.timestamp_column);
    const auto width = header.size();

    InteractionSet set;
    set.scale = schema.scale;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line, schema.delimiter);
        if (f.size() != width)
            detail::parse_fail(ratings_path, row, "expected " + std::to_string(width) + " fields, got " + std::to_string(f.size()));
        Interaction r;
        if (!parse_int(f[uc], r.user)) detail::parse_fail(ratings_path, row, "non-integer user id '" + f[uc] + "'");
        if (!parse_int(f[ic], r.item)) detail::parse_fail(ratings_path, row, "non-integer item id '" + f[ic] + "'");
        if (!parse_double(f[sc], r.score)) detail::parse_fail(ratings_path, row, "non-numeric score '" + f[sc] + "'");
        if (tc >= 0 && !parse_int(f[tc], r.timestamp))
            detail::parse_fail(ratings_path, row, "non-integer timestamp '" + f[tc] + "'");
        if (r.score < set.scale.min || r.score > set.scale.max)
            detail::parse_fail(ratings_path, row, "score " + f[sc] + " outside scale");
        set.records.push_back(r);
    }
    check_unique_pairs(set, ratings_path.string());
    return set;
}

/// Genre file: header `item_id,genres`, then `item_id,genre1|genre2|...`.
inline GenreCatalog load_genres_csv(const std::filesystem::path& path) {
    auto in = csv::open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path.string() + ": missing header row");
    std::vector<std::pair<ItemId, std::vector<std::string>>> raw;
    std::set<ItemId> ids;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line);
        if (f.size() != 2) detail::parse_fail(path, row, "expected item_id,genres");
        ItemId item = 0;
        if (!parse_int(f[0], item)) detail::parse_fail(path, row, "bad item id");
        if (!ids.insert(item).second) detail::parse_fail(path, row, "duplicate item id " + f[0]);
        raw.emplace_back(item, detail::split_genres(f[1]));
    }
    return detail::make_catalog(raw);
}

inline void save_interactions_csv(const InteractionSet& set, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "user_id" << "item_id" << "score" << "timestamp";
    w.end();
    for (const auto& r : set.records) {
        w << r.user << r.item << r.score << r.timestamp;
        w.end();
    }
}

inline void save_genres_csv(const GenreCatalog& cat, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "item_id" << "genres";
    w.end();
    for (const auto& [item, gs] : cat.item_genres) {
        std::string joined;
        for (int g : gs) {
            if (!joined.empty()) joined += '|';
            joined += cat.genres[g];
        }
        w << item << joined;
        w.end();
    }
}

// ---------------------------------------------------------------------------
// Cleaning

/// Applies, until nothing changes: drop genreless items, drop users with fewer
/// than `min_user_tx` interactions, drop items nobody interacted with. The
/// returned catalog keeps only genres still carried by a surviving item.
inline std::pair<InteractionSet, GenreCatalog> preprocess(const InteractionSet& interactions,
                                                          const GenreCatalog& catalog, int min_user_tx = 50) {
    std::vector<Interaction> records = interactions.records;
    std::set<ItemId> items;
    for (const auto& [item, gs] : catalog.item_genres)
        if (!gs.empty()) items.insert(item);

    while (true) {
        const auto before_records = records.size();
        const auto before_items = items.size();

        std::erase_if(records, [&](const Interaction& r) { return !items.contains(r.item); });

        std::map<UserId, int> per_user;
        for (const auto& r : records) ++per_user[r.user];
        std::erase_if(records, [&](const Interaction& r) { return per_user[r.user] < min_user_tx; });

        std::set<ItemId> rated;
        for (const auto& r : records) rated.insert(r.item);
        std::erase_if(items, [&](ItemId i) { return !rated.contains(i); });

        if (records.size() == before_records && items.size() == before_items) break;
    }
    if (records.empty()) throw DataError("dataset eliminated by preprocessing");

    std::set<int> used;
    for (ItemId i : items)
        for (int g : catalog.item_genres.at(i)) used.insert(g);
    GenreCatalog out_cat;
    for (int g : used) out_cat.genres.push_back(catalog.genres[g]);
    std::sort(out_cat.genres.begin(), out_cat.genres.end());
    std::map<std::string, int> by_name;
    for (std::size_t g = 0; g < out_cat.genres.size(); ++g) by_name[out_cat.genres[g]] = static_cast<int>(g);
    for (ItemId i : items) {
        std::vector<int> gs;
        for (int g : catalog.item_genres.at(i)) gs.push_back(by_name.at(catalog.genres[g]));
        std::sort(gs.begin(), gs.end());
        out_cat.item_genres[i] = std::move(gs);
    }
    return {InteractionSet{std::move(records), interactions.scale}, std::move(out_cat)};
}

/// Maps scores to {0,1}: >= 4 on a 0-5 scale, >= 8 on a 0-10 scale.
inline double binary_threshold(const ScoreScale& scale) {
    if (scale.max == 5.0) return 4.0;
    if (scale.max == 10.0) return 8.0;
    throw ConfigError("binarize: unsupported score scale (max " + format_double(scale.max) +
                      "); supported scales are 0-5 and 0-10");
}

inline InteractionSet binarize(const InteractionSet& interactions) {
    const double threshold = binary_threshold(interactions.scale);
    InteractionSet out = interactions;
    for (auto& r : out.records) r.score = r.score >= threshold ? 1.0 : 0.0;
    out.scale = {0.0, 1.0};
    return out;
}

// ---------------------------------------------------------------------------
// Folds

/// Per-user random partition into k near-equal folds. A user's items are
/// sorted by id before shuffling, so the result depends only on the seed and
/// the set of (user, item) pairs.
inline FoldAssignment split_folds(const InteractionSet& interactions, int k, std::uint64_t seed) {
    if (k < 1) throw ConfigError("split_folds: k must be >= 1");
    std::map<UserId, std::vector<ItemId>> per_user;
    for (const auto& r : interactions.records) per_user[r.user].push_back(r.item);
    FoldAssignment out;
    out.k = k;
    for (auto& [user, items] : per_user) {
        if (static_cast<int>(items.size()) < k)
            throw DataError("split_folds: user " + std::to_string(user) + " has " + std::to_string(items.size()) +
                            " interactions, fewer than k=" + std::to_string(k));
        std::sort(items.begin(), items.end());
        std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(user)}));
        std::shuffle(items.begin(), items.end(), rng);
        for (std::size_t pos = 0; pos < items.size(); ++pos)
            out.assignment[{user, items[pos]}] = static_cast<int>(pos % static_cast<std::size_t>(k));
    }
    return out;
}

/// (train, test) for fold f: test holds the interactions assigned to f.
inline std::pair<InteractionSet, InteractionSet> train_test_split(const InteractionSet& interactions,
                                                                  const FoldAssignment& folds, int f) {
    InteractionSet train{{}, interactions.scale}, test{{}, interactions.scale};
    for (const auto& r : interactions.records) {
        auto it = folds.assignment.find({r.user, r.item});
        if (it == folds.assignment.end())
            throw DataError("fold assignment missing (" + std::to_string(r.user) + "," + std::to_string(r.item) + ")");
        (it->second == f ? test : train).records.push_back(r);
    }
    return {std::move(train), std::move(test)};
}

inline void save_folds_csv(const FoldAssignment& folds, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "user_id" << "item_id" << "fold";
    w.end();
    for (const auto& [key, f] : folds.assignment) {
        w << key.first << key.second << f;
        w.end();
    }
}

inline FoldAssignment load_folds_csv(const std::filesystem::path& path) {
    auto in = csv::open_input(path);
    std::string line;
    std::getline(in, line);
    FoldAssignment out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line);
        UserId u = 0;
        ItemId i = 0;
        int fold = 0;
        if (f.size() != 3 || !parse_int(f[0], u) || !parse_int(f[1], i) || !parse_int(f[2], fold) || fold < 0)
            detail::parse_fail(path, row, "expected user_id,item_id,fold");
        out.assignment[{u, i}] = fold;
        out.k = std::max(out.k, fold + 1);
    }
    return out;
}

}  // namespace calrec
