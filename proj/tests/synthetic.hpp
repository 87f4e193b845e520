#pragma once

// Generators for synthetic fixtures shared by the unit and acceptance suites.

#include <random>
#include <set>
#include <vector>

#include "calrec/distribution.hpp"
#include "calrec/ingest.hpp"

namespace synthetic {

using namespace calrec;

/// r(u,i) = a_u * b_i + N(0, sigma), a, b ~ U(0.5, 1.5), each pair observed
/// with probability `density`. Scale is (0, 5).
inline InteractionSet rank_one(int n_users, int n_items, double density, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> factor(0.5, 1.5), coin(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<double> a(n_users), b(n_items);
    for (auto& x : a) x = factor(rng);
    for (auto& x : b) x = factor(rng);
    InteractionSet s;
    s.scale = {0.0, 5.0};
    for (int u = 0; u < n_users; ++u)
        for (int i = 0; i < n_items; ++i)
            if (coin(rng) < density) s.records.push_back({u, i, a[u] * b[i] + noise(rng), 0});
    return s;
}

/// Two isotropic blobs in `dim` dimensions. Points of blob 0 come first.
/// The blobs' centres sit `separation` internal diameters apart.
inline Matrix two_blobs(int per_blob, int dim, double separation, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix X(2 * per_blob, dim);
    for (int i = 0; i < 2 * per_blob; ++i)
        for (int d = 0; d < dim; ++d) X(i, d) = noise(rng);
    // internal diameter of the realised blobs
    double diameter = 0.0;
    for (int blob = 0; blob < 2; ++blob)
        for (int i = blob * per_blob; i < (blob + 1) * per_blob; ++i)
            for (int j = i + 1; j < (blob + 1) * per_blob; ++j) diameter = std::max(diameter, (X.row(i) - X.row(j)).norm());
    for (int i = per_blob; i < 2 * per_blob; ++i) X(i, 0) += separation * diameter + diameter;
    return X;
}

inline DistributionMatrix as_distribution_matrix(const Matrix& X) {
    DistributionMatrix m;
    for (Eigen::Index i = 0; i < X.rows(); ++i) m.rows.push_back(i + 1);
    for (Eigen::Index g = 0; g < X.cols(); ++g) m.cols.push_back("f" + std::to_string(g));
    m.data = X;
    return m;
}

/// One user's calibration world: a catalog, a candidate list and a preference
/// distribution.
struct World {
    GenreCatalog catalog;
    RankedList candidates;
    GenreDistribution p;
};

/// Candidates are skewed towards genre 0 while the user's history is spread
/// over all genres, so the top of the candidate list is miscalibrated.
inline World miscalibrated_world(std::mt19937_64& rng, int n_genres, int n_candidates, UserId owner = 0) {
    World w;
    for (int g = 0; g < n_genres; ++g) w.catalog.genres.push_back("g" + std::to_string(g));
    std::uniform_int_distribution<int> pick(0, n_genres - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0), score(1.0, 5.0);
    w.candidates.owner = owner;
    for (int i = 0; i < n_candidates; ++i) {
        std::set<int> gs;
        const bool popular = coin(rng) < 0.7;
        gs.insert(popular ? 0 : pick(rng));
        if (coin(rng) < 0.3) gs.insert(pick(rng));
        w.catalog.item_genres[i] = {gs.begin(), gs.end()};
        w.candidates.entries.push_back({i, popular ? score(rng) + 3.0 : score(rng)});
    }
    std::vector<std::pair<ItemId, double>> history;
    for (int i = 0; i < 3 * n_genres; ++i) {
        const ItemId item = 1000 + i;
        w.catalog.item_genres[item] = {i % n_genres};
        history.emplace_back(item, score(rng));
    }
    w.p = preference_distribution(history, w.catalog, owner);
    return w;
}

/// Generic instance: items carry one or two random genres, the history is a
/// random scored subset of the candidates.
inline World random_world(std::mt19937_64& rng, std::size_t n_cand, std::size_t n_genres) {
    World w;
    for (std::size_t g = 0; g < n_genres; ++g) w.catalog.genres.push_back("g" + std::to_string(g));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n_genres) - 1);
    std::uniform_real_distribution<double> score(1.0, 5.0);
    for (std::size_t i = 0; i < n_cand; ++i) {
        std::set<int> gs{pick(rng)};
        if (pick(rng) % 2) gs.insert(pick(rng));
        w.catalog.item_genres[static_cast<ItemId>(i)] = {gs.begin(), gs.end()};
        w.candidates.entries.push_back({static_cast<ItemId>(i), score(rng)});
    }
    std::vector<std::pair<ItemId, double>> profile;
    for (std::size_t i = 0; i < n_cand; ++i)
        if (pick(rng) % 2) profile.emplace_back(static_cast<ItemId>(i), score(rng));
    if (profile.empty()) profile.emplace_back(0, 3.0);
    w.p = preference_distribution(profile, w.catalog);
    return w;
}

}  // namespace synthetic
