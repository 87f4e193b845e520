// Acceptance criteria 1-12, one test each. Every test checks its own time
// budget; main() prints one PASS/FAIL/SKIP line per criterion.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "calrec/calibrate.hpp"
#include "calrec/experiment.hpp"
#include "calrec/metrics.hpp"
#include "calrec/recommender.hpp"
#include "calrec/structure.hpp"
#include "synthetic.hpp"

using namespace calrec;

namespace {

class Budget {
public:
    explicit Budget(double seconds) : limit_(seconds), start_(std::chrono::steady_clock::now()) {}
    ~Budget() {
        const std::chrono::duration<double> s = std::chrono::steady_clock::now() - start_;
        EXPECT_LT(s.count(), limit_) << "time budget exceeded";
    }

private:
    double limit_;
    std::chrono::steady_clock::time_point start_;
};

RankedList sorted_head(RankedList c, std::size_t n) {
    std::sort(c.entries.begin(), c.entries.end(), ranks_before);
    return c.head(n);
}

// Textbook O(n^2) silhouette; noise is an ordinary group, singletons score 0.
double brute_silhouette(const Matrix& X, const std::vector<int>& labels) {
    const auto n = static_cast<std::size_t>(X.rows());
    std::set<int> groups(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double a_sum = 0.0;
        int a_n = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) {
                a_sum += (X.row(i) - X.row(j)).norm();
                ++a_n;
            }
        if (a_n == 0) continue;
        const double a = a_sum / a_n;
        double b = 1e300;
        for (int g : groups) {
            if (g == labels[i]) continue;
            double s = 0.0;
            int c = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (labels[j] == g) {
                    s += (X.row(i) - X.row(j)).norm();
                    ++c;
                }
            b = std::min(b, s / c);
        }
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

Labeling labeling(std::vector<int> labels, Algorithm a = Algorithm::kmeans) {
    std::vector<UserId> users(labels.size());
    std::iota(users.begin(), users.end(), UserId{1});
    const int groups = count_groups(labels);
    return Labeling{users, std::move(labels), groups, a, {}};
}

// Exact partition recovery: the labels split the first half from the second.
bool recovers_halves(const std::vector<int>& labels) {
    const std::size_t half = labels.size() / 2;
    std::vector<int> truth(labels.size());
    for (std::size_t i = half; i < labels.size(); ++i) truth[i] = 1;
    return aligned_agreement(truth, labels, false) == labels.size();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> csv_bundle(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().extension() == ".csv")
            out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    return out;
}

}  // namespace

TEST(Acceptance, C01_WorkedExample) {
    Budget budget(1.0);
    GenreCatalog cat;
    cat.genres = {"Action", "Adventure", "Comedy", "Crime", "Drama", "Romance", "Sci-Fi"};
    cat.item_genres[1] = {1, 2};
    cat.item_genres[2] = {4};
    cat.item_genres[3] = {0, 1, 3, 4};
    const std::vector<std::pair<ItemId, double>> profile{{1, 5.0}, {2, 4.0}, {3, 4.0}};
    const auto p = preference_distribution(profile, cat);
    const double want_p[] = {0.25, 0.3889, 0.5, 0.25, 0.625, 0.0, 0.0};
    for (std::size_t g = 0; g < 7; ++g) EXPECT_NEAR(p[g], want_p[g], 1e-3) << cat.genres[g];

    const GenreDistribution q{0, Stage::calibrated, {0.0, 0.35, 0.563, 0.4, 0.5, 0.0, 0.0}};
    const auto qt = blend(q, p, 0.01);
    const double want_qt[] = {0.0025, 0.35038, 0.56237, 0.3985, 0.50125};
    for (std::size_t g = 0; g < 5; ++g) EXPECT_NEAR(qt[g], want_qt[g], 1e-5) << cat.genres[g];
}

TEST(Acceptance, C02_LambdaZeroIsHead) {
    Budget budget(5.0);
    std::mt19937_64 rng(2002);
    CalibrationConfig cfg;
    int identical = 0;
    for (UserId u = 0; u < 200; ++u) {
        auto w = synthetic::miscalibrated_world(rng, 8, 100, u);
        identical += greedy_select(w.candidates, w.p, 0.0, w.catalog, cfg) == sorted_head(w.candidates, 10);
    }
    EXPECT_EQ(identical, 200);
}

TEST(Acceptance, C03_CalibrationMonotone) {
    Budget budget(30.0);
    std::mt19937_64 rng(3003);
    CalibrationConfig cfg;
    int improved = 0;
    const int users = 200;
    double mace0 = 0.0, mace1 = 0.0;
    for (UserId u = 0; u < users; ++u) {
        auto w = synthetic::miscalibrated_world(rng, 6, 100, u);
        const auto l0 = greedy_select(w.candidates, w.p, 0.0, w.catalog, cfg);
        const auto l1 = greedy_select(w.candidates, w.p, 1.0, w.catalog, cfg);
        improved += list_miscalibration(l1, w.p, w.catalog, cfg) <= list_miscalibration(l0, w.p, w.catalog, cfg);
        mace0 += user_calibration_error(w.p, l0, w.catalog);
        mace1 += user_calibration_error(w.p, l1, w.catalog);
    }
    EXPECT_EQ(improved, users);
    EXPECT_LE(mace1 / users, mace0 / users);
}

TEST(Acceptance, C04_GreedyNearExhaustive) {
    Budget budget(10.0);
    CalibrationConfig cfg;
    cfg.list_size = 3;
    for (double lambda : {0.3, 0.7, 1.0}) {
        std::mt19937_64 rng(4004);
        int good = 0, good_as_set = 0;
        for (int t = 0; t < 25; ++t) {
            auto w = synthetic::random_world(rng, 6, 6);
            const auto list = greedy_select(w.candidates, w.p, lambda, w.catalog, cfg);
            const double got = tradeoff_objective(list, w.p, lambda, w.catalog, cfg);
            std::vector<double> best_order;
            for (int a = 0; a < 6; ++a)
                for (int b = a + 1; b < 6; ++b)
                    for (int c = b + 1; c < 6; ++c) {
                        std::vector<int> idx{a, b, c};
                        double best = -1e300;
                        do {
                            RankedList l{0, {}};
                            for (int i : idx) l.entries.push_back(w.candidates.entries[static_cast<std::size_t>(i)]);
                            best = std::max(best, tradeoff_objective(l, w.p, lambda, w.catalog, cfg));
                        } while (std::next_permutation(idx.begin(), idx.end()));
                        best_order.push_back(best);
                    }
            std::sort(best_order.begin(), best_order.end(), std::greater<>());
            // top 10% of the 20 subsets is the best two
            good += got >= best_order[1] - 1e-12;
            // diagnostic only: the greedy set in its best (score-descending) order
            const double as_set = tradeoff_objective(sorted_head(list, 3), w.p, lambda, w.catalog, cfg);
            good_as_set += as_set >= best_order[1] - 1e-12;
        }
        EXPECT_GE(good, 23) << "lambda " << lambda;
        std::cout << "  lambda " << lambda << ": greedy list within top 10% in " << good
                  << "/25 (greedy set in best order: " << good_as_set << "/25)\n";
    }
}

TEST(Acceptance, C05_SilhouetteOracle) {
    Budget budget(10.0);
    std::mt19937_64 rng(5005);
    std::uniform_int_distribution<int> size(6, 50), dims(1, 10), groups(2, 5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const int n = size(rng), g = dims(rng), k = groups(rng);
        Matrix X(n, g);
        for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i < k ? i : static_cast<int>(rng() % k);
        worst = std::max(worst, std::abs(silhouette(pairwise_distances(X, Metric::euclidean), labels) -
                                         brute_silhouette(X, labels)));
    }
    EXPECT_LE(worst, 1e-9);
}

TEST(Acceptance, C06_JaccardProperties) {
    Budget budget(1.0);
    const auto a = labeling({0, 0, 1, 1});
    EXPECT_EQ(jaccard_labels(a, a), 1.0);
    EXPECT_EQ(jaccard_labels(labeling({0, 1, 0, 1}, Algorithm::isolation_forest),
                             labeling({1, 0, 1, 0}, Algorithm::isolation_forest)),
              0.0);
    EXPECT_EQ(jaccard_labels(a, labeling({0, 0, 1, 0})), 0.6);
    std::vector<int> two(200), many(200);
    for (int i = 0; i < 200; ++i) {
        two[static_cast<std::size_t>(i)] = i < 100 ? 0 : 1;
        many[static_cast<std::size_t>(i)] = i % 97;
    }
    EXPECT_LT(jaccard_labels(labeling(two), labeling(many)), 0.05);
}

TEST(Acceptance, C07_BlobRecovery) {
    Budget budget(60.0);
    std::mt19937_64 rng(7007);
    const auto X = synthetic::as_distribution_matrix(synthetic::two_blobs(100, 5, 10.0, rng));
    EXPECT_TRUE(recovers_halves(fit_partitional(PartitionalMethod::kmeans, 2, X, 1).labels)) << "kmeans";
    EXPECT_TRUE(recovers_halves(fit_partitional(PartitionalMethod::bisecting, 2, X, 1).labels)) << "bisecting";
    EXPECT_TRUE(recovers_halves(fit_partitional(PartitionalMethod::fuzzy, 2, X, 1).labels)) << "fuzzy";
    EXPECT_TRUE(recovers_halves(fit_agglomerative(2, X).labels)) << "agglomerative";
    EXPECT_TRUE(recovers_halves(fit_gaussian_mixture(2, X, 1).labels)) << "gaussian mixture";

    // DBSCAN: eps tuned by silhouette over a coarse grid
    SearchSpace space;
    space.eps = {0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
    space.min_samples = {5};
    space.metrics = {Metric::euclidean};
    const auto db = grid_search(Algorithm::dbscan, space, X, 1);
    EXPECT_TRUE(recovers_halves(db.labeling.labels)) << "dbscan eps " << db.config.describe();

    const auto full = SearchSpace::full();
    for (Algorithm a : {Algorithm::kmeans, Algorithm::bisecting_kmeans, Algorithm::fuzzy_cmeans}) {
        const auto r = grid_search(a, full, X, 1);
        EXPECT_EQ(r.config.n_clusters.value_or(-1), 2) << algorithm_name(a);
    }
}

TEST(Acceptance, C08_PlantedOutlier) {
    Budget budget(60.0);
    std::map<OutlierMethod, int> flagged;
    for (int trial = 0; trial < 100; ++trial) {
        std::mt19937_64 rng(8000 + static_cast<std::uint64_t>(trial));
        std::normal_distribution<double> n(0.0, 1.0);
        Matrix X(101, 3);
        for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = n(rng);
        Eigen::RowVector3d dir(n(rng), n(rng), n(rng));
        X.row(100) = 50.0 * dir.normalized();
        const auto M = synthetic::as_distribution_matrix(X);
        OutlierParams p;
        p.n_neighbors = 5;
        p.nu = 0.05;
        for (OutlierMethod m : {OutlierMethod::iforest, OutlierMethod::lof, OutlierMethod::envelope})
            flagged[m] += fit_outlier(m, p, M, static_cast<std::uint64_t>(trial)).labels[100] == 1;
    }
    EXPECT_GE(flagged[OutlierMethod::iforest], 95) << "isolation forest";
    EXPECT_GE(flagged[OutlierMethod::lof], 95) << "lof";
    EXPECT_GE(flagged[OutlierMethod::envelope], 95) << "envelope";
    std::cout << "  flagged: iforest " << flagged[OutlierMethod::iforest] << ", lof " << flagged[OutlierMethod::lof]
              << ", envelope " << flagged[OutlierMethod::envelope] << " of 100\n";
}

TEST(Acceptance, C09_FactorizationRankOne) {
    Budget budget(30.0);
    const auto data = synthetic::rank_one(200, 100, 0.5, 0.01, 9009);
    const auto folds = split_folds(data, 5, 9);
    auto [train, test] = train_test_split(data, folds, 0);
    HyperParams hp;
    hp.n_factors = 10;
    hp.n_epochs = 50;
    const double err = rmse(train_mf(train, hp, 9), test);
    std::cout << "  held-out rmse " << err << '\n';
    EXPECT_LE(err, 0.1);
}

TEST(Acceptance, C10_NdcgGolden) {
    Budget budget(1.0);
    EXPECT_NEAR(ndcg(RankedList{0, {{1, 1.0}, {2, 2.0}}}), 0.7967, 1e-4);
    EXPECT_EQ(ndcg(RankedList{0, {{2, 2.0}, {1, 1.0}}}), 1.0);
    EXPECT_EQ(ndcg(RankedList{0, {{5, 4.5}, {3, 3.0}, {9, 2.5}, {1, 0.5}}}), 1.0);
}

TEST(Acceptance, C11_EndToEndDeterminism) {
    Budget budget(300.0);
    const fs::path config = fs::path(CALREC_SOURCE_DIR) / "data" / "mini" / "config.json";
    ASSERT_EQ(load_config(config).score_modes.size(), 2u);
    const fs::path base = fs::temp_directory_path() / "calrec-acceptance";
    fs::remove_all(base);
    for (const char* run : {"a", "b"}) {
        const std::string cmd = std::string("\"") + CALREC_CLI + "\" run-all --config \"" + config.string() +
                                "\" --out \"" + (base / run).string() + "\"";
        ASSERT_EQ(std::system(cmd.c_str()), 0) << cmd;
    }
    const auto a = csv_bundle(base / "a"), b = csv_bundle(base / "b");
    EXPECT_GT(a.size(), 100u);
    EXPECT_TRUE(a == b) << "csv bundles differ";

    for (const char* mode : {"original", "binary"}) {
        const auto reports = load_reports_csv(base / "a" / ("reports_" + std::string(mode) + ".csv"));
        std::set<std::string> metrics;
        for (const auto& r : reports) metrics.insert(r.metric);
        for (const char* m : {"map", "mrr", "mace", "jaccard", "silhouette"})
            EXPECT_TRUE(metrics.contains(m)) << mode << " " << m;
    }
    const auto side_by_side = slurp(base / "a" / "ranking-modes.csv");
    EXPECT_EQ(side_by_side.substr(0, side_by_side.find('\n')), "dataset,metric,stage,original,original_sd,binary,binary_sd");
    fs::remove_all(base);
}

TEST(Acceptance, C12_MovieLens1M) {
    fs::path dir = fs::path(CALREC_SOURCE_DIR) / "data" / "ml-1m";
    if (const char* env = std::getenv("CALREC_ML1M_DIR"); env && *env) dir = env;
    if (!fs::exists(dir / "ratings.dat") || !fs::exists(dir / "movies.dat"))
        GTEST_SKIP() << "MovieLens 1M not found in " << dir.string();

    auto [raw, raw_cat] = load_movielens(dir / "ratings.dat", dir / "movies.dat");
    auto [clean, cat] = preprocess(raw, raw_cat, 50);
    std::set<UserId> users;
    std::set<ItemId> items;
    for (const auto& r : clean.records) {
        users.insert(r.user);
        items.insert(r.item);
    }
    EXPECT_EQ(users.size(), 4247u);
    EXPECT_EQ(items.size(), 3883u);
    EXPECT_EQ(clean.size(), 940971u);
    EXPECT_EQ(cat.size(), 18u);

    // soft check: k chosen on the preference matrix, reported only
    std::vector<GenreDistribution> prefs;
    for (const auto& [u, its] : group_by_user(clean)) prefs.push_back(preference_distribution(its, cat, u));
    const auto X = distribution_matrix(prefs, cat);
    int picked_two = 0;
    const Algorithm partitional[] = {Algorithm::kmeans, Algorithm::bisecting_kmeans, Algorithm::fuzzy_cmeans,
                                     Algorithm::agglomerative};
    for (Algorithm a : partitional) {
        const auto r = grid_search(a, SearchSpace::full(), X, 42);
        std::cout << "  " << algorithm_name(a) << " picks " << r.config.describe() << '\n';
        picked_two += r.config.n_clusters == 2;
    }
    std::cout << "  k=2 chosen by " << picked_two << "/" << std::size(partitional) << " partitional learners\n";
}

namespace {

class CriterionPrinter : public ::testing::EmptyTestEventListener {
public:
    void OnTestEnd(const ::testing::TestInfo& info) override {
        const auto* r = info.result();
        const char* verdict = r->Skipped() ? "SKIP" : r->Passed() ? "PASS" : "FAIL";
        char line[160];
        std::snprintf(line, sizeof line, "%s %s (%.2f s)", verdict, info.name(),
                      static_cast<double>(r->elapsed_time()) / 1000.0);
        lines_.emplace_back(line);
        std::cout << line << std::endl;
    }
    void OnTestProgramEnd(const ::testing::UnitTest&) override {
        std::cout << "\nacceptance summary\n";
        for (const auto& l : lines_) std::cout << "  " << l << '\n';
    }

private:
    std::vector<std::string> lines_;
};

}  // namespace

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    ::testing::UnitTest::GetInstance()->listeners().Append(new CriterionPrinter);
    return RUN_ALL_TESTS();
}
