#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "calrec/ingest.hpp"

namespace fs = std::filesystem;
using namespace calrec;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() /
                ("calrec-ingest-" + std::to_string(std::random_device{}()) + "-" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path file(const std::string& name, const std::string& content) const {
        std::ofstream(path_ / name, std::ios::binary) << content;
        return path_ / name;
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

InteractionSet user_block(UserId user, int n, ItemId first_item, double score = 4.0) {
    InteractionSet s;
    for (int k = 0; k < n; ++k) s.records.push_back({user, first_item + k, score, 0});
    return s;
}

GenreCatalog catalog_for(ItemId first, ItemId last, std::vector<std::string> genres = {"Drama"}) {
    GenreCatalog c;
    c.genres = std::move(genres);
    for (ItemId i = first; i <= last; ++i) c.item_genres[i] = {0};
    return c;
}

}  // namespace

TEST(LoadMovielens, ParsesDocumentedLines) {
    TempDir dir;
    auto ratings = dir.file("ratings.dat", "1::1193::5::978300760\n1::661::3::978302109\n");
    auto movies = dir.file("movies.dat",
                           "1::Toy Story (1995)::Animation|Children's|Comedy\n"
                           "1193::One Flew Over the Cuckoo's Nest (1975)::Drama\n"
                           "5::Unknown (2000)::(no genres listed)\n");
    auto [set, cat] = load_movielens(ratings, movies);
    ASSERT_EQ(set.size(), 2u);
    EXPECT_EQ(set.records[0], (Interaction{1, 1193, 5.0, 978300760}));
    EXPECT_EQ(cat.genres, (std::vector<std::string>{"Animation", "Children's", "Comedy", "Drama"}));
    EXPECT_EQ(cat.item_genres.at(1).size(), 3u);
    EXPECT_TRUE(cat.item_genres.at(5).empty());
}

TEST(LoadMovielens, EmptyRatingsFile) {
    TempDir dir;
    auto [set, cat] = load_movielens(dir.file("r.dat", ""), dir.file("m.dat", "1::A::Drama\n"));
    EXPECT_TRUE(set.empty());
}

TEST(LoadMovielens, MalformedLineNamesLineNumber) {
    TempDir dir;
    auto ratings = dir.file("r.dat", "1::2::5::10\n1::3::x::11\n");
    try {
        load_movielens_ratings(ratings);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
}

TEST(LoadMovielens, UnknownItemIsKept) {
    TempDir dir;
    auto [set, cat] = load_movielens(dir.file("r.dat", "1::999::4::1\n"), dir.file("m.dat", "1::A::Drama\n"));
    EXPECT_EQ(set.size(), 1u);
    EXPECT_EQ(cat.genres_of(999), nullptr);
}

TEST(LoadCsv, ReadsRowsBySchema) {
    TempDir dir;
    auto path = dir.file("r.csv", "uid,score,iid,ts\n1,4.5,10,100\n1,3,11,101\n2,5,10,102\n");
    CsvSchema schema{"uid", "iid", "score", "ts", ',', {0, 5}};
    auto set = load_csv(path, schema);
    ASSERT_EQ(set.size(), 3u);
    EXPECT_EQ(set.records[0], (Interaction{1, 10, 4.5, 100}));
}

TEST(LoadCsv, MissingColumnIsConfigError) {
    TempDir dir;
    auto path = dir.file("r.csv", "user_id,item_id\n1,2\n");
    EXPECT_THROW(load_csv(path, CsvSchema{}), ConfigError);
}

TEST(LoadCsv, NonNumericScoreNamesRow) {
    TempDir dir;
    auto path = dir.file("r.csv", "user_id,item_id,score\n1,2,4\n1,3,high\n");
    try {
        load_csv(path, CsvSchema{});
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
}

TEST(LoadCsv, DuplicatePairsAreListed) {
    TempDir dir;
    auto path = dir.file("r.csv", "user_id,item_id,score\n1,2,4\n1,2,5\n");
    try {
        load_csv(path, CsvSchema{});
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("(1,2)"), std::string::npos) << e.what();
    }
}

TEST(CleanedFiles, RoundTrip) {
    TempDir dir;
    InteractionSet s{{{1, 10, 4.5, 100}, {2, 11, 0.1, 7}}, {0, 5}};
    save_interactions_csv(s, dir.path() / "r.csv");
    auto back = load_csv(dir.path() / "r.csv", CsvSchema{"user_id", "item_id", "score", "timestamp", ',', {0, 5}});
    EXPECT_EQ(back, s);

    GenreCatalog c;
    c.genres = {"Action", "Sci-Fi"};
    c.item_genres = {{10, {0, 1}}, {11, {1}}};
    save_genres_csv(c, dir.path() / "g.csv");
    EXPECT_EQ(load_genres_csv(dir.path() / "g.csv"), c);
}

TEST(Preprocess, DropsUserBelowThreshold) {
    auto set = user_block(1, 50, 0);
    for (auto& r : user_block(2, 49, 0).records) set.records.push_back(r);
    auto [out, cat] = preprocess(set, catalog_for(0, 60));
    for (const auto& r : out.records) EXPECT_EQ(r.user, 1);
    EXPECT_EQ(out.size(), 50u);
}

TEST(Preprocess, DropsGenrelessItemEvenWhenPopular) {
    InteractionSet set;
    for (UserId u = 0; u < 1000; ++u) {
        auto b = user_block(u, 50, 0);
        set.records.insert(set.records.end(), b.records.begin(), b.records.end());
        set.records.push_back({u, 999, 5.0, 0});
    }
    auto cat = catalog_for(0, 49);
    cat.item_genres[999] = {};
    auto [out, cleaned] = preprocess(set, cat);
    EXPECT_EQ(out.size(), 50'000u);
    EXPECT_EQ(cleaned.genres_of(999), nullptr);
}

TEST(Preprocess, CleanSetIsUnchangedAndIdempotent) {
    auto set = user_block(1, 50, 0);
    auto cat = catalog_for(0, 49);
    auto [once, cat1] = preprocess(set, cat);
    EXPECT_EQ(once, set);
    EXPECT_EQ(cat1, cat);
    auto [twice, cat2] = preprocess(once, cat1);
    EXPECT_EQ(twice, once);
    EXPECT_EQ(cat2, cat1);
}

TEST(Preprocess, CascadesToFixpoint) {
    // user 2 survives only thanks to item 100, which only user 3 also rated;
    // user 3 is below threshold, so nothing cascades away from user 2 here,
    // but item 200 (rated only by user 3) must disappear with user 3.
    InteractionSet set = user_block(2, 50, 0);
    set.records.push_back({3, 200, 4.0, 0});
    auto cat = catalog_for(0, 49, {"Drama", "Horror"});
    cat.item_genres[200] = {1};
    auto [out, cleaned] = preprocess(set, cat);
    EXPECT_EQ(out.size(), 50u);
    EXPECT_EQ(cleaned.genres, std::vector<std::string>{"Drama"});
    EXPECT_EQ(cleaned.genres_of(200), nullptr);
}

TEST(Preprocess, RemovingGenrelessItemCanRemoveUser) {
    InteractionSet set = user_block(1, 49, 0);
    set.records.push_back({1, 500, 3.0, 0});  // 50 total, one genreless
    auto cat = catalog_for(0, 48);
    EXPECT_THROW(preprocess(set, cat), DataError);
}

TEST(Preprocess, InvariantsOnRandomData) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        InteractionSet set;
        GenreCatalog cat;
        cat.genres = {"A", "B", "C", "D"};
        std::uniform_int_distribution<int> g(0, 4);
        for (ItemId i = 0; i < 80; ++i) {
            int k = g(rng);
            std::vector<int> gs;
            for (int x = 0; x < k; ++x) gs.push_back(x);
            cat.item_genres[i] = gs;
        }
        std::uniform_int_distribution<int> count(20, 79);
        for (UserId u = 0; u < 30; ++u) {
            std::vector<ItemId> items(80);
            std::iota(items.begin(), items.end(), 0);
            std::shuffle(items.begin(), items.end(), rng);
            for (int k = 0, n = count(rng); k < n; ++k) set.records.push_back({u, items[k], 3.0, 0});
        }
        try {
            auto [out, cleaned] = preprocess(set, cat, 30);
            std::map<UserId, int> per_user;
            std::map<ItemId, int> per_item;
            for (const auto& r : out.records) {
                ++per_user[r.user];
                ++per_item[r.item];
                ASSERT_NE(cleaned.genres_of(r.item), nullptr);
                EXPECT_FALSE(cleaned.genres_of(r.item)->empty());
            }
            for (auto [u, n] : per_user) EXPECT_GE(n, 30);
            for (const auto& [i, gs] : cleaned.item_genres) EXPECT_GT(per_item[i], 0);
            auto [again, cat2] = preprocess(out, cleaned, 30);
            EXPECT_EQ(again, out);
            EXPECT_EQ(cat2, cleaned);
        } catch (const DataError&) {
        }
    }
}

TEST(Binarize, Thresholds) {
    InteractionSet five{{{1, 1, 4.0, 0}, {1, 2, 3.9, 0}, {1, 3, 5.0, 0}}, {0, 5}};
    auto b5 = binarize(five);
    EXPECT_EQ(b5.records[0].score, 1.0);
    EXPECT_EQ(b5.records[1].score, 0.0);
    EXPECT_EQ(b5.records[2].score, 1.0);
    EXPECT_EQ(b5.scale, (ScoreScale{0, 1}));

    InteractionSet ten{{{1, 1, 8.0, 0}, {1, 2, 7.99, 0}}, {0, 10}};
    auto b10 = binarize(ten);
    EXPECT_EQ(b10.records[0].score, 1.0);
    EXPECT_EQ(b10.records[1].score, 0.0);
}

TEST(Binarize, UnsupportedScale) {
    InteractionSet s{{{1, 1, 3.0, 0}}, {0, 7}};
    try {
        binarize(s);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("0-5 and 0-10"), std::string::npos);
    }
}

TEST(SplitFolds, EvenDivision) {
    auto f = split_folds(user_block(1, 50, 0), 5, 42);
    std::vector<int> sizes(5, 0);
    for (const auto& [_, fold] : f.assignment) ++sizes[fold];
    for (int s : sizes) EXPECT_EQ(s, 10);
}

TEST(SplitFolds, DeterministicAndOrderIndependent) {
    InteractionSet set;
    for (UserId u = 0; u < 7; ++u)
        for (auto& r : user_block(u, 23 + static_cast<int>(u), 100 * u).records) set.records.push_back(r);
    auto a = split_folds(set, 5, 9);
    auto shuffled = set;
    std::mt19937_64 rng(1);
    std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
    auto b = split_folds(shuffled, 5, 9);
    EXPECT_EQ(a.assignment, b.assignment);
    EXPECT_NE(a.assignment, split_folds(set, 5, 10).assignment);

    std::map<UserId, std::vector<int>> sizes;
    for (const auto& [key, fold] : a.assignment) {
        sizes[key.first].resize(5);
        ++sizes[key.first][fold];
    }
    for (const auto& [u, s] : sizes) EXPECT_LE(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()), 1);

    // the folds partition each user's interactions
    for (int f = 0; f < 5; ++f) {
        auto [train, test] = train_test_split(set, a, f);
        EXPECT_EQ(train.size() + test.size(), set.size());
    }
}

TEST(SplitFolds, TooFewInteractions) {
    try {
        split_folds(user_block(77, 4, 0), 5, 1);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("77"), std::string::npos);
    }
}
