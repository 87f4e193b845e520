#include <gtest/gtest.h>

#include <filesystem>

#include "calrec/recommender.hpp"
#include "synthetic.hpp"

using namespace calrec;

namespace {

InteractionSet constant_ratings(double c) {
    InteractionSet s;
    s.scale = {0.0, 5.0};
    for (UserId u = 0; u < 20; ++u)
        for (ItemId i = 0; i < 15; ++i)
            if ((u + i) % 3 != 0) s.records.push_back({u, i, c, 0});
    return s;
}

HyperParams small_hp() {
    HyperParams hp;
    hp.n_factors = 5;
    hp.n_epochs = 30;
    hp.lr_all = 0.01;
    hp.reg_all = 0.02;
    return hp;
}

std::vector<std::string> captured;

}  // namespace

TEST(TrainMf, ConstantSignal) {
    auto data = constant_ratings(3.5);
    auto hp = small_hp();
    hp.n_epochs = 100;
    auto m = train_mf(data, hp, 1);
    for (const auto& r : data.records) EXPECT_NEAR(predict(m, r.user, r.item), 3.5, 0.05);
    EXPECT_NEAR(predict(m, 0, 0), 3.5, 0.05);  // unobserved pair of known ids
}

TEST(TrainMf, RankOneHeldOut) {
    auto data = synthetic::rank_one(200, 100, 0.5, 0.01, 7);
    auto folds = split_folds(data, 5, 3);
    auto [train, test] = train_test_split(data, folds, 0);
    HyperParams hp;
    hp.n_factors = 10;
    hp.n_epochs = 50;
    hp.lr_all = 0.01;
    hp.reg_all = 0.02;
    EXPECT_LE(rmse(train_mf(train, hp, 11), test), 0.1);
}

TEST(TrainMf, DeterministicAndOrderFree) {
    auto data = synthetic::rank_one(30, 20, 0.6, 0.1, 2);
    auto a = train_mf(data, small_hp(), 5);
    auto b = train_mf(data, small_hp(), 5);
    EXPECT_TRUE(a == b);
    std::reverse(data.records.begin(), data.records.end());
    EXPECT_TRUE(train_mf(data, small_hp(), 5) == a);
    EXPECT_FALSE(train_mf(data, small_hp(), 6) == a);
}

TEST(TrainMf, ShapesAndObserver) {
    auto data = synthetic::rank_one(12, 9, 0.8, 0.1, 4);
    int epochs = 0;
    auto m = train_mf(data, small_hp(), 1, [&](int, const MFModel&) { ++epochs; });
    EXPECT_EQ(epochs, 30);
    EXPECT_EQ(m.user_factors.cols(), m.item_factors.cols());
    EXPECT_EQ(m.n_factors(), 5);
    EXPECT_TRUE(std::is_sorted(m.items.begin(), m.items.end()));
}

TEST(TrainMf, Errors) {
    EXPECT_THROW(train_mf(InteractionSet{}, small_hp(), 1), DataError);
    auto hp = small_hp();
    hp.n_factors = 0;
    EXPECT_THROW(train_mf(constant_ratings(1.0), hp, 1), ConfigError);
}

TEST(Predict, UnknownIdsAndClamp) {
    auto m = train_mf(constant_ratings(4.0), small_hp(), 1);
    EXPECT_DOUBLE_EQ(predict(m, 999, 999), m.global_mean);
    m.user_bias.setConstant(10.0);
    EXPECT_EQ(predict(m, 0, 0), 5.0);
    m.user_bias.setConstant(-10.0);
    EXPECT_EQ(predict(m, 0, 0), 0.0);
}

TEST(Candidates, ExcludesSeenAndOrders) {
    auto data = synthetic::rank_one(10, 30, 0.5, 0.1, 9);
    auto m = train_mf(data, small_hp(), 3);
    std::set<ItemId> seen{0, 1, 2};
    auto c = candidates(m, 4, seen, 10);
    ASSERT_EQ(c.size(), 10u);
    for (std::size_t k = 0; k < c.size(); ++k) {
        EXPECT_FALSE(seen.contains(c.entries[k].item));
        if (k) { EXPECT_TRUE(ranks_before(c.entries[k - 1], c.entries[k])); }
    }
    auto one = candidates(m, 4, seen, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one.entries[0], c.entries[0]);
}

TEST(Candidates, ShortListWarns) {
    auto m = train_mf(constant_ratings(3.0), small_hp(), 1);
    std::set<ItemId> seen;
    for (ItemId i = 0; i < 12; ++i) seen.insert(i);
    captured.clear();
    ScopedWarningSink sink([](std::string_view s) { captured.emplace_back(s); });
    auto c = candidates(m, 0, seen, 100);
    EXPECT_EQ(c.size(), 3u);
    ASSERT_EQ(captured.size(), 1u);
    EXPECT_NE(captured[0].find("only 3"), std::string::npos);
}

TEST(Candidates, TiesByItemId) {
    auto m = train_mf(constant_ratings(3.0), small_hp(), 1);
    m.item_factors.setZero();
    m.item_bias.setZero();
    auto c = candidates(m, 0, {}, 5);
    for (std::size_t k = 0; k < c.size(); ++k) EXPECT_EQ(c.entries[k].item, static_cast<ItemId>(k));
}

TEST(RandomSearch, SamplingIsDeterministic) {
    EXPECT_EQ(sample_hyperparams(10, 4), sample_hyperparams(10, 4));
    EXPECT_NE(sample_hyperparams(10, 4), sample_hyperparams(10, 5));
    for (const auto& hp : sample_hyperparams(200, 1)) {
        EXPECT_GE(hp.n_factors, 10);
        EXPECT_LE(hp.n_factors, 150);
        EXPECT_GE(hp.lr_all, 0.001);
        EXPECT_LE(hp.lr_all, 0.01);
        EXPECT_GE(hp.reg_all, 0.01);
        EXPECT_LE(hp.reg_all, 0.1);
    }
}

TEST(RandomSearch, ArgminPicksEarliestLowest) {
    EXPECT_EQ(argmin_first({0.9, 0.4, 0.7}), 1u);
    EXPECT_EQ(argmin_first({0.4, 0.9, 0.4}), 0u);
    EXPECT_EQ(argmin_first({2.0}), 0u);
    EXPECT_THROW(argmin_first({}), ConfigError);
}

TEST(RandomSearch, SingleTrial) {
    auto data = synthetic::rank_one(15, 20, 0.6, 0.1, 3);
    auto r = random_search(data, 1, 3, 8);
    ASSERT_EQ(r.trials.size(), 1u);
    EXPECT_EQ(r.best, r.trials[0]);
    EXPECT_EQ(r.best, sample_hyperparams(1, 8)[0]);
    EXPECT_THROW(random_search(data, 0, 3, 8), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
    auto m = train_mf(synthetic::rank_one(8, 6, 0.9, 0.3, 1), small_hp(), 2);
    auto path = std::filesystem::temp_directory_path() / "calrec-model.txt";
    save_model(m, path);
    auto back = load_model(path);
    std::filesystem::remove(path);
    EXPECT_TRUE(back == m);
}

TEST(Checkpoint, RejectsForeignFile) {
    auto path = std::filesystem::temp_directory_path() / "calrec-not-a-model.txt";
    std::ofstream(path) << "hello 1\n";
    EXPECT_THROW(load_model(path), ParseError);
    std::filesystem::remove(path);
}

TEST(ListsCsv, RoundTrip) {
    std::vector<RankedList> lists{{1, {{5, 4.25}, {3, 4.0}}}, {2, {{7, 0.1}}}};
    auto path = std::filesystem::temp_directory_path() / "calrec-lists.csv";
    save_lists_csv(lists, path);
    EXPECT_EQ(load_lists_csv(path), lists);
    std::filesystem::remove(path);
}
