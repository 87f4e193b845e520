#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/csv.hpp"
#include "calrec/distribution.hpp"
#include "calrec/ingest.hpp"

namespace calrec {

struct HyperParams {
    int n_factors = 100;
    int n_epochs = 20;
    double lr_all = 0.005;
    double reg_all = 0.02;

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// Biased matrix factorisation: r(u,i) = mu + b_u + b_i + <p_u, q_i>.
struct MFModel {
    double global_mean = 0.0;
    ScoreScale scale;
    std::vector<UserId> users;  // ascending
    std::vector<ItemId> items;  // ascending
    Eigen::VectorXd user_bias;
    Eigen::VectorXd item_bias;
    Matrix user_factors;
    Matrix item_factors;

    [[nodiscard]] int n_factors() const { return static_cast<int>(user_factors.cols()); }

    [[nodiscard]] Eigen::Index user_row(UserId u) const {
        auto it = std::lower_bound(users.begin(), users.end(), u);
        return it != users.end() && *it == u ? it - users.begin() : -1;
    }
    [[nodiscard]] Eigen::Index item_row(ItemId i) const {
        auto it = std::lower_bound(items.begin(), items.end(), i);
        return it != items.end() && *it == i ? it - items.begin() : -1;
    }

    friend bool operator==(const MFModel& a, const MFModel& b) {
        return a.global_mean == b.global_mean && a.scale == b.scale && a.users == b.users && a.items == b.items &&
               a.user_bias == b.user_bias && a.item_bias == b.item_bias && a.user_factors == b.user_factors &&
               a.item_factors == b.item_factors;
    }
};

inline double raw_predict(const MFModel& m, Eigen::Index u, Eigen::Index i) {
    double r = m.global_mean;
    if (u >= 0) r += m.user_bias[u];
    if (i >= 0) r += m.item_bias[i];
    if (u >= 0 && i >= 0) r += m.user_factors.row(u).dot(m.item_factors.row(i));
    return r;
}

/// Prediction clamped to the training scale; unknown ids contribute nothing.
inline double predict(const MFModel& m, UserId user, ItemId item) {
    return std::clamp(raw_predict(m, m.user_row(user), m.item_row(item)), m.scale.min, m.scale.max);
}

inline double rmse(const MFModel& m, const InteractionSet& data) {
    if (data.empty()) return 0.0;
    double se = 0.0;
    for (const auto& r : data.records) {
        const double e = r.score - predict(m, r.user, r.item);
        se += e * e;
    }
    return std::sqrt(se / static_cast<double>(data.size()));
}

using EpochObserver = std::function<void(int epoch, const MFModel&)>;

/// SGD on squared error with L2 regularisation. Factors start from N(0, 0.1),
/// biases from 0; each epoch visits the ratings in a seeded random order.
inline MFModel train_mf(const InteractionSet& train, const HyperParams& hp, std::uint64_t seed,
                        const EpochObserver& observer = {}) {
    if (train.empty()) throw DataError("train_mf: empty training set");
    if (hp.n_factors < 1 || hp.n_epochs < 0) throw ConfigError("train_mf: invalid hyperparameters");

    MFModel m;
    m.scale = train.scale;
    {
        std::set<UserId> us;
        std::set<ItemId> is;
        for (const auto& r : train.records) {
            us.insert(r.user);
            is.insert(r.item);
        }
        m.users.assign(us.begin(), us.end());
        m.items.assign(is.begin(), is.end());
    }

    const auto nu = static_cast<Eigen::Index>(m.users.size());
    const auto ni = static_cast<Eigen::Index>(m.items.size());
    const Eigen::Index f = hp.n_factors;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> init(0.0, 0.1);
    m.user_bias = Eigen::VectorXd::Zero(nu);
    m.item_bias = Eigen::VectorXd::Zero(ni);
    m.user_factors.resize(nu, f);
    m.item_factors.resize(ni, f);
    for (Eigen::Index r = 0; r < nu; ++r)
        for (Eigen::Index c = 0; c < f; ++c) m.user_factors(r, c) = init(rng);
    for (Eigen::Index r = 0; r < ni; ++r)
        for (Eigen::Index c = 0; c < f; ++c) m.item_factors(r, c) = init(rng);

    struct Sample {
        Eigen::Index u, i;
        double r;
    };
    std::vector<Sample> samples;
    samples.reserve(train.size());
    for (const auto& r : train.records) samples.push_back({m.user_row(r.user), m.item_row(r.item), r.score});
    // canonical order before shuffling, so record order in the input does not matter
    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
        return a.u != b.u ? a.u < b.u : a.i < b.i;
    });

    double sum = 0.0;
    for (const auto& s : samples) sum += s.r;
    m.global_mean = sum / static_cast<double>(samples.size());

    const double lr = hp.lr_all, reg = hp.reg_all;
    Eigen::VectorXd pu(f);
    for (int epoch = 0; epoch < hp.n_epochs; ++epoch) {
        std::shuffle(samples.begin(), samples.end(), rng);
        for (const auto& s : samples) {
            const double err = s.r - raw_predict(m, s.u, s.i);
            m.user_bias[s.u] += lr * (err - reg * m.user_bias[s.u]);
            m.item_bias[s.i] += lr * (err - reg * m.item_bias[s.i]);
            pu = m.user_factors.row(s.u);
            m.user_factors.row(s.u) += lr * (err * m.item_factors.row(s.i) - reg * m.user_factors.row(s.u));
            m.item_factors.row(s.i) += lr * (err * pu.transpose() - reg * m.item_factors.row(s.i));
        }
        if (observer) observer(epoch, m);
    }
    return m;
}

/// Top-n items not in `seen`, ranked by prediction then ascending item id.
inline RankedList candidates(const MFModel& m, UserId user, const std::set<ItemId>& seen, std::size_t n = 100) {
    RankedList out{user, {}};
    const auto u = m.user_row(user);
    for (std::size_t idx = 0; idx < m.items.size(); ++idx) {
        const ItemId item = m.items[idx];
        if (seen.contains(item)) continue;
        const double s = std::clamp(raw_predict(m, u, static_cast<Eigen::Index>(idx)), m.scale.min, m.scale.max);
        out.entries.push_back({item, s});
    }
    if (out.entries.size() < n) {
        warn("candidates: user " + std::to_string(user) + " has only " + std::to_string(out.entries.size()) +
             " unseen items (requested " + std::to_string(n) + ")");
        std::sort(out.entries.begin(), out.entries.end(), ranks_before);
        return out;
    }
    std::partial_sort(out.entries.begin(), out.entries.begin() + static_cast<std::ptrdiff_t>(n), out.entries.end(),
                      ranks_before);
    out.entries.resize(n);
    return out;
}

// ---------------------------------------------------------------------------
// Hyperparameter search

/// n_factors, n_epochs ~ U{10..150}; lr_all ~ U(0.001, 0.01); reg_all ~ U(0.01, 0.1).
inline std::vector<HyperParams> sample_hyperparams(int n_trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> width(10, 150);
    std::uniform_real_distribution<double> lr(0.001, 0.01);
    std::uniform_real_distribution<double> reg(0.01, 0.1);
    std::vector<HyperParams> out;
    for (int t = 0; t < n_trials; ++t) {
        HyperParams hp;
        hp.n_factors = width(rng);
        hp.n_epochs = width(rng);
        hp.lr_all = lr(rng);
        hp.reg_all = reg(rng);
        out.push_back(hp);
    }
    return out;
}

/// Mean held-out RMSE over a k-fold split of `train`.
inline double cv_rmse(const InteractionSet& train, const HyperParams& hp, int k, std::uint64_t seed) {
    const auto folds = split_folds(train, k, derive_seed(seed, {0xf01d}));
    double total = 0.0;
    for (int f = 0; f < k; ++f) {
        auto [fit, held] = train_test_split(train, folds, f);
        total += rmse(train_mf(fit, hp, derive_seed(seed, {0x7a1, static_cast<std::uint64_t>(f)})), held);
    }
    return total / k;
}

/// Index of the smallest score; ties resolve to the earliest index.
inline std::size_t argmin_first(const std::vector<double>& scores) {
    if (scores.empty()) throw ConfigError("argmin_first: no scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] < scores[best]) best = i;
    return best;
}

struct TuningResult {
    HyperParams best;
    std::vector<HyperParams> trials;
    std::vector<double> cv_rmse;
};

inline TuningResult random_search(const InteractionSet& train, int n_trials, int k, std::uint64_t seed) {
    if (n_trials < 1) throw ConfigError("random_search: n_trials must be >= 1");
    TuningResult out;
    out.trials = sample_hyperparams(n_trials, seed);
    for (std::size_t t = 0; t < out.trials.size(); ++t)
        out.cv_rmse.push_back(cv_rmse(train, out.trials[t], k, derive_seed(seed, {static_cast<std::uint64_t>(t)})));
    out.best = out.trials[argmin_first(out.cv_rmse)];
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: whitespace-separated text, doubles in shortest round-trip form.
//
//   calrec-mf 1
//   global_mean <mu>
//   scale <min> <max>
//   factors <f>
//   users <n>
//   <user_id> <bias> <f1> ... <ff>      (n lines)
//   items <m>
//   <item_id> <bias> <f1> ... <ff>      (m lines)

inline void save_model(const MFModel& m, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    out << "calrec-mf 1\n";
    out << "global_mean " << format_double(m.global_mean) << '\n';
    out << "scale " << format_double(m.scale.min) << ' ' << format_double(m.scale.max) << '\n';
    out << "factors " << m.n_factors() << '\n';
    auto block = [&](const char* tag, const auto& ids, const Eigen::VectorXd& bias, const Matrix& fac) {
        out << tag << ' ' << ids.size() << '\n';
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            out << ids[r] << ' ' << format_double(bias[row]);
            for (Eigen::Index c = 0; c < fac.cols(); ++c) out << ' ' << format_double(fac(row, c));
            out << '\n';
        }
    };
    block("users", m.users, m.user_bias, m.user_factors);
    block("items", m.items, m.item_bias, m.item_factors);
}

inline MFModel load_model(const std::filesystem::path& path) {
    auto in = csv::open_input(path);
    auto fail = [&](const std::string& what) -> void { throw ParseError(path.string() + ": " + what); };
    std::string tag, tok;
    int version = 0;
    if (!(in >> tag >> version) || tag != "calrec-mf" || version != 1) fail("not a calrec-mf v1 checkpoint");
    auto read_double = [&]() {
        double v = 0.0;
        if (!(in >> tok) || !parse_double(tok, v)) fail("bad number '" + tok + "'");
        return v;
    };
    auto expect = [&](const char* want) {
        if (!(in >> tag) || tag != want) fail(std::string("expected '") + want + "'");
    };
    MFModel m;
    expect("global_mean");
    m.global_mean = read_double();
    expect("scale");
    m.scale.min = read_double();
    m.scale.max = read_double();
    expect("factors");
    Eigen::Index f = 0;
    if (!(in >> f) || f < 1) fail("bad factor count");
    auto block = [&](const char* want, auto& ids, Eigen::VectorXd& bias, Matrix& fac) {
        expect(want);
        Eigen::Index n = 0;
        if (!(in >> n) || n < 0) fail("bad row count");
        ids.resize(static_cast<std::size_t>(n));
        bias.resize(n);
        fac.resize(n, f);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (!(in >> ids[static_cast<std::size_t>(r)])) fail("bad id");
            bias[r] = read_double();
            for (Eigen::Index c = 0; c < f; ++c) fac(r, c) = read_double();
        }
        if (!std::is_sorted(ids.begin(), ids.end())) fail("ids not ascending");
    };
    block("users", m.users, m.user_bias, m.user_factors);
    block("items", m.items, m.item_bias, m.item_factors);
    return m;
}

// ---------------------------------------------------------------------------
// Ranked list files: user_id,rank,item_id,predicted_score

inline void save_lists_csv(const std::vector<RankedList>& lists, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    csv::RowWriter w(out);
    w << "user_id" << "rank" << "item_id" << "predicted_score";
    w.end();
    for (const auto& l : lists)
        for (std::size_t r = 0; r < l.size(); ++r) {
            w << l.owner << r + 1 << l.entries[r].item << l.entries[r].score;
            w.end();
        }
}

inline std::vector<RankedList> load_lists_csv(const std::filesystem::path& path) {
    auto in = csv::open_input(path);
    std::string line;
    std::getline(in, line);
    std::vector<RankedList> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        auto f = csv::split(line);
        UserId u = 0;
        std::size_t rank = 0;
        RankedEntry e;
        if (f.size() != 4 || !parse_int(f[0], u) || !parse_int(f[1], rank) || !parse_int(f[2], e.item) ||
            !parse_double(f[3], e.score))
            detail::parse_fail(path, row, "expected user_id,rank,item_id,predicted_score");
        if (out.empty() || out.back().owner != u) out.push_back({u, {}});
        if (rank != out.back().size() + 1) detail::parse_fail(path, row, "ranks must be consecutive from 1");
        out.back().entries.push_back(e);
    }
    return out;
}

}  // namespace calrec
