#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "calrec/calibrate.hpp"
#include "calrec/core.hpp"
#include "calrec/distribution.hpp"
#include "calrec/ingest.hpp"
#include "calrec/metrics.hpp"
#include "calrec/recommender.hpp"
#include "calrec/structure.hpp"

namespace calrec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

enum class ScoreMode { original, binary };

inline std::string mode_name(ScoreMode m) { return m == ScoreMode::original ? "original" : "binary"; }

struct DatasetConfig {
    std::string name = "dataset";
    std::string format = "movielens";  // movielens | csv
    fs::path ratings;
    fs::path movies;  // movielens
    fs::path genres;  // csv: item_id,genres
    CsvSchema schema;
};

struct MfSettings {
    int n_trials = 20;
    int cv_folds = 3;
    std::size_t n_candidates = 100;
    std::optional<HyperParams> fixed;  // skips the search when set
};

struct ExperimentConfig {
    DatasetConfig dataset;
    int min_user_interactions = 50;
    std::vector<ScoreMode> score_modes{ScoreMode::original};
    int folds = 5;
    std::uint64_t seed = 42;
    MfSettings mf;
    CalibrationConfig calibration;
    std::vector<Algorithm> algorithms{std::begin(all_algorithms), std::end(all_algorithms)};
    SearchSpace space = SearchSpace::full();
    fs::path output_dir = "out";
    int workers = 1;

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
        if (dataset.format != "movielens" && dataset.format != "csv")
            fail("dataset.format must be movielens or csv, got '" + dataset.format + "'");
        auto need = [&](const fs::path& p, const char* key) {
            if (p.empty()) fail(std::string("dataset.") + key + " is required");
            if (!fs::exists(p)) fail(std::string("dataset.") + key + " does not exist: " + p.string());
        };
        need(dataset.ratings, "ratings");
        need(dataset.format == "movielens" ? dataset.movies : dataset.genres,
             dataset.format == "movielens" ? "movies" : "genres");
        if (folds < 2) fail("folds must be >= 2");
        if (min_user_interactions < folds) fail("min_user_interactions must be >= folds");
        if (score_modes.empty()) fail("score_mode is empty");
        if (!mf.fixed && mf.n_trials < 1) fail("mf.n_trials must be >= 1");
        if (mf.cv_folds < 2) fail("mf.cv_folds must be >= 2");
        calibration.validate();
        if (mf.n_candidates < calibration.list_size) fail("mf.n_candidates must be >= calibration.list_size");
        std::set<double> lambdas(calibration.lambda_grid.begin(), calibration.lambda_grid.end());
        if (lambdas.size() != calibration.lambda_grid.size()) fail("calibration.lambdas has duplicates");
        if (algorithms.empty()) fail("structure.algorithms is empty");
        std::set<Algorithm> algs(algorithms.begin(), algorithms.end());
        if (algs.size() != algorithms.size()) fail("structure.algorithms has duplicates");
        for (Algorithm a : algorithms)
            if (enumerate_configs(a, space).empty())
                fail("search space is empty for " + std::string(algorithm_name(a)));
        if (workers < 1) fail("workers must be >= 1");
    }
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [k, _] : j.items()) {
        bool known = false;
        for (const char* key : keys) known = known || k == key;
        if (!known) throw ConfigError("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: '" + (where.empty() ? std::string(key) : where + "." + key) + "' has the wrong type");
    }
}

inline HyperParams parse_hyperparams(const json& j) {
    reject_unknown(j, "mf.hyperparams", {"n_factors", "n_epochs", "lr_all", "reg_all"});
    HyperParams hp;
    read(j, "n_factors", hp.n_factors, "mf.hyperparams");
    read(j, "n_epochs", hp.n_epochs, "mf.hyperparams");
    read(j, "lr_all", hp.lr_all, "mf.hyperparams");
    read(j, "reg_all", hp.reg_all, "mf.hyperparams");
    return hp;
}

inline json hyperparams_json(const HyperParams& hp) {
    return {{"n_factors", hp.n_factors}, {"n_epochs", hp.n_epochs}, {"lr_all", hp.lr_all}, {"reg_all", hp.reg_all}};
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Builds a configuration from its JSON form. Relative paths resolve against
/// `base_dir` (the directory of the config file).
inline ExperimentConfig parse_config(const json& j, const fs::path& base_dir = ".") {
    using detail::read;
    detail::reject_unknown(j, "", {"dataset", "min_user_interactions", "score_mode", "folds", "seed", "mf",
                                   "calibration", "structure", "output_dir", "workers"});
    ExperimentConfig cfg;

    if (!j.contains("dataset")) throw ConfigError("config: 'dataset' is required");
    const json& d = j.at("dataset");
    detail::reject_unknown(d, "dataset",
                           {"name", "format", "ratings", "movies", "genres", "columns", "delimiter", "scale"});
    read(d, "name", cfg.dataset.name, "dataset");
    read(d, "format", cfg.dataset.format, "dataset");
    std::string path;
    for (auto [key, target] : {std::pair{"ratings", &cfg.dataset.ratings}, std::pair{"movies", &cfg.dataset.movies},
                               std::pair{"genres", &cfg.dataset.genres}}) {
        path.clear();
        read(d, key, path, "dataset");
        if (!path.empty()) *target = detail::resolve(base_dir, path);
    }
    if (d.contains("columns")) {
        const json& c = d.at("columns");
        detail::reject_unknown(c, "dataset.columns", {"user", "item", "score", "timestamp"});
        read(c, "user", cfg.dataset.schema.user_column, "dataset.columns");
        read(c, "item", cfg.dataset.schema.item_column, "dataset.columns");
        read(c, "score", cfg.dataset.schema.score_column, "dataset.columns");
        read(c, "timestamp", cfg.dataset.schema.timestamp_column, "dataset.columns");
    }
    std::string delim = ",";
    read(d, "delimiter", delim, "dataset");
    if (delim.size() != 1) throw ConfigError("config: dataset.delimiter must be one character");
    cfg.dataset.schema.delimiter = delim[0];
    std::vector<double> scale{0.0, 5.0};
    read(d, "scale", scale, "dataset");
    if (scale.size() != 2 || !(scale[0] < scale[1])) throw ConfigError("config: dataset.scale must be [min, max]");
    cfg.dataset.schema.scale = {scale[0], scale[1]};

    read(j, "min_user_interactions", cfg.min_user_interactions, "");
    std::string mode = "original";
    read(j, "score_mode", mode, "");
    if (mode == "original") cfg.score_modes = {ScoreMode::original};
    else if (mode == "binary") cfg.score_modes = {ScoreMode::binary};
    else if (mode == "both") cfg.score_modes = {ScoreMode::original, ScoreMode::binary};
    else throw ConfigError("config: score_mode must be original, binary or both");
    read(j, "folds", cfg.folds, "");
    read(j, "seed", cfg.seed, "");
    read(j, "workers", cfg.workers, "");

    if (j.contains("mf")) {
        const json& m = j.at("mf");
        detail::reject_unknown(m, "mf", {"n_trials", "cv_folds", "n_candidates", "hyperparams"});
        read(m, "n_trials", cfg.mf.n_trials, "mf");
        read(m, "cv_folds", cfg.mf.cv_folds, "mf");
        read(m, "n_candidates", cfg.mf.n_candidates, "mf");
        if (m.contains("hyperparams")) cfg.mf.fixed = detail::parse_hyperparams(m.at("hyperparams"));
    }

    if (j.contains("calibration")) {
        const json& c = j.at("calibration");
        detail::reject_unknown(c, "calibration",
                               {"lambdas", "alpha", "list_size", "divergence", "epsilon", "blend_target", "denominator"});
        auto& cc = cfg.calibration;
        read(c, "lambdas", cc.lambda_grid, "calibration");
        read(c, "alpha", cc.alpha, "calibration");
        read(c, "list_size", cc.list_size, "calibration");
        read(c, "epsilon", cc.epsilon, "calibration");
        read(c, "blend_target", cc.blend_target, "calibration");
        std::string div = "emanon2", den = "per_genre";
        read(c, "divergence", div, "calibration");
        read(c, "denominator", den, "calibration");
        if (div == "emanon2") cc.divergence = Divergence::emanon2;
        else if (div == "kl") cc.divergence = Divergence::kl;
        else throw ConfigError("config: calibration.divergence must be emanon2 or kl");
        if (den == "per_genre") cc.denominator = Denominator::per_genre;
        else if (den == "global") cc.denominator = Denominator::global;
        else throw ConfigError("config: calibration.denominator must be per_genre or global");
    }

    if (j.contains("structure")) {
        const json& s = j.at("structure");
        detail::reject_unknown(s, "structure", {"algorithms", "search_space"});
        if (s.contains("algorithms")) {
            std::vector<std::string> names;
            read(s, "algorithms", names, "structure");
            cfg.algorithms.clear();
            for (const auto& n : names) cfg.algorithms.push_back(parse_algorithm(n));
        }
        if (s.contains("search_space")) {
            const json& sp = s.at("search_space");
            const std::string w = "structure.search_space";
            detail::reject_unknown(sp, w, {"n_clusters", "n_components", "eps", "min_samples", "metrics",
                                           "n_estimators", "n_neighbors", "nu"});
            read(sp, "n_clusters", cfg.space.n_clusters, w);
            read(sp, "n_components", cfg.space.n_components, w);
            read(sp, "eps", cfg.space.eps, w);
            read(sp, "min_samples", cfg.space.min_samples, w);
            read(sp, "n_estimators", cfg.space.n_estimators, w);
            read(sp, "n_neighbors", cfg.space.n_neighbors, w);
            read(sp, "nu", cfg.space.nu, w);
            if (sp.contains("metrics")) {
                std::vector<std::string> names;
                read(sp, "metrics", names, w);
                cfg.space.metrics.clear();
                for (const auto& n : names) cfg.space.metrics.push_back(parse_metric(n));
            }
        }
    }

    std::string out = "out";
    read(j, "output_dir", out, "");
    cfg.output_dir = detail::resolve(base_dir, out);
    return cfg;
}

/// Reads a JSON config file. CALREC_OUTPUT_DIR, when set, replaces output_dir.
inline ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    auto cfg = parse_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
    if (const char* env = std::getenv("CALREC_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    return cfg;
}

/// Canonical JSON of the settings that determine the results.
inline json config_json(const ExperimentConfig& cfg) {
    json j;
    j["dataset"] = {{"name", cfg.dataset.name},
                    {"format", cfg.dataset.format},
                    {"ratings", cfg.dataset.ratings.filename().string()},
                    {"scale", {cfg.dataset.schema.scale.min, cfg.dataset.schema.scale.max}}};
    j["min_user_interactions"] = cfg.min_user_interactions;
    std::vector<std::string> modes;
    for (auto m : cfg.score_modes) modes.push_back(mode_name(m));
    j["score_modes"] = modes;
    j["folds"] = cfg.folds;
    j["seed"] = cfg.seed;
    j["mf"] = {{"n_trials", cfg.mf.n_trials}, {"cv_folds", cfg.mf.cv_folds}, {"n_candidates", cfg.mf.n_candidates}};
    if (cfg.mf.fixed) j["mf"]["hyperparams"] = detail::hyperparams_json(*cfg.mf.fixed);
    const auto& c = cfg.calibration;
    j["calibration"] = {{"lambdas", c.lambda_grid},
                        {"alpha", c.alpha},
                        {"list_size", c.list_size},
                        {"divergence", c.divergence == Divergence::kl ? "kl" : "emanon2"},
                        {"epsilon", c.epsilon},
                        {"blend_target", c.blend_target},
                        {"denominator", c.denominator == Denominator::global ? "global" : "per_genre"}};
    std::vector<std::string> algs, metrics;
    for (auto a : cfg.algorithms) algs.emplace_back(algorithm_name(a));
    for (auto m : cfg.space.metrics) metrics.emplace_back(metric_name(m));
    j["structure"] = {{"algorithms", algs},
                      {"search_space",
                       {{"n_clusters", cfg.space.n_clusters},
                        {"n_components", cfg.space.n_components},
                        {"eps", cfg.space.eps},
                        {"min_samples", cfg.space.min_samples},
                        {"metrics", metrics},
                        {"n_estimators", cfg.space.n_estimators},
                        {"n_neighbors", cfg.space.n_neighbors},
                        {"nu", cfg.space.nu}}}};
    return j;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_json(cfg).dump())));
    return buf;
}

// ---------------------------------------------------------------------------
// Diagnostics and scheduling

/// An error tagged with the pipeline stage and location it occurred in.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& where, const std::string& what)
        : std::runtime_error("[" + stage + "] " + (where.empty() ? "" : where + ": ") + what), stage_(std::move(stage)) {}
    [[nodiscard]] const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// Runs fn and re-throws any failure as a StageError naming `stage`/`where`.
template <typename F>
decltype(auto) in_stage(const std::string& stage, const std::string& where, F&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, where, e.what());
    }
}

/// Calls fn(0..n-1) on up to `workers` threads. The first failure in index
/// order is re-thrown after all tasks finish.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(n, 0)));
    std::atomic<int> next{0};
    auto work = [&] {
        for (int i; (i = next++) < n;) {
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    const int threads = std::clamp(workers, 1, std::max(n, 1));
    if (threads == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Output layout

struct Layout {
    fs::path root;

    [[nodiscard]] fs::path ingest() const { return root / "ingest"; }
    [[nodiscard]] fs::path mode(ScoreMode m) const { return root / mode_name(m); }
    [[nodiscard]] fs::path fold(ScoreMode m, int f) const { return mode(m) / ("fold-" + std::to_string(f)); }
    [[nodiscard]] fs::path matrix(ScoreMode m, int f, const std::string& stage) const {
        return fold(m, f) / "matrices" / (stage + ".csv");
    }
    [[nodiscard]] fs::path labels(ScoreMode m, int f, Algorithm a, const std::string& stage) const {
        return fold(m, f) / "labels" / std::string(algorithm_name(a)) / (stage + ".csv");
    }
    [[nodiscard]] fs::path timing(const std::string& stage) const { return root / "timings" / (stage + ".json"); }
};

inline constexpr const char* pref_stage = "PREF";

/// Stage names in axis order: PREF, then C@lambda in the grid's order.
inline std::vector<std::string> stage_names(const CalibrationConfig& cal) {
    std::vector<std::string> out{pref_stage};
    for (double l : cal.lambda_grid) out.push_back(stage_label(l));
    return out;
}

// Seeds of every random component, derived from the master seed.
namespace seeds {
inline std::uint64_t folds(std::uint64_t master) { return derive_seed(master, {1}); }
inline std::uint64_t tune(std::uint64_t master, ScoreMode m) {
    return derive_seed(master, {2, static_cast<std::uint64_t>(m)});
}
inline std::uint64_t mf(std::uint64_t master, ScoreMode m, int f) {
    return derive_seed(master, {3, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(f)});
}
inline std::uint64_t structure(std::uint64_t master, ScoreMode m, int f, Algorithm a) {
    return derive_seed(master, {4, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(f),
                                static_cast<std::uint64_t>(a)});
}
}  // namespace seeds

namespace detail {

inline void write_json(const fs::path& path, const json& j) {
    auto out = csv::open_output(path);
    out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing " + path.string() + " (run the earlier stages first)");
    return json::parse(in);
}

class StageTimer {
public:
    StageTimer(const Layout& layout, std::string name)
        : path_(layout.timing(name)), start_(std::chrono::steady_clock::now()) {}
    void done() const {
        const std::chrono::duration<double> s = std::chrono::steady_clock::now() - start_;
        write_json(path_, {{"seconds", s.count()}});
    }

private:
    fs::path path_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage: ingest

struct IngestedData {
    InteractionSet interactions;  // cleaned, original scores
    GenreCatalog catalog;
    FoldAssignment folds;
};

inline std::pair<InteractionSet, GenreCatalog> load_dataset(const DatasetConfig& d) {
    if (d.format == "movielens") return load_movielens(d.ratings, d.movies);
    return {load_csv(d.ratings, d.schema), load_genres_csv(d.genres)};
}

inline IngestedData run_ingest(const ExperimentConfig& cfg) {
    const Layout layout{cfg.output_dir};
    detail::StageTimer timer(layout, "ingest");
    return in_stage("ingest", cfg.dataset.name, [&] {
        cfg.validate();
        auto [raw, raw_cat] = load_dataset(cfg.dataset);
        auto [clean, cat] = preprocess(raw, raw_cat, cfg.min_user_interactions);
        auto folds = split_folds(clean, cfg.folds, seeds::folds(cfg.seed));

        save_interactions_csv(clean, layout.ingest() / "ratings.csv");
        save_genres_csv(cat, layout.ingest() / "genres.csv");
        save_folds_csv(folds, layout.ingest() / "folds.csv");
        auto counts = [](const InteractionSet& s, const GenreCatalog& c) {
            std::set<UserId> users;
            std::set<ItemId> items;
            for (const auto& r : s.records) {
                users.insert(r.user);
                items.insert(r.item);
            }
            return json{{"users", users.size()}, {"items", items.size()}, {"ratings", s.size()}, {"genres", c.size()}};
        };
        detail::write_json(layout.ingest() / "summary.json",
                           {{"raw", counts(raw, raw_cat)},
                            {"cleaned", counts(clean, cat)},
                            {"scale", {clean.scale.min, clean.scale.max}},
                            {"genres", cat.genres}});
        timer.done();
        return IngestedData{std::move(clean), std::move(cat), std::move(folds)};
    });
}

inline IngestedData load_ingested(const ExperimentConfig& cfg) {
    const Layout layout{cfg.output_dir};
    const auto summary = detail::read_json(layout.ingest() / "summary.json");
    CsvSchema schema{"user_id", "item_id", "score", "timestamp", ',',
                     {summary.at("scale")[0].get<double>(), summary.at("scale")[1].get<double>()}};
    IngestedData d;
    d.interactions = load_csv(layout.ingest() / "ratings.csv", schema);
    d.catalog = load_genres_csv(layout.ingest() / "genres.csv");
    d.folds = load_folds_csv(layout.ingest() / "folds.csv");
    // the saved axis drops nothing, so it must match the summary exactly
    if (d.catalog.genres != summary.at("genres").get<std::vector<std::string>>())
        throw DataError("ingest output is inconsistent: genre axis differs from summary.json");
    return d;
}

inline InteractionSet scored(const InteractionSet& original, ScoreMode mode) {
    return mode == ScoreMode::binary ? binarize(original) : original;
}

// ---------------------------------------------------------------------------
// Stage: tune

inline HyperParams run_tune(const ExperimentConfig& cfg, ScoreMode mode) {
    const Layout layout{cfg.output_dir};
    const std::string name = mode_name(mode);
    detail::StageTimer timer(layout, "tune-" + name);
    return in_stage("tune", name, [&] {
        const auto data = load_ingested(cfg);
        json j;
        HyperParams best;
        if (cfg.mf.fixed) {
            best = *cfg.mf.fixed;
            j["source"] = "config";
        } else {
            auto [train, _] = train_test_split(scored(data.interactions, mode), data.folds, 0);
            const auto result = random_search(train, cfg.mf.n_trials, cfg.mf.cv_folds, seeds::tune(cfg.seed, mode));
            best = result.best;
            j["source"] = "random_search";
            j["trials"] = json::array();
            for (std::size_t t = 0; t < result.trials.size(); ++t) {
                auto row = detail::hyperparams_json(result.trials[t]);
                row["cv_rmse"] = result.cv_rmse[t];
                j["trials"].push_back(row);
            }
        }
        j["best"] = detail::hyperparams_json(best);
        detail::write_json(layout.mode(mode) / "hyperparams.json", j);
        timer.done();
        return best;
    });
}

inline HyperParams load_hyperparams(const ExperimentConfig& cfg, ScoreMode mode) {
    const auto j = detail::read_json(Layout{cfg.output_dir}.mode(mode) / "hyperparams.json");
    return detail::parse_hyperparams(j.at("best"));
}

// ---------------------------------------------------------------------------
// Stage: recommend (per fold: train, then top-n unseen candidates per user)

inline void run_recommend(const ExperimentConfig& cfg, ScoreMode mode) {
    const Layout layout{cfg.output_dir};
    const std::string name = mode_name(mode);
    detail::StageTimer timer(layout, "recommend-" + name);
    const auto data = in_stage("recommend", name, [&] { return load_ingested(cfg); });
    const auto hp = in_stage("recommend", name, [&] { return load_hyperparams(cfg, mode); });
    const auto scores = scored(data.interactions, mode);
    parallel_for(cfg.folds, cfg.workers, [&](int f) {
        const std::string where = name + " fold " + std::to_string(f);
        auto [train, test] = train_test_split(scores, data.folds, f);
        const auto model = in_stage("recommend", where, [&] { return train_mf(train, hp, seeds::mf(cfg.seed, mode, f)); });
        save_model(model, layout.fold(mode, f) / "model.txt");
        std::vector<RankedList> lists;
        for (const auto& [user, items] : group_by_user(train)) {
            std::set<ItemId> seen;
            for (const auto& [i, _] : items) seen.insert(i);
            lists.push_back(in_stage("recommend", where + " user " + std::to_string(user),
                                     [&] { return candidates(model, user, seen, cfg.mf.n_candidates); }));
        }
        save_lists_csv(lists, layout.fold(mode, f) / "candidates.csv");
    });
    timer.done();
}

// ---------------------------------------------------------------------------
// Stage: calibrate (per fold: lambda sweep and the stage distribution matrices)

namespace detail {

inline std::map<UserId, GenreDistribution> preferences(const InteractionSet& train, const GenreCatalog& cat,
                                                       Denominator mode) {
    std::map<UserId, GenreDistribution> out;
    for (const auto& [user, items] : group_by_user(train))
        out.emplace(user, preference_distribution(items, cat, user, mode));
    return out;
}

}  // namespace detail

inline void run_calibrate(const ExperimentConfig& cfg, ScoreMode mode) {
    const Layout layout{cfg.output_dir};
    const std::string name = mode_name(mode);
    detail::StageTimer timer(layout, "calibrate-" + name);
    const auto data = in_stage("calibrate", name, [&] { return load_ingested(cfg); });
    const auto scores = scored(data.interactions, mode);
    const auto& cal = cfg.calibration;
    parallel_for(cfg.folds, cfg.workers, [&](int f) {
        const std::string where = name + " fold " + std::to_string(f);
        auto [train, test] = train_test_split(scores, data.folds, f);
        const auto prefs = in_stage("calibrate", where, [&] { return detail::preferences(train, data.catalog, cal.denominator); });
        const auto cands = in_stage("calibrate", where, [&] { return load_lists_csv(layout.fold(mode, f) / "candidates.csv"); });

        std::vector<CalibratedRow> rows;
        std::vector<std::vector<GenreDistribution>> per_stage(cal.lambda_grid.size());
        for (const auto& c : cands) {
            const auto it = prefs.find(c.owner);
            if (it == prefs.end())
                throw StageError("calibrate", where, "candidates for unknown user " + std::to_string(c.owner));
            const auto sweep = in_stage("calibrate", where + " user " + std::to_string(c.owner),
                                        [&] { return sweep_lambda(c, it->second, data.catalog, cal); });
            for (std::size_t l = 0; l < sweep.size(); ++l) {
                rows.push_back({c.owner, sweep[l].lambda, sweep[l].list});
                per_stage[l].push_back(list_distribution(sweep[l].list, data.catalog,
                                                         sweep[l].lambda == 0.0 ? Stage::candidate : Stage::calibrated,
                                                         cal.denominator));
            }
        }
        save_calibrated_csv(rows, layout.fold(mode, f) / "lists.csv");

        std::vector<GenreDistribution> pref_rows;
        for (const auto& [_, p] : prefs) pref_rows.push_back(p);
        save_matrix_csv(distribution_matrix(pref_rows, data.catalog), layout.matrix(mode, f, pref_stage));
        for (std::size_t l = 0; l < cal.lambda_grid.size(); ++l)
            save_matrix_csv(distribution_matrix(per_stage[l], data.catalog),
                            layout.matrix(mode, f, stage_label(cal.lambda_grid[l])));
    });
    timer.done();
}

// ---------------------------------------------------------------------------
// Stage: analyze (per fold: structure search, labelings and metric reports)

inline std::vector<MetricReport> analyze_fold(const ExperimentConfig& cfg, ScoreMode mode, int f,
                                              const IngestedData& data) {
    const Layout layout{cfg.output_dir};
    const std::string name = mode_name(mode);
    const std::string where = name + " fold " + std::to_string(f);
    const auto stages = stage_names(cfg.calibration);
    std::vector<MetricReport> reports;
    auto report = [&](std::string algorithm, const std::string& stage, std::string metric, double value) {
        reports.push_back({cfg.dataset.name, name, std::move(algorithm), stage, f, std::move(metric), value});
    };

    std::map<std::string, DistributionMatrix> matrices;
    for (const auto& s : stages)
        matrices.emplace(s, in_stage("analyze", where, [&] { return load_matrix_csv(layout.matrix(mode, f, s)); }));
    std::map<std::string, DistanceMatrix> euclid;
    for (const auto& [s, m] : matrices) euclid.emplace(s, pairwise_distances(m, Metric::euclidean));

    // structure: search on PREF, refit the chosen configuration on every other stage
    std::vector<ChosenConfig> chosen;
    for (Algorithm a : cfg.algorithms) {
        const std::string aname(algorithm_name(a));
        const std::string at = where + " " + aname;
        const auto best = in_stage("analyze", at, [&] {
            return grid_search(a, cfg.space, matrices.at(pref_stage), seeds::structure(cfg.seed, mode, f, a));
        });
        chosen.push_back({a, best.config, best.silhouette});
        save_labeling_csv(best.labeling, layout.labels(mode, f, a, pref_stage));
        report(aname, pref_stage, "silhouette", best.silhouette);
        for (std::size_t s = 1; s < stages.size(); ++s) {
            const auto lab = in_stage("analyze", at + " " + stages[s],
                                      [&] { return fit_structure(a, best.config, matrices.at(stages[s]), best.seed); });
            save_labeling_csv(lab, layout.labels(mode, f, a, stages[s]));
            report(aname, stages[s], "silhouette", silhouette_or_floor(euclid.at(stages[s]), lab.labels));
            report(aname, stages[s], "jaccard", jaccard_labels(lab, best.labeling));
        }
    }
    save_chosen_configs_csv(chosen, layout.fold(mode, f) / "configs.csv");

    // ranking: relevance is a binarised original score in the test fold
    auto [train_orig, test_orig] = train_test_split(data.interactions, data.folds, f);
    const double threshold = binary_threshold(data.interactions.scale);
    UserRelevance relevant;
    for (const auto& r : test_orig.records)
        if (r.score >= threshold) relevant[r.user].insert(r.item);
    auto [train, _] = train_test_split(scored(data.interactions, mode), data.folds, f);
    const auto prefs = detail::preferences(train, data.catalog, cfg.calibration.denominator);
    const auto rows = in_stage("analyze", where, [&] { return load_calibrated_csv(layout.fold(mode, f) / "lists.csv"); });
    for (double lambda : cfg.calibration.lambda_grid) {
        UserLists lists;
        for (const auto& r : rows)
            if (r.lambda == lambda) lists.emplace(r.user, r.list);
        const std::string stage = stage_label(lambda);
        in_stage("analyze", where + " ranking " + stage, [&] {
            report("-", stage, "map", map_at_n(lists, relevant));
            report("-", stage, "mrr", mrr(lists, relevant));
            report("-", stage, "mace", mace(prefs, lists, data.catalog, cfg.calibration.denominator));
        });
    }
    save_reports_csv(reports, layout.fold(mode, f) / "metrics.csv");
    return reports;
}

inline void run_analyze(const ExperimentConfig& cfg, ScoreMode mode) {
    const Layout layout{cfg.output_dir};
    detail::StageTimer timer(layout, "analyze-" + mode_name(mode));
    const auto data = in_stage("analyze", mode_name(mode), [&] { return load_ingested(cfg); });
    parallel_for(cfg.folds, cfg.workers, [&](int f) { analyze_fold(cfg, mode, f, data); });
    timer.done();
}

// ---------------------------------------------------------------------------
// Stage: report

/// Fold-averaged value of one (dataset, mode, algorithm, metric) row at one stage.
struct CellSummary {
    double mean = 0.0;
    double sd = 0.0;  // population standard deviation over folds
    std::size_t n = 0;
};

struct PlotRow {
    std::string dataset, score_mode, algorithm, metric;
    std::map<std::string, CellSummary> cells;  // by stage
};

/// PREF first, then C@lambda by increasing lambda; anything else sorts last by name.
inline bool stage_before(const std::string& a, const std::string& b) {
    auto key = [](const std::string& s) -> std::pair<int, double> {
        if (s == pref_stage) return {0, 0.0};
        double l = 0.0;
        if (s.rfind("C@", 0) == 0 && parse_double(std::string_view(s).substr(2), l)) return {1, l};
        return {2, 0.0};
    };
    const auto ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    return a < b;
}

inline std::vector<PlotRow> summarise(const std::vector<MetricReport>& reports) {
    std::map<std::tuple<std::string, std::string, std::string, std::string>, std::map<std::string, std::vector<double>>>
        groups;
    for (const auto& r : reports) groups[{r.dataset, r.score_mode, r.algorithm, r.metric}][r.stage].push_back(r.value);
    std::vector<PlotRow> out;
    for (const auto& [key, stages] : groups) {
        PlotRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), {}};
        for (const auto& [stage, values] : stages) {
            CellSummary c;
            c.n = values.size();
            for (double v : values) c.mean += v;
            c.mean /= static_cast<double>(c.n);
            double ss = 0.0;
            for (double v : values) ss += (v - c.mean) * (v - c.mean);
            c.sd = std::sqrt(ss / static_cast<double>(c.n));
            row.cells[stage] = c;
        }
        out.push_back(std::move(row));
    }
    return out;
}

/// Writes the fold-averaged plot tables, one row per (algorithm, metric) with
/// a mean and an sd column per stage, stages in axis order.
inline void emit_plot_data(const std::vector<MetricReport>& reports, const fs::path& dir, const std::string& suffix = "") {
    if (reports.empty()) throw DataError("emit_plot_data: no reports");
    const auto rows = summarise(reports);
    const std::vector<std::pair<std::string, std::set<std::string>>> figures{
        {"jaccard", {"jaccard"}}, {"silhouette", {"silhouette"}}, {"ranking", {"map", "mrr", "mace"}}};
    for (const auto& [figure, metrics] : figures) {
        std::vector<std::string> stages;
        for (const auto& r : rows)
            if (metrics.contains(r.metric))
                for (const auto& [s, _] : r.cells)
                    if (std::find(stages.begin(), stages.end(), s) == stages.end()) stages.push_back(s);
        if (stages.empty()) continue;
        std::sort(stages.begin(), stages.end(), stage_before);
        auto out = csv::open_output(dir / ("fig-" + figure + suffix + ".csv"));
        csv::RowWriter w(out);
        w << "dataset" << "score_mode" << "algorithm" << "metric" << "folds";
        for (const auto& s : stages) w << s << s + "_sd";
        w.end();
        for (const auto& r : rows) {
            if (!metrics.contains(r.metric)) continue;
            std::size_t folds = 0;
            for (const auto& [_, c] : r.cells) folds = std::max(folds, c.n);
            w << r.dataset << r.score_mode << r.algorithm << r.metric << folds;
            for (const auto& s : stages) {
                auto it = r.cells.find(s);
                if (it == r.cells.end()) w << "" << "";
                else w << it->second.mean << it->second.sd;
            }
            w.end();
        }
    }
}

inline std::vector<MetricReport> collect_reports(const ExperimentConfig& cfg, ScoreMode mode) {
    std::vector<MetricReport> out;
    const Layout layout{cfg.output_dir};
    for (int f = 0; f < cfg.folds; ++f) {
        auto fold = in_stage("report", mode_name(mode) + " fold " + std::to_string(f),
                             [&] { return load_reports_csv(layout.fold(mode, f) / "metrics.csv"); });
        out.insert(out.end(), fold.begin(), fold.end());
    }
    return out;
}

inline void run_report(const ExperimentConfig& cfg) {
    const Layout layout{cfg.output_dir};
    const bool both = cfg.score_modes.size() > 1;
    std::map<ScoreMode, std::vector<MetricReport>> by_mode;
    for (ScoreMode mode : cfg.score_modes) {
        const auto reports = collect_reports(cfg, mode);
        by_mode[mode] = reports;
        const std::string suffix = both ? "_" + mode_name(mode) : "";
        save_reports_csv(reports, layout.root / ("reports" + suffix + ".csv"));
        in_stage("report", mode_name(mode), [&] { emit_plot_data(reports, layout.root, suffix); });
    }

    if (both) {
        // ranking metrics of the two score modes side by side
        auto out = csv::open_output(layout.root / "ranking-modes.csv");
        csv::RowWriter w(out);
        w << "dataset" << "metric" << "stage";
        for (ScoreMode m : cfg.score_modes) w << mode_name(m) << mode_name(m) + "_sd";
        w.end();
        std::map<ScoreMode, std::vector<PlotRow>> summaries;
        for (ScoreMode m : cfg.score_modes) summaries[m] = summarise(by_mode[m]);
        const auto& first = summaries[cfg.score_modes.front()];
        for (const auto& row : first) {
            if (row.algorithm != "-") continue;
            std::vector<std::string> stages;
            for (const auto& [s, _] : row.cells) stages.push_back(s);
            std::sort(stages.begin(), stages.end(), stage_before);
            for (const auto& s : stages) {
                w << row.dataset << row.metric << s;
                for (ScoreMode m : cfg.score_modes) {
                    const PlotRow* other = nullptr;
                    for (const auto& r : summaries[m])
                        if (r.algorithm == "-" && r.metric == row.metric) other = &r;
                    if (other && other->cells.contains(s)) w << other->cells.at(s).mean << other->cells.at(s).sd;
                    else w << "" << "";
                }
                w.end();
            }
        }
    }

    // manifest: seeds, config hash, genre axis and stage timings
    json manifest;
    manifest["config_hash"] = config_hash(cfg);
    manifest["config"] = config_json(cfg);
    json seed_info = {{"master", cfg.seed}, {"folds", seeds::folds(cfg.seed)}};
    for (ScoreMode m : cfg.score_modes) {
        json ms = {{"tune", seeds::tune(cfg.seed, m)}};
        for (int f = 0; f < cfg.folds; ++f) {
            json fs_ = {{"mf", seeds::mf(cfg.seed, m, f)}};
            for (Algorithm a : cfg.algorithms)
                fs_["structure"][std::string(algorithm_name(a))] = seeds::structure(cfg.seed, m, f, a);
            ms["fold-" + std::to_string(f)] = fs_;
        }
        seed_info[mode_name(m)] = ms;
    }
    manifest["seeds"] = seed_info;
    const auto summary = detail::read_json(layout.ingest() / "summary.json");
    manifest["genres"] = summary.at("genres");
    manifest["dataset"] = {{"name", cfg.dataset.name}, {"raw", summary.at("raw")}, {"cleaned", summary.at("cleaned")}};
    json timings = json::object();
    if (fs::exists(layout.root / "timings"))
        for (const auto& e : fs::directory_iterator(layout.root / "timings"))
            if (e.path().extension() == ".json")
                timings[e.path().stem().string()] = detail::read_json(e.path()).at("seconds");
    manifest["timings_seconds"] = timings;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(layout.root))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    manifest["outputs"] = files;
    detail::write_json(layout.root / "manifest.json", manifest);
}

// ---------------------------------------------------------------------------
// Whole pipeline

/// Runs every stage in order and returns the fold-level metric reports of all
/// score modes.
inline std::vector<MetricReport> run_experiment(const ExperimentConfig& cfg) {
    in_stage("config", "", [&] { cfg.validate(); });
    run_ingest(cfg);
    std::vector<MetricReport> all;
    for (ScoreMode mode : cfg.score_modes) {
        run_tune(cfg, mode);
        run_recommend(cfg, mode);
        run_calibrate(cfg, mode);
        run_analyze(cfg, mode);
        auto r = collect_reports(cfg, mode);
        all.insert(all.end(), r.begin(), r.end());
    }
    in_stage("report", "", [&] { run_report(cfg); });
    return all;
}

}  // namespace calrec
