#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "calrec/experiment.hpp"

using namespace calrec;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> n_trials;
    std::optional<int> workers;
    std::string mode;
};

ExperimentConfig resolve(const Options& o) {
    auto cfg = load_config(o.config);
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.seed) cfg.seed = *o.seed;
    if (o.n_trials) cfg.mf.n_trials = *o.n_trials;
    if (o.workers) cfg.workers = *o.workers;
    if (o.mode == "original") cfg.score_modes = {ScoreMode::original};
    else if (o.mode == "binary") cfg.score_modes = {ScoreMode::binary};
    else if (o.mode == "both") cfg.score_modes = {ScoreMode::original, ScoreMode::binary};
    in_stage("config", "", [&] { cfg.validate(); });
    return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("-c,--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", o.out, "output directory (overrides config and CALREC_OUTPUT_DIR)");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--n-trials", o.n_trials, "random-search trials for the factorization model");
    cmd->add_option("--workers", o.workers, "folds processed in parallel")->check(CLI::PositiveNumber);
    cmd->add_option("--mode", o.mode, "score mode")->check(CLI::IsMember({"original", "binary", "both"}));
}

template <typename F>
void per_mode(const ExperimentConfig& cfg, F&& fn) {
    for (ScoreMode m : cfg.score_modes) fn(cfg, m);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"calrec: calibrated recommendation and user-structure analysis"};
    app.require_subcommand(1);
    Options o;

    auto* ingest = app.add_subcommand("ingest", "load, clean and split the dataset into folds");
    auto* tune = app.add_subcommand("tune", "random search over factorization hyperparameters");
    auto* recommend = app.add_subcommand("recommend", "train per fold and write candidate lists");
    auto* calibrate = app.add_subcommand("calibrate", "lambda sweep and stage distribution matrices");
    auto* analyze = app.add_subcommand("analyze", "structure search, labelings and fold metrics");
    auto* report = app.add_subcommand("report", "fold-averaged tables and run manifest");
    auto* run_all = app.add_subcommand("run-all", "every stage in order");
    for (auto* cmd : {ingest, tune, recommend, calibrate, analyze, report, run_all}) add_common(cmd, o);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = resolve(o);
        if (ingest->parsed()) {
            run_ingest(cfg);
        } else if (tune->parsed()) {
            per_mode(cfg, [](const auto& c, ScoreMode m) { run_tune(c, m); });
        } else if (recommend->parsed()) {
            per_mode(cfg, [](const auto& c, ScoreMode m) { run_recommend(c, m); });
        } else if (calibrate->parsed()) {
            per_mode(cfg, [](const auto& c, ScoreMode m) { run_calibrate(c, m); });
        } else if (analyze->parsed()) {
            per_mode(cfg, [](const auto& c, ScoreMode m) { run_analyze(c, m); });
        } else if (report->parsed()) {
            in_stage("report", "", [&] { run_report(cfg); });
        } else if (run_all->parsed()) {
            run_experiment(cfg);
        }
        std::cerr << "calrec: done, outputs in " << cfg.output_dir.string() << '\n';
        return EXIT_SUCCESS;
    } catch (const StageError& e) {
        std::cerr << "calrec: error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "calrec: error: [config] " << e.what() << '\n';
        return 2;
    }
}
