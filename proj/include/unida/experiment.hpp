#pragma once

// Reproducible runs on disk.
//
// out/<run_id>/
//   config.resolved.json  train_log.csv  metrics.json  scores.csv  checkpoints/<tag>/
//   source_model/         (warm start: the source-only model the run started from)
//   comparison.csv        adapted vs source-only rows, when both exist
//   source_only/          written by run_source_only
//   ablation/             written by run_ablation

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unida/checkpoint.hpp"
#include "unida/config.hpp"
#include "unida/dataset_io.hpp"
#include "unida/metrics.hpp"
#include "unida/trainer.hpp"

namespace unida {

/// Dataset for a config: loaded from data_dir when set, otherwise generated
/// with the experiment seed.
inline Dataset experiment_dataset(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) {
        LoadedDataset loaded = load_dataset(cfg.data_dir);
        if (loaded.spec.crop_side != cfg.dataset.crop_side || loaded.spec.image_side != cfg.dataset.image_side ||
            loaded.spec.source_class_count() != cfg.dataset.source_class_count())
            throw ConfigError("data_dir", "dataset on disk does not match the configured image, crop or class sizes");
        return std::move(loaded.data);
    }
    DatasetSpec spec = cfg.dataset;
    spec.seed = cfg.seed;
    return generate_dataset(spec);
}

namespace detail {

inline void require_fresh_dir(const std::filesystem::path& dir) {
    if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir))
        throw std::runtime_error("output directory already exists and is not empty: " + dir.string());
    std::filesystem::create_directories(dir);
}

inline void write_json(const std::filesystem::path& path, const Json& j) { open_for_write(path) << j.dump(2) << '\n'; }

inline Json snapshots_json(const TrainLog& log) {
    Json out = Json::array();
    for (const auto& s : log.snapshots)
        out.push_back(Json{{"stage", s.stage}, {"step", s.step}, {"tag", s.tag}, {"acc", s.report.acc}, {"auroc", s.report.auroc}});
    return out;
}

inline TrainHooks disk_hooks(const std::filesystem::path& dir, std::span<const LabeledImage> test, const EvalOptions& eval,
                             std::uint64_t seed) {
    TrainHooks hooks;
    hooks.evaluate = [test, eval](const ModelParams& p) { return evaluate(p, test, eval).report; };
    hooks.checkpoint = [dir, seed](const ModelParams& p, int stage, long step, const std::string& tag) {
        save_checkpoint(dir / "checkpoints" / tag, p, {seed, stage, step});
    };
    return hooks;
}

/// Writes the standard artifacts of a finished training run into `dir`.
inline MetricsReport finish_run(const std::filesystem::path& dir, const std::string& model_name, const ModelParams& model,
                                const TrainLog& log, std::span<const LabeledImage> test, const EvalOptions& eval,
                                std::uint64_t seed) {
    const Evaluation ev = evaluate(model, test, eval);
    log.write_csv(dir / "train_log.csv");
    write_scores_csv(dir / "scores.csv", ev.predictions, test);
    const int stage = log.stage_boundaries.empty() ? 0 : static_cast<int>(log.stage_boundaries.size());
    const long step = log.rows.empty() ? 0 : log.rows.back().step + 1;
    save_checkpoint(dir / "checkpoints" / "final", model, {seed, stage, step});
    Json m = ev.report.to_json();
    m["model"] = model_name;
    m["seed"] = seed;
    m["five_crop"] = eval.five_crop;
    m["snapshots"] = snapshots_json(log);
    write_json(dir / "metrics.json", m);
    return ev.report;
}

inline void write_comparison(const std::filesystem::path& path, const MetricsReport& adapted, const MetricsReport& source) {
    auto out = open_for_write(path);
    out << "model," << MetricsReport::csv_header() << '\n';
    out << "adapted," << adapted.csv_row() << '\n';
    out << "source_only," << source.csv_row() << '\n';
}

inline std::optional<MetricsReport> read_report(const std::filesystem::path& metrics_path) {
    if (!std::filesystem::exists(metrics_path)) return std::nullopt;
    const Json j = Json::parse(open_for_read(metrics_path));
    MetricsReport r;
    r.acc = j.at("acc").get<double>();
    r.auroc = j.at("auroc").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.known_correct = j.at("counts").at("known_correct").get<std::size_t>();
    r.known_total = j.at("counts").at("known_total").get<std::size_t>();
    r.unknown_total = j.at("counts").at("unknown_total").get<std::size_t>();
    return r;
}

}  // namespace detail

struct RunResult {
    MetricsReport report;
    std::optional<MetricsReport> source_report;
    TrainLog log;
    ModelParams model;
    std::filesystem::path dir;
};

/// Full adapted run into <output_dir>/<run_id>. Refuses a non-empty directory.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    RunResult result;
    result.dir = cfg.run_dir();
    detail::require_fresh_dir(result.dir);
    detail::write_json(result.dir / "config.resolved.json", to_json(cfg));

    const Dataset ds = experiment_dataset(cfg);
    const TrainConfig train = cfg.resolved_train();
    const EvalOptions eval = cfg.eval_options();
    const TrainData data{ds.source, ds.target_train};

    const auto source_dir = result.dir / "source_model";
    TrainLog source_log;
    TrainResult trained;
    try {
        trained = train_adapted(train, data, result.log, source_log,
                                detail::disk_hooks(result.dir, ds.target_test, eval, cfg.seed),
                                detail::disk_hooks(source_dir, ds.target_test, eval, cfg.seed));
    } catch (const TrainingDiverged&) {
        if (!source_log.rows.empty()) source_log.write_csv(source_dir / "train_log.csv");
        if (!result.log.rows.empty()) result.log.write_csv(result.dir / "train_log.csv");
        throw;
    }
    result.model = std::move(trained.model);
    if (trained.source_model) {
        result.source_report = detail::finish_run(source_dir, "source_only", *trained.source_model, source_log,
                                                  ds.target_test, eval, cfg.seed);
    }
    result.report = detail::finish_run(result.dir, "adapted", result.model, result.log, ds.target_test, eval, cfg.seed);
    if (result.source_report) detail::write_comparison(result.dir / "comparison.csv", result.report, *result.source_report);
    return result;
}

/// Source losses only; target_train is never handed to the trainer.
/// Writes <run_dir>/source_only/ and, if the adapted run exists, comparison.csv.
inline RunResult run_source_only(const ExperimentConfig& cfg) {
    cfg.validate();
    RunResult result;
    result.dir = cfg.run_dir() / "source_only";
    detail::require_fresh_dir(result.dir);
    detail::write_json(result.dir / "config.resolved.json", to_json(cfg));

    const Dataset ds = experiment_dataset(cfg);
    const TrainConfig train = source_only_config(cfg.resolved_train());
    const EvalOptions eval = cfg.eval_options();
    const TrainData data{ds.source, {}};
    try {
        result.model = train_full(train, data, result.log, detail::disk_hooks(result.dir, ds.target_test, eval, cfg.seed));
    } catch (const TrainingDiverged&) {
        result.log.write_csv(result.dir / "train_log.csv");
        throw;
    }
    if (result.log.target_samples_drawn != 0) throw std::logic_error("source-only training drew target samples");
    result.report = detail::finish_run(result.dir, "source_only", result.model, result.log, ds.target_test, eval, cfg.seed);
    result.source_report = result.report;
    if (auto adapted = detail::read_report(cfg.run_dir() / "metrics.json"))
        detail::write_comparison(cfg.run_dir() / "comparison.csv", *adapted, result.report);
    return result;
}

// ---------------------------------------------------------------------------
// Ablation ladder

/// Toggles with every component off except those enabled up to `rung`.
inline Toggles rung_toggles(const std::vector<std::string>& ladder, std::size_t rung, const Toggles& full) {
    Toggles t{"small", false, 1, false, false, false};
    for (std::size_t i = 0; i <= rung && i < ladder.size(); ++i) {
        const std::string& name = ladder[i];
        if (name == "augmentation") t.augmentation = full.augmentation;
        if (name == "backbone") t.backbone = full.backbone;
        if (name == "top_k") t.top_k = full.top_k;
        if (name == "discriminator") t.discriminator = full.discriminator;
        if (name == "two_stage") t.two_stage = full.two_stage;
        if (name == "five_crop") t.five_crop = full.five_crop;
    }
    return t;
}

struct RungResult {
    std::string name;
    Toggles toggles;
    std::vector<std::uint64_t> seeds;
    std::vector<double> acc;
    std::vector<double> auroc;
    bool reused_training = false;

    static double mean(const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    }

    /// Sample standard deviation; 0 for a single seed.
    static double stddev(const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    }
};

inline std::string ablation_csv_header() { return "config_name,acc_mean,acc_std,auroc_mean,auroc_std,seeds"; }

namespace detail {

inline bool same_training(const Toggles& a, const Toggles& b) {
    Toggles x = a, y = b;
    x.five_crop = y.five_crop = false;
    return x == y;
}

inline void write_ablation(const std::filesystem::path& dir, const std::vector<RungResult>& rungs) {
    auto csv = open_for_write(dir / "ablation.csv");
    csv << ablation_csv_header() << '\n';
    Json rows = Json::array();
    for (const auto& r : rungs) {
        std::string seeds;
        for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(r.seeds[i]);
        auto num = [](double v) { return Json(v).dump(); };
        csv << r.name << ',' << num(RungResult::mean(r.acc)) << ',' << num(RungResult::stddev(r.acc)) << ','
            << num(RungResult::mean(r.auroc)) << ',' << num(RungResult::stddev(r.auroc)) << ',' << seeds << '\n';
        rows.push_back(Json{{"config_name", r.name},
                            {"acc_mean", RungResult::mean(r.acc)},
                            {"acc_std", RungResult::stddev(r.acc)},
                            {"auroc_mean", RungResult::mean(r.auroc)},
                            {"auroc_std", RungResult::stddev(r.auroc)},
                            {"seeds", r.seeds},
                            {"acc", r.acc},
                            {"auroc", r.auroc},
                            {"toggles", to_json(r.toggles)},
                            {"reused_training", r.reused_training}});
    }
    write_json(dir / "ablation.json", rows);
}

}  // namespace detail

/// Cumulative rungs over the configured seeds, written to <run_dir>/ablation/.
/// A rung that changes only evaluation options re-evaluates the previous
/// rung's final checkpoints instead of retraining.
inline std::vector<RungResult> run_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto dir = cfg.run_dir() / "ablation";
    detail::require_fresh_dir(dir);
    detail::write_json(dir / "config.resolved.json", to_json(cfg));

    std::vector<RungResult> rungs;
    for (std::size_t i = 0; i < cfg.ablation.ladder.size(); ++i) {
        RungResult rung;
        rung.name = cfg.ablation.ladder[i];
        rung.toggles = rung_toggles(cfg.ablation.ladder, i, cfg.toggles);
        rung.reused_training = !rungs.empty() && detail::same_training(rungs.back().toggles, rung.toggles);
        for (std::uint64_t seed : cfg.ablation.seeds) {
            ExperimentConfig c = cfg;
            c.toggles = rung.toggles;
            c.seed = seed;
            c.output_dir = dir / rung.name;
            c.run_id = "seed_" + std::to_string(seed);
            MetricsReport report;
            if (rung.reused_training) {
                const auto prev = dir / rungs.back().name / c.run_id / "checkpoints" / "final";
                const LoadedCheckpoint ck = load_checkpoint(prev);
                detail::require_fresh_dir(c.run_dir());
                detail::write_json(c.run_dir() / "config.resolved.json", to_json(c));
                std::filesystem::create_directories(c.run_dir() / "checkpoints");
                std::filesystem::copy(prev, c.run_dir() / "checkpoints" / "final",
                                      std::filesystem::copy_options::recursive);
                const Dataset ds = experiment_dataset(c);
                const Evaluation ev = evaluate(ck.params, ds.target_test, c.eval_options());
                write_scores_csv(c.run_dir() / "scores.csv", ev.predictions, ds.target_test);
                Json m = ev.report.to_json();
                m["model"] = "adapted";
                m["seed"] = seed;
                m["five_crop"] = c.toggles.five_crop;
                m["reused_from"] = rungs.back().name;
                detail::write_json(c.run_dir() / "metrics.json", m);
                report = ev.report;
            } else {
                report = run_experiment(c).report;
            }
            rung.seeds.push_back(seed);
            rung.acc.push_back(report.acc);
            rung.auroc.push_back(report.auroc);
        }
        rungs.push_back(std::move(rung));
        detail::write_ablation(dir, rungs);  // partial table survives an interrupted ladder
    }
    return rungs;
}

}  // namespace unida
