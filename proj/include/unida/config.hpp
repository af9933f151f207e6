#pragma once

// Experiment configuration: JSON with explicit defaults, unknown keys rejected.
//
// {
//   "schema_version": 1,
//   "run_id": "run", "output_dir": "out", "seed": 0, "data_dir": "",
//   "dataset": { DatasetSpec fields, "shift": { DomainShift fields } },
//   "toggles": { "backbone": "standard" | "small", "augmentation", "top_k",
//                "discriminator", "two_stage", "five_crop" },
//   "train": { "batch_size", "warm_start", "invert_wt", "grl_lambda", "grad_clip",
//              "eval_every",
//              "source_stage" | "stage1" | "stage2": { "steps", "lr_heads", "lr_backbone",
//                  "warmup_fraction", "optimizer", "momentum",
//                  "weights": { "ova", "entropy", "domain" },
//                  "adamw": { "beta1", "beta2", "eps", "weight_decay" } } },
//   "eval": { "threshold" },
//   "ablation": { "seeds": [0, 1, 2], "ladder": [...] }
// }
//
// Toggles are the switchable components of the ablation ladder; they are
// applied on top of the stage settings by resolved_train().

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unida/checkpoint.hpp"
#include "unida/dataset_io.hpp"
#include "unida/json_util.hpp"
#include "unida/metrics.hpp"
#include "unida/trainer.hpp"

namespace unida {

inline constexpr int kSchemaVersion = 1;

/// Layer sizes for the "small" backbone toggle.
inline NetDims small_backbone(int input_side, int classes) {
    return NetDims{input_side, 64, 32, 32, classes, 32};
}

inline NetDims standard_backbone(int input_side, int classes) {
    NetDims d;
    d.input_side = input_side;
    d.classes = classes;
    return d;
}

struct Toggles {
    std::string backbone = "standard";
    bool augmentation = true;
    int top_k = 3;  // 1 means only the single hardest negative
    bool discriminator = true;
    bool two_stage = true;
    bool five_crop = true;

    bool operator==(const Toggles&) const = default;
};

/// Ladder rung names, in cumulative order.
inline const std::vector<std::string>& ladder_rungs() {
    static const std::vector<std::string> rungs{"baseline",      "augmentation", "backbone", "top_k",
                                                "discriminator", "two_stage",    "five_crop"};
    return rungs;
}

struct AblationConfig {
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<std::string> ladder = ladder_rungs();

    bool operator==(const AblationConfig&) const = default;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string run_id = "run";
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    std::filesystem::path data_dir;  // empty: generate from `dataset`
    DatasetSpec dataset;
    Toggles toggles;
    TrainConfig train;  // model dims, top_k, discriminator, two_stage and augment come from toggles
    double threshold = 0.5;
    AblationConfig ablation;
    std::vector<std::string> warnings;

    bool operator==(const ExperimentConfig& o) const {
        return schema_version == o.schema_version && run_id == o.run_id && output_dir == o.output_dir &&
               seed == o.seed && data_dir == o.data_dir && dataset == o.dataset && toggles == o.toggles &&
               train == o.train && threshold == o.threshold &&
               ablation == o.ablation;
    }

    std::filesystem::path run_dir() const { return output_dir / run_id; }

    EvalOptions eval_options() const { return {threshold, toggles.five_crop}; }

    /// TrainConfig with toggles, seed and dataset-dependent sizes applied.
    TrainConfig resolved_train() const {
        TrainConfig t = train;
        const int classes = dataset.source_class_count();
        t.model = toggles.backbone == "small" ? small_backbone(dataset.crop_side, classes)
                                              : standard_backbone(dataset.crop_side, classes);
        t.augment = toggles.augmentation;
        t.two_stage = toggles.two_stage;
        t.stage1.use_discriminator = toggles.discriminator;
        t.stage2.use_discriminator = false;
        t.source_stage.use_discriminator = false;
        t.stage1.top_k = t.stage2.top_k = t.source_stage.top_k = toggles.top_k;
        t.seed = seed;
        return t;
    }

    void validate() const {
        if (schema_version != kSchemaVersion)
            throw ConfigError("schema_version", "unsupported version " + std::to_string(schema_version));
        if (run_id.empty() || run_id.find('/') != std::string::npos || run_id == "." || run_id == "..")
            throw ConfigError("run_id", "must be a non-empty single path component");
        try {
            dataset.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("dataset", e.what());
        }
        if (toggles.backbone != "standard" && toggles.backbone != "small")
            throw ConfigError("toggles.backbone", "must be 'standard' or 'small'");
        if (toggles.top_k < 1) throw ConfigError("toggles.top_k", "must be >= 1");
        if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("eval.threshold", "must be in [0, 1]");
        if (ablation.seeds.empty()) throw ConfigError("ablation.seeds", "needs at least one seed");
        const auto& known = ladder_rungs();
        std::size_t last = 0;
        for (std::size_t i = 0; i < ablation.ladder.size(); ++i) {
            const auto it = std::find(known.begin(), known.end(), ablation.ladder[i]);
            if (it == known.end()) throw ConfigError("ablation.ladder", "unknown rung '" + ablation.ladder[i] + "'");
            const auto pos = static_cast<std::size_t>(it - known.begin());
            if (i > 0 && pos <= last) throw ConfigError("ablation.ladder", "rungs must follow the canonical order once each");
            last = pos;
        }
        if (!ablation.ladder.empty() && ablation.ladder.front() != "baseline")
            throw ConfigError("ablation.ladder", "must start with 'baseline'");
        resolved_train().validate();
    }
};

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const AdamWConfig& a) {
    return Json{{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

inline Json to_json(const LossWeights& w) { return Json{{"ova", w.ova}, {"entropy", w.entropy}, {"domain", w.domain}}; }

inline Json stage_to_json(const StageConfig& s) {
    return Json{{"steps", s.steps},
                {"lr_heads", s.lr_heads},
                {"lr_backbone", s.lr_backbone},
                {"warmup_fraction", s.warmup_fraction},
                {"optimizer", to_string(s.optimizer)},
                {"momentum", s.momentum},
                {"weights", to_json(s.weights)},
                {"adamw", to_json(s.adamw)}};
}

inline Json to_json(const Toggles& t) {
    return Json{{"backbone", t.backbone},         {"augmentation", t.augmentation}, {"top_k", t.top_k},
                {"discriminator", t.discriminator}, {"two_stage", t.two_stage},     {"five_crop", t.five_crop}};
}

inline Json to_json(const ExperimentConfig& c) {
    return Json{{"schema_version", c.schema_version},
                {"run_id", c.run_id},
                {"output_dir", c.output_dir.generic_string()},
                {"seed", c.seed},
                {"data_dir", c.data_dir.generic_string()},
                {"dataset", to_json(c.dataset)},
                {"toggles", to_json(c.toggles)},
                {"train",
                 {{"batch_size", c.train.batch_size},
                  {"warm_start", c.train.warm_start},
                  {"invert_wt", c.train.invert_wt},
                  {"grl_lambda", c.train.grl.lambda},
                  {"grad_clip", c.train.grad_clip},
                  {"eval_every", c.train.eval_every},
                  {"source_stage", stage_to_json(c.train.source_stage)},
                  {"stage1", stage_to_json(c.train.stage1)},
                  {"stage2", stage_to_json(c.train.stage2)}}},
                {"eval", {{"threshold", c.threshold}}},
                {"ablation", {{"seeds", c.ablation.seeds}, {"ladder", c.ablation.ladder}}}};
}

namespace detail {

inline AdamWConfig adamw_from(StrictObject o, AdamWConfig a) {
    a.beta1 = o.get("beta1", a.beta1);
    a.beta2 = o.get("beta2", a.beta2);
    a.eps = o.get("eps", a.eps);
    a.weight_decay = o.get("weight_decay", a.weight_decay);
    o.finish();
    if (!(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0))
        throw ConfigError(o.field("beta1"), "betas must be in [0, 1)");
    if (!(a.eps > 0.0)) throw ConfigError(o.field("eps"), "must be > 0");
    if (!(a.weight_decay >= 0.0)) throw ConfigError(o.field("weight_decay"), "must be >= 0");
    return a;
}

inline LossWeights weights_from(StrictObject o, LossWeights w) {
    w.ova = o.get("ova", w.ova);
    w.entropy = o.get("entropy", w.entropy);
    w.domain = o.get("domain", w.domain);
    o.finish();
    return w;
}

inline StageConfig stage_from(StrictObject o, StageConfig s) {
    s.steps = o.get("steps", s.steps);
    s.lr_heads = o.get("lr_heads", s.lr_heads);
    s.lr_backbone = o.get("lr_backbone", s.lr_backbone);
    s.warmup_fraction = o.get("warmup_fraction", s.warmup_fraction);
    const std::string opt = o.get<std::string>("optimizer", to_string(s.optimizer));
    try {
        s.optimizer = optimizer_kind_from(opt);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(o.field("optimizer"), e.what());
    }
    s.momentum = o.get("momentum", s.momentum);
    s.weights = weights_from(o.child("weights"), s.weights);
    s.adamw = adamw_from(o.child("adamw"), s.adamw);
    o.finish();
    return s;
}

}  // namespace detail

inline ExperimentConfig experiment_config_from(const Json& root) {
    ExperimentConfig c;
    StrictObject o(root, "");
    c.schema_version = o.require<int>("schema_version");
    if (c.schema_version != kSchemaVersion)
        throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version));
    c.run_id = o.get<std::string>("run_id", c.run_id);
    c.output_dir = o.get<std::string>("output_dir", c.output_dir.generic_string());
    c.seed = o.get<std::uint64_t>("seed", c.seed);
    c.data_dir = o.get<std::string>("data_dir", "");
    c.dataset = dataset_spec_from(o.child("dataset"));

    StrictObject tg = o.child("toggles");
    c.toggles.backbone = tg.get("backbone", c.toggles.backbone);
    c.toggles.augmentation = tg.get("augmentation", c.toggles.augmentation);
    c.toggles.top_k = tg.get("top_k", c.toggles.top_k);
    c.toggles.discriminator = tg.get("discriminator", c.toggles.discriminator);
    c.toggles.two_stage = tg.get("two_stage", c.toggles.two_stage);
    c.toggles.five_crop = tg.get("five_crop", c.toggles.five_crop);
    tg.finish();

    StrictObject tr = o.child("train");
    c.train.batch_size = tr.get("batch_size", c.train.batch_size);
    c.train.warm_start = tr.get("warm_start", c.train.warm_start);
    c.train.invert_wt = tr.get("invert_wt", c.train.invert_wt);
    c.train.grl.lambda = tr.get("grl_lambda", c.train.grl.lambda);
    c.train.grad_clip = tr.get("grad_clip", c.train.grad_clip);
    c.train.eval_every = tr.get("eval_every", c.train.eval_every);
    c.train.source_stage = detail::stage_from(tr.child("source_stage"), c.train.source_stage);
    c.train.stage1 = detail::stage_from(tr.child("stage1"), c.train.stage1);
    if (!c.toggles.two_stage && tr.has("stage2"))
        c.warnings.push_back("toggles.two_stage is false; train.stage2 is ignored");
    c.train.stage2 = detail::stage_from(tr.child("stage2"), c.train.stage2);
    tr.finish();

    StrictObject ev = o.child("eval");
    c.threshold = ev.get("threshold", c.threshold);
    ev.finish();

    StrictObject ab = o.child("ablation");
    c.ablation.seeds = ab.get("seeds", c.ablation.seeds);
    c.ablation.ladder = ab.get("ladder", c.ablation.ladder);
    ab.finish();

    o.finish();
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    auto in = open_for_read(path);
    Json root;
    try {
        root = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<root>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
    }
    return experiment_config_from(root);
}

}  // namespace unida
