#pragma once

// Two-stage optimization: stage 1 trains all losses (with the adversarial
// discriminator when enabled) using AdamW; stage 2 drops the discriminator
// and switches to momentum SGD. Both use linear warmup plus cosine decay.
// Source-only training replaces stage 1 with `source_stage` and never
// touches target data; with `warm_start` the adapted model starts from it.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "unida/common.hpp"
#include "unida/json_util.hpp"
#include "unida/losses.hpp"
#include "unida/metrics.hpp"
#include "unida/net.hpp"
#include "unida/optim.hpp"
#include "unida/synth_data.hpp"

namespace unida {

struct StageConfig {
    int steps = 2000;
    double lr_heads = 1e-4;
    double lr_backbone = 5e-5;
    double warmup_fraction = 0.05;
    OptimizerKind optimizer = OptimizerKind::adaptive;
    bool use_discriminator = true;
    LossWeights weights;
    int top_k = 3;
    AdamWConfig adamw;
    double momentum = 0.9;

    bool operator==(const StageConfig&) const = default;

    void validate(const std::string& name) const {
        auto fail = [&](const std::string& field, const std::string& what) { throw ConfigError(name + "." + field, what); };
        if (steps < 1) fail("steps", "must be >= 1");
        if (!(lr_heads > 0.0)) fail("lr_heads", "must be > 0");
        if (!(lr_backbone > 0.0)) fail("lr_backbone", "must be > 0");
        if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction", "must be in [0, 1)");
        if (top_k < 1) fail("top_k", "must be >= 1");
        if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must be in [0, 1)");
        for (double w : {weights.ova, weights.entropy, weights.domain})
            if (!std::isfinite(w) || w < 0.0) fail("weights", "loss weights must be finite and >= 0");
    }
};

struct TrainConfig {
    NetDims model;
    StageConfig stage1;
    StageConfig stage2{600, 1e-2, 1e-4, 0.05, OptimizerKind::momentum, false, {}, 3, {}, 0.9};
    StageConfig source_stage{2000, 2e-3, 1e-3, 0.05, OptimizerKind::adaptive, false, {1.0, 0.0, 0.0}, 3, {}, 0.9};
    bool two_stage = true;
    bool warm_start = true;    // adapted runs start from the source-only model
    bool source_only = false;  // no target data is ever sampled
    bool augment = true;
    int batch_size = 32;
    GradReversal grl;
    bool invert_wt = false;
    double grad_clip = 5.0;  // global norm; <= 0 disables
    std::uint64_t seed = 0;
    int eval_every = 0;  // 0 disables periodic snapshots

    bool operator==(const TrainConfig& o) const {
        return model == o.model && stage1 == o.stage1 && stage2 == o.stage2 && source_stage == o.source_stage &&
               two_stage == o.two_stage && warm_start == o.warm_start &&
               source_only == o.source_only && augment == o.augment && batch_size == o.batch_size &&
               grl.lambda == o.grl.lambda && invert_wt == o.invert_wt && grad_clip == o.grad_clip && seed == o.seed &&
               eval_every == o.eval_every;
    }

    void validate() const {
        stage1.validate("train.stage1");
        stage2.validate("train.stage2");
        source_stage.validate("train.source_stage");
        if (stage2.use_discriminator)
            throw ConfigError("train.stage2.use_discriminator", "the discriminator is removed in stage 2; must be false");
        if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
        if (eval_every < 0) throw ConfigError("train.eval_every", "must be >= 0");
        if (!std::isfinite(grl.lambda) || grl.lambda < 0.0) throw ConfigError("train.grl_lambda", "must be finite and >= 0");
        if (model.hidden1 < 1 || model.hidden2 < 1 || model.feature < 1 || model.classes < 1 || model.disc_hidden < 1)
            throw ConfigError("model", "layer sizes must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Learning-rate schedule

inline int warmup_steps(int total_steps, double warmup_fraction) {
    return static_cast<int>(std::ceil(warmup_fraction * total_steps));
}

/// Linear warmup from 0 over ceil(warmup_fraction * total) steps, then
/// cosine decay toward 0 over the remaining span.
inline double lr_schedule(int step, int total_steps, double base_lr, double warmup_fraction) {
    if (step < 0 || step >= total_steps)
        throw std::out_of_range("lr_schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
    const int warm = warmup_steps(total_steps, warmup_fraction);
    if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Batch loss and gradient

struct LossOptions {
    /// When false the discriminator gradient reaches the features unreversed,
    /// which makes the returned gradient the true gradient of `total`.
    bool reverse_gradient = true;
    /// Overrides the computed w^t values (length must match the target batch).
    std::optional<std::vector<double>> fixed_target_weights;
};

struct BatchLoss {
    LossBreakdown loss;
    ModelParams grad;
    std::vector<double> target_weights;
    Matrix feature_grad_from_domain;  // d(w_dom * L_d)/dF after the reversal layer, one column per sample
};

inline std::vector<Image> crops_of(std::span<const LabeledImage> items) {
    std::vector<Image> out;
    out.reserve(items.size());
    for (const auto& i : items) out.push_back(i.image);
    return out;
}

inline BatchLoss compute_batch_loss(const ModelParams& params, const Batch& batch, const StageConfig& stage,
                                    const TrainConfig& cfg, const LossOptions& options = {}) {
    const auto bs = static_cast<Eigen::Index>(batch.source_images.size());
    const auto bt = static_cast<Eigen::Index>(batch.target_images.size());
    if (bs == 0) throw std::invalid_argument("train_step: batch has no source images");
    for (const auto& s : batch.source_images)
        if (s.label < 0 || s.label >= params.dims.classes) throw std::invalid_argument("train_step: source label out of range");

    std::vector<Image> crops = crops_of(batch.source_images);
    for (const auto& t : batch.target_images) crops.push_back(t.image);
    const ExtractorTrace trace = extract_features(params, stack_images(crops, params.dims.input_side));
    const Matrix& features = trace.features;
    const Eigen::Index n = bs + bt;
    const int classes = params.dims.classes;

    BatchLoss out;
    out.grad = ModelParams::zeros(params.dims);
    out.loss.weights = stage.weights;
    const LossWeights& w = stage.weights;

    const Matrix logits = closed_logits(params, features);
    const Matrix pairs = open_logits(params, features);
    Matrix d_logits = Matrix::Zero(classes, n);
    Matrix d_pairs = Matrix::Zero(2 * classes, n);

    for (Eigen::Index i = 0; i < bs; ++i) {
        const int label = batch.source_images[static_cast<std::size_t>(i)].label;
        Vector z = logits.col(i);
        std::span<const double> zs(z.data(), static_cast<std::size_t>(z.size()));
        out.loss.closed_ce += closed_set_ce(zs, label);
        const auto g = closed_set_ce_grad(zs, label);
        for (int k = 0; k < classes; ++k) d_logits(k, i) = g[static_cast<std::size_t>(k)] / static_cast<double>(bs);

        const OpenSetScores scores = open_scores_column(pairs, i);
        out.loss.ova += ova_loss_topk(scores, label, stage.top_k);
        if (w.ova != 0.0) {
            const auto go = ova_loss_topk_grad(scores, label, stage.top_k);
            for (int r = 0; r < 2 * classes; ++r)
                d_pairs(r, i) += w.ova * go[static_cast<std::size_t>(r)] / static_cast<double>(bs);
        }
    }
    out.loss.closed_ce /= static_cast<double>(bs);
    out.loss.ova /= static_cast<double>(bs);

    std::vector<OpenSetScores> target_scores;
    for (Eigen::Index j = bs; j < n; ++j) {
        target_scores.push_back(open_scores_column(pairs, j));
        const OpenSetScores& scores = target_scores.back();
        out.loss.entropy += open_entropy(scores);
        if (w.entropy != 0.0) {
            const auto ge = open_entropy_grad(scores);
            for (int r = 0; r < 2 * classes; ++r)
                d_pairs(r, j) += w.entropy * ge[static_cast<std::size_t>(r)] / static_cast<double>(bt);
        }
    }
    if (bt > 0) out.loss.entropy /= static_cast<double>(bt);

    Matrix d_features = Matrix::Zero(features.rows(), n);
    out.feature_grad_from_domain = Matrix::Zero(features.rows(), n);
    if (stage.use_discriminator && bt > 0) {
        if (options.fixed_target_weights) {
            if (options.fixed_target_weights->size() != static_cast<std::size_t>(bt))
                throw std::invalid_argument("fixed_target_weights: length must equal the target batch size");
            out.target_weights = *options.fixed_target_weights;
        } else {
            for (Eigen::Index j = 0; j < bt; ++j) {
                Vector z = logits.col(bs + j);
                double wt = unknown_weight(target_scores[static_cast<std::size_t>(j)],
                                           std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
                out.target_weights.push_back(cfg.invert_wt ? 1.0 - wt : wt);
            }
        }
        const DiscriminatorTrace disc = discriminate(params, features);
        std::vector<double> d_src(disc.prob.data(), disc.prob.data() + bs);
        std::vector<double> d_tgt(disc.prob.data() + bs, disc.prob.data() + n);
        out.loss.domain_adv = domain_adversarial_loss(d_src, d_tgt, out.target_weights);
        const DomainLossGrad gd = domain_adversarial_loss_grad(d_src, d_tgt, out.target_weights);
        RowVector d_logit(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double dp = i < bs ? gd.d_source[static_cast<std::size_t>(i)] : gd.d_target[static_cast<std::size_t>(i - bs)];
            d_logit(i) = w.domain * dp * disc.prob(i) * (1.0 - disc.prob(i));
        }
        out.feature_grad_from_domain =
            discriminator_backward(params, features, disc, d_logit, cfg.grl, out.grad, options.reverse_gradient);
        d_features += out.feature_grad_from_domain;
    }

    d_features += params.closed_head.backward(features, d_logits, out.grad.closed_head);
    d_features += params.open_head.backward(features, d_pairs, out.grad.open_head);
    extractor_backward(params, trace, d_features, out.grad);

    out.loss.total = out.loss.recompute_total();
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainData {
    std::span<const LabeledImage> source;
    std::span<const LabeledImage> target_train;
};

struct LogRow {
    long step = 0;
    int stage = 1;
    LossBreakdown loss;
    double lr_heads = 0.0;
    double lr_backbone = 0.0;
};

struct Snapshot {
    int stage = 1;
    long step = 0;
    std::string tag;
    MetricsReport report;
};

struct TrainLog {
    std::vector<LogRow> rows;
    std::vector<Snapshot> snapshots;
    std::vector<long> stage_boundaries;  // global step index at which each stage ended
    std::size_t target_samples_drawn = 0;

    static std::string csv_header() { return "step,stage,closed_ce,ova,entropy,domain_adv,total,lr_heads,lr_backbone"; }

    void write_csv(const std::filesystem::path& path) const {
        auto out = open_for_write(path);
        out << csv_header() << '\n';
        auto num = [](double v) { return Json(v).dump(); };
        for (const auto& r : rows)
            out << r.step << ',' << r.stage << ',' << num(r.loss.closed_ce) << ',' << num(r.loss.ova) << ','
                << num(r.loss.entropy) << ',' << num(r.loss.domain_adv) << ',' << num(r.loss.total) << ','
                << num(r.lr_heads) << ',' << num(r.lr_backbone) << '\n';
    }
};

/// Optional side effects during training.
struct TrainHooks {
    std::function<MetricsReport(const ModelParams&)> evaluate;
    /// (params, stage, global step, tag) where tag is "step_<n>" or "stage<k>_final".
    std::function<void(const ModelParams&, int, long, const std::string&)> checkpoint;
};

inline double global_norm(const ModelParams& g) {
    double sq = 0.0;
    g.for_each_tensor([&](const char*, ParamGroup, bool, std::span<const double> v, int) {
        for (double x : v) sq += x * x;
    });
    return std::sqrt(sq);
}

inline void scale_params(ModelParams& g, double factor) {
    g.for_each_tensor([&](const char*, ParamGroup, bool, std::span<double> v, int) {
        for (double& x : v) x *= factor;
    });
}

/// One update. Throws TrainingDiverged on a non-finite loss or gradient.
inline LossBreakdown train_step(ModelParams& params, ModelOptimizer& optimizer, const Batch& batch,
                                const StageConfig& stage, const GroupRates& rates, const TrainConfig& cfg) {
    BatchLoss bl = compute_batch_loss(params, batch, stage, cfg);
    const LossBreakdown& l = bl.loss;
    if (!std::isfinite(l.total) || !std::isfinite(l.closed_ce) || !std::isfinite(l.ova) || !std::isfinite(l.entropy) ||
        !std::isfinite(l.domain_adv)) {
        std::ostringstream msg;
        msg << "non-finite loss: closed_ce=" << l.closed_ce << " ova=" << l.ova << " entropy=" << l.entropy
            << " domain_adv=" << l.domain_adv;
        throw TrainingDiverged(msg.str());
    }
    if (!bl.grad.finite()) throw TrainingDiverged("non-finite gradient");
    if (cfg.grad_clip > 0.0) {
        const double norm = global_norm(bl.grad);
        if (norm > cfg.grad_clip) scale_params(bl.grad, cfg.grad_clip / norm);
    }
    optimizer.step(params, bl.grad, rates, stage.use_discriminator);
    if (!params.finite()) throw TrainingDiverged("non-finite parameters after update");
    return bl.loss;
}

namespace detail {

inline Batch draw_batch(const TrainData& data, const TrainConfig& cfg, Rng& rng, TrainLog& log) {
    BatchOptions opts;
    opts.augment = cfg.augment;
    Batch b;
    b.source_images = sample_source(data.source, cfg.batch_size, cfg.model.input_side, rng, opts);
    if (!cfg.source_only) {
        b.target_images = sample_target(data.target_train, cfg.batch_size, cfg.model.input_side, rng);
        log.target_samples_drawn += b.target_images.size();
    }
    return b;
}

inline void snapshot(const ModelParams& params, int stage, long step, const std::string& tag, const TrainHooks& hooks,
                     TrainLog& log) {
    if (hooks.evaluate) log.snapshots.push_back({stage, step, tag, hooks.evaluate(params)});
    if (hooks.checkpoint) hooks.checkpoint(params, stage, step, tag);
}

}  // namespace detail

/// Runs exactly stage.steps updates with a fresh optimizer. `step_offset`
/// is the global index of the first step; rows are appended to `log`.
inline void run_stage(ModelParams& params, const TrainData& data, const StageConfig& stage, int stage_index,
                      const TrainConfig& cfg, Rng& rng, TrainLog& log, const TrainHooks& hooks = {},
                      long step_offset = 0) {
    stage.validate("stage" + std::to_string(stage_index));
    if (!cfg.source_only && data.target_train.empty()) throw std::invalid_argument("run_stage: target_train is empty");
    ModelOptimizer optimizer(stage.optimizer, params.dims, stage.adamw, stage.momentum);
    for (int s = 0; s < stage.steps; ++s) {
        const GroupRates rates{lr_schedule(s, stage.steps, stage.lr_heads, stage.warmup_fraction),
                               lr_schedule(s, stage.steps, stage.lr_backbone, stage.warmup_fraction)};
        const Batch batch = detail::draw_batch(data, cfg, rng, log);
        const long global = step_offset + s;
        LossBreakdown loss;
        try {
            loss = train_step(params, optimizer, batch, stage, rates, cfg);
        } catch (const TrainingDiverged& e) {
            throw TrainingDiverged("stage " + std::to_string(stage_index) + " step " + std::to_string(global) + ": " + e.what());
        }
        log.rows.push_back({global, stage_index, loss, rates.heads, rates.backbone});
        const bool last = s + 1 == stage.steps;
        if (!last && cfg.eval_every > 0 && (global + 1) % cfg.eval_every == 0)
            detail::snapshot(params, stage_index, global + 1, "step_" + std::to_string(global + 1), hooks, log);
    }
    log.stage_boundaries.push_back(step_offset + stage.steps);
    detail::snapshot(params, stage_index, step_offset + stage.steps, "stage" + std::to_string(stage_index) + "_final",
                     hooks, log);
}

/// Stage 1 (or the source stage in source-only mode), then (if enabled)
/// stage 2 with the discriminator excluded from loss and updates. Returns the
/// final model. `log` keeps partial progress if training diverges.
inline ModelParams train_full(const TrainConfig& cfg, const TrainData& data, TrainLog& log, const TrainHooks& hooks = {},
                              const ModelParams* init = nullptr) {
    cfg.validate();
    if (data.source.empty()) throw std::invalid_argument("train_full: source set is empty");
    if (init && !(init->dims == cfg.model)) throw std::invalid_argument("train_full: initial model dims differ from config");
    ModelParams params = init ? *init : ModelParams::initialized(cfg.model, cfg.seed);
    Rng rng = derive_rng(cfg.seed, {0x62617463ULL});
    StageConfig s1 = cfg.source_only ? cfg.source_stage : cfg.stage1;
    StageConfig s2 = cfg.stage2;
    if (cfg.source_only) {
        s1.use_discriminator = s2.use_discriminator = false;
        s1.weights.entropy = s2.weights.entropy = 0.0;
        s1.weights.domain = s2.weights.domain = 0.0;
    }
    run_stage(params, data, s1, 1, cfg, rng, log, hooks, 0);
    if (cfg.two_stage) run_stage(params, data, s2, 2, cfg, rng, log, hooks, s1.steps);
    return params;
}

inline TrainConfig source_only_config(TrainConfig cfg) {
    cfg.source_only = true;
    return cfg;
}

struct TrainResult {
    ModelParams model;
    std::optional<ModelParams> source_model;  // set when warm starting
};

/// Full adapted training. With warm_start the source-only model is trained
/// first (same seed and data, logged to `source_log`) and used as the
/// starting point. Both logs keep partial progress if training diverges.
inline TrainResult train_adapted(const TrainConfig& cfg, const TrainData& data, TrainLog& log, TrainLog& source_log,
                                 const TrainHooks& hooks = {}, const TrainHooks& source_hooks = {}) {
    TrainResult result;
    if (cfg.warm_start && !cfg.source_only) {
        result.source_model = train_full(source_only_config(cfg), data, source_log, source_hooks);
        result.model = train_full(cfg, data, log, hooks, &*result.source_model);
    } else {
        result.model = train_full(cfg, data, log, hooks);
    }
    return result;
}

}  // namespace unida
