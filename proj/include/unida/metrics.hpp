#pragma once

// Known/unknown decision rule, five-crop averaging, ACC over known classes
// and AUROC for unknown detection.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unida/common.hpp"
#include "unida/json_util.hpp"
#include "unida/net.hpp"
#include "unida/synth_data.hpp"

namespace unida {

inline constexpr int kUnknownPrediction = -1;

struct EvalOptions {
    double threshold = 0.5;
    bool five_crop = true;

    bool operator==(const EvalOptions&) const = default;
};

struct Prediction {
    int predicted = kUnknownPrediction;
    double unknown_score = 1.0;
    std::vector<double> closed_probs;
    std::vector<double> known_probs;
};

/// Averages per-crop closed probabilities and known probabilities, then
/// decides: argmax of the mean closed distribution, unknown score
/// 1 - mean known_prob at that class, UNKNOWN iff score >= threshold.
inline Prediction decide(std::span<const std::vector<double>> crop_closed_probs,
                         std::span<const std::vector<double>> crop_known_probs, double threshold) {
    if (crop_closed_probs.empty() || crop_closed_probs.size() != crop_known_probs.size())
        throw std::invalid_argument("decide: need the same non-zero number of closed and open outputs");
    const std::size_t classes = crop_closed_probs.front().size();
    Prediction out;
    out.closed_probs.assign(classes, 0.0);
    out.known_probs.assign(classes, 0.0);
    // Running mean, so that identical crops reproduce the single-crop values exactly.
    for (std::size_t c = 0; c < crop_closed_probs.size(); ++c) {
        if (crop_closed_probs[c].size() != classes || crop_known_probs[c].size() != classes)
            throw std::invalid_argument("decide: inconsistent class count across crops");
        const double n = static_cast<double>(c + 1);
        for (std::size_t k = 0; k < classes; ++k) {
            out.closed_probs[k] += (crop_closed_probs[c][k] - out.closed_probs[k]) / n;
            out.known_probs[k] += (crop_known_probs[c][k] - out.known_probs[k]) / n;
        }
    }
    const int y = argmax(out.closed_probs);
    out.unknown_score = 1.0 - out.known_probs[static_cast<std::size_t>(y)];
    out.predicted = out.unknown_score >= threshold ? kUnknownPrediction : y;
    return out;
}

namespace detail {

inline void require_usable(const ModelParams& params) {
    if (!params.finite()) throw std::invalid_argument("model parameters contain NaN or Inf");
}

/// Closed probabilities and known probabilities for every column of `inputs`.
inline void crop_outputs(const ModelParams& params, const Matrix& inputs, std::vector<std::vector<double>>& closed,
                         std::vector<std::vector<double>>& known) {
    const ExtractorTrace trace = extract_features(params, inputs);
    const Matrix logits = closed_logits(params, trace.features);
    const Matrix pairs = open_logits(params, trace.features);
    for (Eigen::Index i = 0; i < inputs.cols(); ++i) {
        Vector probs = softmax(logits.col(i));
        closed.emplace_back(probs.data(), probs.data() + probs.size());
        known.push_back(open_scores_column(pairs, i).known_prob);
    }
}

inline std::vector<Image> eval_crops(const Image& img, int crop_side, bool five_crop) {
    if (!five_crop) return {center_crop(img, crop_side)};
    auto crops = five_crops(img, crop_side);
    return {crops.begin(), crops.end()};
}

}  // namespace detail

/// Full-size image in; crops taken here.
inline Prediction predict(const ModelParams& params, const Image& image, const EvalOptions& options = {}) {
    detail::require_usable(params);
    const auto crops = detail::eval_crops(image, params.dims.input_side, options.five_crop);
    std::vector<std::vector<double>> closed, known;
    detail::crop_outputs(params, stack_images(crops, params.dims.input_side), closed, known);
    return decide(closed, known, options.threshold);
}

/// Batched predict over a set of images; identical results to calling predict per image.
inline std::vector<Prediction> predict_all(const ModelParams& params, std::span<const LabeledImage> images,
                                           const EvalOptions& options = {}) {
    detail::require_usable(params);
    const std::size_t per = options.five_crop ? 5 : 1;
    constexpr std::size_t kChunk = 256;
    std::vector<Prediction> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const std::size_t end = std::min(images.size(), start + kChunk);
        std::vector<Image> crops;
        for (std::size_t i = start; i < end; ++i) {
            auto c = detail::eval_crops(images[i].image, params.dims.input_side, options.five_crop);
            crops.insert(crops.end(), c.begin(), c.end());
        }
        std::vector<std::vector<double>> closed, known;
        detail::crop_outputs(params, stack_images(crops, params.dims.input_side), closed, known);
        for (std::size_t i = 0; i < end - start; ++i) {
            std::span<const std::vector<double>> cs(closed.data() + i * per, per);
            std::span<const std::vector<double>> ks(known.data() + i * per, per);
            out.push_back(decide(cs, ks, options.threshold));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Percentage of ground-truth-known samples predicted as their label.
/// An UNKNOWN prediction on a known sample is an error.
inline double accuracy_known(std::span<const int> predicted, std::span<const int> labels,
                             std::span<const bool> is_unknown) {
    if (predicted.size() != labels.size() || labels.size() != is_unknown.size())
        throw std::invalid_argument("accuracy_known: predictions and ground truth differ in length");
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (is_unknown[i]) continue;
        ++total;
        if (predicted[i] == labels[i]) ++correct;
    }
    if (total == 0) throw std::invalid_argument("accuracy_known: no ground-truth-known samples");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

/// P(score(unknown) > score(known)) with ties counted as 1/2, via midranks.
inline double auroc(std::span<const double> scores, std::span<const bool> is_unknown) {
    if (scores.size() != is_unknown.size()) throw std::invalid_argument("auroc: scores and flags differ in length");
    const std::size_t n = scores.size();
    std::size_t n_unknown = 0;
    for (bool u : is_unknown) n_unknown += u ? 1 : 0;
    const std::size_t n_known = n - n_unknown;
    if (n_unknown == 0 || n_known == 0) throw std::invalid_argument("auroc: need at least one unknown and one known sample");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;  // sum of midranks of unknown samples, ranks 1-based
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t t = i; t <= j; ++t)
            if (is_unknown[order[t]]) rank_sum += midrank;
        i = j + 1;
    }
    const double nu = static_cast<double>(n_unknown);
    const double nk = static_cast<double>(n_known);
    return (rank_sum - nu * (nu + 1.0) / 2.0) / (nu * nk);
}

struct ClassCounts {
    std::size_t correct = 0;
    std::size_t total = 0;
};

struct MetricsReport {
    double acc = 0.0;    // percent
    double auroc = 0.0;  // [0, 1]
    std::size_t known_correct = 0;
    std::size_t known_total = 0;
    std::size_t unknown_total = 0;
    double threshold = 0.5;
    std::map<int, ClassCounts> per_class;

    Json to_json() const {
        Json per = Json::object();
        for (const auto& [cls, c] : per_class)
            per[std::to_string(cls)] = Json{{"correct", c.correct},
                                            {"total", c.total},
                                            {"acc", c.total ? 100.0 * static_cast<double>(c.correct) / static_cast<double>(c.total) : 0.0}};
        return Json{{"acc", acc},
                    {"auroc", auroc},
                    {"counts", {{"known_correct", known_correct}, {"known_total", known_total}, {"unknown_total", unknown_total}}},
                    {"threshold", threshold},
                    {"per_class", per}};
    }

    static std::string csv_header() { return "acc,auroc,known_correct,known_total,unknown_total,threshold"; }

    std::string csv_row() const {
        Json row = Json::array({acc, auroc, known_correct, known_total, unknown_total, threshold});
        std::string s;
        for (std::size_t i = 0; i < row.size(); ++i) s += (i ? "," : "") + row[i].dump();
        return s;
    }
};

inline MetricsReport make_report(std::span<const Prediction> predictions, std::span<const LabeledImage> test_set,
                                 double threshold) {
    if (predictions.size() != test_set.size()) throw std::invalid_argument("make_report: size mismatch");
    std::vector<int> predicted, labels;
    std::vector<double> scores;
    std::unique_ptr<bool[]> flags(new bool[test_set.size()]);
    MetricsReport r;
    r.threshold = threshold;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        predicted.push_back(predictions[i].predicted);
        labels.push_back(test_set[i].label);
        scores.push_back(predictions[i].unknown_score);
        flags[i] = test_set[i].is_unknown;
        if (test_set[i].is_unknown) {
            ++r.unknown_total;
        } else {
            auto& c = r.per_class[test_set[i].label];
            ++c.total;
            ++r.known_total;
            if (predictions[i].predicted == test_set[i].label) {
                ++c.correct;
                ++r.known_correct;
            }
        }
    }
    std::span<const bool> flag_span(flags.get(), test_set.size());
    r.acc = accuracy_known(predicted, labels, flag_span);
    r.auroc = auroc(scores, flag_span);
    return r;
}

struct Evaluation {
    MetricsReport report;
    std::vector<Prediction> predictions;
};

inline Evaluation evaluate(const ModelParams& params, std::span<const LabeledImage> target_test,
                           const EvalOptions& options = {}) {
    for (const auto& item : target_test)
        if (!item.is_unknown && item.label == kHiddenLabel)
            throw std::invalid_argument("evaluate: test set lacks ground truth");
    Evaluation ev;
    ev.predictions = predict_all(params, target_test, options);
    ev.report = make_report(ev.predictions, target_test, options.threshold);
    return ev;
}

/// One line per sample: id, unknown_score, predicted, ground_truth (-1 for unknown).
inline void write_scores_csv(const std::filesystem::path& path, std::span<const Prediction> predictions,
                             std::span<const LabeledImage> test_set) {
    auto out = open_for_write(path);
    out << "id,unknown_score,predicted,ground_truth\n";
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int truth = test_set[i].is_unknown ? -1 : test_set[i].label;
        out << i << ',' << Json(predictions[i].unknown_score).dump() << ',' << predictions[i].predicted << ',' << truth
            << '\n';
    }
}

}  // namespace unida
