#pragma once

// Seeded synthetic benchmark with shared, source-private and target-private
// classes. Each class is a Gaussian blob placed on a circle around the image
// center; the target domain sees the same blobs through a DomainShift.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unida/common.hpp"

namespace unida {

enum class Domain { source, target };

/// Label value for target samples whose class is withheld from the trainer.
inline constexpr int kHiddenLabel = -1;

/// Square single-channel image, row-major.
struct Image {
    int side = 0;
    std::vector<double> pixels;

    Image() = default;
    explicit Image(int side_, double fill = 0.0)
        : side(side_), pixels(static_cast<std::size_t>(side_) * side_, fill) {}

    double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * side + col]; }
    double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * side + col]; }

    bool operator==(const Image&) const = default;
};

struct LabeledImage {
    Image image;
    int label = kHiddenLabel;
    Domain domain = Domain::source;
    bool is_unknown = false;
};

struct DomainShift {
    double intensity_scale = 0.7;
    double intensity_offset = 0.1;
    double noise_sigma_source = 0.05;
    double noise_sigma_target = 0.15;
    int blob_translation = 3;

    bool operator==(const DomainShift&) const = default;
};

/// Class layout: [0, shared) shared, then source-private, then target-private.
/// Source labels are therefore the contiguous range [0, shared + source_private).
struct DatasetSpec {
    int total_classes = 10;
    int shared_classes = 5;
    int source_private = 3;
    int target_private = 2;
    int image_side = 32;
    int crop_side = 28;
    int samples_per_class_source = 100;
    int samples_per_class_target = 60;
    DomainShift shift;
    std::uint64_t seed = 0;

    bool operator==(const DatasetSpec&) const = default;

    void validate() const {
        auto fail = [](const std::string& what) { throw std::invalid_argument("invalid DatasetSpec: " + what); };
        if (shared_classes < 0 || source_private < 0 || target_private < 0)
            fail("class counts must be non-negative");
        if (shared_classes + source_private + target_private != total_classes)
            fail("shared_classes + source_private + target_private must equal total_classes");
        if (shared_classes + source_private < 1) fail("source domain needs at least one class");
        if (shared_classes + target_private < 1) fail("target domain needs at least one class");
        if (crop_side < 1) fail("crop_side must be >= 1");
        if (image_side < crop_side) fail("image_side must be >= crop_side");
        if (samples_per_class_source < 1 || samples_per_class_target < 1) fail("samples per class must be >= 1");
        if (!(shift.intensity_scale > 0.0)) fail("shift.intensity_scale must be > 0");
        if (!(shift.noise_sigma_source >= 0.0) || !(shift.noise_sigma_target >= 0.0))
            fail("noise sigmas must be >= 0");
        if (shift.blob_translation < 0) fail("shift.blob_translation must be >= 0");
    }

    int source_class_count() const { return shared_classes + source_private; }

    std::vector<int> source_classes() const {
        std::vector<int> out;
        for (int c = 0; c < shared_classes + source_private; ++c) out.push_back(c);
        return out;
    }

    std::vector<int> target_classes() const {
        std::vector<int> out;
        for (int c = 0; c < shared_classes; ++c) out.push_back(c);
        for (int c = shared_classes + source_private; c < total_classes; ++c) out.push_back(c);
        return out;
    }

    bool is_target_private(int cls) const { return cls >= shared_classes + source_private && cls < total_classes; }
};

struct Dataset {
    std::vector<LabeledImage> source;
    std::vector<LabeledImage> target_train;
    std::vector<LabeledImage> target_test;
};

/// Per-draw appearance jitter. Kept small so that the fixed domain
/// translation is larger than the within-class spread.
inline constexpr double kBlobCenterJitter = 1.0;
inline constexpr double kBlobAmplitudeMin = 0.8;
inline constexpr double kBlobAmplitudeMax = 1.0;
inline constexpr double kBlobWidthFraction = 1.0 / 12.0;

/// Renders draw `draw` of class `cls`. Source and target renderings of the
/// same (cls, draw) share blob parameters and source noise; the target view
/// then moves the blob t pixels radially outward, rescales, offsets and adds
/// its own noise.
inline Image render_image(const DatasetSpec& spec, int cls, std::uint64_t draw, Domain domain) {
    const int side = spec.image_side;
    Rng rng = derive_rng(spec.seed, {0x72656e64ULL, static_cast<std::uint64_t>(cls), draw});
    std::uniform_real_distribution<double> jitter(-kBlobCenterJitter, kBlobCenterJitter);
    std::uniform_real_distribution<double> amp_dist(kBlobAmplitudeMin, kBlobAmplitudeMax);
    std::uniform_real_distribution<double> width_dist(0.9, 1.1);

    const double angle = 2.0 * std::numbers::pi * cls / spec.total_classes;
    const double radius = side / 3.0;
    const double mid = (side - 1) / 2.0;
    double cx = mid + radius * std::cos(angle) + jitter(rng);
    double cy = mid + radius * std::sin(angle) + jitter(rng);
    const double amplitude = amp_dist(rng);
    const double width = side * kBlobWidthFraction * width_dist(rng);

    if (domain == Domain::target) {
        cx += spec.shift.blob_translation * std::cos(angle);
        cy += spec.shift.blob_translation * std::sin(angle);
    }

    std::normal_distribution<double> src_noise(0.0, 1.0);
    Image img(side);
    const double inv = 1.0 / (2.0 * width * width);
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            const double dx = c - cx;
            const double dy = r - cy;
            double v = amplitude * std::exp(-(dx * dx + dy * dy) * inv);
            v += spec.shift.noise_sigma_source * src_noise(rng);
            img.at(r, c) = std::clamp(v, 0.0, 1.0);
        }
    }

    if (domain == Domain::target) {
        Rng trng = derive_rng(spec.seed, {0x74677421ULL, static_cast<std::uint64_t>(cls), draw});
        std::normal_distribution<double> tgt_noise(0.0, 1.0);
        for (double& p : img.pixels) {
            double v = spec.shift.intensity_scale * p + spec.shift.intensity_offset;
            v += spec.shift.noise_sigma_target * tgt_noise(trng);
            p = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

/// Draw indices: source uses [0, n_s), target_train [n_s, n_s + n_t),
/// target_test [n_s + n_t, n_s + 2 n_t). Disjoint ranges keep the splits independent.
inline Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    const auto ns = static_cast<std::uint64_t>(spec.samples_per_class_source);
    const auto nt = static_cast<std::uint64_t>(spec.samples_per_class_target);

    for (int cls : spec.source_classes()) {
        for (std::uint64_t i = 0; i < ns; ++i)
            ds.source.push_back({render_image(spec, cls, i, Domain::source), cls, Domain::source, false});
    }
    for (int cls : spec.target_classes()) {
        for (std::uint64_t i = 0; i < nt; ++i)
            ds.target_train.push_back({render_image(spec, cls, ns + i, Domain::target), kHiddenLabel, Domain::target, false});
        for (std::uint64_t i = 0; i < nt; ++i)
            ds.target_test.push_back(
                {render_image(spec, cls, ns + nt + i, Domain::target), cls, Domain::target, spec.is_target_private(cls)});
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Transforms

/// Zeroes the side×side square at (row, col), clipped to the image.
inline void erase_square(Image& img, int row, int col, int side) {
    for (int r = std::max(row, 0); r < std::min(row + side, img.side); ++r)
        for (int c = std::max(col, 0); c < std::min(col + side, img.side); ++c) img.at(r, c) = 0.0;
}

inline void scale_intensity(Image& img, double factor) {
    for (double& p : img.pixels) p = std::clamp(p * factor, 0.0, 1.0);
}

struct AugmentParams {
    double erase_probability = 0.5;
    int erase_min = 4;
    int erase_max = 8;
    double jitter_probability = 0.5;
    double jitter_low = 0.8;
    double jitter_high = 1.2;
};

/// Random erasing then intensity jitter, each with its own coin flip.
/// Source images only.
inline LabeledImage augment_source(const LabeledImage& img, Rng& rng, const AugmentParams& params = {}) {
    if (img.domain != Domain::source)
        throw std::logic_error("augment_source: augmentation is applied to source-domain images only");
    LabeledImage out = img;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < params.erase_probability) {
        const int max_side = std::min(params.erase_max, out.image.side);
        const int min_side = std::min(params.erase_min, max_side);
        const int side = std::uniform_int_distribution<int>(min_side, max_side)(rng);
        const int row = std::uniform_int_distribution<int>(0, out.image.side - side)(rng);
        const int col = std::uniform_int_distribution<int>(0, out.image.side - side)(rng);
        erase_square(out.image, row, col, side);
    }
    if (coin(rng) < params.jitter_probability) {
        const double factor = std::uniform_real_distribution<double>(params.jitter_low, params.jitter_high)(rng);
        scale_intensity(out.image, factor);
    }
    return out;
}

inline Image crop(const Image& img, int row, int col, int side) {
    if (side < 1 || row < 0 || col < 0 || row + side > img.side || col + side > img.side)
        throw std::invalid_argument("crop window outside image");
    Image out(side);
    for (int r = 0; r < side; ++r)
        std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(row + r) * img.side + col, side,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(r) * side);
    return out;
}

/// (row, col) anchors: top-left, top-right, bottom-left, bottom-right, center.
inline std::array<std::pair<int, int>, 5> five_crop_anchors(int image_side, int crop_side) {
    if (crop_side < 1 || crop_side > image_side)
        throw std::invalid_argument("five_crops: crop_side must be in [1, image_side]");
    const int far = image_side - crop_side;
    const int mid = far / 2;
    return {{{0, 0}, {0, far}, {far, 0}, {far, far}, {mid, mid}}};
}

inline std::array<Image, 5> five_crops(const Image& img, int crop_side) {
    const auto anchors = five_crop_anchors(img.side, crop_side);
    std::array<Image, 5> out;
    for (std::size_t i = 0; i < anchors.size(); ++i) out[i] = crop(img, anchors[i].first, anchors[i].second, crop_side);
    return out;
}

inline Image center_crop(const Image& img, int crop_side) {
    const auto anchors = five_crop_anchors(img.side, crop_side);
    return crop(img, anchors[4].first, anchors[4].second, crop_side);
}

// ---------------------------------------------------------------------------
// Batching

/// Items are already cropped to crop_side.
struct Batch {
    std::vector<LabeledImage> source_images;
    std::vector<LabeledImage> target_images;
};

struct BatchOptions {
    bool augment = true;
    AugmentParams augment_params;
};

/// Uniform sampling with replacement; augmentation plus random crop.
inline std::vector<LabeledImage> sample_source(std::span<const LabeledImage> source_set, int batch_size, int crop_side,
                                               Rng& rng, const BatchOptions& options = {}) {
    if (source_set.empty()) throw std::invalid_argument("make_batch: source set is empty");
    if (batch_size < 1) throw std::invalid_argument("make_batch: batch_size must be >= 1");
    std::uniform_int_distribution<std::size_t> pick(0, source_set.size() - 1);
    std::vector<LabeledImage> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        const LabeledImage& item = source_set[pick(rng)];
        LabeledImage aug = options.augment ? augment_source(item, rng, options.augment_params) : item;
        const int far = aug.image.side - crop_side;
        if (far < 0) throw std::invalid_argument("make_batch: crop_side exceeds image side");
        const int row = std::uniform_int_distribution<int>(0, far)(rng);
        const int col = std::uniform_int_distribution<int>(0, far)(rng);
        aug.image = crop(aug.image, row, col, crop_side);
        out.push_back(std::move(aug));
    }
    return out;
}

/// Uniform sampling with replacement; deterministic center crop, never augmented.
inline std::vector<LabeledImage> sample_target(std::span<const LabeledImage> target_set, int batch_size, int crop_side,
                                               Rng& rng) {
    if (target_set.empty()) throw std::invalid_argument("make_batch: target set is empty");
    if (batch_size < 1) throw std::invalid_argument("make_batch: batch_size must be >= 1");
    std::uniform_int_distribution<std::size_t> pick(0, target_set.size() - 1);
    std::vector<LabeledImage> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        LabeledImage item = target_set[pick(rng)];
        item.image = center_crop(item.image, crop_side);
        out.push_back(std::move(item));
    }
    return out;
}

inline Batch make_batch(std::span<const LabeledImage> source_set, std::span<const LabeledImage> target_train,
                        int batch_size, int crop_side, Rng& rng, const BatchOptions& options = {}) {
    if (target_train.empty()) throw std::invalid_argument("make_batch: target set is empty");
    Batch batch;
    batch.source_images = sample_source(source_set, batch_size, crop_side, rng, options);
    batch.target_images = sample_target(target_train, batch_size, crop_side, rng);
    return batch;
}

}  // namespace unida
