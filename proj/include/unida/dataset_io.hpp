#pragma once

// On-disk dataset layout:
//   manifest.json            spec, seed, per-split counts
//   <split>_pixels.bin       row-major float64 pixels, little-endian, images back to back
//   <split>_labels.txt       one integer per line; -1 for hidden or unknown
// Splits: source, target_train, target_test.

#include <filesystem>
#include <string>
#include <vector>

#include "unida/common.hpp"
#include "unida/json_util.hpp"
#include "unida/synth_data.hpp"

namespace unida {

inline Json to_json(const DomainShift& s) {
    return Json{{"intensity_scale", s.intensity_scale},
                {"intensity_offset", s.intensity_offset},
                {"noise_sigma_source", s.noise_sigma_source},
                {"noise_sigma_target", s.noise_sigma_target},
                {"blob_translation", s.blob_translation}};
}

inline DomainShift domain_shift_from(StrictObject obj) {
    DomainShift s;
    s.intensity_scale = obj.get("intensity_scale", s.intensity_scale);
    s.intensity_offset = obj.get("intensity_offset", s.intensity_offset);
    s.noise_sigma_source = obj.get("noise_sigma_source", s.noise_sigma_source);
    s.noise_sigma_target = obj.get("noise_sigma_target", s.noise_sigma_target);
    s.blob_translation = obj.get("blob_translation", s.blob_translation);
    obj.finish();
    return s;
}

/// Seed is not part of the serialized spec; experiment configs carry it at top level.
inline Json to_json(const DatasetSpec& spec) {
    return Json{{"total_classes", spec.total_classes},
                {"shared_classes", spec.shared_classes},
                {"source_private", spec.source_private},
                {"target_private", spec.target_private},
                {"image_side", spec.image_side},
                {"crop_side", spec.crop_side},
                {"samples_per_class_source", spec.samples_per_class_source},
                {"samples_per_class_target", spec.samples_per_class_target},
                {"shift", to_json(spec.shift)}};
}

inline DatasetSpec dataset_spec_from(StrictObject obj) {
    DatasetSpec d;
    d.total_classes = obj.get("total_classes", d.total_classes);
    d.shared_classes = obj.get("shared_classes", d.shared_classes);
    d.source_private = obj.get("source_private", d.source_private);
    d.target_private = obj.get("target_private", d.target_private);
    d.image_side = obj.get("image_side", d.image_side);
    d.crop_side = obj.get("crop_side", d.crop_side);
    d.samples_per_class_source = obj.get("samples_per_class_source", d.samples_per_class_source);
    d.samples_per_class_target = obj.get("samples_per_class_target", d.samples_per_class_target);
    d.shift = domain_shift_from(obj.child("shift"));
    obj.finish();
    return d;
}

namespace detail {

inline void write_split(const std::filesystem::path& dir, const std::string& name,
                        const std::vector<LabeledImage>& items) {
    auto bin = open_for_write(dir / (name + "_pixels.bin"), true);
    auto txt = open_for_write(dir / (name + "_labels.txt"));
    for (const auto& item : items) {
        write_f64_le(bin, item.image.pixels);
        const bool hidden = item.label == kHiddenLabel || item.is_unknown;
        txt << (hidden ? -1 : item.label) << '\n';
    }
}

inline std::vector<LabeledImage> read_split(const std::filesystem::path& dir, const std::string& name, std::size_t count,
                                            int side, Domain domain, bool labels_are_ground_truth) {
    auto bin = open_for_read(dir / (name + "_pixels.bin"), true);
    auto txt = open_for_read(dir / (name + "_labels.txt"));
    std::vector<LabeledImage> items(count);
    const auto per_image = static_cast<std::size_t>(side) * side;
    for (auto& item : items) {
        item.image.side = side;
        item.image.pixels = read_f64_le(bin, per_image);
        if (!(txt >> item.label)) throw std::runtime_error("labels file truncated: " + name);
        item.domain = domain;
        // Ground-truth -1 in the test split marks a novel class.
        item.is_unknown = labels_are_ground_truth && item.label == -1;
    }
    return items;
}

}  // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    Json manifest{{"format", "unida-dataset"},
                  {"version", 1},
                  {"spec", to_json(spec)},
                  {"seed", spec.seed},
                  {"counts",
                   {{"source", ds.source.size()},
                    {"target_train", ds.target_train.size()},
                    {"target_test", ds.target_test.size()}}}};
    open_for_write(dir / "manifest.json") << manifest.dump(2) << '\n';
    detail::write_split(dir, "source", ds.source);
    detail::write_split(dir, "target_train", ds.target_train);
    detail::write_split(dir, "target_test", ds.target_test);
}

struct LoadedDataset {
    DatasetSpec spec;
    Dataset data;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
    Json manifest;
    try {
        manifest = Json::parse(open_for_read(dir / "manifest.json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("dataset manifest: " + std::string(e.what()));
    }
    StrictObject root(manifest, "");
    if (root.require<std::string>("format") != "unida-dataset") throw ConfigError("format", "not a dataset manifest");
    if (root.require<int>("version") != 1) throw ConfigError("version", "unsupported dataset version");
    LoadedDataset out;
    out.spec = dataset_spec_from(root.child("spec"));
    out.spec.seed = root.require<std::uint64_t>("seed");
    out.spec.validate();
    auto counts = root.child("counts");
    const auto ns = counts.require<std::size_t>("source");
    const auto ntr = counts.require<std::size_t>("target_train");
    const auto nte = counts.require<std::size_t>("target_test");
    counts.finish();
    root.finish();
    const int side = out.spec.image_side;
    out.data.source = detail::read_split(dir, "source", ns, side, Domain::source, true);
    out.data.target_train = detail::read_split(dir, "target_train", ntr, side, Domain::target, false);
    out.data.target_test = detail::read_split(dir, "target_test", nte, side, Domain::target, true);
    return out;
}

}  // namespace unida
