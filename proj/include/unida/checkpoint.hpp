#pragma once

// Checkpoint directory:
//   model.json   dims, classes, seed, stage, step, parameter count and tensor order
//   params.bin   every tensor in ModelParams::for_each_tensor order, float64 little-endian.
//                Weight matrices are written row-major ([out][in]), then the bias.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unida/common.hpp"
#include "unida/json_util.hpp"
#include "unida/net.hpp"

namespace unida {

struct CheckpointInfo {
    std::uint64_t seed = 0;
    int stage = 0;
    long step = 0;
};

inline Json to_json(const NetDims& d) {
    return Json{{"input_side", d.input_side}, {"hidden1", d.hidden1},   {"hidden2", d.hidden2},
                {"feature", d.feature},       {"classes", d.classes},   {"disc_hidden", d.disc_hidden}};
}

inline NetDims net_dims_from(StrictObject obj) {
    NetDims d;
    d.input_side = obj.require<int>("input_side");
    d.hidden1 = obj.require<int>("hidden1");
    d.hidden2 = obj.require<int>("hidden2");
    d.feature = obj.require<int>("feature");
    d.classes = obj.require<int>("classes");
    d.disc_hidden = obj.require<int>("disc_hidden");
    obj.finish();
    return d;
}

/// Flattened parameters in checkpoint order (row-major weights).
inline std::vector<double> flatten_params(const ModelParams& p) {
    std::vector<double> flat;
    flat.reserve(p.size());
    auto put = [&](const Dense& layer) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) flat.push_back(layer.weight(r, c));
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) flat.push_back(layer.bias(r));
    };
    for (const Dense* layer : {&p.ext1, &p.ext2, &p.ext3, &p.closed_head, &p.open_head, &p.disc1, &p.disc2}) put(*layer);
    return flat;
}

inline ModelParams unflatten_params(const NetDims& dims, std::span<const double> flat) {
    ModelParams p = ModelParams::zeros(dims);
    if (flat.size() != p.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(flat.size()) + " values, model needs " +
                                 std::to_string(p.size()));
    std::size_t i = 0;
    auto take = [&](Dense& layer) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = flat[i++];
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = flat[i++];
    };
    for (Dense* layer : {&p.ext1, &p.ext2, &p.ext3, &p.closed_head, &p.open_head, &p.disc1, &p.disc2}) take(*layer);
    return p;
}

inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& p, const CheckpointInfo& info) {
    std::filesystem::create_directories(dir);
    Json order = Json::array();
    p.for_each_tensor([&](const char* name, ParamGroup g, bool is_bias, auto values, int) {
        order.push_back(Json{{"name", std::string(name) + (is_bias ? ".b" : ".W")},
                             {"group", to_string(g)},
                             {"count", values.size()}});
    });
    Json manifest{{"format", "unida-checkpoint"},
                  {"version", 1},
                  {"dims", to_json(p.dims)},
                  {"classes", p.dims.classes},
                  {"seed", info.seed},
                  {"stage", info.stage},
                  {"step", info.step},
                  {"param_count", p.size()},
                  {"byte_order", "little"},
                  {"weight_layout", "row-major [out][in]"},
                  {"order", order}};
    open_for_write(dir / "model.json") << manifest.dump(2) << '\n';
    auto bin = open_for_write(dir / "params.bin", true);
    write_f64_le(bin, flatten_params(p));
}

struct LoadedCheckpoint {
    ModelParams params;
    CheckpointInfo info;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    Json manifest;
    try {
        manifest = Json::parse(open_for_read(dir / "model.json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "unida-checkpoint") throw std::runtime_error("not a checkpoint: " + dir.string());
    const NetDims dims = net_dims_from(StrictObject(manifest.at("dims"), "dims"));
    LoadedCheckpoint out;
    out.info.seed = manifest.at("seed").get<std::uint64_t>();
    out.info.stage = manifest.at("stage").get<int>();
    out.info.step = manifest.at("step").get<long>();
    const auto count = manifest.at("param_count").get<std::size_t>();
    auto bin = open_for_read(dir / "params.bin", true);
    out.params = unflatten_params(dims, read_f64_le(bin, count));
    return out;
}

}  // namespace unida
