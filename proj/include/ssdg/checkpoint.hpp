#pragma once

// Binary checkpoint archive.
//
// Layout: 8-byte magic "SSDGCKP1", little-endian u64 header length, a JSON
// header, then every array as raw little-endian float32 in header order.
// The header holds the metadata record and one entry per array with its
// canonical name, shape and byte offset into the data section.

#include "errors.hpp"
#include "model.hpp"
#include "params.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace ssdg {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct CheckpointMeta {
    long step = 0;
    std::string config_hash;
    std::uint64_t seed = 0;
    int num_classes = 0;
    double temperature = 0.05;
    EncoderSpec encoder;
};

struct Checkpoint {
    CheckpointMeta meta;
    ParamSet<float> params;
};

namespace checkpoint_detail {

inline constexpr char magic[8] = {'S', 'S', 'D', 'G', 'C', 'K', 'P', '1'};

inline nlohmann::json spec_to_json(const EncoderSpec& s) {
    return {{"in_channels", s.in_channels}, {"input_size", s.input_size}, {"widths", s.widths},
            {"norm_groups", s.norm_groups}, {"input_mean", s.input_mean}, {"input_std", s.input_std}};
}

inline EncoderSpec spec_from_json(const nlohmann::json& j) {
    EncoderSpec s;
    s.in_channels = j.at("in_channels").get<int>();
    s.input_size = j.at("input_size").get<int>();
    s.widths = j.at("widths").get<std::vector<int>>();
    s.norm_groups = j.at("norm_groups").get<int>();
    s.input_mean = j.at("input_mean").get<std::vector<float>>();
    s.input_std = j.at("input_std").get<std::vector<float>>();
    return s;
}

inline const char* group_name(ParamGroup g) { return g == ParamGroup::backbone ? "backbone" : "classifier"; }

} // namespace checkpoint_detail

inline void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params,
                            const CheckpointMeta& meta) {
    using namespace checkpoint_detail;
    nlohmann::json header;
    header["step"] = meta.step;
    header["config_hash"] = meta.config_hash;
    header["seed"] = meta.seed;
    header["num_classes"] = meta.num_classes;
    header["temperature"] = meta.temperature;
    header["encoder"] = spec_to_json(meta.encoder);
    auto& entries = header["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : params) {
        entries.push_back({{"name", e.name},
                           {"shape", e.shape},
                           {"offset", offset},
                           {"group", group_name(e.group)},
                           {"weight_decay", e.weight_decay}});
        offset += e.values.size() * sizeof(float);
    }
    const std::string text = header.dump();
    const std::uint64_t len = text.size();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
        out.write(magic, sizeof magic);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& e : params)
            out.write(reinterpret_cast<const char*>(e.values.data()),
                      static_cast<std::streamsize>(e.values.size() * sizeof(float)));
        if (!out) throw CheckpointError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, long step,
                            const std::string& config_hash, std::uint64_t seed) {
    CheckpointMeta meta{step, config_hash, seed, model.num_classes(), static_cast<double>(model.temperature()),
                        model.encoder_spec()};
    save_checkpoint(path, model.params(), meta);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    using namespace checkpoint_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    char head[sizeof magic];
    in.read(head, sizeof head);
    if (!in || std::memcmp(head, magic, sizeof magic) != 0) throw CheckpointError("bad magic in " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1ull << 30)) throw CheckpointError("bad header length in " + path.string());
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("truncated header in " + path.string());

    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(text);
        ck.meta.step = header.at("step").get<long>();
        ck.meta.config_hash = header.at("config_hash").get<std::string>();
        ck.meta.seed = header.at("seed").get<std::uint64_t>();
        ck.meta.num_classes = header.at("num_classes").get<int>();
        ck.meta.temperature = header.at("temperature").get<double>();
        ck.meta.encoder = spec_from_json(header.at("encoder"));
        std::uint64_t expected = 0;
        for (const auto& a : header.at("arrays")) {
            const auto group = a.at("group").get<std::string>() == "backbone" ? ParamGroup::backbone
                                                                                : ParamGroup::classifier;
            const auto idx = ck.params.add(a.at("name").get<std::string>(), a.at("shape").get<std::vector<int>>(),
                                           group, a.at("weight_decay").get<bool>());
            if (a.at("offset").get<std::uint64_t>() != expected)
                throw CheckpointError("non-contiguous array offset in " + path.string());
            auto& values = ck.params[idx].values;
            in.read(reinterpret_cast<char*>(values.data()),
                    static_cast<std::streamsize>(values.size() * sizeof(float)));
            if (!in) throw CheckpointError("truncated data for " + ck.params[idx].name + " in " + path.string());
            expected += values.size() * sizeof(float);
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed header in " + path.string() + ": " + e.what());
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in " + path.string());
    return ck;
}

// Rebuilds a model from an archive; names and shapes must match exactly.
inline Model<float> model_from_checkpoint(const Checkpoint& ck) {
    Model<float> model(ck.meta.encoder, ck.meta.num_classes, static_cast<float>(ck.meta.temperature), 0);
    if (!model.params().same_layout(ck.params))
        throw CheckpointError("checkpoint arrays do not match the encoder description");
    for (std::size_t i = 0; i < ck.params.size(); ++i) model.params()[i].values = ck.params[i].values;
    return model;
}

} // namespace ssdg
