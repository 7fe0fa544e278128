#pragma once

#include "spotkit/model.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace spotkit {

std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config_json(const std::string& text);

struct CheckpointInfo {
    ModelConfig model;
    std::vector<std::string> classes;
    std::uint64_t seed = 0;
    std::string extra_json = "{}";
};

struct LoadedModel {
    std::unique_ptr<SpottingModel> model;
    CheckpointInfo info;
};

// Binary layout, all integers little-endian:
//   "SPOTCKPT" | u32 version | u64 n | n bytes of metadata JSON
//   u64 count | count x (u32 name_len | name | u32 rank | rank x u64 dim | dims-product x f64)
//   u64 FNV-1a of every preceding byte
void save_checkpoint(const std::filesystem::path& path, const SpottingModel& model, const std::vector<std::string>& classes,
                     std::uint64_t seed, const std::string& extra_json = "{}");
// Throws CheckpointError on a bad header, checksum, or parameter mismatch.
LoadedModel load_checkpoint(const std::filesystem::path& path);

} // namespace spotkit
