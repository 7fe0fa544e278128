#pragma once

#include "spotkit/inference.hpp"
#include "spotkit/model.hpp"
#include "spotkit/synth.hpp"
#include "spotkit/training.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace spotkit {

// Parsed value of the TOML subset: scalars and flat arrays of numbers.
using ConfigValue = std::variant<bool, std::int64_t, double, std::string, std::vector<double>>;

// "section.key" -> value, in file order of first appearance. Supports
// [section] headers, key = value lines, # comments, quoted strings,
// integers, floats, booleans and single-line numeric arrays.
std::map<std::string, ConfigValue> parse_config_text(const std::string& text, const std::string& source = "<config>");

struct EvalSettings {
    std::vector<double> tight = kTightTolerances;
    std::vector<double> loose = kLooseTolerances;
};

// Every setting of a gen -> train -> spot -> eval run. One seed drives data
// generation, parameter initialisation and snippet sampling.
struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    SynthConfig synth;
    ModelConfig model;
    TrainConfig train;
    InferenceOptions inference;
    EvalSettings eval;

    // Applies parsed keys; unknown keys or wrong types throw ConfigError
    // naming the key.
    void apply(const std::map<std::string, ConfigValue>& values);
    // Propagates the shared seed and thread count, then validates every part.
    void finalize();
    std::string to_toml() const;
    std::string to_json() const;
};

// Defaults, then the file (if any), then SPOTKIT_SEED from the environment.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig default_run_config();

} // namespace spotkit
