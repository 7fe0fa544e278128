#include "spotkit/config.hpp"
#include "spotkit/errors.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace spotkit;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

fs::path write_config(const std::string& text) {
    const fs::path p = fs::temp_directory_path() / ("spotkit_cfg_" + std::to_string(::getpid()) + ".toml");
    std::ofstream(p) << text;
    return p;
}

} // namespace

TEST_CASE("parse the configuration subset") {
    const auto v = parse_config_text(R"(# run settings
seed = 12
threads = 2   # inline comment

[synth]
fps = 2.5
split = [0.5, 0.25, 0.25]

[model]
temporal = "transformer"
widths = [8, 16]

[train]
validate_each_epoch = false
lr = 1e-3
)");
    CHECK(std::get<std::int64_t>(v.at("seed")) == 12);
    CHECK(std::get<std::int64_t>(v.at("threads")) == 2);
    CHECK(std::get<double>(v.at("synth.fps")) == 2.5);
    CHECK(std::get<std::vector<double>>(v.at("synth.split")) == std::vector<double>{0.5, 0.25, 0.25});
    CHECK(std::get<std::string>(v.at("model.temporal")) == "transformer");
    CHECK(std::get<bool>(v.at("train.validate_each_epoch")) == false);
    CHECK(std::get<double>(v.at("train.lr")) == 1e-3);
    CHECK(v.size() == 8);
}

TEST_CASE("strings keep hash characters") {
    const auto v = parse_config_text("[train]\nloss = \"ce\" # trailing\nnote = \"a # b\"\n");
    CHECK(std::get<std::string>(v.at("train.loss")) == "ce");
    CHECK(std::get<std::string>(v.at("train.note")) == "a # b");
}

TEST_CASE("syntax errors are config errors") {
    CHECK_THROWS_AS(parse_config_text("seed"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[synth\nvideos = 2"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("seed = "), ConfigError);
    CHECK_THROWS_AS(parse_config_text("seed = 12abc"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("name = \"open"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("widths = [1, 2"), ConfigError);
    CHECK(error_of([] { parse_config_text("seed = 1\nseed = 2"); }).find("seed") != std::string::npos);
}

TEST_CASE("unknown keys and wrong types name the key") {
    RunConfig c = default_run_config();
    CHECK(error_of([&] { c.apply(parse_config_text("[synth]\nvidoes = 3")); }).find("synth.vidoes") != std::string::npos);
    CHECK(error_of([&] { c.apply(parse_config_text("[train]\nepochs = \"ten\"")); }).find("train.epochs") !=
          std::string::npos);
    CHECK(error_of([&] { c.apply(parse_config_text("[train]\nbatch = -1")); }).find("train.batch") != std::string::npos);
    CHECK(error_of([&] { c.apply(parse_config_text("[model]\ntemporal = \"lstm\"")); }).find("model.temporal") !=
          std::string::npos);
    CHECK(error_of([&] { c.apply(parse_config_text("[synth]\nsplit = [0.5, 0.5]")); }).find("synth.split") !=
          std::string::npos);
}

TEST_CASE("finalize propagates shared settings and validates") {
    RunConfig c = default_run_config();
    c.apply(parse_config_text("seed = 9\nthreads = 3\n[synth]\nclasses = 4\n[train]\nsnippet = 40\n"));
    c.finalize();
    CHECK(c.synth.seed == 9);
    CHECK(c.train.seed == 9);
    CHECK(c.inference.threads == 3);
    CHECK(c.inference.window == 40);
    CHECK(c.model.num_classes == 4);
    CHECK(c.model.backbone.feature_dim == c.model.backbone.widths.back());

    RunConfig bad = default_run_config();
    bad.apply(parse_config_text("[synth]\nforeground_ratio = 1.5\n"));
    CHECK(error_of([&] { bad.finalize(); }).find("foreground_ratio") != std::string::npos);
    RunConfig bad_alpha = default_run_config();
    bad_alpha.apply(parse_config_text("[train]\nalpha = 0\n"));
    CHECK(error_of([&] { bad_alpha.finalize(); }).find("alpha") != std::string::npos);
}

TEST_CASE("the resolved echo parses back to the same configuration") {
    RunConfig c = default_run_config();
    c.apply(parse_config_text("seed = 5\n[model]\nfeatures = \"env\"\ntemporal = \"transformer\"\n[train]\nloss = \"ce\"\n"));
    c.finalize();
    RunConfig back = default_run_config();
    back.apply(parse_config_text(c.to_toml()));
    back.finalize();
    CHECK(back.to_toml() == c.to_toml());
    CHECK(back.to_json() == c.to_json());
    const auto j = nlohmann::json::parse(c.to_json());
    CHECK(j["model"]["features"] == "env");
    CHECK(j["train"]["loss"] == "ce");
    CHECK(j["seed"] == 5);
}

TEST_CASE("load_run_config reads files and the seed override") {
    const fs::path p = write_config("seed = 3\n[synth]\nvideos = 4\n");
    ::unsetenv("SPOTKIT_SEED");
    RunConfig c = load_run_config(p);
    CHECK(c.seed == 3);
    CHECK(c.synth.videos == 4);

    ::setenv("SPOTKIT_SEED", "77", 1);
    CHECK(load_run_config(p).seed == 77);
    CHECK(load_run_config("").seed == 77);
    ::setenv("SPOTKIT_SEED", "x1", 1);
    CHECK(error_of([&] { load_run_config(p); }).find("SPOTKIT_SEED") != std::string::npos);
    ::unsetenv("SPOTKIT_SEED");

    CHECK(load_run_config("").seed == 0);
    CHECK_THROWS_AS(load_run_config(p.string() + ".absent"), IoError);
    fs::remove(p);
}
