#include "cli.hpp"

#include "spotkit/checkpoint.hpp"
#include "spotkit/dataset.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

using namespace spotkit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result spotkit_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

constexpr const char* kTinyConfig = R"(seed = 4

[synth]
videos = 4
frames = 60
classes = 2
height = 24
width = 24
foreground_ratio = 0.1
split = [0.5, 0.25, 0.25]

[model]
widths = [8, 16]
hidden = 8
heads = 2
k_max = 3

[train]
snippet = 16
epochs = 2
snippets_per_epoch = 4
batch = 2
lr = 0.003
)";

// One generated dataset and one trained run shared by the cases below.
struct Workspace {
    fs::path root = fs::temp_directory_path() / ("spotkit_cli_" + std::to_string(::getpid()));
    fs::path config = root / "tiny.toml";
    fs::path data = root / "data";
    fs::path run = root / "run";

    Workspace() {
        ::unsetenv("SPOTKIT_SEED");
        fs::remove_all(root);
        fs::create_directories(root);
        std::ofstream(config) << kTinyConfig;
        const auto g = spotkit_cli({"gen", "--config", config.string(), "--out", data.string()});
        REQUIRE_MESSAGE(g.code == 0, g.err);
        const auto t = spotkit_cli({"train", "--config", config.string(), "--data", data.string(), "--out", run.string()});
        REQUIRE_MESSAGE(t.code == 0, t.err);
    }
    ~Workspace() { fs::remove_all(root); }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

// Predictions that repeat every test-split label with confidence one.
json oracle_predictions(const fs::path& data) {
    const DatasetLabels labels = load_dataset_labels(data);
    json doc = json::array();
    for (const auto& lf : labels.videos) {
        if (std::find(labels.split.test.begin(), labels.split.test.end(), lf.video) == labels.split.test.end()) continue;
        json preds = json::array();
        for (const auto& e : lf.events)
            preds.push_back({{"t", e.frame}, {"label", labels.classes[e.label - 1]}, {"confidence", 1.0}});
        doc.push_back({{"video", lf.video}, {"fps", lf.fps}, {"predictions", preds}});
    }
    return doc;
}

} // namespace

TEST_CASE("help documents every command and flag") {
    const auto r = spotkit_cli({"--help"});
    CHECK(r.code == 0);
    for (const char* word : {"gen", "train", "spot", "eval", "--config", "--seed", "--threads", "--out", "--data",
                             "--loss", "--features", "--temporal", "--gamma", "--alpha", "--epochs", "--checkpoint",
                             "--predictions", "--labels", "--report", "--csv", "--split"}) {
        CHECK_MESSAGE(r.out.find(word) != std::string::npos, word);
    }
}

TEST_CASE("usage errors exit with the config code") {
    CHECK(spotkit_cli({}).code == cli::kConfig);
    CHECK(spotkit_cli({"dance"}).code == cli::kConfig);
    CHECK(spotkit_cli({"gen"}).code == cli::kConfig);
    CHECK(spotkit_cli({"train", "--data", "d", "--out", "o", "--loss", "hinge"}).code == cli::kConfig);
    CHECK(spotkit_cli({"gen", "--config", "/nonexistent/config.toml", "--out", "x"}).code == cli::kConfig);
}

TEST_CASE("gen writes a manifest and is deterministic under the seed") {
    Workspace& w = workspace();
    const json manifest = json::parse(slurp(w.data / "manifest.json"));
    CHECK(manifest["format"] == "spotkit-dataset");
    CHECK(manifest["videos"].size() == 4);
    for (const auto& v : manifest["videos"]) {
        for (const char* key : {"id", "pixels", "labels", "detections", "hashes"}) CHECK_MESSAGE(v.contains(key), key);
    }
    CHECK(fs::exists(w.data / "vocabulary.json"));

    const fs::path again = w.root / "again";
    CHECK(spotkit_cli({"gen", "--config", w.config.string(), "--out", again.string()}).code == 0);
    CHECK(slurp(again / "manifest.json") == slurp(w.data / "manifest.json"));

    ::setenv("SPOTKIT_SEED", "4", 1);
    const fs::path env = w.root / "env";
    CHECK(spotkit_cli({"gen", "--config", w.config.string(), "--out", env.string()}).code == 0);
    ::unsetenv("SPOTKIT_SEED");
    CHECK(slurp(env / "manifest.json") == slurp(w.data / "manifest.json"));

    const fs::path other = w.root / "other";
    CHECK(spotkit_cli({"gen", "--config", w.config.string(), "--seed", "5", "--out", other.string()}).code == 0);
    CHECK(slurp(other / "manifest.json") != slurp(w.data / "manifest.json"));
}

TEST_CASE("gen reports invalid settings and unwritable outputs") {
    Workspace& w = workspace();
    const fs::path bad = w.root / "bad.toml";
    std::ofstream(bad) << "[synth]\nforeground_ratio = 2.0\n";
    const auto r = spotkit_cli({"gen", "--config", bad.string(), "--out", (w.root / "x").string()});
    CHECK(r.code == cli::kConfig);
    CHECK(r.err.find("foreground_ratio") != std::string::npos);

    const fs::path unknown = w.root / "unknown.toml";
    std::ofstream(unknown) << "[synth]\nframerate = 2.0\n";
    const auto u = spotkit_cli({"gen", "--config", unknown.string(), "--out", (w.root / "y").string()});
    CHECK(u.code == cli::kConfig);
    CHECK(u.err.find("synth.framerate") != std::string::npos);

    const fs::path blocker = w.root / "blocker";
    std::ofstream(blocker) << "file";
    CHECK(spotkit_cli({"gen", "--config", w.config.string(), "--out", (blocker / "ds").string()}).code == cli::kIo);
}

TEST_CASE("train writes a checkpoint, a config echo and one metrics line per epoch") {
    Workspace& w = workspace();
    CHECK(fs::exists(w.run / "checkpoint.bin"));
    CHECK(slurp(w.run / "config.toml").find("epochs = 2") != std::string::npos);
    std::ifstream metrics(w.run / "metrics.jsonl");
    std::vector<json> lines;
    for (std::string line; std::getline(metrics, line);) lines.push_back(json::parse(line));
    REQUIRE(lines.size() == 2);
    CHECK(lines[0]["epoch"] == 1);
    CHECK(lines[1]["epoch"] == 2);
    for (const auto& l : lines) {
        for (const char* key : {"loss", "t_map", "lr"}) CHECK_MESSAGE(l.contains(key), key);
    }
}

TEST_CASE("train ablation flags reach the model and the loss") {
    Workspace& w = workspace();
    const fs::path env = w.root / "env_run";
    const auto r = spotkit_cli({"train", "--config", w.config.string(), "--data", w.data.string(), "--out", env.string(),
                                "--features", "env", "--temporal", "transformer", "--epochs", "1"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const LoadedModel loaded = load_checkpoint(env / "checkpoint.bin");
    CHECK(loaded.info.model.features == FeatureMode::env);
    CHECK(loaded.info.model.temporal.kind == TemporalKind::transformer);

    const fs::path ce = w.root / "ce_run";
    const fs::path fl = w.root / "fl_run";
    REQUIRE(spotkit_cli({"train", "--config", w.config.string(), "--data", w.data.string(), "--out", ce.string(),
                         "--loss", "ce", "--epochs", "1"})
                .code == 0);
    REQUIRE(spotkit_cli({"train", "--config", w.config.string(), "--data", w.data.string(), "--out", fl.string(),
                         "--loss", "focal", "--gamma", "0", "--alpha", "0.5", "--epochs", "1"})
                .code == 0);
    CHECK(slurp(ce / "config.toml").find("loss = \"ce\"") != std::string::npos);
    CHECK(slurp(fl / "config.toml").find("gamma = 0") != std::string::npos);
    const json lce = json::parse(slurp(ce / "metrics.jsonl"));
    const json lfl = json::parse(slurp(fl / "metrics.jsonl"));
    CHECK(lfl["loss"].get<double>() == doctest::Approx(0.5 * lce["loss"].get<double>()).epsilon(1e-3));
}

TEST_CASE("train exits with the divergence code when the loss blows up") {
    Workspace& w = workspace();
    const auto r = spotkit_cli({"train", "--config", w.config.string(), "--data", w.data.string(), "--out",
                                (w.root / "boom").string(), "--lr", "1e300", "--epochs", "3"});
    CHECK(r.code == cli::kDivergence);
    CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("spot is deterministic and emits only known labels") {
    Workspace& w = workspace();
    const fs::path a = w.root / "a.json", b = w.root / "b.json";
    const auto ra = spotkit_cli({"spot", "--checkpoint", (w.run / "checkpoint.bin").string(), "--data", w.data.string(),
                                 "--out", a.string(), "--threshold", "0.2"});
    REQUIRE_MESSAGE(ra.code == 0, ra.err);
    REQUIRE(spotkit_cli({"spot", "--checkpoint", (w.run / "checkpoint.bin").string(), "--data", w.data.string(),
                         "--out", b.string(), "--threshold", "0.2", "--threads", "3"})
                .code == 0);
    CHECK(slurp(a) == slurp(b));
    const json doc = json::parse(slurp(a));
    const json manifest = json::parse(slurp(w.data / "manifest.json"));
    CHECK(doc.size() == manifest["split"]["test"].size());
    for (const auto& v : doc) {
        for (const auto& p : v["predictions"]) {
            const auto& classes = manifest["classes"];
            CHECK(std::find(classes.begin(), classes.end(), p["label"]) != classes.end());
        }
    }
}

TEST_CASE("spot with no videos writes an empty array") {
    Workspace& w = workspace();
    const fs::path cfg = w.root / "trainonly.toml";
    std::ofstream(cfg) << kTinyConfig << "\n";
    std::string text = slurp(cfg);
    text.replace(text.find("split = [0.5, 0.25, 0.25]"), 25, "split = [1.0, 0.0, 0.0]");
    std::ofstream(cfg) << text;
    const fs::path data = w.root / "trainonly";
    REQUIRE(spotkit_cli({"gen", "--config", cfg.string(), "--out", data.string()}).code == 0);
    const fs::path out = w.root / "empty.json";
    const auto r = spotkit_cli({"spot", "--checkpoint", (w.run / "checkpoint.bin").string(), "--data", data.string(),
                                "--out", out.string()});
    CHECK(r.code == 0);
    CHECK(json::parse(slurp(out)) == json::array());
}

TEST_CASE("spot rejects incompatible or damaged checkpoints") {
    Workspace& w = workspace();
    const fs::path cfg = w.root / "three.toml";
    std::string text = kTinyConfig;
    text.replace(text.find("classes = 2"), 11, "classes = 3");
    std::ofstream(cfg) << text;
    const fs::path data = w.root / "three";
    REQUIRE(spotkit_cli({"gen", "--config", cfg.string(), "--out", data.string()}).code == 0);
    CHECK(spotkit_cli({"spot", "--checkpoint", (w.run / "checkpoint.bin").string(), "--data", data.string(), "--out",
                       (w.root / "p.json").string()})
              .code == cli::kCheckpoint);

    const fs::path broken = w.root / "broken.bin";
    std::string bytes = slurp(w.run / "checkpoint.bin");
    bytes[bytes.size() / 3] ^= 1;
    std::ofstream(broken, std::ios::binary) << bytes;
    CHECK(spotkit_cli({"spot", "--checkpoint", broken.string(), "--data", w.data.string(), "--out",
                       (w.root / "p.json").string()})
              .code == cli::kCheckpoint);
}

TEST_CASE("eval scores perfect and empty predictions and reports its conventions") {
    Workspace& w = workspace();
    const fs::path perfect = w.root / "perfect.json";
    std::ofstream(perfect) << oracle_predictions(w.data).dump();
    const fs::path report = w.root / "report.json", csv = w.root / "report.csv";
    const auto r = spotkit_cli({"eval", "--predictions", perfect.string(), "--labels", w.data.string(), "--report",
                                report.string(), "--csv", csv.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("tight Avg-mAP: 1.0000") != std::string::npos);
    const json rep = json::parse(slurp(report));
    CHECK(rep["interpolation"] == "all-point");
    CHECK(rep["tight_avg_map"] == 1.0);
    CHECK(slurp(csv).rfind("grid,tolerance_s,class,ap", 0) == 0);

    json empty = oracle_predictions(w.data);
    for (auto& v : empty) v["predictions"] = json::array();
    const fs::path none = w.root / "none.json";
    std::ofstream(none) << empty.dump();
    const auto e = spotkit_cli({"eval", "--predictions", none.string(), "--labels", w.data.string(), "--report",
                                report.string()});
    CHECK(e.code == 0);
    CHECK(e.out.find("tight Avg-mAP: 0.0000") != std::string::npos);
    CHECK(e.out.find("loose Avg-mAP: 0.0000") != std::string::npos);
}

TEST_CASE("eval exits with the schema code on mismatched predictions") {
    Workspace& w = workspace();
    const fs::path report = w.root / "r.json";
    json bad = oracle_predictions(w.data);
    bad[0]["predictions"] = json::array({{{"t", 1}, {"label", "Offside"}, {"confidence", 0.5}}});
    const fs::path p1 = w.root / "bad_label.json";
    std::ofstream(p1) << bad.dump();
    CHECK(spotkit_cli({"eval", "--predictions", p1.string(), "--labels", w.data.string(), "--report", report.string()})
              .code == cli::kSchema);

    json stranger = json::array({{{"video", "nope"}, {"fps", 2.0}, {"predictions", json::array()}}});
    const fs::path p2 = w.root / "stranger.json";
    std::ofstream(p2) << stranger.dump();
    CHECK(spotkit_cli({"eval", "--predictions", p2.string(), "--labels", w.data.string(), "--report", report.string()})
              .code == cli::kSchema);

    CHECK(spotkit_cli({"eval", "--predictions", (w.root / "absent.json").string(), "--labels", w.data.string(),
                       "--report", report.string()})
              .code == cli::kIo);
}

TEST_CASE("the full pipeline is reproducible") {
    Workspace& w = workspace();
    const fs::path run2 = w.root / "run2";
    REQUIRE(spotkit_cli({"train", "--config", w.config.string(), "--data", w.data.string(), "--out", run2.string()})
                .code == 0);
    CHECK(slurp(run2 / "checkpoint.bin") == slurp(w.run / "checkpoint.bin"));
    CHECK(slurp(run2 / "metrics.jsonl") == slurp(w.run / "metrics.jsonl"));
}
