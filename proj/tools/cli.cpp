#include "cli.hpp"

#include "spotkit/checkpoint.hpp"
#include "spotkit/config.hpp"
#include "spotkit/dataset.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/evaluation.hpp"
#include "spotkit/inference.hpp"
#include "spotkit/synth.hpp"
#include "spotkit/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>

namespace spotkit::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;

    std::string out;
    std::string data;

    std::optional<std::string> loss;
    std::optional<std::string> features;
    std::optional<std::string> temporal;
    std::optional<double> gamma;
    std::optional<double> alpha;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;

    std::string checkpoint;
    std::string split = "test";
    std::optional<double> threshold;
    std::optional<double> nms_seconds;

    std::string predictions;
    std::string report;
    std::string csv;
};

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

RunConfig resolve(const Options& o) {
    RunConfig c = load_run_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    return c;
}

std::vector<std::string> split_ids(const DatasetSplit& split, const std::string& name,
                                   const std::vector<std::string>& all) {
    if (name == "train") return split.train;
    if (name == "val") return split.val;
    if (name == "test") return split.test;
    if (name == "all") return all;
    throw ConfigError("--split must be train, val, test or all, got '" + name + "'");
}

int cmd_gen(const Options& o, std::ostream& out, std::ostream& err) {
    RunConfig c = resolve(o);
    c.finalize();
    const Dataset ds = generate_dataset(c.synth);
    save_dataset(ds, o.out, c.to_json());
    std::size_t events = 0;
    for (const auto& v : ds.videos) events += v.events.size();
    err << "resolved config:" << c.to_toml() << "\n";
    out << "wrote " << ds.videos.size() << " videos, " << events << " events to " << o.out << "\n";
    return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    RunConfig c = resolve(o);
    if (o.loss) c.train.loss = parse_loss_kind(*o.loss);
    if (o.features) c.model.features = parse_feature_mode(*o.features);
    if (o.temporal) c.model.temporal.kind = parse_temporal_kind(*o.temporal);
    if (o.gamma) c.train.gamma = *o.gamma;
    if (o.alpha) c.train.alpha = *o.alpha;
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.lr) c.train.lr = *o.lr;
    c.finalize();

    const Dataset ds = load_dataset(o.data);
    if (ds.videos.empty()) throw SchemaError("dataset at " + o.data + " has no videos");
    c.model.num_classes = ds.num_classes();
    c.model.backbone.in_channels = ds.videos.front().channels;
    c.model.validate();

    ensure_dir(o.out);
    const fs::path dir(o.out);
    write_file(dir / "config.toml", c.to_toml());
    err << "resolved config:" << c.to_toml() << "\n";

    const fs::path metrics_path = dir / "metrics.jsonl";
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + metrics_path.string());

    SpottingModel model(c.model, c.seed);
    TrainHooks hooks;
    hooks.log = [&err](const std::string& line) { err << line << "\n"; };
    hooks.on_epoch = [&metrics](const EpochMetrics& m) { metrics << metrics_line(m) << "\n" << std::flush; };
    const TrainSummary summary = train(model, ds, c.train, hooks);

    const nlohmann::json extra = {{"config_toml", c.to_toml()}, {"steps", summary.steps}};
    save_checkpoint(dir / "checkpoint.bin", model, ds.classes, c.seed, extra.dump());
    out << "trained " << summary.steps << " steps; checkpoint " << (dir / "checkpoint.bin").string() << "\n";
    return kOk;
}

int cmd_spot(const Options& o, std::ostream& out, std::ostream& err) {
    LoadedModel loaded = load_checkpoint(o.checkpoint);
    RunConfig c = default_run_config();
    try {
        const auto extra = nlohmann::json::parse(loaded.info.extra_json);
        if (extra.contains("config_toml")) c.apply(parse_config_text(extra["config_toml"].get<std::string>(), "checkpoint"));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint metadata is malformed: ") + e.what());
    }
    if (!o.config.empty()) c = load_run_config(o.config);
    if (o.threads) c.threads = *o.threads;
    if (o.threshold) c.inference.threshold = *o.threshold;
    if (o.nms_seconds) c.inference.nms_seconds = *o.nms_seconds;
    if (c.inference.window == 0) c.inference.window = c.train.snippet;
    c.inference.threads = c.threads;
    c.inference.validate();

    const Dataset ds = load_dataset(o.data);
    if (ds.classes != loaded.info.classes) {
        throw CheckpointError("checkpoint classes do not match the dataset's class list");
    }
    std::vector<std::string> all;
    for (const auto& v : ds.videos) all.push_back(v.id);
    const auto ids = split_ids(ds.split, o.split, all);

    std::vector<VideoPredictions> results;
    for (const auto& id : ids) {
        const Video& v = ds.video(id);
        if (v.channels != loaded.info.model.backbone.in_channels) {
            throw CheckpointError("video '" + id + "' has " + std::to_string(v.channels) + " channels, the checkpoint expects " +
                                  std::to_string(loaded.info.model.backbone.in_channels));
        }
        results.push_back(spot_video(*loaded.model, v, c.inference));
        err << "spotted " << id << ": " << results.back().proposals.size() << " proposals\n";
    }
    save_predictions(o.out, results, ds.classes);
    out << "wrote predictions for " << results.size() << " videos to " << o.out << "\n";
    return kOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
    RunConfig c = o.config.empty() ? default_run_config() : load_run_config(o.config);
    const DatasetLabels labels = load_dataset_labels(o.data);
    const auto predictions = load_predictions(o.predictions, labels.classes);

    EvalInput input;
    input.classes = labels.classes;
    std::set<std::string> known;
    for (const auto& lf : labels.videos) known.insert(lf.video);
    std::vector<std::string> all(known.begin(), known.end());
    const auto ids = split_ids(labels.split, o.split, all);
    const std::set<std::string> selected(ids.begin(), ids.end());
    for (const auto& lf : labels.videos) {
        if (selected.count(lf.video) == 0) continue;
        input.fps[lf.video] = lf.fps;
        for (const auto& e : lf.events) input.truth.push_back({lf.video, e.frame, e.label});
    }
    for (const auto& vp : predictions) {
        if (selected.count(vp.video) == 0) {
            throw SchemaError("predictions name video '" + vp.video + "', which is not in the '" + o.split + "' split");
        }
        if (vp.fps != input.fps.at(vp.video)) {
            throw SchemaError("predictions for '" + vp.video + "' use fps " + std::to_string(vp.fps) +
                              ", the labels use " + std::to_string(input.fps.at(vp.video)));
        }
        input.predictions.insert(input.predictions.end(), vp.proposals.begin(), vp.proposals.end());
    }

    const MetricReport report = evaluate(input, c.eval.tight, c.eval.loose);
    const nlohmann::json echo = {{"predictions", o.predictions}, {"labels", o.data}, {"split", o.split}};
    write_file(o.report, report_json(report, input, echo.dump()));
    if (!o.csv.empty()) write_file(o.csv, report_csv(report, input));
    out << report_table(report, input);
    err << "report written to " << o.report << "\n";
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"spotkit: entity-aware action spotting on synthetic video"};
    app.name("spotkit");
    app.require_subcommand(1);
    Options o;

    const auto common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config, "Run configuration file (TOML subset)")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Override the configured seed");
        sub->add_option("--threads", o.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
    };

    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    common(gen);
    gen->add_option("--out", o.out, "Output dataset directory")->required();

    auto* tr = app.add_subcommand("train", "Train a model on a dataset");
    common(tr);
    tr->add_option("--data", o.data, "Dataset directory")->required();
    tr->add_option("--out", o.out, "Output directory for checkpoint, metrics and config echo")->required();
    tr->add_option("--loss", o.loss, "Loss: focal or ce")->check(CLI::IsMember({"focal", "ce"}));
    tr->add_option("--features", o.features, "Per-frame features: fused or env")->check(CLI::IsMember({"fused", "env"}));
    tr->add_option("--temporal", o.temporal, "Temporal encoder: bigru or transformer")
        ->check(CLI::IsMember({"bigru", "transformer", "transformer-encoder"}));
    tr->add_option("--gamma", o.gamma, "Focal-loss focusing parameter");
    tr->add_option("--alpha", o.alpha, "Focal-loss balance factor");
    tr->add_option("--epochs", o.epochs, "Number of epochs");
    tr->add_option("--lr", o.lr, "Base learning rate");

    auto* sp = app.add_subcommand("spot", "Run sliding-window inference");
    common(sp);
    sp->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    sp->add_option("--data", o.data, "Dataset directory")->required();
    sp->add_option("--out", o.out, "Predictions JSON file")->required();
    sp->add_option("--split", o.split, "Videos to process: train, val, test or all")->capture_default_str();
    sp->add_option("--threshold", o.threshold, "Proposal score floor");
    sp->add_option("--nms-seconds", o.nms_seconds, "NMS half-width in seconds");

    auto* ev = app.add_subcommand("eval", "Score predictions against labels");
    common(ev);
    ev->add_option("--predictions", o.predictions, "Predictions JSON file")->required();
    ev->add_option("--labels", o.data, "Dataset directory holding the label files")->required();
    ev->add_option("--report", o.report, "Report JSON output")->required();
    ev->add_option("--csv", o.csv, "Optional per-tolerance CSV output");
    ev->add_option("--split", o.split, "Videos to score: train, val, test or all")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(o, out, err);
        if (tr->parsed()) return cmd_train(o, out, err);
        if (sp->parsed()) return cmd_spot(o, out, err);
        if (ev->parsed()) return cmd_eval(o, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ParseError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const DivergenceError& e) {
        err << "training diverged: " << e.what() << "\n";
        return kDivergence;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const SchemaError& e) {
        err << "schema error: " << e.what() << "\n";
        return kSchema;
    } catch (const MetricError& e) {
        err << "schema error: " << e.what() << "\n";
        return kSchema;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}

} // namespace spotkit::cli
