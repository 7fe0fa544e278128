#include "spotkit/checkpoint.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/synth.hpp"
#include "spotkit/training.hpp"
#include "fixtures.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include <unistd.h>

using namespace spotkit;
namespace fs = std::filesystem;

namespace {

Video blank_video(const std::string& id, std::size_t frames) {
    Video v;
    v.id = id;
    v.frames = frames;
    v.channels = 3;
    v.height = 24;
    v.width = 24;
    v.pixels.assign(frames * v.frame_size(), 0.0f);
    v.detections.resize(frames);
    return v;
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.snippet = 16;
    cfg.epochs = 1;
    cfg.lr = 3e-3;
    cfg.batch = 2;
    cfg.snippets_per_epoch = 4;
    cfg.validate_each_epoch = false;
    cfg.seed = 7;
    return cfg;
}

std::vector<double> flat_parameters(const ParameterStore& store) {
    std::vector<double> out;
    for (const auto& [name, t] : store.entries()) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

} // namespace

TEST_CASE("train config validation names the field") {
    TrainConfig cfg;
    CHECK(cfg.snippet == 100);
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.warmup == 0.05);
    CHECK(cfg.alpha == 0.25);
    CHECK(cfg.gamma == 5.0);
    CHECK_NOTHROW(cfg.validate());
    auto expect = [](TrainConfig c, const char* key) {
        try {
            c.validate();
            FAIL("expected ConfigError for " << key);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(key) != std::string::npos);
        }
    };
    TrainConfig c = cfg;
    c.alpha = 0.0;
    expect(c, "alpha");
    c = cfg;
    c.alpha = 1.0;
    expect(c, "alpha");
    c = cfg;
    c.gamma = -1.0;
    expect(c, "gamma");
    c = cfg;
    c.snippet = 1;
    expect(c, "snippet");
    c = cfg;
    c.lr = 0.0;
    expect(c, "lr");
}

TEST_CASE("lr schedule examples") {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.warmup = 0.1;
    const std::size_t total = 200;
    const std::size_t warm = 20;
    CHECK(lr_schedule(0, total, cfg) == 0.0);
    CHECK(lr_schedule(warm, total, cfg) == doctest::Approx(cfg.lr).epsilon(1e-15));
    CHECK(std::abs(lr_schedule(total, total, cfg)) <= 1e-12 * cfg.lr);
    CHECK(lr_schedule(warm / 2, total, cfg) == doctest::Approx(cfg.lr / 2).epsilon(1e-15));
    const double mid = lr_schedule(warm + (total - warm) / 2, total, cfg);
    CHECK(mid == doctest::Approx(cfg.lr * 0.5 * (1 + std::cos(std::numbers::pi * 0.5))).epsilon(1e-12));
    for (std::size_t s = 1; s <= warm; ++s) CHECK(lr_schedule(s, total, cfg) > lr_schedule(s - 1, total, cfg));
    for (std::size_t s = warm + 1; s <= total; ++s) CHECK(lr_schedule(s, total, cfg) < lr_schedule(s - 1, total, cfg));
    cfg.warmup = 0.0;
    CHECK(lr_schedule(0, total, cfg) == cfg.lr);
}

TEST_CASE("sampler: video of exactly delta frames always starts at zero") {
    const Video v = blank_video("a", 16);
    const SnippetSampler sampler({&v}, 16, 2);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) CHECK(sampler.start(v, rng) == 0);
    const Snippet s = sampler.draw(rng);
    CHECK(s.start == 0);
    CHECK(s.labels.frames() == 16);
    CHECK(s.frames.length() == 16);
}

TEST_CASE("sampler starts are uniform on [0, delta] for a 2 delta video") {
    const std::size_t delta = 100;
    const Video v = blank_video("a", 2 * delta);
    const SnippetSampler sampler({&v}, delta, 2);
    const std::size_t draws = 10000, bins = delta + 1, trials = 20;
    const double expected = static_cast<double>(draws) / static_cast<double>(bins);
    std::size_t rejected = 0;
    double pooled = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        Rng rng = Rng(2024).split(trial);
        std::vector<double> counts(bins, 0.0);
        for (std::size_t i = 0; i < draws; ++i) {
            const auto s = sampler.start(v, rng);
            REQUIRE(s <= delta);
            counts[s] += 1.0;
        }
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
        // Upper 1% point of chi-square with 100 degrees of freedom.
        if (chi2 >= 135.807) ++rejected;
        pooled += chi2;
    }
    // Under uniformity the rejections are Binomial(20, 0.01); more than 3 has probability about 1e-4.
    CHECK(rejected <= 3);
    // Upper 1% point of chi-square with 2000 degrees of freedom.
    CHECK(pooled < 2150.07);
}

TEST_CASE("sampler skips short videos, slices labels and is deterministic") {
    Video a = blank_video("a", 40);
    a.events = {{5, 1}, {30, 2}};
    const Video b = blank_video("b", 10);
    const SnippetSampler sampler({&a, &b}, 16, 2);
    CHECK(sampler.usable() == 1);
    CHECK(sampler.skipped() == 1);
    CHECK(sampler.usable_frames() == 40);

    Rng r1(9), r2(9);
    const auto x = sampler.sample(20, r1);
    const auto y = sampler.sample(20, r2);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x[i].start == y[i].start);
        CHECK(x[i].video == "a");
        const auto labels = a.frame_labels();
        for (std::size_t t = 0; t < 16; ++t) CHECK(x[i].labels.label(t) == labels[x[i].start + t]);
    }

    const SnippetSampler none({&b}, 16, 2);
    Rng r3(1);
    CHECK_THROWS_AS(none.draw(r3), EmptyInputError);
    CHECK_THROWS_AS(none.start(b, r3), ShortVideoError);
}

TEST_CASE("AdamW first step moves each coordinate by lr against the gradient sign") {
    ParameterStore store;
    Tensor p = store.add("p", Tensor::from({3}, {1.0, -2.0, 0.5}));
    AdamW opt(AdamW::Options{0.9, 0.999, 1e-8, 0.0});
    opt.step(store, {{0.3, -4.0, 0.0}}, 0.01);
    CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-7));
    CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-7));
    CHECK(p[2] == 0.5);
    CHECK(opt.steps() == 1);

    ParameterStore decay;
    Tensor q = decay.add("q", Tensor::from({1}, {2.0}));
    AdamW wd(AdamW::Options{0.9, 0.999, 1e-8, 0.1});
    wd.step(decay, {}, 0.5);
    CHECK(q[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-15));
}

TEST_CASE("focal with gamma 0 and alpha 0.5 gives half the cross-entropy gradients") {
    const Dataset ds = generate_dataset(testing::tiny_synth_config(3));
    SpottingModel model(testing::tiny_model_config(), 4);
    ParameterStore& store = model.parameters();
    const SnippetSampler sampler(ds.videos_in(ds.split.train), 16, 2);
    Rng rng(5);
    const auto batch = sampler.sample(2, rng);

    TrainConfig focal = tiny_train_config();
    focal.gamma = 0.0;
    focal.alpha = 0.5;
    TrainConfig ce = focal;
    ce.loss = LossKind::ce;
    std::vector<std::vector<double>> gf, gc;
    const double lf = batch_gradients(model, store, batch, focal, gf);
    const double lc = batch_gradients(model, store, batch, ce, gc);
    CHECK(lf == doctest::Approx(0.5 * lc).epsilon(1e-12));
    REQUIRE(gf.size() == gc.size());
    double worst = 0.0, largest = 0.0;
    for (std::size_t i = 0; i < gf.size(); ++i) {
        for (std::size_t j = 0; j < gf[i].size(); ++j) {
            worst = std::max(worst, std::abs(gf[i][j] - 0.5 * gc[i][j]));
            largest = std::max(largest, std::abs(gc[i][j]));
        }
    }
    CHECK(largest > 0.0);
    CHECK(worst <= 1e-10);
}

TEST_CASE("environment-only features leave entity parameters without gradient") {
    const Dataset ds = generate_dataset(testing::tiny_synth_config(3));
    ModelConfig mc = testing::tiny_model_config();
    mc.features = FeatureMode::env;
    SpottingModel model(mc, 4);
    const SnippetSampler sampler(ds.videos_in(ds.split.train), 16, 2);
    Rng rng(5);
    std::vector<std::vector<double>> g;
    batch_gradients(model, model.parameters(), sampler.sample(2, rng), tiny_train_config(), g);
    const auto& entries = model.parameters().entries();
    bool any_backbone = false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& name = entries[i].first;
        double norm = 0.0;
        for (double x : g[i]) norm += std::abs(x);
        if (name.rfind("entities.", 0) == 0 || name.rfind("aam.", 0) == 0) {
            CHECK_MESSAGE(norm == 0.0, name);
        } else if (name.rfind("backbone.", 0) == 0 && norm > 0.0) {
            any_backbone = true;
        }
    }
    CHECK(any_backbone);
}

TEST_CASE("one epoch on one tiny video: finite loss and bit-exact checkpoint round trip") {
    Dataset ds = generate_dataset(testing::tiny_synth_config(6));
    ds.split.train = {ds.videos.front().id};
    ds.split.val.clear();
    SpottingModel model(testing::tiny_model_config(), 8);
    const auto summary = train(model, ds, tiny_train_config());
    REQUIRE(summary.epochs.size() == 1);
    CHECK(std::isfinite(summary.epochs[0].loss));
    CHECK(summary.epochs[0].t_map == 0.0);
    CHECK(summary.steps == 2);

    const fs::path path = fs::temp_directory_path() / ("spotkit_train_ckpt_" + std::to_string(::getpid()) + ".bin");
    save_checkpoint(path, model, ds.classes, 8);
    const LoadedModel loaded = load_checkpoint(path);
    CHECK(flat_parameters(loaded.model->parameters()) == flat_parameters(model.parameters()));
    const Video& v = ds.videos.front();
    const auto a = model.scores(v.snippet(0, 16), v.snippet_detections(0, 16));
    const auto b = loaded.model->scores(v.snippet(0, 16), v.snippet_detections(0, 16));
    CHECK(testing::values(a) == testing::values(b));
    fs::remove(path);
}

TEST_CASE("training reduces the loss and is deterministic under the seed") {
    const Dataset ds = generate_dataset(testing::tiny_synth_config(10));
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 5;
    cfg.snippets_per_epoch = 8;
    cfg.validate_each_epoch = true;

    auto run = [&](std::vector<std::string>& lines) {
        SpottingModel model(testing::tiny_model_config(), cfg.seed);
        TrainHooks hooks;
        hooks.on_epoch = [&](const EpochMetrics& m) { lines.push_back(metrics_line(m)); };
        const auto summary = train(model, ds, cfg, hooks);
        return std::make_pair(summary, flat_parameters(model.parameters()));
    };
    std::vector<std::string> la, lb;
    const auto [sa, pa] = run(la);
    const auto [sb, pb] = run(lb);
    REQUIRE(sa.epochs.size() == 5);
    CHECK(sa.epochs[4].loss < sa.epochs[0].loss);
    CHECK(la == lb);
    CHECK(pa == pb);

    const auto j = nlohmann::json::parse(la.front());
    CHECK(j.size() == 4);
    CHECK(j["epoch"] == 1);
    CHECK(j.contains("loss"));
    CHECK(j.contains("t_map"));
    CHECK(j.contains("lr"));
    for (const auto& m : sa.epochs) {
        CHECK(m.t_map >= 0.0);
        CHECK(m.t_map <= 1.0);
    }
}

TEST_CASE("training errors") {
    Dataset ds = generate_dataset(testing::tiny_synth_config(12));
    SpottingModel model(testing::tiny_model_config(), 1);
    SUBCASE("no usable video") {
        TrainConfig cfg = tiny_train_config();
        cfg.snippet = 1000;
        CHECK_THROWS_AS(train(model, ds, cfg), EmptyInputError);
    }
    SUBCASE("class count mismatch") {
        SpottingModel wrong(testing::tiny_model_config(3), 1);
        CHECK_THROWS_AS(train(wrong, ds, tiny_train_config()), ConfigError);
    }
    SUBCASE("divergence is reported") {
        Tensor bias = model.parameters().entries().back().second;
        for (auto& x : bias.mutable_data()) x = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(train(model, ds, tiny_train_config()), DivergenceError);
    }
}
