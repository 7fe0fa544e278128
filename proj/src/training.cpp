#include "spotkit/training.hpp"

#include "spotkit/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spotkit {

void TrainConfig::validate() const {
    if (snippet < 2) throw ConfigError("train.snippet must be at least 2");
    if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(warmup >= 0.0 && warmup < 1.0)) throw ConfigError("train.warmup must lie in [0, 1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("train.alpha must lie in (0, 1)");
    if (!(gamma >= 0.0)) throw ConfigError("train.gamma must be nonnegative");
    if (batch < 1) throw ConfigError("train.batch must be at least 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be nonnegative");
}

SnippetSampler::SnippetSampler(std::vector<const Video*> videos, std::size_t delta, std::size_t num_classes)
    : delta_(delta), num_classes_(num_classes) {
    if (delta < 2) throw ConfigError("snippet length must be at least 2");
    for (const Video* v : videos) {
        if (v->frames < delta) {
            ++skipped_;
            continue;
        }
        videos_.push_back(v);
    }
}

std::size_t SnippetSampler::start(const Video& video, Rng& rng) const {
    if (video.frames < delta_) throw ShortVideoError("video '" + video.id + "' is shorter than the snippet");
    return static_cast<std::size_t>(rng.below(video.frames - delta_ + 1));
}

std::size_t SnippetSampler::usable_frames() const {
    std::size_t n = 0;
    for (const Video* v : videos_) n += v->frames;
    return n;
}

Snippet SnippetSampler::draw(Rng& rng) const {
    if (videos_.empty()) throw EmptyInputError("no video is long enough for a " + std::to_string(delta_) + "-frame snippet");
    std::size_t total = 0;
    for (const Video* v : videos_) total += v->frames - delta_ + 1;
    std::size_t u = static_cast<std::size_t>(rng.below(total));
    std::size_t i = 0;
    while (u >= videos_[i]->frames - delta_ + 1) {
        u -= videos_[i]->frames - delta_ + 1;
        ++i;
    }
    const Video& v = *videos_[i];
    const auto labels = v.frame_labels();
    Snippet s;
    s.video = v.id;
    s.start = u;
    s.frames = v.snippet(u, delta_);
    s.detections = v.snippet_detections(u, delta_);
    s.labels = LabelMatrix({labels.begin() + static_cast<std::ptrdiff_t>(u),
                            labels.begin() + static_cast<std::ptrdiff_t>(u + delta_)},
                           num_classes_);
    return s;
}

std::vector<Snippet> SnippetSampler::sample(std::size_t count, Rng& rng) const {
    std::vector<Snippet> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(draw(rng));
    return out;
}

double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
    if (total_steps == 0) return 0.0;
    step = std::min(step, total_steps);
    const auto warm = static_cast<std::size_t>(std::round(cfg.warmup * static_cast<double>(total_steps)));
    if (step < warm) return cfg.lr * static_cast<double>(step) / static_cast<double>(warm);
    if (warm >= total_steps) return cfg.lr;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(ParameterStore& store, const std::vector<std::vector<double>>& grads, double lr) {
    const auto& entries = store.entries();
    if (m_.empty()) {
        for (const auto& [name, p] : entries) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }
    if (m_.size() != entries.size()) throw ContractError("optimizer state does not match the parameter store");
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor p = entries[i].second;
        auto values = p.mutable_data();
        const bool has = i < grads.size() && grads[i].size() == values.size();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = has ? grads[i][j] : 0.0;
            m_[i][j] = options_.beta1 * m_[i][j] + (1.0 - options_.beta1) * g;
            v_[i][j] = options_.beta2 * v_[i][j] + (1.0 - options_.beta2) * g * g;
            const double update = (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + options_.eps);
            values[j] -= lr * (update + options_.weight_decay * values[j]);
        }
    }
}

Tensor snippet_loss(const Tensor& scores, const LabelMatrix& labels, const TrainConfig& cfg) {
    return cfg.loss == LossKind::ce ? cross_entropy_loss(scores, labels) : focal_loss(scores, labels, cfg.alpha, cfg.gamma);
}

double batch_gradients(const SpottingModel& model, ParameterStore& store, const std::vector<Snippet>& batch,
                       const TrainConfig& cfg, std::vector<std::vector<double>>& grads) {
    const auto& entries = store.entries();
    grads.assign(entries.size(), {});
    for (std::size_t i = 0; i < entries.size(); ++i) grads[i].assign(entries[i].second.size(), 0.0);
    double total = 0.0;
    for (const auto& s : batch) {
        store.zero_grad();
        const Tensor loss = snippet_loss(model.scores(s.frames, s.detections), s.labels, cfg);
        backward(loss);
        total += loss.item();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto g = entries[i].second.grad();
            for (std::size_t j = 0; j < g.size(); ++j) grads[i][j] += g[j];
        }
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads)
        for (auto& x : g) x *= scale;
    return total * scale;
}

std::string metrics_line(const EpochMetrics& m) {
    const nlohmann::json j = {{"epoch", m.epoch}, {"loss", m.loss}, {"t_map", m.t_map}, {"lr", m.lr}};
    return j.dump();
}

double validation_tight_map(const SpottingModel& model, const Dataset& dataset, const std::vector<std::string>& ids,
                            const InferenceOptions& options) {
    EvalInput input;
    input.classes = dataset.classes;
    for (const auto& id : ids) {
        const Video& v = dataset.video(id);
        input.fps[v.id] = v.fps;
        const auto spotted = spot_video(model, v, options);
        input.predictions.insert(input.predictions.end(), spotted.proposals.begin(), spotted.proposals.end());
        for (const auto& e : v.events) input.truth.push_back({v.id, e.frame, e.label});
    }
    if (input.truth.empty()) return 0.0;
    return avg_map(input, kTightTolerances);
}

TrainSummary train(SpottingModel& model, const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (dataset.num_classes() != model.config().num_classes) {
        throw ConfigError("model has " + std::to_string(model.config().num_classes) + " classes, dataset has " +
                          std::to_string(dataset.num_classes()));
    }
    const auto log = [&](const std::string& msg) {
        if (hooks.log) hooks.log(msg);
    };
    const SnippetSampler sampler(dataset.videos_in(dataset.split.train), cfg.snippet, dataset.num_classes());
    if (sampler.skipped() > 0) {
        log("warning: skipped " + std::to_string(sampler.skipped()) + " training videos shorter than " +
            std::to_string(cfg.snippet) + " frames");
    }
    if (sampler.usable() == 0) throw EmptyInputError("no usable training video");

    const std::size_t per_epoch =
        cfg.snippets_per_epoch > 0 ? cfg.snippets_per_epoch : std::max<std::size_t>(1, sampler.usable_frames() / cfg.snippet);
    const std::size_t steps_per_epoch = (per_epoch + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    InferenceOptions eval_options;
    eval_options.window = cfg.snippet;

    AdamW optimizer(AdamW::Options{0.9, 0.999, 1e-8, cfg.weight_decay});
    ParameterStore& store = model.parameters();
    const Rng root = Rng(cfg.seed).split("train");
    TrainSummary summary;
    summary.skipped_videos = sampler.skipped();
    std::vector<std::vector<double>> grads;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng = root.split(epoch);
        double loss_sum = 0.0;
        double lr = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            const std::size_t count = std::min(cfg.batch, per_epoch - s * cfg.batch);
            const auto batch = sampler.sample(count, rng);
            const double loss = batch_gradients(model, store, batch, cfg, grads);
            if (!std::isfinite(loss)) {
                throw DivergenceError("loss became " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                                      ", step " + std::to_string(step) + "; lower train.lr");
            }
            lr = lr_schedule(step, total_steps, cfg);
            optimizer.step(store, grads, lr);
            loss_sum += loss;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.loss = loss_sum / static_cast<double>(steps_per_epoch);
        m.lr = lr;
        if (cfg.validate_each_epoch && !dataset.split.val.empty()) {
            m.t_map = validation_tight_map(model, dataset, dataset.split.val, eval_options);
        }
        summary.epochs.push_back(m);
        log("epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) + "  loss " + std::to_string(m.loss) +
            "  t_map " + std::to_string(m.t_map) + "  lr " + std::to_string(m.lr));
        if (hooks.on_epoch) hooks.on_epoch(m);
    }
    summary.steps = step;
    return summary;
}

} // namespace spotkit
