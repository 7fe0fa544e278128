#pragma once

#include "spotkit/dataset.hpp"
#include "spotkit/inference.hpp"
#include "spotkit/losses.hpp"
#include "spotkit/model.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace spotkit {

struct TrainConfig {
    std::size_t snippet = 100;          // delta
    std::size_t epochs = 30;
    double lr = 1e-4;
    double warmup = 0.05;               // fraction of all steps
    double alpha = 0.25;
    double gamma = 5.0;
    std::size_t batch = 4;
    // Snippets drawn per epoch; 0 means one per snippet-length of training frames.
    std::size_t snippets_per_epoch = 0;
    double weight_decay = 0.01;
    LossKind loss = LossKind::focal;
    // Validation tight Avg-mAP after every epoch; off leaves t_map at 0.
    bool validate_each_epoch = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Snippet {
    std::string video;
    std::size_t start = 0;
    FrameSequence frames;
    DetectionsByFrame detections;
    LabelMatrix labels;
};

// Draws training snippets: a uniformly chosen video, then a uniform start in
// [0, frames - delta]. Videos shorter than delta are skipped and counted.
class SnippetSampler {
public:
    SnippetSampler(std::vector<const Video*> videos, std::size_t delta, std::size_t num_classes);

    std::size_t start(const Video& video, Rng& rng) const;
    Snippet draw(Rng& rng) const;
    std::vector<Snippet> sample(std::size_t count, Rng& rng) const;

    std::size_t usable() const { return videos_.size(); }
    std::size_t skipped() const { return skipped_; }
    std::size_t usable_frames() const;

private:
    std::vector<const Video*> videos_;
    std::size_t delta_;
    std::size_t num_classes_;
    std::size_t skipped_ = 0;
};

// Linear warm-up from 0 to cfg.lr, then cosine annealing to 0 at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

// Adam moments with decoupled weight decay.
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    AdamW() : AdamW(Options{}) {}
    explicit AdamW(Options options) : options_(options) {}

    // grads holds one buffer per store entry (same order); missing entries
    // count as zero gradients.
    void step(ParameterStore& store, const std::vector<std::vector<double>>& grads, double lr);
    std::size_t steps() const { return t_; }

private:
    Options options_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// Snippet loss as configured (focal or the cross-entropy baseline).
Tensor snippet_loss(const Tensor& scores, const LabelMatrix& labels, const TrainConfig& cfg);

// Mean-over-batch gradients of the snippet loss, one buffer per store
// entry. Returns the mean loss.
double batch_gradients(const SpottingModel& model, ParameterStore& store, const std::vector<Snippet>& batch,
                       const TrainConfig& cfg, std::vector<std::vector<double>>& grads);

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean snippet loss over the epoch
    double t_map = 0.0;     // validation tight Avg-mAP
    double lr = 0.0;        // rate used by the last step of the epoch
};

std::string metrics_line(const EpochMetrics& m);

struct TrainHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
    std::function<void(const std::string&)> log;
};

struct TrainSummary {
    std::vector<EpochMetrics> epochs;
    std::size_t steps = 0;
    std::size_t skipped_videos = 0;
};

// Held-out tight Avg-mAP of the model on the given videos.
double validation_tight_map(const SpottingModel& model, const Dataset& dataset, const std::vector<std::string>& ids,
                            const InferenceOptions& options);

// Deterministic under cfg.seed. Throws DivergenceError when the loss turns
// non-finite and EmptyInputError when no training video is usable.
TrainSummary train(SpottingModel& model, const Dataset& dataset, const TrainConfig& cfg, const TrainHooks& hooks = {});

} // namespace spotkit
