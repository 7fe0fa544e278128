#pragma once

#include "spotkit/dataset.hpp"
#include "spotkit/evaluation.hpp"
#include "spotkit/model.hpp"
#include "spotkit/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace spotkit {

// A spotted action: class in [1, K], never background.
using ActionProposal = Prediction;

// Window starts at multiples of delta/2, with N - delta appended when the
// stride does not land on it. Throws ShortVideoError when N < delta.
std::vector<std::size_t> slide_windows(std::size_t frames, std::size_t delta);

// Per-frame mean over the windows covering it, rows renormalized to one.
MatrixRM merge_window_scores(const std::vector<MatrixRM>& windows, const std::vector<std::size_t>& starts,
                             std::size_t frames);

// One proposal per (frame, non-background class) whose score reaches the threshold.
std::vector<ActionProposal> extract_proposals(const MatrixRM& scores, const std::string& video, double threshold = 0.01);

// Per-class greedy suppression within |dt| <= window frames. Output is
// ordered by (class, frame).
std::vector<ActionProposal> nms(const std::vector<ActionProposal>& proposals, std::size_t window);

struct InferenceOptions {
    std::size_t window = 100;       // delta, frames per snippet
    double threshold = 0.01;
    double nms_seconds = 1.0;       // suppression half-width, converted with the video fps
    std::size_t threads = 1;

    void validate() const;
};

struct VideoPredictions {
    std::string video;
    double fps = 1.0;
    MatrixRM scores;  // N x (K+1)
    std::vector<ActionProposal> proposals;
};

// Sliding-window inference over a whole video. Videos shorter than the
// window are padded by repeating their last frame.
VideoPredictions spot_video(const SpottingModel& model, const Video& video, const InferenceOptions& options);

// File layout: a JSON array of {"video", "fps", "predictions": [{"t",
// "label", "confidence"}]}. A single top-level object is also accepted.
void save_predictions(const std::filesystem::path& path, const std::vector<VideoPredictions>& videos,
                      const std::vector<std::string>& classes);
std::vector<VideoPredictions> load_predictions(const std::filesystem::path& path, const std::vector<std::string>& classes);

} // namespace spotkit
