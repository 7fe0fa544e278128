#include "spotkit/inference.hpp"

#include "spotkit/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

namespace spotkit {

std::vector<std::size_t> slide_windows(std::size_t frames, std::size_t delta) {
    if (delta < 2) throw ConfigError("window length must be at least 2 frames");
    if (frames < delta) {
        throw ShortVideoError("video of " + std::to_string(frames) + " frames is shorter than the " +
                              std::to_string(delta) + "-frame window");
    }
    const std::size_t stride = delta / 2;
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + delta <= frames; s += stride) starts.push_back(s);
    if (starts.back() != frames - delta) starts.push_back(frames - delta);
    return starts;
}

MatrixRM merge_window_scores(const std::vector<MatrixRM>& windows, const std::vector<std::size_t>& starts,
                             std::size_t frames) {
    if (windows.empty() || windows.size() != starts.size()) {
        throw ContractError("merge_window_scores: " + std::to_string(windows.size()) + " windows for " +
                            std::to_string(starts.size()) + " starts");
    }
    const auto cols = windows.front().cols();
    MatrixRM sum = MatrixRM::Zero(static_cast<Eigen::Index>(frames), cols);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(frames));
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto rows = windows[w].rows();
        if (windows[w].cols() != cols || starts[w] + static_cast<std::size_t>(rows) > frames) {
            throw ContractError("merge_window_scores: window " + std::to_string(w) + " does not fit the video");
        }
        const auto s = static_cast<Eigen::Index>(starts[w]);
        sum.middleRows(s, rows) += windows[w];
        count.segment(s, rows).array() += 1.0;
    }
    for (Eigen::Index t = 0; t < sum.rows(); ++t) {
        if (count[t] == 0.0) throw ContractError("merge_window_scores: frame " + std::to_string(t) + " is not covered");
        sum.row(t) /= count[t];
        sum.row(t) /= sum.row(t).sum();
    }
    return sum;
}

std::vector<ActionProposal> extract_proposals(const MatrixRM& scores, const std::string& video, double threshold) {
    std::vector<ActionProposal> out;
    for (Eigen::Index t = 0; t < scores.rows(); ++t) {
        for (Eigen::Index k = 1; k < scores.cols(); ++k) {
            if (scores(t, k) >= threshold) {
                out.push_back({video, static_cast<std::size_t>(t), static_cast<std::size_t>(k), scores(t, k)});
            }
        }
    }
    return out;
}

std::vector<ActionProposal> nms(const std::vector<ActionProposal>& proposals, std::size_t window) {
    if (window < 1) throw ConfigError("nms window must be at least 1 frame");
    std::vector<ActionProposal> order(proposals);
    std::stable_sort(order.begin(), order.end(), [](const ActionProposal& a, const ActionProposal& b) {
        if (a.video != b.video) return a.video < b.video;
        if (a.label != b.label) return a.label < b.label;
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.frame < b.frame;
    });
    std::vector<ActionProposal> kept;
    std::size_t group_begin = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && (order[i].video != order[i - 1].video || order[i].label != order[i - 1].label)) group_begin = kept.size();
        bool suppressed = false;
        for (std::size_t j = group_begin; j < kept.size() && !suppressed; ++j) {
            const std::size_t gap = kept[j].frame > order[i].frame ? kept[j].frame - order[i].frame : order[i].frame - kept[j].frame;
            suppressed = gap <= window;
        }
        if (!suppressed) kept.push_back(order[i]);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const ActionProposal& a, const ActionProposal& b) {
        if (a.label != b.label) return a.label < b.label;
        if (a.frame != b.frame) return a.frame < b.frame;
        return a.video < b.video;
    });
    return kept;
}

void InferenceOptions::validate() const {
    if (window < 2) throw ConfigError("inference.window must be at least 2");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("inference.threshold must lie in [0, 1]");
    if (!(nms_seconds > 0.0)) throw ConfigError("inference.nms_seconds must be positive");
    if (threads < 1) throw ConfigError("threads must be at least 1");
}

namespace {

// Copy of the video extended to `length` frames by repeating the last one.
Video padded(const Video& video, std::size_t length) {
    Video out = video;
    const std::size_t n = video.frame_size();
    out.pixels.reserve(length * n);
    for (std::size_t t = video.frames; t < length; ++t) {
        out.pixels.insert(out.pixels.end(), video.pixels.end() - static_cast<std::ptrdiff_t>(n), video.pixels.end());
        out.detections.push_back(video.detections.empty() ? std::vector<EntityDetection>{} : video.detections.back());
    }
    out.frames = length;
    return out;
}

MatrixRM window_scores(const SpottingModel& model, const Video& video, std::size_t start, std::size_t length) {
    NoGradGuard no_grad;
    return model.scores(video.snippet(start, length), video.snippet_detections(start, length)).to_matrix();
}

} // namespace

VideoPredictions spot_video(const SpottingModel& model, const Video& video, const InferenceOptions& options) {
    options.validate();
    if (video.frames == 0) throw EmptyInputError("video '" + video.id + "' has no frames");
    const bool short_video = video.frames < options.window;
    const Video work = short_video ? padded(video, options.window) : Video{};
    const Video& source = short_video ? work : video;

    const auto starts = slide_windows(source.frames, options.window);
    std::vector<MatrixRM> windows(starts.size());
    const std::size_t threads = std::min(options.threads, starts.size());
    if (threads <= 1) {
        for (std::size_t w = 0; w < starts.size(); ++w) windows[w] = window_scores(model, source, starts[w], options.window);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (std::size_t id = 0; id < threads; ++id) {
            pool.emplace_back([&, id] {
                try {
                    for (std::size_t w = id; w < starts.size(); w += threads)
                        windows[w] = window_scores(model, source, starts[w], options.window);
                } catch (...) {
                    errors[id] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    VideoPredictions out;
    out.video = video.id;
    out.fps = video.fps;
    out.scores = merge_window_scores(windows, starts, source.frames);
    if (short_video) out.scores = out.scores.topRows(static_cast<Eigen::Index>(video.frames)).eval();
    const auto window = static_cast<std::size_t>(std::max(1.0, std::round(options.nms_seconds * video.fps)));
    out.proposals = nms(extract_proposals(out.scores, video.id, options.threshold), window);
    return out;
}

void save_predictions(const std::filesystem::path& path, const std::vector<VideoPredictions>& videos,
                      const std::vector<std::string>& classes) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& v : videos) {
        nlohmann::json preds = nlohmann::json::array();
        for (const auto& p : v.proposals) {
            if (p.label == 0 || p.label > classes.size()) {
                throw ContractError("prediction label " + std::to_string(p.label) + " outside the class list");
            }
            preds.push_back({{"t", p.frame}, {"label", classes[p.label - 1]}, {"confidence", p.confidence}});
        }
        doc.push_back({{"video", v.video}, {"fps", v.fps}, {"predictions", preds}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(1) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<VideoPredictions> load_predictions(const std::filesystem::path& path, const std::vector<std::string>& classes) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    if (doc.is_object()) doc = nlohmann::json::array({doc});
    if (!doc.is_array()) throw SchemaError(path.string() + ": expected an array of per-video predictions");
    std::vector<VideoPredictions> out;
    try {
        for (const auto& entry : doc) {
            VideoPredictions v;
            v.video = entry.at("video").get<std::string>();
            v.fps = entry.at("fps").get<double>();
            if (!(v.fps > 0.0)) throw SchemaError(path.string() + ": fps must be positive for video '" + v.video + "'");
            for (const auto& p : entry.at("predictions")) {
                const auto label = p.at("label").get<std::string>();
                const auto it = std::find(classes.begin(), classes.end(), label);
                if (it == classes.end()) throw SchemaError(path.string() + ": unknown label '" + label + "'");
                const auto t = p.at("t").get<std::int64_t>();
                if (t < 0) throw SchemaError(path.string() + ": negative frame index");
                v.proposals.push_back({v.video, static_cast<std::size_t>(t),
                                       static_cast<std::size_t>(it - classes.begin()) + 1, p.at("confidence").get<double>()});
            }
            out.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return out;
}

} // namespace spotkit
