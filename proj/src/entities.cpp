#include "spotkit/entities.hpp"

#include "spotkit/attention.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace spotkit {

using nlohmann::json;

PhraseVocabulary PhraseVocabulary::from_phrases(std::vector<std::string> phrases, std::size_t embedding_dim,
                                                std::uint64_t seed) {
    if (phrases.empty()) throw VocabularyError("vocabulary needs at least one phrase");
    std::set<std::string> seen;
    for (const auto& p : phrases) {
        if (!seen.insert(p).second) throw VocabularyError("duplicate phrase '" + p + "'");
    }
    PhraseVocabulary vocab;
    std::vector<double> table;
    table.reserve(phrases.size() * embedding_dim);
    const Rng root(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(embedding_dim));
    for (const auto& p : phrases) {
        Rng rng = root.split(p);
        for (std::size_t j = 0; j < embedding_dim; ++j) table.push_back(rng.normal(0.0, stddev));
    }
    vocab.embeddings_ = Tensor::from({phrases.size(), embedding_dim}, std::move(table));
    vocab.phrases_ = std::move(phrases);
    return vocab;
}

PhraseVocabulary PhraseVocabulary::load(const std::filesystem::path& path, std::size_t embedding_dim, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary file " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError(path.string() + ": vocabulary must be a JSON array of strings");
    std::vector<std::string> phrases;
    for (const auto& item : doc) {
        if (!item.is_string()) throw ParseError(path.string() + ": vocabulary entries must be strings");
        phrases.push_back(item.get<std::string>());
    }
    return from_phrases(std::move(phrases), embedding_dim, seed);
}

void PhraseVocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file " + path.string());
    out << json(phrases_).dump() << '\n';
}

std::size_t PhraseVocabulary::index_of(const std::string& phrase) const {
    auto it = std::find(phrases_.begin(), phrases_.end(), phrase);
    if (it == phrases_.end()) throw VocabularyError("phrase '" + phrase + "' is not in the vocabulary");
    return static_cast<std::size_t>(it - phrases_.begin());
}

DetectionsByFrame parse_detections(std::istream& in, const PhraseVocabulary& vocab, std::size_t num_frames,
                                   DetectionFileOptions options, const std::string& source) {
    DetectionsByFrame out(num_frames);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(line_no) + ": ";
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(where + "malformed JSON (" + e.what() + ")");
        }
        const auto require = [&](bool ok, const std::string& what) {
            if (!ok) throw ParseError(where + what);
        };
        require(rec.is_object(), "record must be a JSON object");
        require(rec.contains("t") && rec["t"].is_number_integer() && rec["t"].get<long long>() >= 0,
                "'t' must be a nonnegative integer");
        require(rec.contains("box") && rec["box"].is_array() && rec["box"].size() == 4,
                "'box' must be an array of four numbers");
        for (const auto& v : rec["box"]) require(v.is_number(), "'box' must be an array of four numbers");
        require(rec.contains("phrase") && rec["phrase"].is_number_integer(), "'phrase' must be an integer");
        require(rec.contains("conf") && rec["conf"].is_number(), "'conf' must be a number");

        EntityDetection det;
        det.frame = rec["t"].get<std::size_t>();
        det.box = {rec["box"][0].get<double>(), rec["box"][1].get<double>(), rec["box"][2].get<double>(),
                   rec["box"][3].get<double>()};
        det.confidence = rec["conf"].get<double>();
        require(std::isfinite(det.box.x1) && std::isfinite(det.box.y1) && std::isfinite(det.box.x2) &&
                    std::isfinite(det.box.y2),
                "box coordinates must be finite");
        require(det.box.x1 < det.box.x2, "box has x1 >= x2");
        require(det.box.y1 < det.box.y2, "box has y1 >= y2");
        require(std::isfinite(det.confidence) && det.confidence >= 0.0 && det.confidence <= 1.0,
                "'conf' must lie in [0, 1]");
        require(det.frame < num_frames, "frame index " + std::to_string(det.frame) + " beyond video length " +
                                            std::to_string(num_frames));
        const auto phrase = rec["phrase"].get<long long>();
        if (phrase < 0 || static_cast<std::size_t>(phrase) >= vocab.size()) {
            throw VocabularyError(where + "phrase index " + std::to_string(phrase) + " not in vocabulary of size " +
                                  std::to_string(vocab.size()));
        }
        det.phrase = static_cast<std::size_t>(phrase);
        det.box.x1 = std::clamp(det.box.x1, 0.0, 1.0);
        det.box.y1 = std::clamp(det.box.y1, 0.0, 1.0);
        det.box.x2 = std::clamp(det.box.x2, 0.0, 1.0);
        det.box.y2 = std::clamp(det.box.y2, 0.0, 1.0);
        require(det.box.x1 < det.box.x2 && det.box.y1 < det.box.y2, "box lies outside the unit square");
        if (det.confidence < options.min_confidence) continue;
        out[det.frame].push_back(det);
    }
    return out;
}

DetectionsByFrame load_detections(const std::filesystem::path& path, const PhraseVocabulary& vocab,
                                  std::size_t num_frames, DetectionFileOptions options) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open detection file " + path.string());
    return parse_detections(in, vocab, num_frames, options, path.string());
}

void save_detections(const std::filesystem::path& path, const DetectionsByFrame& detections) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write detection file " + path.string());
    for (const auto& frame : detections) {
        for (const auto& d : frame) {
            json rec = {{"t", d.frame},
                        {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                        {"phrase", d.phrase},
                        {"conf", d.confidence}};
            out << rec.dump() << '\n';
        }
    }
}

Tensor alignment_scores(const Tensor& proposals, const Tensor& phrases) {
    if (proposals.rank() != 2 || phrases.rank() != 2 || proposals.dim(1) != phrases.dim(1)) {
        throw ShapeError("alignment_scores: embedding dims differ between " + to_string(proposals.shape()) + " and " +
                         to_string(phrases.shape()));
    }
    return matmul(proposals, transpose(phrases));
}

namespace {

struct BilinearTap {
    std::size_t index[4];
    double weight[4];
};

BilinearTap bilinear_tap(double y, double x, std::size_t h, std::size_t w) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double ly = y - static_cast<double>(y0);
    const double lx = x - static_cast<double>(x0);
    return {{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
            {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx}};
}

} // namespace

Tensor roi_align(const Tensor& map, const Box& box, RoiAlignOptions options) {
    if (map.rank() != 3) throw ShapeError("roi_align expects a [C x h x w] map, got " + to_string(map.shape()));
    if (options.out_size == 0 || options.samples_per_bin == 0) {
        throw ConfigError("roi_align: out_size and samples_per_bin must be positive");
    }
    const std::size_t c_len = map.dim(0);
    const std::size_t h = map.dim(1);
    const std::size_t w = map.dim(2);
    const double x1 = box.x1 * static_cast<double>(w) - 0.5;
    const double y1 = box.y1 * static_cast<double>(h) - 0.5;
    const double x2 = box.x2 * static_cast<double>(w) - 0.5;
    const double y2 = box.y2 * static_cast<double>(h) - 0.5;
    if (!(x2 > x1) || !(y2 > y1)) throw GeometryError("roi_align: degenerate box after mapping to the feature map");

    const std::size_t out = options.out_size;
    const std::size_t s = options.samples_per_bin;
    const double bin_w = (x2 - x1) / static_cast<double>(out);
    const double bin_h = (y2 - y1) / static_cast<double>(out);
    const double inv_count = 1.0 / static_cast<double>(s * s);

    // Taps are shared by all channels.
    std::vector<BilinearTap> taps;
    taps.reserve(out * out * s * s);
    for (std::size_t by = 0; by < out; ++by)
        for (std::size_t bx = 0; bx < out; ++bx)
            for (std::size_t sy = 0; sy < s; ++sy)
                for (std::size_t sx = 0; sx < s; ++sx) {
                    const double y = y1 + bin_h * (static_cast<double>(by) + (static_cast<double>(sy) + 0.5) / static_cast<double>(s));
                    const double x = x1 + bin_w * (static_cast<double>(bx) + (static_cast<double>(sx) + 0.5) / static_cast<double>(s));
                    taps.push_back(bilinear_tap(y, x, h, w));
                }

    const auto in = map.data();
    const std::size_t per_bin = s * s;
    Buffer result(c_len * out * out, 0.0);
    for (std::size_t c = 0; c < c_len; ++c) {
        const double* plane = in.data() + c * h * w;
        for (std::size_t b = 0; b < out * out; ++b) {
            double acc = 0.0;
            for (std::size_t k = 0; k < per_bin; ++k) {
                const auto& tap = taps[b * per_bin + k];
                for (int q = 0; q < 4; ++q) acc += tap.weight[q] * plane[tap.index[q]];
            }
            result[c * out * out + b] = acc * inv_count;
        }
    }
    return Tensor::make({c_len, out, out}, std::move(result), {map}, "roi_align",
                        [=, taps = std::move(taps)](detail::Node& o) {
                            auto& parent = *o.parents[0];
                            if (!parent.requires_grad) return;
                            for (std::size_t c = 0; c < c_len; ++c) {
                                double* plane = parent.grad.data() + c * h * w;
                                for (std::size_t b = 0; b < out * out; ++b) {
                                    const double g = o.grad[c * out * out + b] * inv_count;
                                    for (std::size_t k = 0; k < per_bin; ++k) {
                                        const auto& tap = taps[b * per_bin + k];
                                        for (int q = 0; q < 4; ++q) plane[tap.index[q]] += tap.weight[q] * g;
                                    }
                                }
                            }
                        });
}

EntityEncoder::EntityEncoder(std::size_t dim, const EntityConfig& cfg, ParameterStore& store, const Rng& rng)
    : cfg_(cfg), projection_(store, "entities.projection", dim, dim, rng) {}

EntityFeatureSet EntityEncoder::entity_features(const FeatureMapSequence& maps, const DetectionsByFrame& detections) const {
    const std::size_t t_len = maps.length();
    if (detections.size() > t_len) {
        for (std::size_t t = t_len; t < detections.size(); ++t) {
            if (!detections[t].empty()) {
                throw IndexError("detections reference frame " + std::to_string(t) + " of a " + std::to_string(t_len) +
                                 "-frame snippet");
            }
        }
    }
    EntityFeatureSet set;
    set.detections.assign(t_len, {});
    set.features.assign(t_len, Tensor{});
    const std::size_t c_len = maps.channels();

    // Pool every detection of the snippet, then project them with one matmul.
    std::vector<Tensor> pooled;
    std::vector<std::size_t> owner;
    for (std::size_t t = 0; t < std::min(t_len, detections.size()); ++t) {
        if (detections[t].empty()) continue;
        const Tensor frame_map = reshape(slice(maps.maps, 0, t, 1), {c_len, maps.maps.dim(2), maps.maps.dim(3)});
        for (const auto& det : detections[t]) {
            if (det.frame != t) {
                throw IndexError("detection for frame " + std::to_string(det.frame) + " filed under frame " +
                                 std::to_string(t));
            }
            const Tensor region = roi_align(frame_map, det.box, cfg_.roi);
            pooled.push_back(reduce(Reduction::mean, reshape(region, {c_len, cfg_.roi.out_size * cfg_.roi.out_size}), 1));
            owner.push_back(t);
            set.detections[t].push_back(det);
        }
    }
    if (pooled.empty()) return set;
    const Tensor projected = projection_(stack(pooled));
    std::size_t row = 0;
    while (row < owner.size()) {
        const std::size_t t = owner[row];
        std::size_t end = row;
        while (end < owner.size() && owner[end] == t) ++end;
        set.features[t] = slice(projected, 0, row, end - row);
        row = end;
    }
    return set;
}

AdaptiveAttention::AdaptiveAttention(std::size_t dim, std::size_t k_max, ParameterStore& store, const Rng& rng)
    : dim_(dim), k_max_(k_max) {
    if (k_max == 0) throw ConfigError("k_max must be at least 1");
    const double bound = std::sqrt(3.0 / static_cast<double>(dim));
    wq_ = store.add("aam.query", uniform_init({dim, dim}, bound, rng.split("aam.query")));
    wk_ = store.add("aam.key", uniform_init({dim, dim}, bound, rng.split("aam.key")));
    wv_ = store.add("aam.value", uniform_init({dim, dim}, bound, rng.split("aam.value")));
    no_entity_ = store.add("aam.no_entity", normal_init({dim}, 0.1, rng.split("aam.no_entity")));
}

std::vector<double> AdaptiveAttention::relevance(const Tensor& entities, const Tensor& f_env) const {
    if (!entities.defined()) return {};
    const Eigen::RowVectorXd q = f_env.matrix() * wq_.matrix();
    // <x Wk, q> = <x, Wk q^T>; rows are scored one at a time so identical
    // entities always receive identical scores.
    const Eigen::VectorXd kq = wk_.matrix() * q.transpose() / std::sqrt(static_cast<double>(dim_));
    const auto x = entities.matrix();
    std::vector<double> r(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) acc += x(i, j) * kq(j);
        r[static_cast<std::size_t>(i)] = acc;
    }
    return r;
}

std::vector<std::size_t> AdaptiveAttention::select(const Tensor& entities, const Tensor& f_env) const {
    if (!entities.defined()) return {};
    const auto r = relevance(entities, f_env);
    std::vector<std::size_t> order(r.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r[a] > r[b]; });
    order.resize(std::min(k_max_, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

Tensor AdaptiveAttention::attend(const Tensor& entities, const Tensor& f_env) const {
    if (f_env.size() != dim_) {
        throw ShapeError("adaptive_attention: f_env " + to_string(f_env.shape()) + " does not have dim " + std::to_string(dim_));
    }
    if (!entities.defined()) return reshape(no_entity_, {1, dim_});
    if (entities.rank() != 2 || entities.dim(1) != dim_) {
        throw ShapeError("adaptive_attention: entities must be [n x " + std::to_string(dim_) + "], got " +
                         to_string(entities.shape()));
    }
    const Tensor env_row = f_env.rank() == 2 ? f_env : reshape(f_env, {1, dim_});
    const auto keep = select(entities, env_row);
    const Tensor kept = keep.size() == entities.dim(0) ? entities : gather_rows(entities, keep);
    const Tensor tokens = concat({env_row, kept}, 0);
    const Tensor mixed = self_attention(tokens, wq_, wk_, wv_);
    return reshape(reduce(Reduction::mean, slice(mixed, 0, 1, keep.size()), 0), {1, dim_});
}

} // namespace spotkit
