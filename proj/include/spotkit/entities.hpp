#pragma once

#include "spotkit/backbone.hpp"
#include "spotkit/params.hpp"
#include "spotkit/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace spotkit {

// Normalized box corners in [0, 1].
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 1.0;
    double y2 = 1.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
};

struct EntityDetection {
    std::size_t frame = 0;
    Box box;
    std::size_t phrase = 0;
    double confidence = 1.0;
};

using DetectionsByFrame = std::vector<std::vector<EntityDetection>>;

// Ordered phrases plus an M x d embedding table. The table is a seeded random
// projection of each phrase; no language model is involved.
class PhraseVocabulary {
public:
    PhraseVocabulary() = default;
    static PhraseVocabulary from_phrases(std::vector<std::string> phrases, std::size_t embedding_dim = 16,
                                         std::uint64_t seed = 0);
    static PhraseVocabulary load(const std::filesystem::path& path, std::size_t embedding_dim = 16,
                                 std::uint64_t seed = 0);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const { return phrases_.size(); }
    const std::vector<std::string>& phrases() const { return phrases_; }
    const std::string& phrase(std::size_t i) const { return phrases_.at(i); }
    std::size_t index_of(const std::string& phrase) const;
    const Tensor& embeddings() const { return embeddings_; }

private:
    std::vector<std::string> phrases_;
    Tensor embeddings_;
};

struct DetectionFileOptions {
    double min_confidence = 0.05;
};

// JSON-lines records {"t":int,"box":[x1,y1,x2,y2],"phrase":int,"conf":f}.
// Boxes are clamped to the unit square and grouped by frame; records under
// min_confidence are dropped.
DetectionsByFrame load_detections(const std::filesystem::path& path, const PhraseVocabulary& vocab,
                                  std::size_t num_frames, DetectionFileOptions options = {});
DetectionsByFrame parse_detections(std::istream& in, const PhraseVocabulary& vocab, std::size_t num_frames,
                                   DetectionFileOptions options = {}, const std::string& source = "<stream>");
void save_detections(const std::filesystem::path& path, const DetectionsByFrame& detections);

// S = O P^T: proposal-by-phrase alignment scores for O [N x d], P [M x d].
Tensor alignment_scores(const Tensor& proposals, const Tensor& phrases);

struct RoiAlignOptions {
    std::size_t out_size = 3;
    std::size_t samples_per_bin = 2;
};

// Region pooling on map [C x h x w]. The box is mapped to continuous map
// coordinates with a half-pixel offset and never rounded; every output bin
// averages samples_per_bin^2 bilinear reads on a regular grid. Reads are
// clamped to the map border.
Tensor roi_align(const Tensor& map, const Box& box, RoiAlignOptions options = {});

// Per-frame entity features: features[t] is [n_t x D], undefined when the
// frame has no detections.
struct EntityFeatureSet {
    DetectionsByFrame detections;
    std::vector<Tensor> features;

    std::size_t frames() const { return features.size(); }
};

struct EntityConfig {
    std::size_t k_max = 5;
    RoiAlignOptions roi;
};

// roi_align -> spatial mean -> learned D -> D projection.
class EntityEncoder {
public:
    EntityEncoder() = default;
    EntityEncoder(std::size_t dim, const EntityConfig& cfg, ParameterStore& store, const Rng& rng);

    EntityFeatureSet entity_features(const FeatureMapSequence& maps, const DetectionsByFrame& detections) const;
    const Linear& projection() const { return projection_; }

private:
    EntityConfig cfg_;
    Linear projection_;
};

// Hard-then-soft attention over one frame's entities. The hard stage keeps
// the top-k entities by <f_env Wq, f_i Wk> / sqrt(D); the soft stage runs
// single-head self-attention (residual) over [f_env; kept] and averages the
// kept-entity outputs. The query/key projections are shared by both stages.
class AdaptiveAttention {
public:
    AdaptiveAttention() = default;
    AdaptiveAttention(std::size_t dim, std::size_t k_max, ParameterStore& store, const Rng& rng);

    // entities: [n x D] (or undefined for none); f_env: [1 x D] or [D].
    // Returns [1 x D].
    Tensor attend(const Tensor& entities, const Tensor& f_env) const;
    // Indices of the kept entities, ascending. Ties in relevance go to the
    // lower detection index.
    std::vector<std::size_t> select(const Tensor& entities, const Tensor& f_env) const;
    std::vector<double> relevance(const Tensor& entities, const Tensor& f_env) const;

    std::size_t k_max() const { return k_max_; }
    void set_k_max(std::size_t k) { k_max_ = k; }
    const Tensor& no_entity() const { return no_entity_; }
    const Tensor& wq() const { return wq_; }
    const Tensor& wk() const { return wk_; }
    const Tensor& wv() const { return wv_; }

private:
    std::size_t dim_ = 0;
    std::size_t k_max_ = 5;
    Tensor wq_;
    Tensor wk_;
    Tensor wv_;
    Tensor no_entity_;
};

} // namespace spotkit
