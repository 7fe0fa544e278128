#include "spotkit/synth.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace spotkit {

namespace {

constexpr std::size_t kMotifHalfWidth = 2;
constexpr std::size_t kBlobSize = 4;
constexpr std::size_t kBlobSpeed = 3;
constexpr std::size_t kPatchSize = 6;
constexpr double kBlobIntensity = 0.9;
constexpr std::size_t kEmbeddingDim = 16;

const std::vector<std::string> kLeadingClasses{"Goal", "Corner", "Foul", "Throw-in", "Offside", "Substitution", "Kick-off",
                                               "Clearance"};
const std::vector<std::string> kLeadingPhrases{"ball", "corner flag", "player", "touch line", "offside flag",
                                               "substitution board", "centre circle", "goal kick"};
const std::vector<std::string> kDistractors{"referee", "goal net"};

// (dy, dx) per motion motif.
const int kDirections[8][2] = {{0, 1}, {0, -1}, {1, 0}, {-1, 0}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};

std::array<double, 3> class_color(std::size_t label, std::size_t k) {
    if (label == k - 1) return {1.0, 1.0, 0.0};
    if (label == k) return {1.0, 0.0, 0.0};
    static const std::array<double, 3> palette[] = {{0.0, 1.0, 1.0}, {1.0, 0.0, 1.0}, {0.0, 0.0, 1.0},
                                                    {0.0, 1.0, 0.0}, {1.0, 0.5, 0.0}, {0.5, 0.0, 1.0},
                                                    {0.0, 0.5, 1.0}, {1.0, 1.0, 1.0}};
    return palette[(label - 1) % 8];
}

std::size_t motif_of(std::size_t label, std::size_t k) {
    const std::size_t pair_motif = (k - 2) % 8;
    return label >= k - 1 ? pair_motif : (label - 1) % 8;
}

struct Patch {
    std::size_t y = 0;
    std::size_t x = 0;
    std::array<double, 3> color{};
};

struct PlantedEvent {
    Event event;
    std::size_t motif = 0;
    std::size_t blob_y = 0;
    std::size_t blob_x = 0;
    bool has_entity = false;
    Patch entity;
    bool has_decoy = false;
    Patch decoy;
};

bool overlaps(const Patch& a, const Patch& b) {
    const auto apart = [](std::size_t u, std::size_t v) { return u + kPatchSize <= v || v + kPatchSize <= u; };
    return !(apart(a.y, b.y) || apart(a.x, b.x));
}

std::size_t sample_class(const std::vector<double>& weights, Rng& rng) {
    double u = rng.uniform();
    for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
        if (u < weights[k]) return k + 1;
        u -= weights[k];
    }
    return weights.size();
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Toy grounding: a noisy proposal embedding scored against every phrase.
// The detection takes the best-aligned phrase and a squashed score.
std::pair<std::size_t, double> ground(const PhraseVocabulary& vocab, std::size_t phrase, double spread, bool spurious,
                                      Rng& rng) {
    const std::size_t d = vocab.embeddings().dim(1);
    std::vector<double> proposal(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double centre = spurious ? 0.0 : vocab.embeddings()[phrase * d + j];
        proposal[j] = centre + rng.normal(0.0, spread);
    }
    const Tensor scores = alignment_scores(Tensor::from({1, d}, std::move(proposal)), vocab.embeddings());
    std::size_t best = 0;
    for (std::size_t m = 1; m < vocab.size(); ++m) {
        if (scores[m] > scores[best]) best = m;
    }
    return {best, 0.05 + 0.95 * sigmoid(4.0 * scores[best])};
}

Box patch_box(const Patch& p, std::size_t height, std::size_t width) {
    return {static_cast<double>(p.x) / static_cast<double>(width), static_cast<double>(p.y) / static_cast<double>(height),
            static_cast<double>(p.x + kPatchSize) / static_cast<double>(width),
            static_cast<double>(p.y + kPatchSize) / static_cast<double>(height)};
}

Box jitter(Box b, Rng& rng) {
    const double dw = 0.1 * b.width();
    const double dh = 0.1 * b.height();
    b.x1 = std::clamp(b.x1 + rng.uniform(-dw, dw), 0.0, 1.0);
    b.x2 = std::clamp(b.x2 + rng.uniform(-dw, dw), 0.0, 1.0);
    b.y1 = std::clamp(b.y1 + rng.uniform(-dh, dh), 0.0, 1.0);
    b.y2 = std::clamp(b.y2 + rng.uniform(-dh, dh), 0.0, 1.0);
    return b;
}

Patch random_patch(const SynthConfig& cfg, Rng& rng) {
    return {rng.below(cfg.height - kPatchSize + 1), rng.below(cfg.width - kPatchSize + 1), {}};
}

Video generate_video(const SynthConfig& cfg, std::size_t index, const PhraseVocabulary& vocab, Rng rng) {
    char id[32];
    std::snprintf(id, sizeof id, "v%03zu", index);
    Video v;
    v.id = id;
    v.fps = cfg.fps;
    v.frames = cfg.frames;
    v.channels = cfg.channels;
    v.height = cfg.height;
    v.width = cfg.width;
    v.detections.assign(cfg.frames, {});

    // Class-neutral background: a smooth per-video texture.
    const std::size_t plane = cfg.height * cfg.width;
    std::vector<double> texture(cfg.channels * plane);
    for (std::size_t c = 0; c < cfg.channels; ++c) {
        const double base = rng.uniform(0.2, 0.4);
        const double fy = 1.0 + static_cast<double>(rng.below(2));
        const double fx = 1.0 + static_cast<double>(rng.below(2));
        const double py = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double px = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
                texture[c * plane + y * cfg.width + x] =
                    base + 0.08 * std::sin(2.0 * std::numbers::pi * fx * static_cast<double>(x) / static_cast<double>(cfg.width) + px) *
                               std::cos(2.0 * std::numbers::pi * fy * static_cast<double>(y) / static_cast<double>(cfg.height) + py);
            }
    }

    std::size_t count = 0;
    for (std::size_t t = 0; t < cfg.frames; ++t) count += rng.bernoulli(cfg.foreground_ratio) ? 1 : 0;
    const auto positions = place_events(count, cfg.frames, cfg.min_gap, kMotifHalfWidth, rng);
    const auto weights = class_weights(cfg.classes, cfg.class_decay);
    const std::size_t travel = kBlobSpeed * 2 * kMotifHalfWidth;

    std::vector<PlantedEvent> planted;
    for (auto frame : positions) {
        PlantedEvent p;
        p.event = {frame, sample_class(weights, rng)};
        p.motif = motif_of(p.event.label, cfg.classes);
        const int dy = kDirections[p.motif][0];
        const int dx = kDirections[p.motif][1];
        const std::size_t span_y = cfg.height - kBlobSize - (dy != 0 ? travel : 0) + 1;
        const std::size_t span_x = cfg.width - kBlobSize - (dx != 0 ? travel : 0) + 1;
        p.blob_y = rng.below(span_y) + (dy < 0 ? travel : 0);
        p.blob_x = rng.below(span_x) + (dx < 0 ? travel : 0);
        p.has_entity = rng.bernoulli(cfg.entity_probability);
        if (p.has_entity) {
            p.entity = random_patch(cfg, rng);
            p.entity.color = class_color(p.event.label, cfg.classes);
            if (p.event.label >= cfg.classes - 1) {
                p.has_decoy = true;
                do {
                    p.decoy = random_patch(cfg, rng);
                } while (overlaps(p.decoy, p.entity));
                p.decoy.color = class_color(p.event.label == cfg.classes ? cfg.classes - 1 : cfg.classes, cfg.classes);
            }
        }
        planted.push_back(p);
        v.events.push_back(p.event);
    }

    v.pixels.resize(cfg.frames * cfg.channels * plane);
    std::size_t next_event = 0;
    for (std::size_t t = 0; t < cfg.frames; ++t) {
        std::vector<double> frame(texture);
        for (auto& value : frame) value += rng.normal(0.0, cfg.noise);
        while (next_event < planted.size() && planted[next_event].event.frame + kMotifHalfWidth < t) ++next_event;
        for (std::size_t e = next_event; e < planted.size() && planted[e].event.frame <= t + kMotifHalfWidth; ++e) {
            const auto& p = planted[e];
            const long step = static_cast<long>(t) - static_cast<long>(p.event.frame) + static_cast<long>(kMotifHalfWidth);
            const double intensity = kBlobIntensity * (1.0 - 0.25 * std::abs(static_cast<double>(step) - 2.0));
            const long by = static_cast<long>(p.blob_y) + kDirections[p.motif][0] * step * static_cast<long>(kBlobSpeed);
            const long bx = static_cast<long>(p.blob_x) + kDirections[p.motif][1] * step * static_cast<long>(kBlobSpeed);
            for (std::size_t c = 0; c < cfg.channels; ++c)
                for (std::size_t y = 0; y < kBlobSize; ++y)
                    for (std::size_t x = 0; x < kBlobSize; ++x)
                        frame[c * plane + (static_cast<std::size_t>(by) + y) * cfg.width + static_cast<std::size_t>(bx) + x] +=
                            intensity;
            for (const Patch* patch : {p.has_entity ? &p.entity : nullptr, p.has_decoy ? &p.decoy : nullptr}) {
                if (patch == nullptr) continue;
                for (std::size_t c = 0; c < cfg.channels; ++c)
                    for (std::size_t y = 0; y < kPatchSize; ++y)
                        for (std::size_t x = 0; x < kPatchSize; ++x)
                            frame[c * plane + (patch->y + y) * cfg.width + patch->x + x] +=
                                cfg.entity_strength * patch->color[c];
            }
            if (p.has_entity) {
                Box box = patch_box(p.entity, cfg.height, cfg.width);
                if (rng.bernoulli(cfg.jitter_probability)) box = jitter(box, rng);
                const auto [phrase, conf] = ground(vocab, p.event.label - 1, 0.1, false, rng);
                v.detections[t].push_back({t, box, phrase, conf});
            }
        }
        if (rng.bernoulli(cfg.spurious_probability)) {
            const std::size_t side = 4 + rng.below(7);
            const std::size_t y = rng.below(cfg.height - side + 1);
            const std::size_t x = rng.below(cfg.width - side + 1);
            const Box box{static_cast<double>(x) / static_cast<double>(cfg.width),
                          static_cast<double>(y) / static_cast<double>(cfg.height),
                          static_cast<double>(x + side) / static_cast<double>(cfg.width),
                          static_cast<double>(y + side) / static_cast<double>(cfg.height)};
            const auto [phrase, conf] = ground(vocab, 0, 0.25, true, rng);
            v.detections[t].push_back({t, box, phrase, conf});
        }
        std::transform(frame.begin(), frame.end(), v.pixels.begin() + static_cast<std::ptrdiff_t>(t * frame.size()),
                       [](double value) { return static_cast<float>(value); });
    }
    return v;
}

} // namespace

void SynthConfig::validate() const {
    const auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("synth." + key + " " + why); };
    if (videos < 1) fail("videos", "must be at least 1");
    if (frames < 2 * kMotifHalfWidth + 1) fail("frames", "must be at least 5");
    if (!(fps > 0.0)) fail("fps", "must be positive");
    if (classes < 2) fail("classes", "must be at least 2");
    if (!(foreground_ratio > 0.0 && foreground_ratio < 1.0)) fail("foreground_ratio", "must lie in (0, 1)");
    if (!(class_decay > 0.0 && class_decay <= 1.0)) fail("class_decay", "must lie in (0, 1]");
    if (!(entity_probability >= 0.0 && entity_probability <= 1.0)) fail("entity_probability", "must lie in [0, 1]");
    if (!(entity_strength >= 0.0)) fail("entity_strength", "must be nonnegative");
    if (channels != 3) fail("channels", "must be 3");
    if (height < 3 * kPatchSize || width < 3 * kPatchSize) fail("height", "and synth.width must be at least 18");
    if (height < kBlobSize + 4 * kBlobSpeed || width < kBlobSize + 4 * kBlobSpeed) fail("height", "too small for the motion motif");
    if (!(noise >= 0.0)) fail("noise", "must be nonnegative");
    if (min_gap < 1) fail("min_gap", "must be at least 1");
    if (!(jitter_probability >= 0.0 && jitter_probability <= 1.0)) fail("jitter_probability", "must lie in [0, 1]");
    if (!(spurious_probability >= 0.0 && spurious_probability <= 1.0)) fail("spurious_probability", "must lie in [0, 1]");
    double total = 0.0;
    for (double f : split) {
        if (!(f >= 0.0)) fail("split", "fractions must be nonnegative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) fail("split", "fractions must sum to 1");
}

std::string SynthConfig::to_json() const {
    const nlohmann::json j = {{"videos", videos},
                              {"frames", frames},
                              {"fps", fps},
                              {"classes", classes},
                              {"foreground_ratio", foreground_ratio},
                              {"class_decay", class_decay},
                              {"entity_strength", entity_strength},
                              {"entity_probability", entity_probability},
                              {"height", height},
                              {"width", width},
                              {"channels", channels},
                              {"noise", noise},
                              {"min_gap", min_gap},
                              {"jitter_probability", jitter_probability},
                              {"spurious_probability", spurious_probability},
                              {"split", split},
                              {"seed", seed}};
    return j.dump();
}

std::vector<std::string> synth_class_names(std::size_t k) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i + 2 < k; ++i) {
        names.push_back(i < kLeadingClasses.size() ? kLeadingClasses[i] : "Class " + std::to_string(i + 1));
    }
    names.push_back("Yellow card");
    names.push_back("Red card");
    return names;
}

std::vector<std::string> synth_phrases(std::size_t k) {
    std::vector<std::string> phrases;
    for (std::size_t i = 0; i + 2 < k; ++i) {
        phrases.push_back(i < kLeadingPhrases.size() ? kLeadingPhrases[i] : "entity " + std::to_string(i + 1));
    }
    phrases.push_back("yellow card");
    phrases.push_back("red card");
    phrases.insert(phrases.end(), kDistractors.begin(), kDistractors.end());
    return phrases;
}

std::vector<double> class_weights(std::size_t k, double decay) {
    std::vector<double> w(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        w[i] = std::pow(decay, static_cast<double>(i));
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

std::vector<std::size_t> place_events(std::size_t count, std::size_t frames, std::size_t min_gap, std::size_t margin,
                                      Rng& rng) {
    if (count == 0) return {};
    const std::size_t reserved = 2 * margin + (count - 1) * (min_gap - 1);
    if (reserved >= frames || frames - reserved < count) {
        throw GenerationError("cannot place " + std::to_string(count) + " events " + std::to_string(min_gap) +
                              " frames apart in " + std::to_string(frames) + " frames; lower the foreground ratio");
    }
    const std::size_t slots = frames - reserved;
    std::vector<std::size_t> pool(slots);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(slots - i)]);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    for (std::size_t i = 0; i < count; ++i) pool[i] += i * (min_gap - 1) + margin;
    return pool;
}

DatasetSplit split_videos(const std::vector<std::string>& ids, const std::array<double, 3>& fractions, std::uint64_t seed) {
    std::size_t used = 0;
    for (double f : fractions) used += f > 0.0 ? 1 : 0;
    if (ids.size() < used) {
        throw GenerationError("cannot split " + std::to_string(ids.size()) + " videos into " + std::to_string(used) +
                              " nonempty parts");
    }
    std::vector<std::string> order(ids);
    Rng rng = Rng(seed).split("split");
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    // Largest remainder, then at least one video for every nonzero part.
    const double n = static_cast<double>(order.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rest{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        counts[i] = static_cast<std::size_t>(std::floor(fractions[i] * n));
        rest[i] = fractions[i] * n - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < order.size()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i) {
            if (rest[i] > rest[best]) best = i;
        }
        ++counts[best];
        rest[best] = -1.0;
        ++assigned;
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (fractions[i] > 0.0 && counts[i] == 0) {
            const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            --counts[donor];
            ++counts[i];
        }
    }
    DatasetSplit split;
    auto it = order.begin();
    for (auto* part : {&split.train, &split.val, &split.test}) {
        const std::size_t i = part == &split.train ? 0 : part == &split.val ? 1 : 2;
        part->assign(it, it + static_cast<std::ptrdiff_t>(counts[i]));
        std::sort(part->begin(), part->end());
        it += static_cast<std::ptrdiff_t>(counts[i]);
    }
    return split;
}

Dataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.classes = synth_class_names(cfg.classes);
    ds.vocabulary = PhraseVocabulary::from_phrases(synth_phrases(cfg.classes), kEmbeddingDim);
    const Rng root = Rng(cfg.seed).split("videos");
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < cfg.videos; ++i) {
        ds.videos.push_back(generate_video(cfg, i, ds.vocabulary, root.split(i)));
        ids.push_back(ds.videos.back().id);
    }
    ds.split = split_videos(ids, cfg.split, cfg.seed);
    return ds;
}

} // namespace spotkit
