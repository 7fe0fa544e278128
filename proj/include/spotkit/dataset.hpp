#pragma once

#include "spotkit/backbone.hpp"
#include "spotkit/entities.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace spotkit {

// A labelled action at one frame; label is in [1, K].
struct Event {
    std::size_t frame = 0;
    std::size_t label = 0;

    friend bool operator==(const Event&, const Event&) = default;
};

struct Video {
    std::string id;
    double fps = 2.0;
    std::size_t frames = 0;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::vector<float> pixels;  // frames x channels x height x width
    std::vector<Event> events;  // ascending frame
    DetectionsByFrame detections;

    std::size_t frame_size() const { return channels * height * width; }
    // Frames [start, start + length) as a [length x C x H x W] tensor.
    FrameSequence snippet(std::size_t start, std::size_t length) const;
    DetectionsByFrame snippet_detections(std::size_t start, std::size_t length) const;
    // Per-frame class index, 0 for background.
    std::vector<std::size_t> frame_labels() const;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

struct Dataset {
    std::vector<std::string> classes;  // K names, class k is classes[k-1]
    PhraseVocabulary vocabulary;
    std::vector<Video> videos;
    DatasetSplit split;

    const Video& video(const std::string& id) const;
    std::vector<const Video*> videos_in(const std::vector<std::string>& ids) const;
    std::size_t num_classes() const { return classes.size(); }
    std::size_t class_index(const std::string& name) const;
};

// SoccerNet-style label file: {"video", "fps", "annotations": [{"label",
// "position_ms"}]} with position_ms = round(frame * 1000 / fps).
struct LabelFile {
    std::string video;
    double fps = 1.0;
    std::vector<Event> events;
};

std::int64_t frame_to_ms(std::size_t frame, double fps);
std::size_t ms_to_frame(std::int64_t position_ms, double fps);

void save_labels(const std::filesystem::path& path, const LabelFile& labels, const std::vector<std::string>& classes);
LabelFile load_labels(const std::filesystem::path& path, const std::vector<std::string>& classes);

// Hex FNV-1a 64 of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

// On-disk layout under `dir`:
//   manifest.json, vocabulary.json
//   videos/<id>.f32 + videos/<id>.json (shape, dtype, fps, byte order)
//   labels/<id>.json, detections/<id>.jsonl
// `extra` is stored verbatim under the manifest's "generator" key.
// Manifest plus label files only; pixels and detections are not read.
struct DatasetLabels {
    std::vector<std::string> classes;
    DatasetSplit split;
    std::vector<LabelFile> videos;  // manifest order
};

DatasetLabels load_dataset_labels(const std::filesystem::path& dir);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& extra_json = "{}");
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace spotkit
