#include "spotkit/dataset.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace spotkit {

using nlohmann::json;

FrameSequence Video::snippet(std::size_t start, std::size_t length) const {
    if (length == 0 || start + length > frames) {
        throw IndexError("snippet [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside video '" + id + "' of " + std::to_string(frames) + " frames");
    }
    const std::size_t n = frame_size();
    Buffer v(pixels.begin() + static_cast<std::ptrdiff_t>(start * n),
                          pixels.begin() + static_cast<std::ptrdiff_t>((start + length) * n));
    return {Tensor::from({length, channels, height, width}, std::move(v)), fps};
}

DetectionsByFrame Video::snippet_detections(std::size_t start, std::size_t length) const {
    DetectionsByFrame out(length);
    for (std::size_t i = 0; i < length && start + i < detections.size(); ++i) {
        for (auto det : detections[start + i]) {
            det.frame = i;
            out[i].push_back(det);
        }
    }
    return out;
}

std::vector<std::size_t> Video::frame_labels() const {
    std::vector<std::size_t> labels(frames, 0);
    for (const auto& e : events) labels.at(e.frame) = e.label;
    return labels;
}

const Video& Dataset::video(const std::string& id) const {
    for (const auto& v : videos) {
        if (v.id == id) return v;
    }
    throw IndexError("no video '" + id + "' in dataset");
}

std::vector<const Video*> Dataset::videos_in(const std::vector<std::string>& ids) const {
    std::vector<const Video*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(&video(id));
    return out;
}

std::size_t Dataset::class_index(const std::string& name) const {
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) throw SchemaError("unknown class label '" + name + "'");
    return static_cast<std::size_t>(it - classes.begin()) + 1;
}

std::int64_t frame_to_ms(std::size_t frame, double fps) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(frame) * 1000.0 / fps));
}

std::size_t ms_to_frame(std::int64_t position_ms, double fps) {
    if (position_ms < 0) throw SchemaError("negative position_ms " + std::to_string(position_ms));
    return static_cast<std::size_t>(std::llround(static_cast<double>(position_ms) * fps / 1000.0));
}

namespace {

std::uint32_t swap_bytes(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw SchemaError(where + ": key '" + key + "' has the wrong type");
    }
}

void write_floats(const std::filesystem::path& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    } else {
        for (float f : values) {
            const auto bits = swap_bytes(std::bit_cast<std::uint32_t>(f));
            out.write(reinterpret_cast<const char*>(&bits), 4);
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<float> read_floats(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * 4));
    if (in.gcount() != static_cast<std::streamsize>(count * 4) || in.peek() != std::char_traits<char>::eof()) {
        throw SchemaError(path.string() + ": expected exactly " + std::to_string(count) + " float32 values");
    }
    if constexpr (std::endian::native != std::endian::little) {
        for (auto& f : values) f = std::bit_cast<float>(swap_bytes(std::bit_cast<std::uint32_t>(f)));
    }
    return values;
}

} // namespace

void save_labels(const std::filesystem::path& path, const LabelFile& labels, const std::vector<std::string>& classes) {
    json annotations = json::array();
    for (const auto& e : labels.events) {
        if (e.label == 0 || e.label > classes.size()) {
            throw ContractError("event label " + std::to_string(e.label) + " outside the class list");
        }
        annotations.push_back({{"label", classes[e.label - 1]}, {"position_ms", frame_to_ms(e.frame, labels.fps)}});
    }
    const json doc = {{"video", labels.video}, {"fps", labels.fps}, {"annotations", annotations}};
    write_text(path, doc.dump(1) + "\n");
}

LabelFile load_labels(const std::filesystem::path& path, const std::vector<std::string>& classes) {
    const json doc = read_json(path);
    const std::string where = path.string();
    LabelFile out;
    out.video = field<std::string>(doc, "video", where);
    out.fps = field<double>(doc, "fps", where);
    if (!(out.fps > 0.0)) throw SchemaError(where + ": fps must be positive");
    const json& annotations = doc.contains("annotations") ? doc["annotations"] : json();
    if (!annotations.is_array()) throw SchemaError(where + ": 'annotations' must be an array");
    for (const auto& a : annotations) {
        const auto label = field<std::string>(a, "label", where);
        auto it = std::find(classes.begin(), classes.end(), label);
        if (it == classes.end()) throw SchemaError(where + ": unknown label '" + label + "'");
        out.events.push_back({ms_to_frame(field<std::int64_t>(a, "position_ms", where), out.fps),
                              static_cast<std::size_t>(it - classes.begin()) + 1});
    }
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const Event& a, const Event& b) { return a.frame < b.frame; });
    return out;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(buffer.str());
    return hex.str();
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& extra_json) {
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"videos", "labels", "detections"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    dataset.vocabulary.save(dir / "vocabulary.json");

    json videos = json::array();
    for (const auto& v : dataset.videos) {
        const std::string pixels = "videos/" + v.id + ".f32";
        const std::string sidecar = "videos/" + v.id + ".json";
        const std::string labels = "labels/" + v.id + ".json";
        const std::string detections = "detections/" + v.id + ".jsonl";
        write_floats(dir / pixels, v.pixels);
        const json side = {{"shape", {v.frames, v.channels, v.height, v.width}},
                           {"dtype", "float32"},
                           {"byte_order", "little"},
                           {"fps", v.fps}};
        write_text(dir / sidecar, side.dump(1) + "\n");
        save_labels(dir / labels, {v.id, v.fps, v.events}, dataset.classes);
        save_detections(dir / detections, v.detections);
        videos.push_back({{"id", v.id},
                          {"frames", v.frames},
                          {"fps", v.fps},
                          {"pixels", pixels},
                          {"sidecar", sidecar},
                          {"labels", labels},
                          {"detections", detections},
                          {"hashes",
                           {{"pixels", file_hash(dir / pixels)},
                            {"labels", file_hash(dir / labels)},
                            {"detections", file_hash(dir / detections)}}}});
    }
    json generator;
    try {
        generator = json::parse(extra_json);
    } catch (const json::exception& e) {
        throw ContractError(std::string("save_dataset: generator echo is not JSON: ") + e.what());
    }
    const json manifest = {
        {"format", "spotkit-dataset"},
        {"version", 1},
        {"classes", dataset.classes},
        {"vocabulary",
         {{"path", "vocabulary.json"},
          {"embedding_dim", dataset.vocabulary.embeddings().dim(1)},
          {"hash", file_hash(dir / "vocabulary.json")}}},
        {"videos", videos},
        {"split", {{"train", dataset.split.train}, {"val", dataset.split.val}, {"test", dataset.split.test}}},
        {"generator", generator}};
    write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const json manifest = read_json(manifest_path);
    const std::string where = manifest_path.string();
    if (field<std::string>(manifest, "format", where) != "spotkit-dataset") {
        throw SchemaError(where + ": not a spotkit dataset manifest");
    }
    Dataset ds;
    ds.classes = field<std::vector<std::string>>(manifest, "classes", where);
    const json vocab = field<json>(manifest, "vocabulary", where);
    ds.vocabulary = PhraseVocabulary::load(dir / field<std::string>(vocab, "path", where),
                                           field<std::size_t>(vocab, "embedding_dim", where));
    for (const auto& entry : field<json>(manifest, "videos", where)) {
        Video v;
        v.id = field<std::string>(entry, "id", where);
        const json side = read_json(dir / field<std::string>(entry, "sidecar", where));
        const auto shape = field<std::vector<std::size_t>>(side, "shape", v.id + " sidecar");
        if (shape.size() != 4 || field<std::string>(side, "dtype", v.id + " sidecar") != "float32") {
            throw SchemaError(v.id + " sidecar: expected a float32 [T, C, H, W] tensor");
        }
        v.frames = shape[0];
        v.channels = shape[1];
        v.height = shape[2];
        v.width = shape[3];
        v.fps = field<double>(side, "fps", v.id + " sidecar");
        v.pixels = read_floats(dir / field<std::string>(entry, "pixels", where), v.frames * v.frame_size());
        const auto labels = load_labels(dir / field<std::string>(entry, "labels", where), ds.classes);
        if (labels.video != v.id) throw SchemaError("label file names video '" + labels.video + "', expected '" + v.id + "'");
        v.events = labels.events;
        for (const auto& e : v.events) {
            if (e.frame >= v.frames) throw SchemaError("event at frame " + std::to_string(e.frame) + " beyond video '" + v.id + "'");
        }
        v.detections = load_detections(dir / field<std::string>(entry, "detections", where), ds.vocabulary, v.frames);
        ds.videos.push_back(std::move(v));
    }
    const json split = field<json>(manifest, "split", where);
    ds.split.train = field<std::vector<std::string>>(split, "train", where);
    ds.split.val = field<std::vector<std::string>>(split, "val", where);
    ds.split.test = field<std::vector<std::string>>(split, "test", where);
    for (const auto* ids : {&ds.split.train, &ds.split.val, &ds.split.test}) {
        for (const auto& id : *ids) (void)ds.video(id);
    }
    return ds;
}

DatasetLabels load_dataset_labels(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const json manifest = read_json(manifest_path);
    const std::string where = manifest_path.string();
    if (field<std::string>(manifest, "format", where) != "spotkit-dataset") {
        throw SchemaError(where + ": not a spotkit dataset manifest");
    }
    DatasetLabels out;
    out.classes = field<std::vector<std::string>>(manifest, "classes", where);
    for (const auto& entry : field<json>(manifest, "videos", where)) {
        auto labels = load_labels(dir / field<std::string>(entry, "labels", where), out.classes);
        const auto id = field<std::string>(entry, "id", where);
        if (labels.video != id) throw SchemaError("label file names video '" + labels.video + "', expected '" + id + "'");
        out.videos.push_back(std::move(labels));
    }
    const json split = field<json>(manifest, "split", where);
    out.split.train = field<std::vector<std::string>>(split, "train", where);
    out.split.val = field<std::vector<std::string>>(split, "val", where);
    out.split.test = field<std::vector<std::string>>(split, "test", where);
    return out;
}

} // namespace spotkit
