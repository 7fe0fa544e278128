#include "spotkit/checkpoint.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/rng.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace spotkit {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'P', 'O', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(bits & 0xffu));
        bits >>= 8;
    }
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
        need(sizeof(T));
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return std::bit_cast<T>(bits);
    }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::string model_config_json(const ModelConfig& cfg) {
    const json j = {{"backbone",
                     {{"in_channels", cfg.backbone.in_channels},
                      {"widths", cfg.backbone.widths},
                      {"kernel", cfg.backbone.kernel},
                      {"downsample", cfg.backbone.downsample},
                      {"shift_fraction", cfg.backbone.shift_fraction},
                      {"gate", to_string(cfg.backbone.gate)},
                      {"feature_dim", cfg.backbone.feature_dim}}},
                    {"entities",
                     {{"k_max", cfg.entities.k_max},
                      {"roi_size", cfg.entities.roi.out_size},
                      {"roi_samples", cfg.entities.roi.samples_per_bin}}},
                    {"temporal",
                     {{"kind", to_string(cfg.temporal.kind)},
                      {"hidden", cfg.temporal.hidden},
                      {"heads", cfg.temporal.heads}}},
                    {"num_classes", cfg.num_classes},
                    {"features", to_string(cfg.features)}};
    return j.dump();
}

ModelConfig parse_model_config_json(const std::string& text) {
    ModelConfig cfg;
    try {
        const json j = json::parse(text);
        const json& b = j.at("backbone");
        cfg.backbone.in_channels = b.at("in_channels").get<std::size_t>();
        cfg.backbone.widths = b.at("widths").get<std::vector<std::size_t>>();
        cfg.backbone.kernel = b.at("kernel").get<std::size_t>();
        cfg.backbone.downsample = b.at("downsample").get<std::size_t>();
        cfg.backbone.shift_fraction = b.at("shift_fraction").get<double>();
        cfg.backbone.gate = parse_gate_kind(b.at("gate").get<std::string>());
        cfg.backbone.feature_dim = b.at("feature_dim").get<std::size_t>();
        const json& e = j.at("entities");
        cfg.entities.k_max = e.at("k_max").get<std::size_t>();
        cfg.entities.roi.out_size = e.at("roi_size").get<std::size_t>();
        cfg.entities.roi.samples_per_bin = e.at("roi_samples").get<std::size_t>();
        const json& t = j.at("temporal");
        cfg.temporal.kind = parse_temporal_kind(t.at("kind").get<std::string>());
        cfg.temporal.hidden = t.at("hidden").get<std::size_t>();
        cfg.temporal.heads = t.at("heads").get<std::size_t>();
        cfg.num_classes = j.at("num_classes").get<std::size_t>();
        cfg.features = parse_feature_mode(j.at("features").get<std::string>());
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("model configuration in checkpoint is malformed: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("model configuration in checkpoint is invalid: ") + e.what());
    }
    return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const SpottingModel& model, const std::vector<std::string>& classes,
                     std::uint64_t seed, const std::string& extra_json) {
    if (classes.size() != model.config().num_classes) {
        throw ContractError("checkpoint class list has " + std::to_string(classes.size()) + " names, the model has " +
                            std::to_string(model.config().num_classes) + " classes");
    }
    json extra;
    try {
        extra = json::parse(extra_json);
    } catch (const json::exception& e) {
        throw ContractError(std::string("checkpoint metadata is not JSON: ") + e.what());
    }
    const json meta = {{"format", "spotkit-checkpoint"},
                       {"model", json::parse(model_config_json(model.config()))},
                       {"classes", classes},
                       {"seed", seed},
                       {"extra", extra}};
    const std::string meta_text = meta.dump();

    std::string out(kMagic, sizeof kMagic);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(meta_text.size()));
    out += meta_text;
    const auto& entries = model.parameters().entries();
    put(out, static_cast<std::uint64_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        put(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put(out, static_cast<std::uint32_t>(tensor.rank()));
        for (auto d : tensor.shape()) put(out, static_cast<std::uint64_t>(d));
        for (double x : tensor.data()) put(out, x);
    }
    put(out, fnv1a64(out));

    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot write checkpoint " + path.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("write failed for checkpoint " + path.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream buffer;
    buffer << file.rdbuf();
    const std::string bytes = buffer.str();
    const std::string where = path.string() + ": ";

    if (bytes.size() < sizeof kMagic + 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError(where + "not a spotkit checkpoint");
    }
    {
        const std::string body = bytes.substr(0, bytes.size() - 8);
        const std::string tail = bytes.substr(bytes.size() - 8);
        Reader tr(tail);
        if (tr.get<std::uint64_t>() != fnv1a64(body)) throw CheckpointError(where + "checksum mismatch");
    }
    Reader r(bytes);
    r.take(sizeof kMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw CheckpointError(where + "unsupported checkpoint version " + std::to_string(version));
    const auto meta_size = r.get<std::uint64_t>();
    json meta;
    try {
        meta = json::parse(r.take(meta_size));
    } catch (const json::exception& e) {
        throw CheckpointError(where + "metadata is not JSON: " + e.what());
    }

    LoadedModel out;
    try {
        out.info.model = parse_model_config_json(meta.at("model").dump());
        out.info.classes = meta.at("classes").get<std::vector<std::string>>();
        out.info.seed = meta.at("seed").get<std::uint64_t>();
        out.info.extra_json = meta.at("extra").dump();
    } catch (const json::exception& e) {
        throw CheckpointError(where + "metadata is incomplete: " + e.what());
    }
    if (out.info.classes.size() != out.info.model.num_classes) {
        throw CheckpointError(where + "class list does not match the model's class count");
    }
    out.model = std::make_unique<SpottingModel>(out.info.model, out.info.seed);
    ParameterStore& store = out.model->parameters();

    const auto count = r.get<std::uint64_t>();
    if (count != store.size()) {
        throw CheckpointError(where + "holds " + std::to_string(count) + " parameters, the model expects " +
                              std::to_string(store.size()));
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.take(r.get<std::uint32_t>());
        if (!store.contains(name)) throw CheckpointError(where + "unexpected parameter '" + name + "'");
        Tensor target = store.get(name);
        const auto rank = r.get<std::uint32_t>();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        if (shape != target.shape()) {
            throw CheckpointError(where + "parameter '" + name + "' has shape " + to_string(shape) + ", expected " +
                                  to_string(target.shape()));
        }
        auto values = target.mutable_data();
        for (auto& x : values) x = r.get<double>();
    }
    if (r.remaining() != 8) throw CheckpointError(where + "trailing bytes after the parameter blobs");
    return out;
}

} // namespace spotkit
