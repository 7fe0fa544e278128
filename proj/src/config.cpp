#include "spotkit/config.hpp"

#include "spotkit/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace spotkit {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool is_bare_key(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    }
    return true;
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && quoted) {
            ++i;
        } else if (line[i] == '"') {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return line.substr(0, i);
        }
    }
    return line;
}

ConfigValue parse_number(const std::string& text, const std::string& where) {
    const bool floating = text.find_first_of(".eE") != std::string::npos || text == "inf" || text == "nan";
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (*first == '+') ++first;
    if (floating) {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last) throw ConfigError(where + ": '" + text + "' is not a number");
        return v;
    }
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw ConfigError(where + ": '" + text + "' is not a value");
    return v;
}

ConfigValue parse_value(const std::string& text, const std::string& where) {
    if (text.empty()) throw ConfigError(where + ": missing value");
    if (text.front() == '"') {
        std::string out;
        std::size_t i = 1;
        for (; i < text.size() && text[i] != '"'; ++i) {
            if (text[i] == '\\' && i + 1 < text.size()) ++i;
            out.push_back(text[i]);
        }
        if (i != text.size() - 1) throw ConfigError(where + ": unterminated or trailing text after string");
        return out;
    }
    if (text.front() == '[') {
        if (text.back() != ']') throw ConfigError(where + ": arrays must close on the same line");
        std::vector<double> values;
        const std::string body = trim(text.substr(1, text.size() - 2));
        if (body.empty()) return values;
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto v = parse_number(trim(item), where);
            values.push_back(std::holds_alternative<double>(v) ? std::get<double>(v)
                                                               : static_cast<double>(std::get<std::int64_t>(v)));
        }
        return values;
    }
    if (text == "true") return true;
    if (text == "false") return false;
    return parse_number(text, where);
}

struct Field {
    std::function<void(const ConfigValue&, const std::string&)> set;
    std::function<json()> get;
};

std::string type_error(const std::string& key, const char* expected) {
    return "config key '" + key + "' expects " + expected;
}

double as_double(const ConfigValue& v, const std::string& key) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    throw ConfigError(type_error(key, "a number"));
}

std::uint64_t as_count(const ConfigValue& v, const std::string& key) {
    const auto* i = std::get_if<std::int64_t>(&v);
    if (i == nullptr || *i < 0) throw ConfigError(type_error(key, "a nonnegative integer"));
    return static_cast<std::uint64_t>(*i);
}

std::string as_string(const ConfigValue& v, const std::string& key) {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    throw ConfigError(type_error(key, "a quoted string"));
}

std::vector<double> as_array(const ConfigValue& v, const std::string& key) {
    if (const auto* a = std::get_if<std::vector<double>>(&v)) return *a;
    throw ConfigError(type_error(key, "an array of numbers"));
}

Field size_field(std::size_t& ref) {
    return {[&ref](const ConfigValue& v, const std::string& k) { ref = static_cast<std::size_t>(as_count(v, k)); },
            [&ref] { return json(ref); }};
}

Field double_field(double& ref) {
    return {[&ref](const ConfigValue& v, const std::string& k) { ref = as_double(v, k); }, [&ref] { return json(ref); }};
}

Field bool_field(bool& ref) {
    return {[&ref](const ConfigValue& v, const std::string& k) {
                const auto* b = std::get_if<bool>(&v);
                if (b == nullptr) throw ConfigError(type_error(k, "true or false"));
                ref = *b;
            },
            [&ref] { return json(ref); }};
}

template <typename E, typename Parse, typename Print>
Field enum_field(E& ref, Parse parse, Print print) {
    return {[&ref, parse](const ConfigValue& v, const std::string& k) {
                try {
                    ref = parse(as_string(v, k));
                } catch (const ConfigError& e) {
                    throw ConfigError("config key '" + k + "': " + e.what());
                }
            },
            [&ref, print] { return json(print(ref)); }};
}

Field sizes_field(std::vector<std::size_t>& ref) {
    return {[&ref](const ConfigValue& v, const std::string& k) {
                ref.clear();
                for (double x : as_array(v, k)) {
                    if (x < 0 || x != static_cast<double>(static_cast<std::size_t>(x))) {
                        throw ConfigError(type_error(k, "an array of nonnegative integers"));
                    }
                    ref.push_back(static_cast<std::size_t>(x));
                }
            },
            [&ref] { return json(ref); }};
}

Field doubles_field(std::vector<double>& ref) {
    return {[&ref](const ConfigValue& v, const std::string& k) { ref = as_array(v, k); }, [&ref] { return json(ref); }};
}

Field triple_field(std::array<double, 3>& ref) {
    return {[&ref](const ConfigValue& v, const std::string& k) {
                const auto a = as_array(v, k);
                if (a.size() != 3) throw ConfigError(type_error(k, "three fractions [train, val, test]"));
                ref = {a[0], a[1], a[2]};
            },
            [&ref] { return json(ref); }};
}

// Ordered key table over a config instance.
std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
    return {
        {"seed", {[&c](const ConfigValue& v, const std::string& k) { c.seed = as_count(v, k); }, [&c] { return json(c.seed); }}},
        {"threads", size_field(c.threads)},
        {"synth.videos", size_field(c.synth.videos)},
        {"synth.frames", size_field(c.synth.frames)},
        {"synth.fps", double_field(c.synth.fps)},
        {"synth.classes", size_field(c.synth.classes)},
        {"synth.foreground_ratio", double_field(c.synth.foreground_ratio)},
        {"synth.class_decay", double_field(c.synth.class_decay)},
        {"synth.entity_strength", double_field(c.synth.entity_strength)},
        {"synth.entity_probability", double_field(c.synth.entity_probability)},
        {"synth.height", size_field(c.synth.height)},
        {"synth.width", size_field(c.synth.width)},
        {"synth.noise", double_field(c.synth.noise)},
        {"synth.min_gap", size_field(c.synth.min_gap)},
        {"synth.jitter_probability", double_field(c.synth.jitter_probability)},
        {"synth.spurious_probability", double_field(c.synth.spurious_probability)},
        {"synth.split", triple_field(c.synth.split)},
        {"model.widths", sizes_field(c.model.backbone.widths)},
        {"model.kernel", size_field(c.model.backbone.kernel)},
        {"model.shift_fraction", double_field(c.model.backbone.shift_fraction)},
        {"model.gate", enum_field(c.model.backbone.gate, parse_gate_kind, [](GateKind g) { return to_string(g); })},
        {"model.k_max", size_field(c.model.entities.k_max)},
        {"model.roi_size", size_field(c.model.entities.roi.out_size)},
        {"model.roi_samples", size_field(c.model.entities.roi.samples_per_bin)},
        {"model.temporal", enum_field(c.model.temporal.kind, parse_temporal_kind, [](TemporalKind t) { return to_string(t); })},
        {"model.hidden", size_field(c.model.temporal.hidden)},
        {"model.heads", size_field(c.model.temporal.heads)},
        {"model.features", enum_field(c.model.features, parse_feature_mode, [](FeatureMode f) { return to_string(f); })},
        {"train.snippet", size_field(c.train.snippet)},
        {"train.epochs", size_field(c.train.epochs)},
        {"train.lr", double_field(c.train.lr)},
        {"train.warmup", double_field(c.train.warmup)},
        {"train.alpha", double_field(c.train.alpha)},
        {"train.gamma", double_field(c.train.gamma)},
        {"train.batch", size_field(c.train.batch)},
        {"train.snippets_per_epoch", size_field(c.train.snippets_per_epoch)},
        {"train.weight_decay", double_field(c.train.weight_decay)},
        {"train.loss", enum_field(c.train.loss, parse_loss_kind, [](LossKind l) { return to_string(l); })},
        {"train.validate_each_epoch", bool_field(c.train.validate_each_epoch)},
        {"inference.window", size_field(c.inference.window)},
        {"inference.threshold", double_field(c.inference.threshold)},
        {"inference.nms_seconds", double_field(c.inference.nms_seconds)},
        {"eval.tight", doubles_field(c.eval.tight)},
        {"eval.loose", doubles_field(c.eval.loose)},
    };
}

std::string toml_scalar(const json& v) {
    if (v.is_array()) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i].dump();
        return out + "]";
    }
    return v.dump();
}

} // namespace

std::map<std::string, ConfigValue> parse_config_text(const std::string& text, const std::string& source) {
    std::map<std::string, ConfigValue> out;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = source + ":" + std::to_string(line_no);
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!is_bare_key(section)) throw ConfigError(where + ": invalid section name '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (!is_bare_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
        const std::string full = section.empty() ? key : section + "." + key;
        if (out.count(full) != 0) throw ConfigError(where + ": duplicate key '" + full + "'");
        out[full] = parse_value(trim(line.substr(eq + 1)), where);
    }
    return out;
}

RunConfig default_run_config() {
    RunConfig c;
    c.model.backbone.widths = {8, 16, 32};
    c.model.temporal.hidden = 64;
    c.inference.window = 0;
    return c;
}

void RunConfig::apply(const std::map<std::string, ConfigValue>& values) {
    auto table = fields(*this);
    for (const auto& [key, value] : values) {
        auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
        if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second.set(value, key);
    }
}

void RunConfig::finalize() {
    synth.seed = seed;
    train.seed = seed;
    inference.threads = threads;
    if (inference.window == 0) inference.window = train.snippet;
    if (!model.backbone.widths.empty()) model.backbone.feature_dim = model.backbone.widths.back();
    model.backbone.in_channels = synth.channels;
    model.num_classes = synth.classes;
    if (threads < 1) throw ConfigError("config key 'threads' must be at least 1");
    if (eval.tight.empty() || eval.loose.empty()) throw ConfigError("config keys 'eval.tight' and 'eval.loose' need values");
    synth.validate();
    model.validate();
    train.validate();
    inference.validate();
}

std::string RunConfig::to_toml() const {
    auto table = fields(const_cast<RunConfig&>(*this));
    std::string out;
    std::string section;
    for (const auto& [key, field] : table) {
        const auto dot = key.find('.');
        const std::string s = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (s != section) {
            out += "\n[" + s + "]\n";
            section = s;
        }
        out += name + " = " + toml_scalar(field.get()) + "\n";
    }
    return out;
}

std::string RunConfig::to_json() const {
    auto table = fields(const_cast<RunConfig&>(*this));
    json out = json::object();
    for (const auto& [key, field] : table) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) {
            out[key] = field.get();
        } else {
            out[key.substr(0, dot)][key.substr(dot + 1)] = field.get();
        }
    }
    return out.dump();
}

RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig c = default_run_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path.string());
        std::stringstream buffer;
        buffer << in.rdbuf();
        c.apply(parse_config_text(buffer.str(), path.string()));
    }
    if (const char* env = std::getenv("SPOTKIT_SEED"); env != nullptr && *env != '\0') {
        std::uint64_t seed = 0;
        const char* end = env + std::char_traits<char>::length(env);
        const auto [ptr, ec] = std::from_chars(env, end, seed);
        if (ec != std::errc() || ptr != end) throw ConfigError("SPOTKIT_SEED must be a nonnegative integer");
        c.seed = seed;
    }
    return c;
}

} // namespace spotkit
