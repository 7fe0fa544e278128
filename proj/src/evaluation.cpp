#include "spotkit/evaluation.hpp"

#include "spotkit/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace spotkit {

void sort_by_confidence(std::vector<Prediction>& predictions) {
    std::stable_sort(predictions.begin(), predictions.end(), [](const Prediction& a, const Prediction& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.frame != b.frame) return a.frame < b.frame;
        return a.video < b.video;
    });
}

std::vector<bool> match_predictions(const std::vector<Prediction>& sorted, const std::vector<GroundTruthEvent>& truth,
                                    const std::function<double(const std::string&)>& tolerance_frames) {
    struct Bucket {
        std::vector<std::size_t> frames;
        std::vector<bool> used;
    };
    std::map<std::pair<std::string, std::size_t>, Bucket> buckets;
    for (const auto& g : truth) buckets[{g.video, g.label}].frames.push_back(g.frame);
    for (auto& [key, b] : buckets) {
        std::sort(b.frames.begin(), b.frames.end());
        b.used.assign(b.frames.size(), false);
    }

    std::vector<bool> flags(sorted.size(), false);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& p = sorted[i];
        auto it = buckets.find({p.video, p.label});
        if (it == buckets.end()) continue;
        auto& b = it->second;
        const double tol = tolerance_frames(p.video);
        const double t = static_cast<double>(p.frame);
        const double lo = std::max(0.0, std::ceil(t - tol));
        auto first = std::lower_bound(b.frames.begin(), b.frames.end(), static_cast<std::size_t>(lo));
        std::size_t best = b.frames.size();
        double best_gap = std::numeric_limits<double>::infinity();
        for (auto f = first; f != b.frames.end(); ++f) {
            const double gap = std::abs(static_cast<double>(*f) - t);
            if (static_cast<double>(*f) - t > tol) break;
            const auto j = static_cast<std::size_t>(f - b.frames.begin());
            if (b.used[j] || gap > tol) continue;
            if (gap < best_gap) {
                best_gap = gap;
                best = j;
            }
        }
        if (best < b.frames.size()) {
            b.used[best] = true;
            flags[i] = true;
        }
    }
    return flags;
}

std::vector<bool> match_predictions(const std::vector<Prediction>& sorted, const std::vector<GroundTruthEvent>& truth,
                                    double tolerance_frames) {
    return match_predictions(sorted, truth, [=](const std::string&) { return tolerance_frames; });
}

double average_precision(const std::vector<bool>& flags, std::size_t total_truth) {
    if (total_truth == 0) throw MetricError("average precision is undefined without ground truth");
    const std::size_t n = flags.size();
    std::vector<double> precision(n);
    std::size_t tp = 0;
    for (std::size_t j = 0; j < n; ++j) {
        tp += flags[j] ? 1 : 0;
        precision[j] = static_cast<double>(tp) / static_cast<double>(j + 1);
    }
    for (std::size_t j = n; j-- > 1;) precision[j - 1] = std::max(precision[j - 1], precision[j]);
    double area = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (flags[j]) area += precision[j];
    }
    return area / static_cast<double>(total_truth);
}

ToleranceScore score_at(const EvalInput& input, double tolerance_s) {
    const std::size_t k = input.classes.size();
    ToleranceScore score;
    score.tolerance_s = tolerance_s;
    score.class_ap.assign(k, std::numeric_limits<double>::quiet_NaN());
    const auto tolerance = [&](const std::string& video) {
        auto it = input.fps.find(video);
        if (it == input.fps.end()) throw SchemaError("no frame rate known for video '" + video + "'");
        return tolerance_s * it->second;
    };
    for (const auto& p : input.predictions) (void)tolerance(p.video);
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t label = 1; label <= k; ++label) {
        std::vector<GroundTruthEvent> truth;
        for (const auto& g : input.truth) {
            if (g.label == label) truth.push_back(g);
        }
        if (truth.empty()) continue;
        std::vector<Prediction> preds;
        for (const auto& p : input.predictions) {
            if (p.label == label) preds.push_back(p);
        }
        sort_by_confidence(preds);
        const double ap = average_precision(match_predictions(preds, truth, tolerance), truth.size());
        score.class_ap[label - 1] = ap;
        sum += ap;
        ++counted;
    }
    if (counted == 0) throw MetricError("no ground-truth events: the metric is undefined");
    score.map = sum / static_cast<double>(counted);
    return score;
}

double trapezoid_mean(const std::vector<double>& grid, const std::vector<double>& values) {
    if (grid.empty() || grid.size() != values.size()) throw MetricError("tolerance grid and values differ in length");
    if (grid.size() == 1) return values[0];
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) area += (values[i] + values[i + 1]) / 2.0 * (grid[i + 1] - grid[i]);
    return area / (grid.back() - grid.front());
}

namespace {

std::vector<ToleranceScore> score_grid(const EvalInput& input, const std::vector<double>& grid) {
    if (grid.empty()) throw MetricError("tolerance set must not be empty");
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        if (!(grid[i + 1] > grid[i])) throw MetricError("tolerance grid must be strictly ascending");
    }
    std::vector<ToleranceScore> out;
    for (double tol : grid) out.push_back(score_at(input, tol));
    return out;
}

double grid_mean(const std::vector<double>& grid, const std::vector<ToleranceScore>& scores) {
    std::vector<double> maps;
    for (const auto& s : scores) maps.push_back(s.map);
    return trapezoid_mean(grid, maps);
}

double class_grid_mean(const std::vector<ToleranceScore>& scores, std::size_t k) {
    std::vector<double> grid, aps;
    for (const auto& s : scores) {
        grid.push_back(s.tolerance_s);
        aps.push_back(s.class_ap[k]);
    }
    return trapezoid_mean(grid, aps);
}

nlohmann::json ap_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

} // namespace

double avg_map(const EvalInput& input, const std::vector<double>& tolerances_s) {
    return grid_mean(tolerances_s, score_grid(input, tolerances_s));
}

MetricReport evaluate(const EvalInput& input, const std::vector<double>& tight, const std::vector<double>& loose) {
    MetricReport r;
    r.tight = score_grid(input, tight);
    r.loose = score_grid(input, loose);
    r.tight_avg_map = grid_mean(tight, r.tight);
    r.loose_avg_map = grid_mean(loose, r.loose);
    r.truth_per_class.assign(input.classes.size(), 0);
    for (const auto& g : input.truth) {
        if (g.label >= 1 && g.label <= input.classes.size()) ++r.truth_per_class[g.label - 1];
    }
    return r;
}

std::string report_json(const MetricReport& report, const EvalInput& input, const std::string& config_echo) {
    using nlohmann::json;
    const auto block = [&](const std::vector<ToleranceScore>& scores) {
        json arr = json::array();
        for (const auto& s : scores) {
            json per_class = json::object();
            for (std::size_t k = 0; k < input.classes.size(); ++k) per_class[input.classes[k]] = ap_or_null(s.class_ap[k]);
            arr.push_back({{"tolerance_s", s.tolerance_s}, {"map", s.map}, {"class_ap", per_class}});
        }
        return arr;
    };
    const auto grid = [](const std::vector<ToleranceScore>& scores) {
        std::vector<double> g;
        for (const auto& s : scores) g.push_back(s.tolerance_s);
        return g;
    };
    json truth = json::object();
    for (std::size_t k = 0; k < input.classes.size(); ++k) truth[input.classes[k]] = report.truth_per_class[k];
    json config;
    try {
        config = json::parse(config_echo);
    } catch (const json::exception&) {
        config = config_echo;
    }
    const json doc = {{"interpolation", "all-point"},
                      {"matching", "greedy by confidence, one-to-one, closest unmatched event within |dt| <= tolerance"},
                      {"average", "trapezoidal over the tolerance grid"},
                      {"classes_without_truth", "excluded from mAP"},
                      {"tight_grid_s", grid(report.tight)},
                      {"loose_grid_s", grid(report.loose)},
                      {"tight_avg_map", report.tight_avg_map},
                      {"loose_avg_map", report.loose_avg_map},
                      {"tight", block(report.tight)},
                      {"loose", block(report.loose)},
                      {"truth_per_class", truth},
                      {"predictions", input.predictions.size()},
                      {"config", config}};
    return doc.dump(1) + "\n";
}

std::string report_table(const MetricReport& report, const EvalInput& input) {
    std::ostringstream os;
    std::size_t width = 5;
    for (const auto& c : input.classes) width = std::max(width, c.size());
    os << std::left << std::setw(static_cast<int>(width)) << "class" << "  events  tight-AP  loose-AP\n";
    os << std::fixed << std::setprecision(4);
    for (std::size_t k = 0; k < input.classes.size(); ++k) {
        os << std::left << std::setw(static_cast<int>(width)) << input.classes[k] << "  " << std::right << std::setw(6)
           << report.truth_per_class[k];
        if (report.truth_per_class[k] == 0) {
            os << "       n/a       n/a\n";
            continue;
        }
        os << "  " << std::setw(8) << class_grid_mean(report.tight, k) << "  " << std::setw(8)
           << class_grid_mean(report.loose, k) << "\n";
    }
    os << "tight Avg-mAP: " << report.tight_avg_map << "\n";
    os << "loose Avg-mAP: " << report.loose_avg_map << "\n";
    return os.str();
}

std::string report_csv(const MetricReport& report, const EvalInput& input) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "grid,tolerance_s,class,ap\n";
    for (const auto* part : {&report.tight, &report.loose}) {
        const char* name = part == &report.tight ? "tight" : "loose";
        for (const auto& s : *part) {
            for (std::size_t k = 0; k < input.classes.size(); ++k) {
                if (std::isnan(s.class_ap[k])) continue;
                os << name << ',' << s.tolerance_s << ",\"" << input.classes[k] << "\"," << s.class_ap[k] << '\n';
            }
            os << name << ',' << s.tolerance_s << ",mAP," << s.map << '\n';
        }
    }
    return os.str();
}

} // namespace spotkit
