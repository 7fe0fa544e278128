#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace spotkit {

struct Prediction {
    std::string video;
    std::size_t frame = 0;
    std::size_t label = 0;  // [1, K]
    double confidence = 0.0;
};

struct GroundTruthEvent {
    std::string video;
    std::size_t frame = 0;
    std::size_t label = 0;  // [1, K]
};

// Descending confidence; ties go to the earlier frame, then the lower video id.
void sort_by_confidence(std::vector<Prediction>& predictions);

// Greedy one-to-one matching of already sorted predictions. A prediction is a
// true positive when an unmatched ground truth of the same video and class
// lies within tolerance(video) frames; the closest such event is consumed
// (ties to the earlier frame).
std::vector<bool> match_predictions(const std::vector<Prediction>& sorted, const std::vector<GroundTruthEvent>& truth,
                                    const std::function<double(const std::string&)>& tolerance_frames);
std::vector<bool> match_predictions(const std::vector<Prediction>& sorted, const std::vector<GroundTruthEvent>& truth,
                                    double tolerance_frames);

// All-point interpolated AP: the precision envelope (running maximum from
// the right) summed over the recall step of every true positive.
double average_precision(const std::vector<bool>& flags, std::size_t total_truth);

inline const std::vector<double> kTightTolerances{1, 2, 3, 4, 5};
inline const std::vector<double> kLooseTolerances{5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60};

struct EvalInput {
    std::vector<std::string> classes;  // K names
    std::map<std::string, double> fps;  // per video
    std::vector<Prediction> predictions;
    std::vector<GroundTruthEvent> truth;
};

struct ToleranceScore {
    double tolerance_s = 0.0;
    std::vector<double> class_ap;  // K entries, NaN for classes without ground truth
    double map = 0.0;
};

struct MetricReport {
    std::vector<ToleranceScore> tight;
    std::vector<ToleranceScore> loose;
    double tight_avg_map = 0.0;
    double loose_avg_map = 0.0;
    std::vector<std::size_t> truth_per_class;  // K entries
};

// Per-class AP at one tolerance in seconds.
ToleranceScore score_at(const EvalInput& input, double tolerance_s);
// Trapezoidal mean of mAP over an ascending tolerance grid.
double trapezoid_mean(const std::vector<double>& grid, const std::vector<double>& values);
double avg_map(const EvalInput& input, const std::vector<double>& tolerances_s);
MetricReport evaluate(const EvalInput& input, const std::vector<double>& tight = kTightTolerances,
                      const std::vector<double>& loose = kLooseTolerances);

std::string report_json(const MetricReport& report, const EvalInput& input, const std::string& config_echo = "{}");
std::string report_table(const MetricReport& report, const EvalInput& input);
std::string report_csv(const MetricReport& report, const EvalInput& input);

} // namespace spotkit
