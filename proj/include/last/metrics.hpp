#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace last {

/// Video-level detection metrics. Percentages; `auc` and `eer` are NaN when
/// only one class is present.
struct MetricsReport {
  double acc = 0;
  double auc = 0;
  double eer = 0;
  double threshold = 0;  // score at which FPR == FNR (interpolated)
  std::size_t n_videos = 0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  std::string protocol;
  std::optional<std::string> perturbation;

  bool auc_defined() const;
};

/// Fraction of videos classified correctly, predicting fake when score > 0.5.
double accuracy(const std::vector<double>& scores, const std::vector<int>& labels);

/// Probability that a random fake outranks a random real, ties counting one
/// half. Exact pair counting up to 10^4 videos, tie-averaged ranks above.
double auc_score(const std::vector<double>& scores, const std::vector<int>& labels);

struct EerPoint {
  double eer = 0;        // fraction
  double threshold = 0;  // score threshold, fake when score >= threshold
};

/// Sweeps the thresholds at every distinct score (plus one above all
/// scores) and interpolates linearly where FPR - FNR changes sign.
EerPoint equal_error_rate(const std::vector<double>& scores, const std::vector<int>& labels);

MetricsReport compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                              std::string protocol = {});

/// One `key = value` line per field.
void write_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report(const std::filesystem::path& path);

}  // namespace last
