#include "last/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace last {
namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  if (scores.empty()) throw std::invalid_argument("no scored videos");
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("label outside {0,1}");
}

std::pair<std::size_t, std::size_t> class_counts(const std::vector<int>& labels) {
  const auto fakes = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {labels.size() - fakes, fakes};
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

bool MetricsReport::auc_defined() const { return !std::isnan(auc); }

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if ((scores[i] > 0.5 ? 1 : 0) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const auto [reals, fakes] = class_counts(labels);
  if (reals == 0 || fakes == 0) throw std::invalid_argument("AUC needs both classes");
  if (scores.size() <= 10000) {
    double wins = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] != 1) continue;
      for (std::size_t j = 0; j < scores.size(); ++j) {
        if (labels[j] != 0) continue;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) wins += 0.5;
      }
    }
    return wins / (static_cast<double>(reals) * static_cast<double>(fakes));
  }
  // Mann-Whitney U with tie-averaged ranks.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double fake_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) fake_rank_sum += rank;
    i = j;
  }
  const double f = static_cast<double>(fakes);
  return (fake_rank_sum - f * (f + 1) / 2.0) / (static_cast<double>(reals) * f);
}

EerPoint equal_error_rate(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const auto [reals, fakes] = class_counts(labels);
  if (reals == 0 || fakes == 0) throw std::invalid_argument("EER needs both classes");

  std::vector<double> thresholds(scores);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  auto rates = [&](double t) {
    std::size_t fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == 0 && scores[i] >= t) ++fp;
      if (labels[i] == 1 && scores[i] < t) ++fn;
    }
    return std::make_pair(static_cast<double>(fp) / static_cast<double>(reals),
                          static_cast<double>(fn) / static_cast<double>(fakes));
  };

  // At the lowest threshold FPR = 1 and FNR = 0; above every score FPR = 0
  // and FNR = 1, so d = FPR - FNR changes sign somewhere.
  auto [fpr0, fnr0] = rates(thresholds[0]);
  for (std::size_t k = 0; k + 1 < thresholds.size(); ++k) {
    const auto [fpr1, fnr1] = rates(thresholds[k + 1]);
    const double d0 = fpr0 - fnr0, d1 = fpr1 - fnr1;
    if (d0 > 0 && d1 <= 0) {
      const double alpha = d0 / (d0 - d1);
      const double t0 = thresholds[k];
      const double t1 = std::isinf(thresholds[k + 1]) ? std::max(t0, 1.0) : thresholds[k + 1];
      return {fpr0 + alpha * (fpr1 - fpr0), t0 + alpha * (t1 - t0)};
    }
    fpr0 = fpr1;
    fnr0 = fnr1;
  }
  throw std::logic_error("EER sweep found no crossing");
}

MetricsReport compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels, std::string protocol) {
  check_inputs(scores, labels);
  MetricsReport r;
  r.protocol = std::move(protocol);
  r.n_videos = scores.size();
  std::tie(r.n_real, r.n_fake) = class_counts(labels);
  r.acc = 100.0 * accuracy(scores, labels);
  if (r.n_real > 0 && r.n_fake > 0) {
    r.auc = 100.0 * auc_score(scores, labels);
    const auto e = equal_error_rate(scores, labels);
    r.eer = 100.0 * e.eer;
    r.threshold = e.threshold;
  } else {
    r.auc = r.eer = r.threshold = kNaN;
  }
  return r;
}

namespace {

std::string number(double v) {
  if (std::isnan(v)) return "undefined";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

double parse_number(const std::string& s) { return s == "undefined" ? kNaN : std::stod(s); }

}  // namespace

void write_report(const MetricsReport& r, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << "protocol = " << r.protocol << "\n";
  out << "perturbation = " << r.perturbation.value_or("none") << "\n";
  out << "n_videos = " << r.n_videos << "\n";
  out << "n_real = " << r.n_real << "\n";
  out << "n_fake = " << r.n_fake << "\n";
  out << "acc = " << number(r.acc) << "\n";
  out << "auc = " << number(r.auc) << "\n";
  out << "eer = " << number(r.eer) << "\n";
  out << "threshold = " << number(r.threshold) << "\n";
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report not found: " + path.string());
  MetricsReport r;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "protocol") r.protocol = value;
    else if (key == "perturbation") r.perturbation = value == "none" ? std::nullopt : std::optional(value);
    else if (key == "n_videos") r.n_videos = std::stoul(value);
    else if (key == "n_real") r.n_real = std::stoul(value);
    else if (key == "n_fake") r.n_fake = std::stoul(value);
    else if (key == "acc") r.acc = parse_number(value);
    else if (key == "auc") r.auc = parse_number(value);
    else if (key == "eer") r.eer = parse_number(value);
    else if (key == "threshold") r.threshold = parse_number(value);
  }
  return r;
}

}  // namespace last
