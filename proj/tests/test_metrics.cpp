#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "last/metrics.hpp"
#include "support.hpp"

using namespace last;

namespace {

const std::vector<double> kHandScores{0.1, 0.2, 0.3, 0.4, 0.35, 0.6, 0.7, 0.8};
const std::vector<int> kHandLabels{0, 0, 0, 0, 1, 1, 1, 1};

}  // namespace

TEST(Metrics, HandExample) {
  auto r = compute_metrics(kHandScores, kHandLabels);
  EXPECT_EQ(r.auc, 93.75);
  EXPECT_EQ(r.eer, 25.0);
  EXPECT_GT(r.threshold, 0.35);
  EXPECT_LE(r.threshold, 0.4);
  EXPECT_EQ(r.n_videos, 8u);
  EXPECT_EQ(r.n_real, 4u);
  EXPECT_EQ(r.n_fake, 4u);
  EXPECT_EQ(r.acc, 87.5);  // 0.35 is the one fake below 0.5
}

TEST(Metrics, PerfectSeparation) {
  auto r = compute_metrics({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
  EXPECT_EQ(r.auc, 100.0);
  EXPECT_EQ(r.eer, 0.0);
  EXPECT_EQ(r.acc, 100.0);
}

TEST(Metrics, AccuracyThresholdIsStrictlyAboveHalf) {
  EXPECT_EQ(accuracy({0.5, 0.5}, {0, 1}), 0.5);
  EXPECT_EQ(accuracy({0.5001, 0.4999}, {1, 0}), 1.0);
}

TEST(Metrics, SingleClassLeavesAucUndefined) {
  auto r = compute_metrics({0.2, 0.7, 0.9}, {1, 1, 1});
  EXPECT_FALSE(r.auc_defined());
  EXPECT_TRUE(std::isnan(r.auc));
  EXPECT_TRUE(std::isnan(r.eer));
  EXPECT_NEAR(r.acc, 200.0 / 3, 1e-12);
}

TEST(Metrics, MatchesBruteForceOracles) {
  Rng rng(2024);
  std::uniform_int_distribution<int> size(2, 32), score(0, 1000), coin(0, 1), coarse(0, 10);
  for (int instance = 0; instance < 1000; ++instance) {
    const int n = size(rng);
    std::vector<int> labels(n), thousandths(n);
    for (int i = 0; i < n; ++i) labels[i] = coin(rng);
    labels[0] = 0;
    labels[1] = 1;
    // Every third instance uses a coarse score grid to force ties.
    const bool ties = instance % 3 == 0;
    for (int i = 0; i < n; ++i) thousandths[i] = ties ? 100 * coarse(rng) : score(rng);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) scores[i] = thousandths[i] / 1000.0;
    auto r = compute_metrics(scores, labels);
    ASSERT_NEAR(r.auc, last::testing::brute_force_auc(scores, labels), 1e-6) << "instance " << instance;
    ASSERT_NEAR(r.eer, last::testing::grid_eer(thousandths, labels), 1e-6) << "instance " << instance;
    ASSERT_GE(r.eer, 0.0);
    ASSERT_LE(r.eer, 100.0);
  }
}

TEST(Metrics, AucInvariantUnderIncreasingTransforms) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(40);
  std::vector<int> y(40);
  for (int i = 0; i < 40; ++i) {
    s[i] = u(rng);
    y[i] = i % 2;
  }
  const double base = auc_score(s, y);
  std::vector<double> t1(s), t2(s);
  for (auto& v : t1) v = std::exp(5 * v);
  for (auto& v : t2) v = v * v * v - 3;
  EXPECT_EQ(auc_score(t1, y), base);
  EXPECT_EQ(auc_score(t2, y), base);
  std::vector<int> flipped(y);
  for (auto& v : flipped) v = 1 - v;
  EXPECT_NEAR(auc_score(s, flipped), 1.0 - base, 1e-12);
}

TEST(Metrics, RankAucAgreesWithPairCountingAboveTenThousand) {
  Rng rng(8);
  std::uniform_int_distribution<int> score(0, 500);
  const int n = 12000;
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % 3 == 0;
    s[i] = score(rng) / 500.0 + 0.05 * y[i];
  }
  EXPECT_NEAR(100.0 * auc_score(s, y), last::testing::brute_force_auc(s, y), 1e-9);
}

TEST(Metrics, ReportRoundTrip) {
  last::testing::TempDir dir;
  auto r = compute_metrics(kHandScores, kHandLabels, "last/tgt_test");
  r.perturbation = "noise:3";
  write_report(r, dir / "report.txt");
  auto back = read_report(dir / "report.txt");
  EXPECT_EQ(back.acc, r.acc);
  EXPECT_EQ(back.auc, r.auc);
  EXPECT_EQ(back.eer, r.eer);
  EXPECT_EQ(back.threshold, r.threshold);
  EXPECT_EQ(back.n_videos, r.n_videos);
  EXPECT_EQ(back.n_real, r.n_real);
  EXPECT_EQ(back.protocol, r.protocol);
  EXPECT_EQ(back.perturbation, r.perturbation);
  const std::string text = last::testing::read_file(dir / "report.txt");
  EXPECT_NE(text.find("auc = "), std::string::npos);
}

TEST(Metrics, RejectsMismatchedInputs) {
  EXPECT_THROW(compute_metrics({0.1, 0.2}, {0}), std::invalid_argument);
  EXPECT_THROW(compute_metrics({}, {}), std::invalid_argument);
}
