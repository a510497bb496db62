#include <gtest/gtest.h>

#include <sstream>

#include "last/training.hpp"
#include "support.hpp"

using namespace last;
using last::testing::TempDir;

namespace {

PretrainConfig quick(int epochs, std::uint64_t seed) {
  PretrainConfig c;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Pretrain, LossDecreasesOverThirtySteps) {
  TempDir dir;
  const ModelConfig model = ModelConfig::desk_reduced();
  auto m = last::testing::synthetic(dir / "pre", "pre", {}, 2, 24, 5, model.clip_length);
  double first = 0, last_step = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto result = pretrain(m, initial_checkpoint(model, seed), quick(30, seed));
    ASSERT_EQ(result.step_losses.size(), 30u);
    first += result.step_losses.front();
    last_step += result.step_losses.back();
  }
  EXPECT_LT(last_step / 3, first / 3);
}

TEST(Pretrain, ZeroEpochsKeepsInitialization) {
  TempDir dir;
  const ModelConfig model = last::testing::small_model(4);
  auto m = last::testing::synthetic(dir / "pre", "pre", {}, 3, 6, 5, 4);
  Checkpoint start = initial_checkpoint(model, 9);
  auto result = pretrain(m, start, quick(0, 9));
  EXPECT_TRUE(result.step_losses.empty());
  EXPECT_EQ(result.checkpoint.groups_hash({kAllGroups.begin(), kAllGroups.end()}),
            start.groups_hash({kAllGroups.begin(), kAllGroups.end()}));
  EXPECT_EQ(result.checkpoint.phase, Phase::pretrain);
  EXPECT_EQ(result.checkpoint.parent_hash, start.content_hash());
}

TEST(Pretrain, RejectsFakeVideosBeforeAnyStep) {
  TempDir dir;
  auto m = last::testing::synthetic(dir / "src", "src", {ForgeryFamily::seam}, 4, 6, 5, 4);
  std::ostringstream csv;
  try {
    pretrain(m, initial_checkpoint(last::testing::small_model(4), 0), quick(2, 0), &csv);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("pretrain must be real-only"), std::string::npos);
  }
  EXPECT_TRUE(csv.str().empty());
}

TEST(Pretrain, LeavesHeadsUntouchedAndTrainsBackbone) {
  TempDir dir;
  const ModelConfig model = last::testing::small_model(4);
  auto m = last::testing::synthetic(dir / "pre", "pre", {}, 4, 6, 5, 4);
  Checkpoint start = initial_checkpoint(model, 2);
  std::ostringstream csv;
  auto result = pretrain(m, start, quick(3, 2), &csv);
  EXPECT_EQ(result.checkpoint.heads_hash(), start.heads_hash());
  for (Group g : trainable_groups(Phase::pretrain))
    EXPECT_NE(result.checkpoint.groups_hash({g}), start.groups_hash({g})) << group_name(g);
  // header plus one line per epoch
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "epoch,L_con,L_rec,L_init,lr,mean_pairwise_sim");
  int count = 0;
  while (std::getline(lines, line)) ++count;
  EXPECT_EQ(count, 3);
  ASSERT_EQ(result.history.size(), 3u);
  for (const auto& h : result.history) {
    EXPECT_NEAR(h.l_init, h.l_con + 0.5 * h.l_rec, 1e-6 * h.l_init);
    EXPECT_GT(h.l_con, 0);
    EXPECT_LE(h.mean_pairwise_sim, 1.0);
  }
}

TEST(Pretrain, SeededRunsAreBitIdentical) {
  TempDir dir;
  const ModelConfig model = last::testing::small_model(4);
  auto m = last::testing::synthetic(dir / "pre", "pre", {}, 4, 6, 5, 4);
  auto a = pretrain(m, initial_checkpoint(model, 1), quick(2, 4));
  auto b = pretrain(m, initial_checkpoint(model, 1), quick(2, 4));
  EXPECT_EQ(a.checkpoint.content_hash(), b.checkpoint.content_hash());
  EXPECT_EQ(a.step_losses, b.step_losses);
}

TEST(Pretrain, CollapseMonitorWarns) {
  TempDir dir;
  auto m = last::testing::synthetic(dir / "pre", "pre", {}, 4, 6, 5, 4);
  PretrainConfig c = quick(1, 0);
  c.collapse_threshold = -1.0;
  auto result = pretrain(m, initial_checkpoint(last::testing::small_model(4), 0), c);
  ASSERT_EQ(result.warnings.size(), 1u);
  EXPECT_NE(result.warnings[0].find("collapse"), std::string::npos);
}

TEST(Pretrain, DetachFlagChangesTheEncoderUpdate) {
  TempDir dir;
  const ModelConfig model = last::testing::small_model(4);
  auto m = last::testing::synthetic(dir / "pre", "pre", {}, 4, 6, 5, 4);
  PretrainConfig attached = quick(1, 0);
  attached.detach_target = false;
  auto a = pretrain(m, initial_checkpoint(model, 0), quick(1, 0));
  auto b = pretrain(m, initial_checkpoint(model, 0), attached);
  EXPECT_NE(a.checkpoint.groups_hash({Group::encoder}), b.checkpoint.groups_hash({Group::encoder}));
  EXPECT_EQ(a.checkpoint.groups_hash({Group::reconstructor}), b.checkpoint.groups_hash({Group::reconstructor}));
}

TEST(Pretrain, ValidatesConfig) {
  PretrainConfig c;
  c.tau = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PretrainConfig{};
  c.lambda2 = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PretrainConfig{};
  c.videos_per_batch = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(WarmupSchedule, LinearThenConstant) {
  WarmupSchedule s(1e-5, 5e-4, 100, 0.05);
  EXPECT_EQ(s.warmup_steps(), 5);
  EXPECT_DOUBLE_EQ(s.lr(0), 1e-5);
  EXPECT_NEAR(s.lr(1), 1e-5 + (5e-4 - 1e-5) / 5, 1e-15);
  EXPECT_DOUBLE_EQ(s.lr(5), 5e-4);
  EXPECT_DOUBLE_EQ(s.lr(99), 5e-4);
  WarmupSchedule tiny(1e-5, 5e-4, 3, 0.05);
  EXPECT_EQ(tiny.warmup_steps(), 1);
  EXPECT_DOUBLE_EQ(tiny.lr(1), 5e-4);
}

TEST(Adam, WritesOnlyItsGroups) {
  auto params = Network<float>::make_store(last::testing::small_model(2));
  auto grads = params.zeros_like();
  for (auto& t : grads)
    for (auto& v : t.data) v = 1.0f;
  Adam adam(params, {Group::classifier}, AdamConfig{});
  adam.step(params, grads, 1e-3);
  for (const auto& t : params)
    for (float v : t.data) {
      if (t.group == Group::classifier) ASSERT_NEAR(v, -1e-3f, 1e-6f);
      else ASSERT_EQ(v, 0.0f);
    }
}
