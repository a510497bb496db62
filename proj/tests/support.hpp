#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "last/checkpoint.hpp"
#include "last/data.hpp"
#include "last/synthetic.hpp"

namespace last::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "last");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Synthetic dataset at `dir` with the given families (empty: real-only).
DatasetManifest synthetic(const std::filesystem::path& dir, const std::string& name,
                          std::vector<ForgeryFamily> families, int n_videos, int frames, std::uint64_t seed,
                          int clip_length, DomainStyle style = DomainStyle::clean);

/// Desk-reduced model with a shorter clip, for fast unit tests.
ModelConfig small_model(int clip_length = 4);

/// Random clip in [0, 1] matching `config`.
FrameClip random_clip(const ModelConfig& config, std::uint64_t seed, const std::string& id = "clip");

/// Initial checkpoint whose heads are also randomized, so no gradient is
/// trivially zero.
Checkpoint randomized_checkpoint(const ModelConfig& config, std::uint64_t seed);

// ---- metric oracles ----------------------------------------------------------

/// Pairwise count of fake-over-real orderings, ties one half. Percent.
double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// EER by sweeping every threshold k * 1e-4, k = 0..10001, with fake iff
/// score >= threshold. Scores must be multiples of 1e-3 in [0, 1], passed as
/// integer thousandths so the comparison is exact. Interpolates linearly in
/// FPR - FNR between the bracketing grid thresholds. Percent.
double grid_eer(const std::vector<int>& thousandths, const std::vector<int>& labels);

// ---- finite-difference gradient checks ----------------------------------------

struct GradCheckStats {
  int checked = 0;        // coordinates compared
  int skipped_kinks = 0;  // coordinates whose difference quotients reveal a kink near the stencil
  double max_rel_error = 0;
  std::string worst;      // qualified tensor name and index of the worst coordinate
};

struct GradCheckOptions {
  double step = 1e-3;
  int coords_per_group = 60;
  std::uint64_t seed = 1;
};

/// L_init = lambda1 L_con + lambda2 L_rec on 2 videos x 2 clips with a
/// gradient-carrying reconstruction target, checked for every pretrain group.
/// `detached` instead holds T fixed as a constant in both the analytic and
/// the numeric gradient.
std::vector<std::pair<Group, GradCheckStats>> check_init_gradients(const ModelConfig& config, bool detached,
                                                                   const GradCheckOptions& options);

/// L_last = lambda L_cls(source) + (1 - lambda) L_rec(target) over a frozen
/// backbone, checked for the adaptive layer and classifier.
std::vector<std::pair<Group, GradCheckStats>> check_last_gradients(const ModelConfig& config, double lambda,
                                                                   const GradCheckOptions& options);

/// Bytes of every file below `dir`, keyed by relative path.
std::vector<std::pair<std::string, std::string>> read_tree(const std::filesystem::path& dir,
                                                           const std::string& extension);

std::string read_file(const std::filesystem::path& path);

}  // namespace last::testing
