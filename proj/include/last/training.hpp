#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "last/checkpoint.hpp"
#include "last/data.hpp"
#include "last/network.hpp"
#include "last/optimizer.hpp"
#include "last/perturbations.hpp"

namespace last {

/// Fresh parameters for `config`, tagged phase=init.
Checkpoint initial_checkpoint(const ModelConfig& config, std::uint64_t seed, InitOptions options = {});

// ---- pretraining ------------------------------------------------------------

struct PretrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double tau = 0.5;
  double eps = 1e-8;
  int videos_per_batch = 32;  // M; two clips per video
  int epochs = 100;
  AdamConfig optimizer;
  bool detach_target = true;  // block gradients through the reconstruction target T
  double collapse_threshold = 0.95;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainEpochLog {
  int epoch = 0;
  double l_con = 0, l_rec = 0, l_init = 0, lr = 0, mean_pairwise_sim = 0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<PretrainEpochLog> history;
  std::vector<double> step_losses;  // L_init of every optimization step
  std::vector<std::string> warnings;
};

/// Real-only self-supervised training of the encoder, projection,
/// transformer and reconstructor on L_init = lambda1 L_con + lambda2 L_rec.
/// Writes one CSV line per epoch to `csv` when given.
PretrainResult pretrain(const DatasetManifest& manifest, const Checkpoint& start, const PretrainConfig& config,
                        std::ostream* csv = nullptr);

void write_pretrain_csv_header(std::ostream& out);

// ---- frozen-backbone features -------------------------------------------------

/// Memoized backbone outputs (z and T) per (video, offset). Valid only while
/// the backbone parameters it was built from stay unchanged.
class FeatureCache {
 public:
  struct Entry {
    RowVector<float> z;
    SpatialFeatureSequence<float> features;
  };

  FeatureCache(const Network<float>& net, int clip_length, std::optional<Perturbation> perturbation = std::nullopt);

  const Entry& get(const VideoRecord& record, int offset);
  std::size_t size() const { return entries_.size(); }

 private:
  const Network<float>& net_;
  int clip_length_;
  std::optional<Perturbation> perturbation_;
  std::map<std::pair<std::string, int>, Entry> entries_;
};

// ---- adaptation ---------------------------------------------------------------

struct AdaptConfig {
  double lambda = 0.5;
  int epochs = 10;
  int source_batch = 64;
  int target_batch = 8;
  AdamConfig optimizer;
  std::uint64_t seed = 0;
  bool allow_any_phase = false;  // accept input checkpoints not produced by pretraining

  void validate() const;
};

struct AdaptEpochLog {
  int epoch = 0;
  double l_cls = 0, l_rec = 0, l_last = 0, source_acc = 0;
};

struct AdaptResult {
  Checkpoint checkpoint;
  std::vector<AdaptEpochLog> history;
};

/// Trains only the adaptive layer and classifier on
/// lambda L_cls(source) + (1 - lambda) L_rec(target) over a frozen backbone.
/// An epoch visits every clip window of every source video once, in a
/// shuffled order, `source_batch` clips per step.
AdaptResult adapt(const Checkpoint& start, const AdaptationPool& pool, const AdaptConfig& config,
                  std::ostream* csv = nullptr);

/// The same procedure with the reconstruction pipeline disabled.
AdaptResult train_source_only(const Checkpoint& start, const DatasetManifest& source, const AdaptConfig& config,
                              std::ostream* csv = nullptr);

void write_adapt_csv_header(std::ostream& out);

}  // namespace last
