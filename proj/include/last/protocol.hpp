#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "last/config.hpp"
#include "last/evaluation.hpp"

namespace last {

/// One evaluated (variant, seed, eval set, perturbation) combination.
struct ProtocolCell {
  std::string variant;
  std::uint64_t seed = 0;
  std::string eval_set;
  std::string perturbation = "none";
  MetricsReport report;
};

struct ProtocolResult {
  std::filesystem::path directory;
  std::vector<ProtocolCell> cells;
};

/// SHA-256 over the manifest records and the bytes of every frame file.
std::string manifest_content_hash(const DatasetManifest& manifest);

/// Resolves `data.*` entries: a name with `dataset.<name>.*` settings is
/// generated under `data_dir` (reusing an identical earlier generation), any
/// other value is read as a manifest path.
DatasetManifest resolve_dataset(const Config& config, const std::string& entry, ManifestRole role,
                                const std::filesystem::path& data_dir);

/// Clean evaluation plus all 35 perturbed evaluations of one checkpoint.
/// Reports are written to `reports_dir`; the clean cell comes first.
std::vector<ProtocolCell> robustness_sweep(const Checkpoint& checkpoint, const DatasetManifest& manifest,
                                           int n_eval_clips, const std::filesystem::path& reports_dir,
                                           const std::string& variant, std::uint64_t seed,
                                           std::ostream* progress = nullptr);

/// Per-kind severity grid (rows kinds, columns severities 1-5 and the mean)
/// followed by a one-line summary of clean AUC and per-kind averages.
void write_robustness_table(const std::vector<ProtocolCell>& cells, const std::filesystem::path& path);

/// Mean AUC over the five severities of each perturbation kind, in table order.
std::vector<std::pair<std::string, double>> severity_averaged_auc(const std::vector<ProtocolCell>& cells);

/// variant, seed, eval, perturbation, acc, auc, eer, threshold, n_videos.
void write_summary(const std::vector<ProtocolCell>& cells, const std::filesystem::path& path);

/// Runs `protocol.kind` for every seed in `protocol.seeds`, writing
/// checkpoints, logs and reports below `run.output`.
ProtocolResult run_protocol(const Config& config, std::ostream* progress = nullptr);

}  // namespace last
