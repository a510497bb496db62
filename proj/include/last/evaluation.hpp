#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "last/checkpoint.hpp"
#include "last/data.hpp"
#include "last/metrics.hpp"
#include "last/network.hpp"
#include "last/perturbations.hpp"

namespace last {

inline constexpr int kDefaultEvalClips = 4;

struct VideoScore {
  std::string video_id;
  double score = 0;  // probability of fake
  std::optional<Label> label;
  std::vector<double> clip_scores;
};

/// Mean of the clip scores.
double aggregate_clip_scores(const std::vector<double>& clip_scores);

/// Perturbs a clip with noise drawn from a stream seeded by the clip
/// identity, so repeated evaluations see identical corruptions.
FrameClip perturb_for_evaluation(const FrameClip& clip, const Perturbation& p);

/// Fake probability of one clip: softmax over L_c(L_d(z)).
double clip_score(const Network<float>& net, const FrameClip& clip);

/// Scores `n_eval_clips` evenly spaced clips and averages them.
VideoScore score_video(const Network<float>& net, const VideoRecord& record, int n_eval_clips = kDefaultEvalClips,
                       const std::optional<Perturbation>& perturbation = std::nullopt);

std::vector<VideoScore> score_manifest(const Network<float>& net, const DatasetManifest& manifest,
                                       int n_eval_clips = kDefaultEvalClips,
                                       const std::optional<Perturbation>& perturbation = std::nullopt);

/// Metrics over the labeled videos of `scores`.
MetricsReport compute_metrics(const std::vector<VideoScore>& scores, std::string protocol = {});

MetricsReport evaluate(const Checkpoint& checkpoint, const DatasetManifest& manifest, std::string protocol = {},
                       int n_eval_clips = kDefaultEvalClips,
                       const std::optional<Perturbation>& perturbation = std::nullopt);

/// `video_id <TAB> label <TAB> score <TAB> clip scores...`
void write_scores(const std::vector<VideoScore>& scores, const std::filesystem::path& path);

enum class EmbeddingLayer { z, h };

EmbeddingLayer parse_layer(std::string_view name);

struct EmbeddingRow {
  std::string video_id;
  std::optional<Label> label;
  std::string domain_tag;
  std::optional<std::string> method_tag;
  std::vector<float> values;
};

/// One row per video: the chosen representation averaged over the evenly
/// spaced evaluation clips.
std::vector<EmbeddingRow> compute_embeddings(const Network<float>& net, const DatasetManifest& manifest,
                                             EmbeddingLayer layer, int n_eval_clips = kDefaultEvalClips);

/// Tab-separated with a header row: video_id, label, domain, method, e0..e{d-1}.
void write_embeddings(const std::vector<EmbeddingRow>& rows, const std::filesystem::path& path);

struct SaliencyMap {
  int frames = 0;
  int grid = 0;
  std::vector<float> values;  // (frame, y, x) order, in [0, 1]

  float at(int f, int y, int x) const { return values[(static_cast<std::size_t>(f) * grid + y) * grid + x]; }
};

/// Grad-CAM over the encoder output T: channel weights are the spatially
/// averaged gradients of the `target_class` logit, each frame's map is the
/// ReLU of the weighted channel sum, and the whole clip is scaled so its
/// maximum is 1 (an all-zero map stays zero).
SaliencyMap saliency_map(const Network<float>& net, const FrameClip& clip, int target_class);

/// Writes the map as a TSV (frame, y, x, value) and a PNG strip of the frames
/// with the heat map blended over them.
void write_saliency(const SaliencyMap& map, const FrameClip& clip, const std::filesystem::path& tsv_path,
                    const std::filesystem::path& png_path);

}  // namespace last
