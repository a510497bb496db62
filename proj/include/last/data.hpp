#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "last/clip.hpp"

namespace last {

using Rng = std::mt19937_64;

enum class Label : int { real = 0, fake = 1 };

struct VideoRecord {
  std::string video_id;
  std::filesystem::path frames_path;  // absolute after load
  std::optional<Label> label;         // absent for unlabeled videos
  std::string domain_tag;
  std::optional<std::string> method_tag;
  int frame_count = 0;
};

enum class ManifestRole { source, target, pretrain, eval };

std::string_view role_name(ManifestRole role);
ManifestRole parse_role(std::string_view name);

/// Immutable set of video records. Built through `make` or `load_manifest`,
/// both of which enforce the invariants (unique ids, real-only pretraining
/// sets, videos long enough for one clip).
class DatasetManifest {
 public:
  DatasetManifest() = default;

  static DatasetManifest make(std::string name, ManifestRole role, std::vector<VideoRecord> records,
                              int clip_length);

  const std::string& name() const { return name_; }
  ManifestRole role() const { return role_; }
  const std::vector<VideoRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const VideoRecord& operator[](std::size_t i) const { return records_[i]; }

  /// Copy restricted to the records for which `keep` returns true.
  template <typename Pred>
  DatasetManifest filter(Pred keep, std::string name, ManifestRole role, int clip_length) const {
    std::vector<VideoRecord> kept;
    for (const auto& r : records_)
      if (keep(r)) kept.push_back(r);
    return make(std::move(name), role, std::move(kept), clip_length);
  }

 private:
  std::string name_;
  ManifestRole role_ = ManifestRole::eval;
  std::vector<VideoRecord> records_;
};

/// Parses the tab-separated manifest format:
///   video_id <TAB> frames_path <TAB> label <TAB> domain_tag <TAB> method_tag <TAB> frame_count
/// `label` is 0, 1 or `-`; `method_tag` may be `-`. Lines starting with `#`
/// are comments, except `#name <value>` and `#role <value>` directives.
/// Relative frame paths resolve against the manifest's directory.
/// `role` overrides the `#role` directive when given.
DatasetManifest load_manifest(const std::filesystem::path& path, int clip_length,
                              std::optional<ManifestRole> role = std::nullopt);

/// Writes `manifest` so that load_manifest reads it back; frame paths are
/// written relative to the manifest's directory when they live below it.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Number of `%06d.png` frames stored for a record.
int count_frames_on_disk(const std::filesystem::path& frames_path);

std::filesystem::path frame_file(const std::filesystem::path& frames_path, int index);

/// Reads `length` consecutive frames starting at `offset`.
FrameClip load_clip(const VideoRecord& record, int offset, int length);

/// Uniform offset in [0, frame_count - n].
int sample_offset(const VideoRecord& record, int n, Rng& rng);

FrameClip sample_clip(const VideoRecord& record, int n, Rng& rng);

/// Two clips of the same video at distinct offsets.
std::pair<int, int> sample_pair_offsets(const VideoRecord& record, int n, Rng& rng);
std::pair<FrameClip, FrameClip> sample_positive_pair(const VideoRecord& record, int n, Rng& rng);

/// Target-side video with its label and method stripped. There is no way to
/// recover either from this type.
struct UnlabeledVideo {
  std::string video_id;
  std::filesystem::path frames_path;
  std::string domain_tag;
  int frame_count = 0;

  VideoRecord as_record() const { return {video_id, frames_path, std::nullopt, domain_tag, std::nullopt, frame_count}; }
};

/// Labeled source videos plus an unlabeled subset of the target set.
class AdaptationPool {
 public:
  AdaptationPool(std::vector<VideoRecord> source, std::vector<UnlabeledVideo> target, double target_ratio,
                 std::vector<std::string> warnings);

  const std::vector<VideoRecord>& source() const { return source_; }
  const std::vector<UnlabeledVideo>& target() const { return target_; }
  double target_ratio() const { return target_ratio_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::vector<VideoRecord> source_;
  std::vector<UnlabeledVideo> target_;
  double target_ratio_;
  std::vector<std::string> warnings_;
};

/// Draws ceil(target_ratio * |source|) target videos without replacement,
/// capped at |target| (with a warning).
AdaptationPool build_adaptation_pool(const DatasetManifest& source, const DatasetManifest& target,
                                     double target_ratio, Rng& rng);

/// Evenly spaced, deterministic clip offsets used for video-level scoring.
std::vector<int> evenly_spaced_offsets(int frame_count, int n, int count);

}  // namespace last
