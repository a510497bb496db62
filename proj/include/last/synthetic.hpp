#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "last/data.hpp"
#include "last/image_io.hpp"

namespace last {

/// Procedural forgery families. Each one plants a different kind of trace in
/// an elliptical region inside the face:
///   seam     blended donor face from a cooler palette whose boundary jitters
///            from frame to frame
///   flicker  faint donor palette plus per-frame intensity flicker
///   checker  fixed high-frequency checkerboard
enum class ForgeryFamily { seam, flicker, checker };

/// Global appearance of a dataset: clean, additive noise with a gamma shift,
/// or low contrast plus JPEG compression.
enum class DomainStyle { clean, noisy, compressed };

std::string_view family_name(ForgeryFamily f);
ForgeryFamily parse_family(std::string_view name);
std::string_view style_name(DomainStyle s);
DomainStyle parse_style(std::string_view name);

struct SyntheticSpec {
  std::string name = "synthetic";
  int n_videos = 10;
  int frames_per_video = 24;
  std::vector<ForgeryFamily> families;  // empty: every video is real
  DomainStyle style = DomainStyle::clean;
  std::uint64_t seed = 0;
  int image_size = 64;
  std::optional<ManifestRole> role;  // default: pretrain when real-only, source otherwise

  void validate() const;
};

/// What the generator planted in video `index`.
struct SyntheticVideoInfo {
  std::string video_id;
  Label label;
  std::optional<ForgeryFamily> family;
};

SyntheticVideoInfo synthetic_video_info(const SyntheticSpec& spec, int index);

/// All frames of one video, computed in memory. Deterministic in (spec, index).
std::vector<RgbImage> render_synthetic_video(const SyntheticSpec& spec, int index);

/// Soft mask (H x W, values in [0, 1]) of the region where forgery traces are
/// planted in frame `frame` of video `index`. Defined for real videos too, as
/// the corresponding face region.
std::vector<float> synthetic_artifact_mask(const SyntheticSpec& spec, int index, int frame);

/// Renders every video to `out_dir/<video_id>/%06d.png` and writes
/// `out_dir/manifest.tsv`. Regenerating with the same spec is byte-identical.
DatasetManifest make_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                       int clip_length);

}  // namespace last
