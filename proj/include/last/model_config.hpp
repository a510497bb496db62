#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace last {

/// Network dimensions. The defaults are the full-size detector; `desk_reduced()`
/// keeps every code path but shrinks all widths so tests run on a laptop CPU.
struct ModelConfig {
  int clip_length = 20;
  int image_size = 224;
  std::array<int, 3> encoder_channels{64, 128, 256};
  int feature_grid = 16;  // g: tokens per side per frame
  int token_dim = 768;    // d_z
  int blocks = 12;        // K
  int heads = 12;
  int mlp_ratio = 4;
  int n_classes = 2;

  static ModelConfig paper_default();
  static ModelConfig desk_reduced();

  int feature_dim() const { return encoder_channels[2]; }  // d_t
  int tokens_per_frame() const { return feature_grid * feature_grid; }
  int token_count() const { return clip_length * tokens_per_frame(); }
  /// Spatial side of the last conv output before pooling (three stride-2 convs).
  int conv_output_size() const;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;

  /// Flat `key = value` echo used in checkpoints and run directories.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static ModelConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& kv);

  bool operator==(const ModelConfig&) const = default;
};

/// Output size of a 3x3 stride-2 pad-1 convolution.
constexpr int strided_size(int in) { return (in - 1) / 2 + 1; }

}  // namespace last
