#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace last {

/// `length` consecutive RGB frames of one video, row-major HWC per frame,
/// values in [0, 1].
struct FrameClip {
  std::string video_id;
  int offset = 0;
  int length = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  std::size_t frame_stride() const { return static_cast<std::size_t>(height) * width * 3; }
  float* frame(int i) { return pixels.data() + i * frame_stride(); }
  const float* frame(int i) const { return pixels.data() + i * frame_stride(); }
  float& at(int f, int y, int x, int c) { return pixels[f * frame_stride() + (y * width + x) * 3 + c]; }
  float at(int f, int y, int x, int c) const {
    return pixels[f * frame_stride() + (y * width + x) * 3 + c];
  }
};

}  // namespace last
