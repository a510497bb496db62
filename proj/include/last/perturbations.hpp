#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "last/clip.hpp"
#include "last/data.hpp"

namespace last {

enum class PerturbationKind { saturation, contrast, block, noise, blur, pixel, compress };

inline constexpr std::array<PerturbationKind, 7> kPerturbationKinds{
    PerturbationKind::saturation, PerturbationKind::contrast, PerturbationKind::block, PerturbationKind::noise,
    PerturbationKind::blur,       PerturbationKind::pixel,    PerturbationKind::compress};

std::string_view kind_name(PerturbationKind kind);
PerturbationKind parse_kind(std::string_view name);

struct Perturbation {
  PerturbationKind kind;
  int severity;  // 1..5

  Perturbation(PerturbationKind k, int s);

  /// "kind:severity", e.g. "noise:3".
  std::string to_string() const;
  static Perturbation parse(std::string_view text);

  bool operator==(const Perturbation&) const = default;
};

/// Corruption strength for one (kind, severity):
///   saturation  HSV saturation scale     1.15 1.3  1.6  2.0  3.0
///   contrast    factor about mid-gray    0.85 0.7  0.55 0.4  0.3
///   block       32x32 black squares      2    4    8    12   16
///   noise       Gaussian sigma           0.02 0.04 0.06 0.1  0.15
///   blur        Gaussian sigma (pixels)  1    2    3    5    7
///   pixel       downscale factor         2    3    4    6    8
///   compress    JPEG quality             90   70   50   35   20
double perturbation_parameter(PerturbationKind kind, int severity);

/// 7 kinds x severities 1..5, kind-major in the order of kPerturbationKinds.
std::vector<Perturbation> perturbation_grid();

/// Shape- and range-preserving corruption of every frame. Noise is drawn
/// independently per frame; block positions are shared by all frames.
FrameClip apply_perturbation(const FrameClip& clip, const Perturbation& p, Rng& rng);

// Single-frame building blocks, exposed for the synthetic generator and tests.
// `rgb` is row-major HWC in [0, 1].
void jpeg_roundtrip(std::vector<float>& rgb, int height, int width, int quality);
void gaussian_blur(std::vector<float>& rgb, int height, int width, double sigma);
void pixelate(std::vector<float>& rgb, int height, int width, int factor);
void scale_saturation(std::vector<float>& rgb, double factor);
void scale_contrast(std::vector<float>& rgb, double factor);

}  // namespace last
