#include "last/perturbations.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

#include <jpeglib.h>

namespace last {
namespace {

constexpr double kSaturation[5] = {1.15, 1.3, 1.6, 2.0, 3.0};
constexpr double kContrast[5] = {0.85, 0.7, 0.55, 0.4, 0.3};
constexpr double kBlocks[5] = {2, 4, 8, 12, 16};
constexpr double kNoise[5] = {0.02, 0.04, 0.06, 0.1, 0.15};
constexpr double kBlur[5] = {1, 2, 3, 5, 7};
constexpr double kPixel[5] = {2, 3, 4, 6, 8};
constexpr double kQuality[5] = {90, 70, 50, 35, 20};

constexpr int kBlockSide = 32;

struct JpegError {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

[[noreturn]] void jpeg_error_exit(j_common_ptr info) {
  auto* e = reinterpret_cast<JpegError*>(info->err);
  (*info->err->format_message)(info, e->message);
  std::longjmp(e->jump, 1);
}

void clamp_unit(std::vector<float>& v) {
  for (auto& x : v) x = std::clamp(x, 0.0f, 1.0f);
}

}  // namespace

std::string_view kind_name(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::saturation: return "saturation";
    case PerturbationKind::contrast: return "contrast";
    case PerturbationKind::block: return "block";
    case PerturbationKind::noise: return "noise";
    case PerturbationKind::blur: return "blur";
    case PerturbationKind::pixel: return "pixel";
    case PerturbationKind::compress: return "compress";
  }
  throw std::invalid_argument("unknown perturbation kind");
}

PerturbationKind parse_kind(std::string_view name) {
  for (auto k : kPerturbationKinds)
    if (kind_name(k) == name) return k;
  throw std::invalid_argument("unknown perturbation kind: " + std::string(name));
}

Perturbation::Perturbation(PerturbationKind k, int s) : kind(k), severity(s) {
  if (s < 1 || s > 5) throw std::invalid_argument("perturbation severity must lie in 1..5");
}

std::string Perturbation::to_string() const {
  return std::string(kind_name(kind)) + ":" + std::to_string(severity);
}

Perturbation Perturbation::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("perturbation must be kind:severity");
  const std::string sev(text.substr(colon + 1));
  int s = 0;
  try {
    std::size_t used = 0;
    s = std::stoi(sev, &used);
    if (used != sev.size()) throw std::invalid_argument(sev);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad perturbation severity '" + sev + "'");
  }
  return Perturbation(parse_kind(text.substr(0, colon)), s);
}

double perturbation_parameter(PerturbationKind kind, int severity) {
  if (severity < 1 || severity > 5) throw std::invalid_argument("perturbation severity must lie in 1..5");
  const int i = severity - 1;
  switch (kind) {
    case PerturbationKind::saturation: return kSaturation[i];
    case PerturbationKind::contrast: return kContrast[i];
    case PerturbationKind::block: return kBlocks[i];
    case PerturbationKind::noise: return kNoise[i];
    case PerturbationKind::blur: return kBlur[i];
    case PerturbationKind::pixel: return kPixel[i];
    case PerturbationKind::compress: return kQuality[i];
  }
  throw std::invalid_argument("unknown perturbation kind");
}

std::vector<Perturbation> perturbation_grid() {
  std::vector<Perturbation> grid;
  for (auto k : kPerturbationKinds)
    for (int s = 1; s <= 5; ++s) grid.emplace_back(k, s);
  return grid;
}

void scale_saturation(std::vector<float>& rgb, double factor) {
  for (std::size_t i = 0; i + 2 < rgb.size(); i += 3) {
    const double r = rgb[i], g = rgb[i + 1], b = rgb[i + 2];
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    if (mx <= 0.0 || mx == mn) continue;  // black and grays have no saturation
    double h;
    const double d = mx - mn;
    if (mx == r) h = std::fmod((g - b) / d + 6.0, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    const double s = std::min(1.0, d / mx * factor);
    const double v = mx;
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    const double m = v - c;
    double rr = 0, gg = 0, bb = 0;
    switch (static_cast<int>(h) % 6) {
      case 0: rr = c, gg = x; break;
      case 1: rr = x, gg = c; break;
      case 2: gg = c, bb = x; break;
      case 3: gg = x, bb = c; break;
      case 4: rr = x, bb = c; break;
      default: rr = c, bb = x; break;
    }
    rgb[i] = static_cast<float>(rr + m);
    rgb[i + 1] = static_cast<float>(gg + m);
    rgb[i + 2] = static_cast<float>(bb + m);
  }
  clamp_unit(rgb);
}

void scale_contrast(std::vector<float>& rgb, double factor) {
  for (auto& v : rgb) v = static_cast<float>(0.5 + factor * (v - 0.5));
  clamp_unit(rgb);
}

void gaussian_blur(std::vector<float>& rgb, int height, int width, double sigma) {
  if (sigma <= 0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int k = -radius; k <= radius; ++k) sum += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (auto& k : kernel) k /= sum;

  std::vector<float> tmp(rgb.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, width - 1);
          acc += kernel[k + radius] * rgb[(y * width + xx) * 3 + c];
        }
        tmp[(y * width + x) * 3 + c] = static_cast<float>(acc);
      }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, height - 1);
          acc += kernel[k + radius] * tmp[(yy * width + x) * 3 + c];
        }
        rgb[(y * width + x) * 3 + c] = static_cast<float>(acc);
      }
  clamp_unit(rgb);
}

void pixelate(std::vector<float>& rgb, int height, int width, int factor) {
  if (factor <= 1) return;
  for (int by = 0; by < height; by += factor)
    for (int bx = 0; bx < width; bx += factor) {
      const int ey = std::min(by + factor, height), ex = std::min(bx + factor, width);
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) acc += rgb[(y * width + x) * 3 + c];
        const float mean = static_cast<float>(acc / ((ey - by) * (ex - bx)));
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) rgb[(y * width + x) * 3 + c] = mean;
      }
    }
}

void jpeg_roundtrip(std::vector<float>& rgb, int height, int width, int quality) {
  const std::size_t n = static_cast<std::size_t>(height) * width * 3;
  std::vector<unsigned char> bytes(n);
  for (std::size_t i = 0; i < n; ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));

  // Baseline encode at `quality` with no chroma subsampling, then decode.
  JpegError err;
  jpeg_compress_struct enc;
  jpeg_decompress_struct dec;
  unsigned char* encoded = nullptr;
  unsigned long encoded_size = 0;
  enc.err = jpeg_std_error(&err.pub);
  dec.err = enc.err;
  err.pub.error_exit = jpeg_error_exit;
  jpeg_create_compress(&enc);
  jpeg_create_decompress(&dec);
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&enc);
    jpeg_destroy_decompress(&dec);
    std::free(encoded);
    throw std::runtime_error(std::string("jpeg: ") + err.message);
  }
  jpeg_mem_dest(&enc, &encoded, &encoded_size);
  enc.image_width = static_cast<JDIMENSION>(width);
  enc.image_height = static_cast<JDIMENSION>(height);
  enc.input_components = 3;
  enc.in_color_space = JCS_RGB;
  jpeg_set_defaults(&enc);
  jpeg_set_quality(&enc, std::clamp(quality, 1, 100), TRUE);
  for (int c = 0; c < 3; ++c) enc.comp_info[c].h_samp_factor = enc.comp_info[c].v_samp_factor = 1;
  jpeg_start_compress(&enc, TRUE);
  while (enc.next_scanline < enc.image_height) {
    JSAMPROW row = &bytes[static_cast<std::size_t>(enc.next_scanline) * width * 3];
    jpeg_write_scanlines(&enc, &row, 1);
  }
  jpeg_finish_compress(&enc);

  jpeg_mem_src(&dec, encoded, encoded_size);
  jpeg_read_header(&dec, TRUE);
  dec.out_color_space = JCS_RGB;
  jpeg_start_decompress(&dec);
  while (dec.output_scanline < dec.output_height) {
    JSAMPROW row = &bytes[static_cast<std::size_t>(dec.output_scanline) * width * 3];
    jpeg_read_scanlines(&dec, &row, 1);
  }
  jpeg_finish_decompress(&dec);
  jpeg_destroy_compress(&enc);
  jpeg_destroy_decompress(&dec);
  std::free(encoded);
  for (std::size_t i = 0; i < n; ++i) rgb[i] = static_cast<float>(bytes[i]) / 255.0f;
}

FrameClip apply_perturbation(const FrameClip& clip, const Perturbation& p, Rng& rng) {
  FrameClip out = clip;
  const double param = perturbation_parameter(p.kind, p.severity);
  const int h = clip.height, w = clip.width;
  const std::size_t stride = clip.frame_stride();

  // Block positions are drawn once and shared by every frame.
  std::vector<std::pair<int, int>> corners;
  if (p.kind == PerturbationKind::block) {
    std::uniform_int_distribution<int> ys(0, std::max(0, h - kBlockSide)), xs(0, std::max(0, w - kBlockSide));
    for (int i = 0; i < static_cast<int>(param); ++i) {
      const int y = ys(rng);
      corners.emplace_back(y, xs(rng));
    }
  }

  for (int f = 0; f < clip.length; ++f) {
    std::vector<float> frame(clip.frame(f), clip.frame(f) + stride);
    switch (p.kind) {
      case PerturbationKind::saturation: scale_saturation(frame, param); break;
      case PerturbationKind::contrast: scale_contrast(frame, param); break;
      case PerturbationKind::block:
        for (auto [cy, cx] : corners)
          for (int y = cy; y < std::min(h, cy + kBlockSide); ++y)
            for (int x = cx; x < std::min(w, cx + kBlockSide); ++x)
              for (int c = 0; c < 3; ++c) frame[(y * w + x) * 3 + c] = 0.0f;
        break;
      case PerturbationKind::noise: {
        std::normal_distribution<double> noise(0.0, param);
        for (auto& v : frame) v = static_cast<float>(v + noise(rng));
        clamp_unit(frame);
        break;
      }
      case PerturbationKind::blur: gaussian_blur(frame, h, w, param); break;
      case PerturbationKind::pixel: pixelate(frame, h, w, static_cast<int>(param)); break;
      case PerturbationKind::compress: jpeg_roundtrip(frame, h, w, static_cast<int>(param)); break;
    }
    std::copy(frame.begin(), frame.end(), out.frame(f));
  }
  return out;
}

}  // namespace last
