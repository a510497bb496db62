#include "last/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "last/perturbations.hpp"

namespace fs = std::filesystem;

namespace last {
namespace {

constexpr double kInnerScale = 0.7;      // artifact ellipse relative to the face
constexpr double kSeamJitter = 0.10;     // per-frame boundary radius jitter (relative)
constexpr double kSeamTint = 0.5;        // donor palette offset
constexpr double kFlickerTint = 0.4;     // flicker fakes blend the donor palette at this fraction
constexpr double kFlickerAmplitude = 0.35;
constexpr double kCheckerAmplitude = 0.12;
constexpr double kNoisySigma = 0.03;
constexpr double kNoisyGamma = 0.85;
constexpr double kCompressedContrast = 0.8;
constexpr int kCompressedQuality = 30;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Grating {
  double fx, fy, phase, speed, amplitude;
  double at(double x, double y, int t) const { return amplitude * std::sin(fx * x + fy * y + phase + speed * t); }
};

// Everything random about one video, drawn once from its own stream.
struct Scene {
  double bg[3];
  Grating bg_wave;
  double skin[3];
  Grating face_waves[3];
  double cx, cy, rx, ry;
  double move_ax, move_ay, move_w, move_phase;
  double light_w, light_phase;
  // forgery parameters
  double donor_tint[3];
  Grating donor_waves[2];
  std::vector<double> seam_jitter;  // per frame
  std::vector<double> flicker;      // per frame
};

Rng video_rng(const SyntheticSpec& spec, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed & 0xffffffffu), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  return Rng(seq);
}

Grating random_grating(Rng& rng, double min_cycles, double max_cycles, double size, double amplitude) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cycles = min_cycles + (max_cycles - min_cycles) * u(rng);
  const double theta = 2 * M_PI * u(rng);
  const double k = 2 * M_PI * cycles / size;
  return {k * std::cos(theta), k * std::sin(theta), 2 * M_PI * u(rng), 0.3 * (2 * u(rng) - 1), amplitude};
}

Scene make_scene(const SyntheticSpec& spec, int index) {
  Rng rng = video_rng(spec, index);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = spec.image_size;
  Scene sc{};
  // Low-chroma background: a grey level plus a faint tint.
  const double grey = 0.2 + 0.6 * u(rng);
  for (double& c : sc.bg) c = grey + 0.3 * (0.6 * u(rng) - 0.3);
  sc.bg_wave = random_grating(rng, 1.5, 4.0, s, 0.08);
  sc.skin[0] = 0.55 + 0.25 * u(rng);
  sc.skin[1] = 0.40 + 0.20 * u(rng);
  sc.skin[2] = 0.30 + 0.20 * u(rng);
  for (auto& g : sc.face_waves) g = random_grating(rng, 3.0, 8.0, s * 0.6, 0.04);
  sc.cx = s / 2 + 2.0 * (2 * u(rng) - 1);
  sc.cy = s / 2 + 2.0 * (2 * u(rng) - 1);
  sc.rx = s * (0.42 + 0.09 * u(rng));  // face-crop framing
  sc.ry = sc.rx * (1.1 + 0.2 * u(rng));
  sc.move_ax = 1.0 + 2.0 * u(rng);
  sc.move_ay = 1.0 + 2.0 * u(rng);
  sc.move_w = 0.1 + 0.2 * u(rng);
  sc.move_phase = 2 * M_PI * u(rng);
  sc.light_w = 0.05 + 0.1 * u(rng);
  sc.light_phase = 2 * M_PI * u(rng);
  // Donor faces come from a cooler palette than the target skin.
  constexpr double kDonorDirection[3] = {-0.5, -0.5, 1.0};
  for (int c = 0; c < 3; ++c) sc.donor_tint[c] = kSeamTint * kDonorDirection[c] * (0.6 + 0.4 * u(rng));
  for (auto& g : sc.donor_waves) g = random_grating(rng, 3.0, 8.0, s * 0.6, 0.05);
  sc.seam_jitter.resize(spec.frames_per_video);
  sc.flicker.resize(spec.frames_per_video);
  for (int t = 0; t < spec.frames_per_video; ++t) {
    sc.seam_jitter[t] = kSeamJitter * (2 * u(rng) - 1);
    sc.flicker[t] = kFlickerAmplitude * (2 * u(rng) - 1);
  }
  return sc;
}

struct FacePose {
  double cx, cy, rx, ry;
};

FacePose pose_at(const Scene& sc, int t) {
  return {sc.cx + sc.move_ax * std::sin(sc.move_w * t + sc.move_phase),
          sc.cy + sc.move_ay * std::cos(0.8 * sc.move_w * t + sc.move_phase), sc.rx, sc.ry};
}

// Normalised elliptical radius of pixel (x, y) relative to the face.
double ellipse_radius(const FacePose& p, double x, double y) {
  const double dx = (x - p.cx) / p.rx, dy = (y - p.cy) / p.ry;
  return std::sqrt(dx * dx + dy * dy);
}

double inner_mask(const FacePose& p, double x, double y, double scale) {
  const double r = ellipse_radius(p, x, y);
  const double edge = 1.0 / p.rx;  // roughly one pixel
  return 1.0 - smoothstep(scale - edge, scale + edge, r);
}

}  // namespace

std::string_view family_name(ForgeryFamily f) {
  switch (f) {
    case ForgeryFamily::seam: return "seam";
    case ForgeryFamily::flicker: return "flicker";
    case ForgeryFamily::checker: return "checker";
  }
  throw std::invalid_argument("unknown forgery family");
}

ForgeryFamily parse_family(std::string_view name) {
  if (name == "seam") return ForgeryFamily::seam;
  if (name == "flicker") return ForgeryFamily::flicker;
  if (name == "checker") return ForgeryFamily::checker;
  throw std::invalid_argument("unknown forgery family: " + std::string(name));
}

std::string_view style_name(DomainStyle s) {
  switch (s) {
    case DomainStyle::clean: return "clean";
    case DomainStyle::noisy: return "noisy";
    case DomainStyle::compressed: return "compressed";
  }
  throw std::invalid_argument("unknown domain style");
}

DomainStyle parse_style(std::string_view name) {
  if (name == "clean") return DomainStyle::clean;
  if (name == "noisy") return DomainStyle::noisy;
  if (name == "compressed") return DomainStyle::compressed;
  throw std::invalid_argument("unknown domain style: " + std::string(name));
}

void SyntheticSpec::validate() const {
  if (n_videos <= 0) throw std::invalid_argument("synthetic spec: n_videos must be positive");
  if (frames_per_video <= 0) throw std::invalid_argument("synthetic spec: frames_per_video must be positive");
  if (image_size < 8) throw std::invalid_argument("synthetic spec: image_size must be at least 8");
  if (!families.empty() && n_videos < 2)
    throw std::invalid_argument("synthetic spec: need at least 2 videos for a real/fake split");
  if (role == ManifestRole::pretrain && !families.empty())
    throw std::invalid_argument("synthetic spec: pretrain datasets must be real-only");
}

SyntheticVideoInfo synthetic_video_info(const SyntheticSpec& spec, int index) {
  char id[16];
  std::snprintf(id, sizeof(id), "_%04d", index);
  SyntheticVideoInfo info{spec.name + id, Label::real, std::nullopt};
  // Even indices are real, odd indices fake; fakes cycle through the families.
  if (!spec.families.empty() && index % 2 == 1) {
    info.label = Label::fake;
    info.family = spec.families[(index / 2) % spec.families.size()];
  }
  return info;
}

std::vector<float> synthetic_artifact_mask(const SyntheticSpec& spec, int index, int frame) {
  const Scene sc = make_scene(spec, index);
  const FacePose pose = pose_at(sc, frame);
  const int s = spec.image_size;
  std::vector<float> mask(static_cast<std::size_t>(s) * s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) mask[y * s + x] = static_cast<float>(inner_mask(pose, x + 0.5, y + 0.5, kInnerScale));
  return mask;
}

std::vector<RgbImage> render_synthetic_video(const SyntheticSpec& spec, int index) {
  spec.validate();
  const Scene sc = make_scene(spec, index);
  const SyntheticVideoInfo info = synthetic_video_info(spec, index);
  const int s = spec.image_size;
  // Style noise gets its own stream so that scene parameters do not depend on the style.
  Rng style_rng = video_rng(spec, index + 1000003);
  std::normal_distribution<double> noise(0.0, kNoisySigma);

  std::vector<RgbImage> frames;
  for (int t = 0; t < spec.frames_per_video; ++t) {
    RgbImage img;
    img.width = img.height = s;
    img.pixels.resize(static_cast<std::size_t>(s) * s * 3);
    const FacePose pose = pose_at(sc, t);
    const double light = 1.0 + 0.03 * std::sin(sc.light_w * t + sc.light_phase);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double r = ellipse_radius(pose, px, py);
        const double face_alpha = 1.0 - smoothstep(0.95, 1.05, r);
        const double fx = px - pose.cx, fy = py - pose.cy;  // face-attached coordinates
        double tex = 0;
        for (const auto& g : sc.face_waves) tex += g.at(fx, fy, t);
        // eyes and mouth
        const double ex = std::abs(fx) / pose.rx - 0.35, ey = fy / pose.ry + 0.2;
        const double eye = 1.0 - smoothstep(0.10, 0.16, std::sqrt(ex * ex + ey * ey));
        const double mouth = (1.0 - smoothstep(0.25, 0.3, std::abs(fx) / pose.rx)) *
                             (1.0 - smoothstep(0.04, 0.08, std::abs(fy / pose.ry - 0.5)));
        const double shade = 1.0 - 0.5 * std::max(eye, mouth);
        const double bgw = sc.bg_wave.at(px, py, t);

        double donor_mix = 0.0;
        double donor_tex = 0.0;
        if (info.family == ForgeryFamily::seam) {
          donor_mix = inner_mask(pose, px, py, kInnerScale + sc.seam_jitter[t]);
          for (const auto& g : sc.donor_waves) donor_tex += g.at(fx, fy, t);
        }
        const double inner = inner_mask(pose, px, py, kInnerScale);
        for (int c = 0; c < 3; ++c) {
          double face = (sc.skin[c] + tex) * shade;
          if (donor_mix > 0.0) {
            const double donor = (sc.skin[c] + sc.donor_tint[c] + donor_tex) * shade;
            face = (1.0 - donor_mix) * face + donor_mix * donor;
          }
          if (info.family == ForgeryFamily::flicker)
            face = (face + kFlickerTint * sc.donor_tint[c] * inner) * (1.0 + sc.flicker[t] * inner);
          if (info.family == ForgeryFamily::checker) face += kCheckerAmplitude * (((x + y) & 1) ? 1.0 : -1.0) * inner;
          const double v = light * (face_alpha * face + (1.0 - face_alpha) * (sc.bg[c] + bgw));
          img.pixels[(static_cast<std::size_t>(y) * s + x) * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    switch (spec.style) {
      case DomainStyle::clean: break;
      case DomainStyle::noisy:
        for (auto& v : img.pixels)
          v = static_cast<float>(std::clamp(std::pow(static_cast<double>(v), kNoisyGamma) + noise(style_rng), 0.0, 1.0));
        break;
      case DomainStyle::compressed:
        scale_contrast(img.pixels, kCompressedContrast);
        jpeg_roundtrip(img.pixels, s, s, kCompressedQuality);
        break;
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

DatasetManifest make_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir, int clip_length) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw std::runtime_error("cannot create output directory " + out_dir.string());

  std::vector<VideoRecord> records;
  for (int i = 0; i < spec.n_videos; ++i) {
    const SyntheticVideoInfo info = synthetic_video_info(spec, i);
    const fs::path dir = fs::absolute(out_dir) / info.video_id;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string());
    const auto frames = render_synthetic_video(spec, i);
    for (int t = 0; t < spec.frames_per_video; ++t) write_png(frame_file(dir, t), frames[t]);
    VideoRecord r;
    r.video_id = info.video_id;
    r.frames_path = dir;
    r.label = info.label;
    r.domain_tag = std::string(style_name(spec.style));
    if (info.family) r.method_tag = std::string(family_name(*info.family));
    r.frame_count = spec.frames_per_video;
    records.push_back(std::move(r));
  }
  const ManifestRole role = spec.role.value_or(spec.families.empty() ? ManifestRole::pretrain : ManifestRole::source);
  DatasetManifest manifest = DatasetManifest::make(spec.name, role, std::move(records), clip_length);
  save_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace last
