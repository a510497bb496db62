#include "last/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "last/hash.hpp"
#include "last/image_io.hpp"
#include "last/losses.hpp"

namespace fs = std::filesystem;

namespace last {

double aggregate_clip_scores(const std::vector<double>& clip_scores) {
  if (clip_scores.empty()) throw std::invalid_argument("no clip scores to aggregate");
  return std::accumulate(clip_scores.begin(), clip_scores.end(), 0.0) / static_cast<double>(clip_scores.size());
}

FrameClip perturb_for_evaluation(const FrameClip& clip, const Perturbation& p) {
  const std::string key = clip.video_id + "|" + std::to_string(clip.offset) + "|" + p.to_string();
  Sha256 h;
  h.update(key);
  const auto d = h.digest();
  std::seed_seq seq(d.begin(), d.begin() + 16);
  Rng rng(seq);
  return apply_perturbation(clip, p, rng);
}

double clip_score(const Network<float>& net, const FrameClip& clip) {
  const auto trace = net.backbone(clip, false);
  return static_cast<double>(fake_probability<float>(net.classify(net.adapt_project(trace.z))));
}

VideoScore score_video(const Network<float>& net, const VideoRecord& record, int n_eval_clips,
                       const std::optional<Perturbation>& perturbation) {
  const int n = net.config().clip_length;
  if (record.frame_count < n)
    throw std::invalid_argument("video '" + record.video_id + "' is too short for clip length " + std::to_string(n));
  if (n_eval_clips < 1) throw std::invalid_argument("need at least one evaluation clip");
  VideoScore s;
  s.video_id = record.video_id;
  s.label = record.label;
  for (int offset : evenly_spaced_offsets(record.frame_count, n, n_eval_clips)) {
    FrameClip clip = load_clip(record, offset, n);
    if (perturbation) clip = perturb_for_evaluation(clip, *perturbation);
    s.clip_scores.push_back(clip_score(net, clip));
  }
  s.score = aggregate_clip_scores(s.clip_scores);
  return s;
}

std::vector<VideoScore> score_manifest(const Network<float>& net, const DatasetManifest& manifest, int n_eval_clips,
                                       const std::optional<Perturbation>& perturbation) {
  if (manifest.empty()) throw std::invalid_argument("evaluation manifest '" + manifest.name() + "' is empty");
  std::vector<VideoScore> out;
  out.reserve(manifest.size());
  for (const auto& r : manifest.records()) out.push_back(score_video(net, r, n_eval_clips, perturbation));
  return out;
}

MetricsReport compute_metrics(const std::vector<VideoScore>& scores, std::string protocol) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& v : scores) {
    if (!v.label) continue;
    s.push_back(v.score);
    y.push_back(static_cast<int>(*v.label));
  }
  if (s.empty()) throw std::invalid_argument("no labeled videos to evaluate");
  return compute_metrics(s, y, std::move(protocol));
}

MetricsReport evaluate(const Checkpoint& checkpoint, const DatasetManifest& manifest, std::string protocol,
                       int n_eval_clips, const std::optional<Perturbation>& perturbation) {
  Network<float> net(checkpoint.config, checkpoint.params);
  auto report = compute_metrics(score_manifest(net, manifest, n_eval_clips, perturbation), std::move(protocol));
  if (perturbation) report.perturbation = perturbation->to_string();
  return report;
}

namespace {

std::string label_text(const std::optional<Label>& l) {
  if (!l) return "-";
  return *l == Label::fake ? "1" : "0";
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(9);
  return out;
}

}  // namespace

void write_scores(const std::vector<VideoScore>& scores, const fs::path& path) {
  auto out = open_output(path);
  out << "video_id\tlabel\tscore\tclip_scores\n";
  for (const auto& s : scores) {
    out << s.video_id << "\t" << label_text(s.label) << "\t" << s.score << "\t";
    for (std::size_t i = 0; i < s.clip_scores.size(); ++i) out << (i ? "," : "") << s.clip_scores[i];
    out << "\n";
  }
}

EmbeddingLayer parse_layer(std::string_view name) {
  if (name == "z") return EmbeddingLayer::z;
  if (name == "h") return EmbeddingLayer::h;
  throw std::invalid_argument("unknown embedding layer '" + std::string(name) + "' (expected z or h)");
}

std::vector<EmbeddingRow> compute_embeddings(const Network<float>& net, const DatasetManifest& manifest,
                                             EmbeddingLayer layer, int n_eval_clips) {
  const int n = net.config().clip_length;
  std::vector<EmbeddingRow> rows;
  for (const auto& r : manifest.records()) {
    RowVector<float> sum = RowVector<float>::Zero(net.config().token_dim);
    const auto offsets = evenly_spaced_offsets(r.frame_count, n, n_eval_clips);
    for (int offset : offsets) {
      const auto z = net.backbone(load_clip(r, offset, n), false).z;
      sum += layer == EmbeddingLayer::z ? z : net.adapt_project(z);
    }
    sum /= static_cast<float>(offsets.size());
    rows.push_back({r.video_id, r.label, r.domain_tag, r.method_tag, std::vector<float>(sum.data(), sum.data() + sum.size())});
  }
  return rows;
}

void write_embeddings(const std::vector<EmbeddingRow>& rows, const fs::path& path) {
  auto out = open_output(path);
  out << "video_id\tlabel\tdomain\tmethod";
  const std::size_t d = rows.empty() ? 0 : rows.front().values.size();
  for (std::size_t k = 0; k < d; ++k) out << "\te" << k;
  out << "\n";
  for (const auto& r : rows) {
    out << r.video_id << "\t" << label_text(r.label) << "\t" << r.domain_tag << "\t" << r.method_tag.value_or("-");
    for (float v : r.values) out << "\t" << v;
    out << "\n";
  }
}

SaliencyMap saliency_map(const Network<float>& net, const FrameClip& clip, int target_class) {
  if (target_class < 0 || target_class >= net.config().n_classes)
    throw std::invalid_argument("target class out of range");
  const auto trace = net.backbone(clip, true);
  ParameterStore<float> scratch = net.params().zeros_like();
  const RowVector<float> h = net.adapt_project(trace.z);
  RowVector<float> d_logits = RowVector<float>::Zero(net.config().n_classes);
  d_logits(target_class) = 1.0f;
  const RowVector<float> d_h = net.classify_backward(h, d_logits, scratch);
  const RowVector<float> d_z = net.adapt_backward(trace.z, d_h, scratch);
  const Matrix<float> d_t = net.backbone_backward(trace, d_z, nullptr, scratch, false);

  const auto& t = trace.features;
  const int cells = t.grid * t.grid;
  SaliencyMap map;
  map.frames = t.frames;
  map.grid = t.grid;
  map.values.assign(static_cast<std::size_t>(t.frames) * cells, 0.0f);
  for (int f = 0; f < t.frames; ++f) {
    const auto rows = Eigen::seqN(f * cells, cells);
    const RowVector<float> alpha = d_t(rows, Eigen::all).colwise().mean();
    const Eigen::VectorXf cam = (t.values(rows, Eigen::all) * alpha.transpose()).cwiseMax(0.0f);
    std::copy(cam.data(), cam.data() + cells, map.values.begin() + static_cast<std::ptrdiff_t>(f) * cells);
  }
  const float mx = *std::max_element(map.values.begin(), map.values.end());
  if (mx > 0)
    for (float& v : map.values) v /= mx;
  return map;
}

void write_saliency(const SaliencyMap& map, const FrameClip& clip, const fs::path& tsv_path, const fs::path& png_path) {
  auto out = open_output(tsv_path);
  out << "frame\ty\tx\tvalue\n";
  for (int f = 0; f < map.frames; ++f)
    for (int y = 0; y < map.grid; ++y)
      for (int x = 0; x < map.grid; ++x) out << f << "\t" << y << "\t" << x << "\t" << map.at(f, y, x) << "\n";

  // Frames side by side; heat (red) blended over the grayscale frame.
  RgbImage img;
  img.width = clip.width * clip.length;
  img.height = clip.height;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0.0f);
  for (int f = 0; f < clip.length && f < map.frames; ++f)
    for (int y = 0; y < clip.height; ++y)
      for (int x = 0; x < clip.width; ++x) {
        const float gray = (clip.at(f, y, x, 0) + clip.at(f, y, x, 1) + clip.at(f, y, x, 2)) / 3.0f;
        const float heat = map.at(f, std::min(map.grid - 1, y * map.grid / clip.height),
                                  std::min(map.grid - 1, x * map.grid / clip.width));
        float* px = &img.pixels[(static_cast<std::size_t>(y) * img.width + f * clip.width + x) * 3];
        px[0] = 0.5f * gray + 0.5f * heat;
        px[1] = 0.5f * gray;
        px[2] = 0.5f * gray * (1.0f - heat);
      }
  write_png(png_path, img);
}

}  // namespace last
