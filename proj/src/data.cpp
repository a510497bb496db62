#include "last/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "last/image_io.hpp"

namespace fs = std::filesystem;

namespace last {

std::string_view role_name(ManifestRole role) {
  switch (role) {
    case ManifestRole::source: return "source";
    case ManifestRole::target: return "target";
    case ManifestRole::pretrain: return "pretrain";
    case ManifestRole::eval: return "eval";
  }
  throw std::invalid_argument("unknown manifest role");
}

ManifestRole parse_role(std::string_view name) {
  if (name == "source") return ManifestRole::source;
  if (name == "target") return ManifestRole::target;
  if (name == "pretrain") return ManifestRole::pretrain;
  if (name == "eval") return ManifestRole::eval;
  throw std::invalid_argument("unknown manifest role: " + std::string(name));
}

DatasetManifest DatasetManifest::make(std::string name, ManifestRole role, std::vector<VideoRecord> records,
                                      int clip_length) {
  if (clip_length <= 0) throw std::invalid_argument("clip length must be positive");
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.video_id).second) throw std::invalid_argument("duplicate video_id '" + r.video_id + "'");
    if (r.frame_count <= 0) throw std::invalid_argument("video '" + r.video_id + "' has no frames");
    if (r.frame_count < clip_length)
      throw std::invalid_argument("video '" + r.video_id + "' is too short for clip length " +
                                  std::to_string(clip_length) + " (" + std::to_string(r.frame_count) +
                                  " frames)");
    if (role == ManifestRole::pretrain && r.label != Label::real)
      throw std::invalid_argument("pretrain must be real-only: video '" + r.video_id + "' is not labeled real");
    if (role == ManifestRole::source && !r.label)
      throw std::invalid_argument("source manifest requires labels: video '" + r.video_id + "' is unlabeled");
  }
  DatasetManifest m;
  m.name_ = std::move(name);
  m.role_ = role;
  m.records_ = std::move(records);
  return m;
}

fs::path frame_file(const fs::path& frames_path, int index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.png", index);
  return frames_path / name;
}

int count_frames_on_disk(const fs::path& frames_path) {
  std::error_code ec;
  if (!fs::is_directory(frames_path, ec)) return 0;
  int count = 0;
  for (const auto& entry : fs::directory_iterator(frames_path, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.size() == 10 && name.ends_with(".png") &&
        std::all_of(name.begin(), name.begin() + 6, [](char ch) { return ch >= '0' && ch <= '9'; }))
      ++count;
  }
  return count;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, int clip_length, std::optional<ManifestRole> role) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest not found: " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  std::string name = path.stem().string();
  ManifestRole file_role = ManifestRole::eval;
  std::vector<VideoRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key, value;
      ss >> key >> value;
      if (key == "name" && !value.empty()) name = value;
      else if (key == "role" && !value.empty()) file_role = parse_role(value);
      continue;
    }
    auto f = split_tabs(line);
    if (f.size() != 6)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 6 tab-separated fields");
    VideoRecord r;
    r.video_id = f[0];
    r.frames_path = fs::path(f[1]).is_absolute() ? fs::path(f[1]) : base / f[1];
    if (f[2] == "0") r.label = Label::real;
    else if (f[2] == "1") r.label = Label::fake;
    else if (f[2] != "-")
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": label must be 0, 1 or -");
    r.domain_tag = f[3];
    if (f[4] != "-") r.method_tag = f[4];
    try {
      r.frame_count = std::stoi(f[5]);
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad frame_count");
    }
    const int on_disk = count_frames_on_disk(r.frames_path);
    if (on_disk != r.frame_count)
      throw std::runtime_error("frame_count mismatch for '" + r.video_id + "': manifest says " +
                               std::to_string(r.frame_count) + ", found " + std::to_string(on_disk) + " in " +
                               r.frames_path.string());
    records.push_back(std::move(r));
  }
  return DatasetManifest::make(name, role.value_or(file_role), std::move(records), clip_length);
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  out << "#name " << manifest.name() << "\n";
  out << "#role " << role_name(manifest.role()) << "\n";
  for (const auto& r : manifest.records()) {
    fs::path p = r.frames_path;
    fs::path rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") p = rel;
    out << r.video_id << '\t' << p.generic_string() << '\t'
        << (r.label ? std::to_string(static_cast<int>(*r.label)) : std::string("-")) << '\t' << r.domain_tag << '\t'
        << r.method_tag.value_or("-") << '\t' << r.frame_count << '\n';
  }
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
}

FrameClip load_clip(const VideoRecord& record, int offset, int length) {
  if (length <= 0) throw std::invalid_argument("clip length must be positive");
  if (offset < 0 || offset + length > record.frame_count)
    throw std::invalid_argument("clip [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                                ") outside video '" + record.video_id + "'");
  FrameClip clip;
  clip.video_id = record.video_id;
  clip.offset = offset;
  clip.length = length;
  for (int i = 0; i < length; ++i) {
    RgbImage img = read_png(frame_file(record.frames_path, offset + i));
    if (i == 0) {
      clip.height = img.height;
      clip.width = img.width;
      clip.pixels.resize(clip.frame_stride() * length);
    } else if (img.height != clip.height || img.width != clip.width) {
      throw std::runtime_error("frame size changes within video '" + record.video_id + "'");
    }
    std::copy(img.pixels.begin(), img.pixels.end(), clip.frame(i));
  }
  return clip;
}

int sample_offset(const VideoRecord& record, int n, Rng& rng) {
  if (n <= 0) throw std::invalid_argument("clip length must be positive");
  if (record.frame_count < n)
    throw std::invalid_argument("video '" + record.video_id + "' is too short for clip length " + std::to_string(n));
  std::uniform_int_distribution<int> dist(0, record.frame_count - n);
  return dist(rng);
}

FrameClip sample_clip(const VideoRecord& record, int n, Rng& rng) {
  const int offset = sample_offset(record, n, rng);
  return load_clip(record, offset, n);
}

std::pair<int, int> sample_pair_offsets(const VideoRecord& record, int n, Rng& rng) {
  if (n <= 0) throw std::invalid_argument("clip length must be positive");
  if (record.frame_count < n + 1)
    throw std::invalid_argument("video '" + record.video_id + "' is too short to yield two distinct offsets for clip length " +
                                std::to_string(n));
  const int last = record.frame_count - n;
  const int a = std::uniform_int_distribution<int>(0, last)(rng);
  int b = std::uniform_int_distribution<int>(0, last - 1)(rng);
  if (b >= a) ++b;
  return {a, b};
}

std::pair<FrameClip, FrameClip> sample_positive_pair(const VideoRecord& record, int n, Rng& rng) {
  auto [a, b] = sample_pair_offsets(record, n, rng);
  return {load_clip(record, a, n), load_clip(record, b, n)};
}

AdaptationPool::AdaptationPool(std::vector<VideoRecord> source, std::vector<UnlabeledVideo> target,
                               double target_ratio, std::vector<std::string> warnings)
    : source_(std::move(source)), target_(std::move(target)), target_ratio_(target_ratio),
      warnings_(std::move(warnings)) {}

AdaptationPool build_adaptation_pool(const DatasetManifest& source, const DatasetManifest& target,
                                     double target_ratio, Rng& rng) {
  if (source.empty()) throw std::invalid_argument("adaptation pool: source manifest is empty");
  if (target.empty()) throw std::invalid_argument("adaptation pool: target manifest is empty");
  if (!(target_ratio > 0.0 && target_ratio <= 1.0))
    throw std::invalid_argument("adaptation pool: target_ratio must lie in (0, 1]");
  for (const auto& r : source.records())
    if (!r.label) throw std::invalid_argument("adaptation pool: source video '" + r.video_id + "' is unlabeled");

  // Guard against 0.1 * 30 = 3.0000000000000004 rounding up to 4.
  std::size_t wanted = static_cast<std::size_t>(std::ceil(target_ratio * source.size() - 1e-9));
  wanted = std::max<std::size_t>(wanted, 1);
  std::vector<std::string> warnings;
  if (wanted > target.size()) {
    warnings.push_back("target pool capped at " + std::to_string(target.size()) + " videos (wanted " +
                       std::to_string(wanted) + ")");
    std::cerr << "[warn] " << warnings.back() << "\n";
    wanted = target.size();
  }
  std::vector<std::size_t> order(target.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(wanted);
  std::sort(order.begin(), order.end());

  std::vector<UnlabeledVideo> picked;
  for (std::size_t i : order) {
    const auto& r = target[i];
    picked.push_back({r.video_id, r.frames_path, r.domain_tag, r.frame_count});
  }
  return AdaptationPool(source.records(), std::move(picked), target_ratio, std::move(warnings));
}

std::vector<int> evenly_spaced_offsets(int frame_count, int n, int count) {
  if (n <= 0) throw std::invalid_argument("clip length must be positive");
  if (count <= 0) throw std::invalid_argument("clip count must be positive");
  if (frame_count < n) throw std::invalid_argument("video too short for clip length " + std::to_string(n));
  const int last = frame_count - n;
  std::vector<int> offsets(count);
  if (count == 1) {
    offsets[0] = last / 2;
    return offsets;
  }
  for (int k = 0; k < count; ++k)
    offsets[k] = static_cast<int>(std::lround(static_cast<double>(k) * last / (count - 1)));
  return offsets;
}

}  // namespace last
