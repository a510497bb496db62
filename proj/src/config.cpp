#include "last/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace last {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const std::set<std::string> kDatasetFields = {"families", "style", "n_videos", "frames", "seed", "image_size", "role"};

bool is_dataset_key(const std::string& key) {
  if (!key.starts_with("dataset.")) return false;
  const auto dot = key.rfind('.');
  return dot > 8 && kDatasetFields.count(key.substr(dot + 1)) > 0;
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"run.seed", "0", "global seed (initialization, sampling)"},
      {"run.output", "runs/last", "output directory of a command or protocol run"},
      {"run.data_dir", "", "where synthetic datasets are generated (default: <output>/data)"},
      {"model.preset", "desk-reduced", "network size preset: desk-reduced or paper-default"},
      {"model.clip_length", "", "frames per clip n (default from preset)"},
      {"model.image_size", "", "frame side in pixels (default from preset)"},
      {"model.encoder_channels", "", "three comma-separated conv widths (default from preset)"},
      {"model.feature_grid", "", "feature grid side g (default from preset)"},
      {"model.token_dim", "", "token and representation width d_z (default from preset)"},
      {"model.blocks", "", "transformer blocks K (default from preset)"},
      {"model.heads", "", "attention heads (default from preset)"},
      {"model.mlp_ratio", "", "MLP hidden width / d_z (default from preset)"},
      {"model.n_classes", "", "classifier outputs (default from preset)"},
      {"init.identity_adaptive", "true", "start the adaptive layer as the identity map"},
      {"optim.lr", "5e-4", "peak Adam learning rate"},
      {"optim.weight_decay", "1e-4", "L2 weight decay"},
      {"optim.warmup_floor", "1e-5", "learning rate at the first warm-up step"},
      {"optim.warmup_fraction", "0.05", "fraction of steps spent warming up linearly"},
      {"optim.beta1", "0.9", "Adam first-moment decay"},
      {"optim.beta2", "0.999", "Adam second-moment decay"},
      {"optim.eps", "1e-8", "Adam epsilon"},
      {"pretrain.lambda1", "1.0", "weight of the contrastive loss"},
      {"pretrain.lambda2", "0.5", "weight of the reconstruction loss"},
      {"pretrain.tau", "0.5", "contrastive temperature"},
      {"pretrain.eps", "1e-8", "cosine similarity clamp"},
      {"pretrain.videos_per_batch", "32", "videos per batch M (two clips each)"},
      {"pretrain.epochs", "100", "pretraining epochs"},
      {"pretrain.detach_target", "true", "block gradients through the reconstruction target"},
      {"pretrain.collapse_threshold", "0.95", "warn when mean inter-video cosine similarity exceeds this"},
      {"adapt.lambda", "0.5", "weight of the classification loss (1 - lambda on reconstruction)"},
      {"adapt.epochs", "10", "adaptation epochs"},
      {"adapt.source_batch", "64", "labeled source clips per step"},
      {"adapt.target_batch", "8", "unlabeled target clips per step"},
      {"adapt.target_ratio", "0.1", "target videos drawn per source video"},
      {"adapt.allow_any_phase", "false", "accept input checkpoints that were not pretrained"},
      {"eval.clips", "4", "evenly spaced clips averaged per video"},
      {"data.pretrain", "", "real-only pretraining set: manifest path or dataset name"},
      {"data.source", "", "labeled source set: manifest path or dataset name"},
      {"data.target", "", "unlabeled target set: manifest path or dataset name"},
      {"data.eval", "", "comma-separated evaluation sets: manifest paths or dataset names"},
      {"protocol.kind", "standard", "standard, ablation, robustness or data-scale"},
      {"protocol.seeds", "0", "comma-separated seeds; one full run per seed"},
      {"protocol.variants", "last", "comma-separated training variants: last, source-only"},
      {"protocol.fractions", "0,0.5,1", "data-scale: fractions of the pretraining set"},
      {"synth.name", "synthetic", "synthetic dataset name (video id prefix)"},
      {"synth.n_videos", "10", "synthetic videos (even indices real, odd fake)"},
      {"synth.frames", "24", "frames per synthetic video"},
      {"synth.families", "seam", "comma-separated forgery families (seam, flicker, checker); empty for real-only"},
      {"synth.style", "clean", "domain style: clean, noisy or compressed"},
      {"synth.seed", "0", "generator seed"},
      {"synth.image_size", "64", "frame side in pixels"},
      {"synth.role", "", "manifest role (default: pretrain when real-only, else source)"},
  };
  return schema;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Config::Config() {
  for (const auto& k : config_schema()) values_[k.key] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!values_.count(key) && !is_dataset_key(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  values_[key] = value;
}

void Config::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      assign(line);
    } catch (const std::exception& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void Config::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

bool Config::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

int Config::get_int(const std::string& key) const {
  const auto v = get_int64(key);
  if (v < INT32_MIN || v > INT32_MAX) throw std::invalid_argument(key + " is out of range");
  return static_cast<int>(v);
}

std::int64_t Config::get_int64(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument(key + " must be an integer, got '" + v + "'");
  return out;
}

double Config::get_double(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument(key + " must be a number, got '" + v + "'");
  return out;
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + " must be true or false, got '" + v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key) const { return split_list(get(key)); }

std::string Config::to_string() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

void Config::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_string();
}

ModelConfig Config::model() const {
  const std::string& preset = get("model.preset");
  ModelConfig base;
  if (preset == "desk-reduced") base = ModelConfig::desk_reduced();
  else if (preset == "paper-default") base = ModelConfig::paper_default();
  else throw std::invalid_argument("unknown model.preset '" + preset + "' (expected desk-reduced or paper-default)");
  auto pairs = base.to_pairs();
  for (auto& [k, v] : pairs)
    if (has(k)) v = get(k);
  ModelConfig c;
  try {
    c = ModelConfig::from_pairs(pairs);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("invalid model setting: ") + e.what());
  }
  c.validate();
  return c;
}

AdamConfig Config::optimizer() const {
  AdamConfig a;
  a.lr = get_double("optim.lr");
  a.weight_decay = get_double("optim.weight_decay");
  a.warmup_floor = get_double("optim.warmup_floor");
  a.warmup_fraction = get_double("optim.warmup_fraction");
  a.beta1 = get_double("optim.beta1");
  a.beta2 = get_double("optim.beta2");
  a.eps = get_double("optim.eps");
  a.validate();
  return a;
}

PretrainConfig Config::pretrain() const {
  PretrainConfig p;
  p.lambda1 = get_double("pretrain.lambda1");
  p.lambda2 = get_double("pretrain.lambda2");
  p.tau = get_double("pretrain.tau");
  p.eps = get_double("pretrain.eps");
  p.videos_per_batch = get_int("pretrain.videos_per_batch");
  p.epochs = get_int("pretrain.epochs");
  p.detach_target = get_bool("pretrain.detach_target");
  p.collapse_threshold = get_double("pretrain.collapse_threshold");
  p.optimizer = optimizer();
  p.seed = static_cast<std::uint64_t>(get_int64("run.seed"));
  p.validate();
  return p;
}

AdaptConfig Config::adapt() const {
  AdaptConfig a;
  a.lambda = get_double("adapt.lambda");
  a.epochs = get_int("adapt.epochs");
  a.source_batch = get_int("adapt.source_batch");
  a.target_batch = get_int("adapt.target_batch");
  a.allow_any_phase = get_bool("adapt.allow_any_phase");
  a.optimizer = optimizer();
  a.seed = static_cast<std::uint64_t>(get_int64("run.seed"));
  a.validate();
  return a;
}

InitOptions Config::init_options() const { return {get_bool("init.identity_adaptive")}; }

std::vector<std::string> Config::dataset_names() const {
  std::vector<std::string> names;
  for (const auto& [k, v] : values_) {
    if (!is_dataset_key(k)) continue;
    std::string name = k.substr(8, k.rfind('.') - 8);
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  }
  return names;
}

bool Config::has_dataset(const std::string& name) const {
  const auto names = dataset_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

SyntheticSpec Config::dataset(const std::string& name) const {
  if (!has_dataset(name)) throw std::invalid_argument("no dataset." + name + ".* settings");
  auto field = [&](const std::string& f) -> std::optional<std::string> {
    auto it = values_.find("dataset." + name + "." + f);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  };
  auto integer = [&](const std::string& f, int fallback) {
    auto v = field(f);
    if (!v) return fallback;
    try {
      return std::stoi(*v);
    } catch (const std::exception&) {
      throw std::invalid_argument("dataset." + name + "." + f + " must be an integer, got '" + *v + "'");
    }
  };
  SyntheticSpec s;
  s.name = name;
  s.n_videos = integer("n_videos", s.n_videos);
  s.frames_per_video = integer("frames", s.frames_per_video);
  s.image_size = integer("image_size", s.image_size);
  if (auto v = field("seed")) s.seed = std::stoull(*v);
  if (auto v = field("families"))
    for (const auto& f : split_list(*v)) s.families.push_back(parse_family(f));
  if (auto v = field("style")) s.style = parse_style(*v);
  if (auto v = field("role"); v && !v->empty()) s.role = parse_role(*v);
  s.validate();
  return s;
}

}  // namespace last
