#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "last/losses.hpp"
#include "last/network.hpp"
#include "last/training.hpp"

namespace fs = std::filesystem;

namespace last::testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() /
          (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

DatasetManifest synthetic(const fs::path& dir, const std::string& name, std::vector<ForgeryFamily> families,
                          int n_videos, int frames, std::uint64_t seed, int clip_length, DomainStyle style) {
  SyntheticSpec spec;
  spec.name = name;
  spec.families = std::move(families);
  spec.n_videos = n_videos;
  spec.frames_per_video = frames;
  spec.seed = seed;
  spec.style = style;
  return make_synthetic_dataset(spec, dir, clip_length);
}

ModelConfig small_model(int clip_length) {
  ModelConfig c = ModelConfig::desk_reduced();
  c.clip_length = clip_length;
  return c;
}

FrameClip random_clip(const ModelConfig& config, std::uint64_t seed, const std::string& id) {
  FrameClip clip;
  clip.video_id = id;
  clip.length = config.clip_length;
  clip.height = clip.width = config.image_size;
  clip.pixels.resize(clip.frame_stride() * clip.length);
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : clip.pixels) v = u(rng);
  return clip;
}

Checkpoint randomized_checkpoint(const ModelConfig& config, std::uint64_t seed) {
  Checkpoint c = initial_checkpoint(config, seed);
  Rng rng(seed + 7777);
  std::normal_distribution<float> noise(0.0f, 0.1f);
  for (auto& t : c.params)
    if (t.group == Group::adaptive || t.group == Group::classifier) {
      for (auto& v : t.data) v += noise(rng);
    } else if (t.name.find("bias") != std::string::npos || t.name.find("beta") != std::string::npos) {
      for (auto& v : t.data) v += 0.1f * noise(rng);
    }
  return c;
}

// ---- metric oracles -------------------------------------------------------------

double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double concordant = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) concordant += 1.0;
      else if (scores[i] == scores[j]) concordant += 0.5;
    }
  }
  return 100.0 * concordant / static_cast<double>(pairs);
}

double grid_eer(const std::vector<int>& thousandths, const std::vector<int>& labels) {
  const double n_real = static_cast<double>(std::count(labels.begin(), labels.end(), 0));
  const double n_fake = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double prev_fpr = 0, prev_fnr = 0, prev_d = 0;
  bool have_prev = false;
  for (int k = 0; k <= 10001; ++k) {
    // threshold k * 1e-4; score s/1000 >= k/10000  <=>  10 s >= k
    double fp = 0, fn = 0;
    for (std::size_t i = 0; i < thousandths.size(); ++i) {
      const bool fake = 10 * thousandths[i] >= k;
      if (labels[i] == 0 && fake) fp += 1;
      if (labels[i] == 1 && !fake) fn += 1;
    }
    const double fpr = fp / n_real, fnr = fn / n_fake, d = fpr - fnr;
    if (have_prev && prev_d > 0 && d <= 0) {
      const double a = prev_d / (prev_d - d);
      return 100.0 * (prev_fpr + a * (fpr - prev_fpr));
    }
    prev_fpr = fpr;
    prev_fnr = fnr;
    prev_d = d;
    have_prev = true;
  }
  return 100.0 * prev_fpr;
}

// ---- gradient checks ---------------------------------------------------------------

namespace {

using Net = Network<double>;

struct Coordinate {
  std::size_t tensor;
  std::size_t index;
};

std::vector<Coordinate> sample_coordinates(const ParameterStore<double>& store, Group group, int count, Rng& rng) {
  std::vector<std::size_t> tensors;
  std::vector<double> weights;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store[i].group == group && store[i].size() > 0) {
      tensors.push_back(i);
      // Square-root weighting keeps small tensors (biases, norms) represented.
      weights.push_back(std::sqrt(static_cast<double>(store[i].size())));
    }
  std::discrete_distribution<std::size_t> pick_tensor(weights.begin(), weights.end());
  std::vector<Coordinate> out;
  for (int k = 0; k < count; ++k) {
    const std::size_t t = tensors[pick_tensor(rng)];
    std::uniform_int_distribution<std::size_t> pick_index(0, store[t].size() - 1);
    out.push_back({t, pick_index(rng)});
  }
  return out;
}

template <typename Loss>
GradCheckStats compare(Net& net, const ParameterStore<double>& analytic, Group group, Loss&& loss,
                       const GradCheckOptions& options, Rng& rng) {
  GradCheckStats stats;
  // Oversample so kinked coordinates can be replaced.
  auto coords = sample_coordinates(net.params(), group, 8 * options.coords_per_group, rng);
  const double h = options.step;
  struct Probe {
    double central, asymmetry;
  };
  auto probe = [&](const Coordinate& c, double step, double base) {
    double& p = net.params()[c.tensor].data[c.index];
    const double saved = p;
    p = saved + step;
    const double up = loss(net);
    p = saved - step;
    const double down = loss(net);
    p = saved;
    return Probe{(up - down) / (2 * step), (up + down - 2 * base) / step};
  };
  const double base = loss(net);
  for (const auto& c : coords) {
    if (stats.checked >= options.coords_per_group) break;
    const Probe full = probe(c, h, base);
    const Probe half = probe(c, h / 2, base);
    const double fd = full.central;
    const double scale = std::max({std::abs(fd), std::abs(half.central), 1e-6});
    // On a smooth stretch central differences agree across step sizes to
    // O(h^2) and the forward/backward asymmetry shrinks linearly with the
    // step. A ReLU or L1 kink inside the interval breaks the first; a kink at
    // the base point itself leaves a step-independent asymmetry.
    if (std::abs(fd - half.central) > 1e-4 * scale ||
        std::abs(full.asymmetry - 2 * half.asymmetry) > 1e-4 * scale) {
      ++stats.skipped_kinks;
      continue;
    }
    const double a = analytic[c.tensor].data[c.index];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
    ++stats.checked;
    if (rel > stats.max_rel_error) {
      stats.max_rel_error = rel;
      stats.worst = net.params()[c.tensor].qualified_name() + "[" + std::to_string(c.index) + "] analytic " +
                    std::to_string(a) + " numeric " + std::to_string(fd);
    }
  }
  return stats;
}

}  // namespace

std::vector<std::pair<Group, GradCheckStats>> check_init_gradients(const ModelConfig& config, bool detached,
                                                                   const GradCheckOptions& options) {
  const double lambda1 = 1.0, lambda2 = 0.5, tau = 0.5, eps = 1e-8;
  Net net(config, randomized_checkpoint(config, options.seed).params.cast<double>());
  std::vector<FrameClip> clips;
  std::vector<std::string> ids{"a", "a", "b", "b"};
  for (std::size_t i = 0; i < ids.size(); ++i) clips.push_back(random_clip(config, options.seed * 31 + i, ids[i]));

  std::vector<SpatialFeatureSequence<double>> fixed_targets;
  for (const auto& clip : clips) fixed_targets.push_back(net.backbone(clip, false).features);

  auto loss = [&](const Net& m) {
    std::vector<RowVector<double>> zs;
    double rec = 0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      auto tr = m.backbone(clips[i], false);
      zs.push_back(tr.z);
      rec += reconstruction_loss(m.reconstruct(tr.z), detached ? fixed_targets[i] : tr.features);
    }
    rec /= static_cast<double>(clips.size());
    return init_loss(contrastive_loss(zs, ids, tau, eps), rec, lambda1, lambda2);
  };

  // Analytic gradient, mirroring the training step.
  ParameterStore<double> grads = net.params().zeros_like();
  std::vector<Net::BackboneTrace> traces;
  std::vector<RowVector<double>> zs, d_z;
  for (const auto& clip : clips) {
    traces.push_back(net.backbone(clip, true));
    zs.push_back(traces.back().z);
  }
  contrastive_loss(zs, ids, tau, eps, &d_z);
  const double rec_scale = lambda2 / static_cast<double>(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Net::ReconstructorTrace rt;
    const auto reconstruction = net.reconstruct(zs[i], &rt);
    Matrix<double> d_rec;
    reconstruction_loss(reconstruction, detached ? fixed_targets[i] : traces[i].features, &d_rec);
    d_rec *= rec_scale;
    RowVector<double> dz = lambda1 * d_z[i] + net.reconstruct_backward(rt, d_rec, grads);
    Matrix<double> d_target = -d_rec;
    net.backbone_backward(traces[i], dz, detached ? nullptr : &d_target, grads);
  }

  Rng rng(options.seed);
  std::vector<std::pair<Group, GradCheckStats>> out;
  for (Group g : trainable_groups(Phase::pretrain)) out.emplace_back(g, compare(net, grads, g, loss, options, rng));
  return out;
}

std::vector<std::pair<Group, GradCheckStats>> check_last_gradients(const ModelConfig& config, double lambda,
                                                                   const GradCheckOptions& options) {
  Net net(config, randomized_checkpoint(config, options.seed).params.cast<double>());
  struct Sample {
    RowVector<double> z;
    SpatialFeatureSequence<double> features;
  };
  std::vector<Sample> source, target;
  const std::vector<int> labels{0, 1, 1};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto tr = net.backbone(random_clip(config, options.seed * 17 + i), false);
    source.push_back({tr.z, tr.features});
  }
  for (std::size_t i = 0; i < 2; ++i) {
    auto tr = net.backbone(random_clip(config, options.seed * 19 + 100 + i), false);
    target.push_back({tr.z, tr.features});
  }

  auto loss = [&](const Net& m) {
    Matrix<double> logits(static_cast<Eigen::Index>(source.size()), 2);
    for (std::size_t i = 0; i < source.size(); ++i)
      logits.row(static_cast<Eigen::Index>(i)) = m.classify(m.adapt_project(source[i].z));
    double rec = 0;
    for (const auto& t : target) rec += reconstruction_loss(m.reconstruct(m.adapt_project(t.z)), t.features);
    rec /= static_cast<double>(target.size());
    return last_loss(classification_loss(logits, labels), rec, lambda);
  };

  ParameterStore<double> grads = net.params().zeros_like();
  Matrix<double> logits(static_cast<Eigen::Index>(source.size()), 2);
  std::vector<RowVector<double>> hs;
  for (std::size_t i = 0; i < source.size(); ++i) {
    hs.push_back(net.adapt_project(source[i].z));
    logits.row(static_cast<Eigen::Index>(i)) = net.classify(hs.back());
  }
  Matrix<double> d_logits;
  classification_loss(logits, labels, &d_logits);
  for (std::size_t i = 0; i < source.size(); ++i) {
    RowVector<double> d_h = net.classify_backward(hs[i], lambda * d_logits.row(static_cast<Eigen::Index>(i)), grads);
    net.adapt_backward(source[i].z, d_h, grads);
  }
  const double scale = (1.0 - lambda) / static_cast<double>(target.size());
  for (const auto& t : target) {
    Net::ReconstructorTrace rt;
    const auto reconstruction = net.reconstruct(net.adapt_project(t.z), &rt);
    Matrix<double> d_rec;
    reconstruction_loss(reconstruction, t.features, &d_rec);
    d_rec *= scale;
    net.adapt_backward(t.z, net.reconstruct_backward(rt, d_rec, grads), grads);
  }

  Rng rng(options.seed);
  std::vector<std::pair<Group, GradCheckStats>> out;
  for (Group g : trainable_groups(Phase::adapt)) out.emplace_back(g, compare(net, grads, g, loss, options, rng));
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::pair<std::string, std::string>> read_tree(const fs::path& dir, const std::string& extension) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == extension)
      out.emplace_back(fs::relative(e.path(), dir).string(), read_file(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace last::testing
