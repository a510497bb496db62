#include "last/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "last/evaluation.hpp"
#include "last/losses.hpp"

namespace last {
namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

void require_finite(double v, const std::string& what, const std::string& where) {
  if (!std::isfinite(v)) throw std::runtime_error("non-finite " + what + " (" + fmt(v) + ") at " + where);
}

/// Splits shuffled video indices into batches of at most `m` videos, each
/// holding at least two.
std::vector<std::vector<std::size_t>> pretrain_batches(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t nb = std::min((n + m - 1) / m, n / 2);
  std::vector<std::vector<std::size_t>> batches(nb);
  for (std::size_t b = 0, pos = 0; b < nb; ++b) {
    const std::size_t size = n / nb + (b < n % nb ? 1 : 0);
    batches[b].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                      order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return batches;
}

std::size_t pretrain_steps_per_epoch(std::size_t n, std::size_t m) { return std::min((n + m - 1) / m, n / 2); }

}  // namespace

Checkpoint initial_checkpoint(const ModelConfig& config, std::uint64_t seed, InitOptions options) {
  Network<float> net(config);
  net.initialize(seed, options);
  Checkpoint c;
  c.config = config;
  c.phase = Phase::init;
  c.params = net.params();
  c.metadata = {{"init.seed", std::to_string(seed)},
                {"init.identity_adaptive", options.identity_adaptive ? "true" : "false"}};
  return c;
}

// ---- pretraining ------------------------------------------------------------

void PretrainConfig::validate() const {
  if (!(tau > 0)) throw std::invalid_argument("pretrain temperature must be positive");
  if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("pretrain loss weights must be non-negative");
  if (!(eps > 0)) throw std::invalid_argument("similarity clamp must be positive");
  if (videos_per_batch < 2) throw std::invalid_argument("pretraining needs at least 2 videos per batch");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  optimizer.validate();
}

void write_pretrain_csv_header(std::ostream& out) { out << "epoch,L_con,L_rec,L_init,lr,mean_pairwise_sim\n"; }

PretrainResult pretrain(const DatasetManifest& manifest, const Checkpoint& start, const PretrainConfig& config,
                        std::ostream* csv) {
  config.validate();
  for (const auto& r : manifest.records())
    if (r.label != Label::real) throw std::invalid_argument("pretrain must be real-only (video '" + r.video_id + "')");
  if (manifest.size() < 2) throw std::invalid_argument("pretraining needs at least 2 videos");
  const int n = start.config.clip_length;
  for (const auto& r : manifest.records())
    if (r.frame_count < n + 1)
      throw std::invalid_argument("video '" + r.video_id + "' is too short to yield two distinct clips");

  Network<float> net(start.config, start.params);
  const auto groups = trainable_groups(Phase::pretrain);
  Adam adam(net.params(), groups, config.optimizer);
  Rng rng(config.seed);
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(config.videos_per_batch), manifest.size());
  const auto steps_per_epoch = static_cast<std::int64_t>(pretrain_steps_per_epoch(manifest.size(), m));
  WarmupSchedule schedule(config.optimizer.warmup_floor, config.optimizer.lr, steps_per_epoch * config.epochs,
                          config.optimizer.warmup_fraction);
  ParameterStore<float> grads = net.params().zeros_like();

  PretrainResult result;
  if (csv) write_pretrain_csv_header(*csv);
  std::int64_t step = 0;
  const float lambda1 = static_cast<float>(config.lambda1), lambda2 = static_cast<float>(config.lambda2);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    PretrainEpochLog log;
    log.epoch = epoch;
    double sim_sum = 0;
    std::size_t sim_count = 0;
    const auto batches = pretrain_batches(manifest.size(), m, rng);
    for (const auto& batch : batches) {
      std::vector<typename Network<float>::BackboneTrace> traces;
      std::vector<RowVector<float>> zs;
      std::vector<std::string> ids;
      for (std::size_t v : batch) {
        const auto& rec = manifest[v];
        auto [a, b] = sample_pair_offsets(rec, n, rng);
        for (int off : {a, b}) {
          traces.push_back(net.backbone(load_clip(rec, off, n), true));
          zs.push_back(traces.back().z);
          ids.push_back(rec.video_id);
        }
      }
      const std::size_t clips = zs.size();
      std::vector<RowVector<float>> d_z;
      const double con = contrastive_loss<float>(zs, ids, static_cast<float>(config.tau),
                                                 static_cast<float>(config.eps), &d_z);

      for (std::size_t i = 0; i < clips; ++i)
        for (std::size_t j = i + 1; j < clips; ++j)
          if (ids[i] != ids[j]) {
            sim_sum += cosine_sim<float>(zs[i], zs[j], static_cast<float>(config.eps));
            ++sim_count;
          }

      grads.set_zero();
      double rec_total = 0;
      const float rec_scale = lambda2 / static_cast<float>(clips);
      for (std::size_t i = 0; i < clips; ++i) {
        typename Network<float>::ReconstructorTrace rt;
        const auto reconstruction = net.reconstruct(zs[i], &rt);
        Matrix<float> d_rec;
        rec_total += reconstruction_loss(reconstruction, traces[i].features, &d_rec);
        d_rec *= rec_scale;
        RowVector<float> dz = lambda1 * d_z[i] + net.reconstruct_backward(rt, d_rec, grads);
        Matrix<float> d_target;
        if (!config.detach_target) d_target = -d_rec;
        net.backbone_backward(traces[i], dz, config.detach_target ? nullptr : &d_target, grads);
      }
      const double rec = rec_total / static_cast<double>(clips);
      const double total = init_loss(con, rec, config.lambda1, config.lambda2);
      const std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1);
      require_finite(con, "contrastive loss", where);
      require_finite(rec, "reconstruction loss", where);

      const double lr = schedule.lr(step);
      adam.step(net.params(), grads, lr);
      ++step;
      result.step_losses.push_back(total);
      log.l_con += con;
      log.l_rec += rec;
      log.l_init += total;
      log.lr = lr;
    }
    const auto nb = static_cast<double>(batches.size());
    log.l_con /= nb;
    log.l_rec /= nb;
    log.l_init /= nb;
    log.mean_pairwise_sim = sim_count ? sim_sum / static_cast<double>(sim_count) : 0.0;
    if (log.mean_pairwise_sim > config.collapse_threshold) {
      std::string w = "epoch " + std::to_string(epoch) + ": mean pairwise similarity " + fmt(log.mean_pairwise_sim) +
                      " exceeds " + fmt(config.collapse_threshold) + " (possible representation collapse)";
      std::cerr << "warning: " << w << "\n";
      result.warnings.push_back(std::move(w));
    }
    if (csv) {
      *csv << log.epoch << "," << fmt(log.l_con) << "," << fmt(log.l_rec) << "," << fmt(log.l_init) << ","
           << fmt(log.lr) << "," << fmt(log.mean_pairwise_sim) << "\n";
      csv->flush();
    }
    result.history.push_back(log);
  }

  Checkpoint& out = result.checkpoint;
  out.config = start.config;
  out.phase = Phase::pretrain;
  out.parent_hash = start.content_hash();
  out.params = net.params();
  out.metadata = {{"pretrain.lambda1", fmt(config.lambda1)},
                  {"pretrain.lambda2", fmt(config.lambda2)},
                  {"pretrain.tau", fmt(config.tau)},
                  {"pretrain.videos_per_batch", std::to_string(m)},
                  {"pretrain.epochs", std::to_string(config.epochs)},
                  {"pretrain.detach_target", config.detach_target ? "true" : "false"},
                  {"pretrain.seed", std::to_string(config.seed)},
                  {"pretrain.steps", std::to_string(step)},
                  {"pretrain.warmup_steps", std::to_string(schedule.warmup_steps())},
                  {"pretrain.videos", std::to_string(manifest.size())}};
  return result;
}

// ---- feature cache ------------------------------------------------------------

FeatureCache::FeatureCache(const Network<float>& net, int clip_length, std::optional<Perturbation> perturbation)
    : net_(net), clip_length_(clip_length), perturbation_(perturbation) {}

const FeatureCache::Entry& FeatureCache::get(const VideoRecord& record, int offset) {
  auto key = std::make_pair(record.frames_path.string(), offset);
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  FrameClip clip = load_clip(record, offset, clip_length_);
  if (perturbation_) clip = perturb_for_evaluation(clip, *perturbation_);
  auto trace = net_.backbone(clip, false);
  return entries_.emplace(key, Entry{std::move(trace.z), std::move(trace.features)}).first->second;
}

// ---- adaptation ---------------------------------------------------------------

void AdaptConfig::validate() const {
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("adaptation lambda must lie in [0, 1]");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (source_batch < 1) throw std::invalid_argument("source batch must hold at least one clip");
  if (target_batch < 1) throw std::invalid_argument("target batch must hold at least one clip");
  optimizer.validate();
}

void write_adapt_csv_header(std::ostream& out) { out << "epoch,L_cls,L_rec,L_last,source_acc\n"; }

namespace {

AdaptResult run_adaptation(const Checkpoint& start, const std::vector<VideoRecord>& source,
                           const std::vector<VideoRecord>* target, const AdaptConfig& config, std::ostream* csv) {
  config.validate();
  if (start.phase != Phase::pretrain && !config.allow_any_phase)
    throw std::invalid_argument("adaptation expects a pretrain checkpoint, got phase=" +
                                std::string(phase_name(start.phase)));
  if (source.empty()) throw std::invalid_argument("adaptation source pool is empty");
  if (target && target->empty()) throw std::invalid_argument("adaptation target pool is empty");
  for (const auto& r : source)
    if (!r.label) throw std::invalid_argument("source video '" + r.video_id + "' has no label");

  Network<float> net(start.config, start.params);
  const int n = start.config.clip_length;
  FeatureCache cache(net, n);
  Adam adam(net.params(), trainable_groups(Phase::adapt), config.optimizer);
  // Independent streams keep the source schedule identical whether or not a
  // target side is present.
  Rng source_rng(config.seed);
  Rng target_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  // An epoch is one pass over every clip window of every source video.
  std::vector<std::pair<std::size_t, int>> windows;
  for (std::size_t v = 0; v < source.size(); ++v)
    for (int offset = 0; offset + n <= source[v].frame_count; ++offset) windows.emplace_back(v, offset);
  const std::size_t bs = static_cast<std::size_t>(config.source_batch);
  const auto steps_per_epoch = static_cast<std::int64_t>((windows.size() + bs - 1) / bs);
  WarmupSchedule schedule(config.optimizer.warmup_floor, config.optimizer.lr, steps_per_epoch * config.epochs,
                          config.optimizer.warmup_fraction);
  ParameterStore<float> grads = net.params().zeros_like();
  // Without a target side the objective is L_cls alone.
  const double lambda_d = target ? config.lambda : 1.0;
  const float lambda = static_cast<float>(lambda_d);

  AdaptResult result;
  if (csv) write_adapt_csv_header(*csv);
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    AdaptEpochLog log;
    log.epoch = epoch;
    std::size_t correct = 0;
    std::shuffle(windows.begin(), windows.end(), source_rng);
    for (std::size_t begin = 0; begin < windows.size(); begin += bs) {
      const std::size_t end = std::min(windows.size(), begin + bs);
      grads.set_zero();

      // Supervised pipeline: L_c(L_d(z)) on labeled source clips.
      const auto batch = static_cast<Eigen::Index>(end - begin);
      Matrix<float> logits(batch, 2);
      std::vector<int> labels;
      std::vector<const FeatureCache::Entry*> entries;
      std::vector<RowVector<float>> hs;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& rec = source[windows[k].first];
        const auto& e = cache.get(rec, windows[k].second);
        hs.push_back(net.adapt_project(e.z));
        logits.row(static_cast<Eigen::Index>(k - begin)) = net.classify(hs.back());
        labels.push_back(static_cast<int>(*rec.label));
        entries.push_back(&e);
      }
      Matrix<float> d_logits;
      const double cls = classification_loss(logits, labels, &d_logits);
      for (Eigen::Index i = 0; i < batch; ++i) {
        const int predicted = logits(i, 1) > logits(i, 0) ? 1 : 0;
        if (predicted == labels[static_cast<std::size_t>(i)]) ++correct;
        RowVector<float> d_h = net.classify_backward(hs[static_cast<std::size_t>(i)], lambda * d_logits.row(i), grads);
        net.adapt_backward(entries[static_cast<std::size_t>(i)]->z, d_h, grads);
      }

      // Unsupervised pipeline: R(L_d(z)) against T on unlabeled target clips.
      double rec_loss = 0;
      if (target) {
        const std::size_t bt = static_cast<std::size_t>(config.target_batch);
        std::uniform_int_distribution<std::size_t> pick(0, target->size() - 1);
        const float scale = (1.0f - lambda) / static_cast<float>(bt);
        for (std::size_t k = 0; k < bt; ++k) {
          const auto& rec = (*target)[pick(target_rng)];
          const auto& e = cache.get(rec, sample_offset(rec, n, target_rng));
          const RowVector<float> h = net.adapt_project(e.z);
          typename Network<float>::ReconstructorTrace rt;
          const auto reconstruction = net.reconstruct(h, &rt);
          Matrix<float> d_rec;
          rec_loss += reconstruction_loss(reconstruction, e.features, &d_rec);
          d_rec *= scale;
          net.adapt_backward(e.z, net.reconstruct_backward(rt, d_rec, grads), grads);
        }
        rec_loss /= static_cast<double>(bt);
      }
      const double total = last_loss(cls, rec_loss, lambda_d);
      const std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1);
      require_finite(cls, "classification loss", where);
      require_finite(rec_loss, "reconstruction loss", where);

      adam.step(net.params(), grads, schedule.lr(step));
      ++step;
      log.l_cls += cls;
      log.l_rec += rec_loss;
      log.l_last += total;
    }
    const auto nb = static_cast<double>(steps_per_epoch);
    log.l_cls /= nb;
    log.l_rec /= nb;
    log.l_last /= nb;
    log.source_acc = static_cast<double>(correct) / static_cast<double>(windows.size());
    if (csv) {
      *csv << log.epoch << "," << fmt(log.l_cls) << "," << fmt(log.l_rec) << "," << fmt(log.l_last) << ","
           << fmt(log.source_acc) << "\n";
      csv->flush();
    }
    result.history.push_back(log);
  }

  Checkpoint& out = result.checkpoint;
  out.config = start.config;
  out.phase = Phase::adapt;
  out.parent_hash = start.content_hash();
  out.params = net.params();
  out.metadata = {{"adapt.mode", target ? "last" : "source-only"},
                  {"adapt.lambda", fmt(lambda_d)},
                  {"adapt.epochs", std::to_string(config.epochs)},
                  {"adapt.source_batch", std::to_string(config.source_batch)},
                  {"adapt.target_batch", target ? std::to_string(config.target_batch) : "0"},
                  {"adapt.seed", std::to_string(config.seed)},
                  {"adapt.steps", std::to_string(step)},
                  {"adapt.source_videos", std::to_string(source.size())},
                  {"adapt.target_videos", std::to_string(target ? target->size() : 0)}};
  if (out.backbone_hash() != start.backbone_hash())
    throw std::logic_error("adaptation modified a frozen parameter group");
  return result;
}

}  // namespace

AdaptResult adapt(const Checkpoint& start, const AdaptationPool& pool, const AdaptConfig& config, std::ostream* csv) {
  std::vector<VideoRecord> target;
  target.reserve(pool.target().size());
  for (const auto& t : pool.target()) target.push_back(t.as_record());
  return run_adaptation(start, pool.source(), &target, config, csv);
}

AdaptResult train_source_only(const Checkpoint& start, const DatasetManifest& source, const AdaptConfig& config,
                              std::ostream* csv) {
  return run_adaptation(start, source.records(), nullptr, config, csv);
}

}  // namespace last
