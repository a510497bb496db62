// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "last/config.hpp"
#include "last/evaluation.hpp"
#include "last/losses.hpp"
#include "last/metrics.hpp"
#include "last/perturbations.hpp"
#include "last/protocol.hpp"
#include "last/training.hpp"
#include "support.hpp"

using namespace last;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

bool close_rel(double actual, double expected, double tol = 1e-6) {
  return std::abs(actual - expected) <= tol * std::max(1.0, std::abs(expected));
}

fs::path g_work;

Config protocol_config(const std::string& file, const std::string& name) {
  Config c;
  c.load_file(fs::path(LAST_CONFIG_DIR) / file);
  c.set("run.output", (g_work / "runs" / name).string());
  c.set("run.data_dir", (g_work / "data").string());
  return c;
}

// Protocol runs are shared between criteria and executed at most once per invocation.
const ProtocolResult& protocol_run(const std::string& file, const std::string& name) {
  static std::map<std::string, ProtocolResult> runs;
  auto it = runs.find(name);
  if (it != runs.end()) return it->second;
  Config c = protocol_config(file, name);
  fs::remove_all(c.get("run.output"));
  return runs.emplace(name, run_protocol(c)).first->second;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

RowVector<double> vec(std::initializer_list<double> v) {
  RowVector<double> r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

// ---- 1. loss oracles

void loss_oracles(Outcome& o) {
  int checks = 0;
  auto check = [&](bool ok, const std::string& what) {
    ++checks;
    o.require(ok, what);
  };

  SpatialFeatureSequence<double> rec, zero;
  rec.frames = zero.frames = 2;
  rec.grid = zero.grid = 1;
  rec.values.resize(2, 1);
  rec.values << 1, 3;
  zero.values = Matrix<double>::Zero(2, 1);
  check(reconstruction_loss(zero, zero) == 0.0, "reconstruction of identical inputs");
  check(close_rel(reconstruction_loss(rec, zero), 2.0), "reconstruction hand example");
  SpatialFeatureSequence<double> scaled = rec;
  scaled.values *= 3.5;
  check(close_rel(reconstruction_loss(scaled, zero), 3.5 * 2.0), "reconstruction homogeneity");

  check(close_rel(cosine_sim(vec({0.3, -2, 1}), vec({0.3, -2, 1})), 1.0), "self similarity");
  check(std::abs(cosine_sim(vec({1, 0}), vec({0, 1}))) <= 1e-12, "orthogonal similarity");
  check(cosine_sim(vec({0, 0}), vec({0.5, 2})) == 0.0, "zero-vector similarity");

  const double anchor = contrastive_anchor_loss(cosine_sim(vec({1, 0}), vec({1, 0})),
                                                std::vector<double>{cosine_sim(vec({1, 0}), vec({0, 1}))}, 0.5);
  check(close_rel(anchor, std::log(1 + std::exp(-2.0))), "single-negative closed form");
  check(std::abs(anchor - 0.12693) <= 1e-6 * 0.12693 + 5e-6, "single-negative value 0.12693");
  for (int m : {2, 3, 8, 20}) {
    std::vector<RowVector<double>> z(2 * m, vec({0.4, -1, 2}));
    std::vector<std::string> ids;
    for (int v = 0; v < m; ++v) ids.insert(ids.end(), 2, "v" + std::to_string(v));
    check(close_rel(contrastive_loss(z, ids, 0.5), std::log(1.0 + 2 * (m - 1))), "all-identical closed form");
  }
  Rng rng(3);
  std::normal_distribution<double> d(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RowVector<double>> z;
    for (int i = 0; i < 6; ++i) z.push_back(vec({d(rng), d(rng), d(rng), d(rng)}));
    check(contrastive_loss(z, {"a", "a", "b", "b", "c", "c"}, 0.5) > 0, "contrastive positivity");
  }

  Matrix<double> saturated(1, 2), uniform(1, 2), wrong(1, 2);
  saturated << 20, -20;
  uniform << 0, 0;
  wrong << -3, 3;
  check(classification_loss(saturated, {0}) < 1e-8, "saturated cross-entropy");
  check(close_rel(classification_loss(uniform, {0}), std::log(2.0)) &&
            close_rel(classification_loss(uniform, {1}), std::log(2.0)),
        "uniform cross-entropy");
  check(close_rel(classification_loss(wrong, {0}), std::log(1 + std::exp(6.0))), "wrong-class cross-entropy");

  check(close_rel(last_loss(0.8, 0.4, 0.5), 0.6), "L_last arithmetic");
  check(close_rel(last_loss(0.8, 0.4, 1.0), 0.8), "L_last at lambda 1");
  for (double lambda = 0; lambda <= 1.0; lambda += 0.125) {
    const double v = last_loss(0.8, 0.4, lambda);
    check(v >= 0.4 - 1e-12 && v <= 0.8 + 1e-12, "L_last convexity");
  }
  check(close_rel(init_loss(0.2, 0.4, 1.0, 0.5), 0.4), "L_init arithmetic");
  check(close_rel(init_loss(0.2, 0.4, 1.0, 0.0), 0.2), "L_init at lambda2 0");
  check(init_loss(0, 0, 1.0, 0.5) == 0.0, "L_init of zeros");
  o.detail << checks << " oracle checks, single-negative loss " << fixed(anchor, 6);
}

// ---- 2. gradient checks

void gradient_checks(Outcome& o) {
  const ModelConfig model = ModelConfig::desk_reduced();
  struct Run {
    std::string name;
    std::vector<std::pair<Group, last::testing::GradCheckStats>> groups;
  };
  std::vector<Run> runs;
  last::testing::GradCheckOptions options;
  options.coords_per_group = 60;
  runs.push_back({"L_init", last::testing::check_init_gradients(model, true, options)});
  options.seed = 2;
  runs.push_back({"L_init (target carries gradient)", last::testing::check_init_gradients(model, false, options)});
  options.coords_per_group = 120;
  options.seed = 3;
  runs.push_back({"L_last", last::testing::check_last_gradients(model, 0.5, options)});
  for (const auto& run : runs) {
    int total = 0, kinks = 0;
    double worst = 0;
    for (const auto& [g, s] : run.groups) {
      total += s.checked;
      kinks += s.skipped_kinks;
      worst = std::max(worst, s.max_rel_error);
      o.require(s.checked >= 40, run.name + " " + std::string(group_name(g)) + " coordinates");
      o.require(s.max_rel_error <= 1e-3, run.name + " " + std::string(group_name(g)) + " error " +
                                             std::to_string(s.max_rel_error) + " at " + s.worst);
    }
    o.require(total >= 200, run.name + " coordinate count");
    o.detail << run.name << ": " << total << " coords, " << kinks << " kinks skipped, max rel err "
             << std::scientific << worst << std::defaultfloat << "; ";
  }
}

// ---- 3. freeze contract

void freeze_contract(Outcome& o) {
  last::testing::TempDir dir("last-accept");
  const ModelConfig model = ModelConfig::desk_reduced();
  auto pre = last::testing::synthetic(dir / "pre", "pre", {}, 6, 24, 41, model.clip_length);
  auto src = last::testing::synthetic(dir / "src", "src", {ForgeryFamily::seam}, 20, 24, 42, model.clip_length);
  auto tgt = last::testing::synthetic(dir / "tgt", "tgt", {ForgeryFamily::flicker}, 20, 24, 43, model.clip_length,
                                      DomainStyle::compressed);
  PretrainConfig pc;
  pc.epochs = 2;
  const Checkpoint pretrained = pretrain(pre, initial_checkpoint(model, 1), pc).checkpoint;
  save_checkpoint(pretrained, dir / "pretrain.ckpt");
  Rng rng(1);
  AdaptConfig ac;
  ac.epochs = 10;
  const Checkpoint adapted = adapt(pretrained, build_adaptation_pool(src, tgt, 0.5, rng), ac).checkpoint;
  save_checkpoint(adapted, dir / "adapted.ckpt");
  const Checkpoint a = load_checkpoint(dir / "pretrain.ckpt");
  const Checkpoint b = load_checkpoint(dir / "adapted.ckpt");

  const std::vector<Group> frozen{Group::encoder, Group::projection, Group::transformer, Group::reconstructor};
  std::size_t frozen_tensors = 0;
  for (std::size_t t = 0; t < a.params.size(); ++t) {
    const auto& ta = a.params[t];
    const auto& tb = b.params[t];
    if (std::find(frozen.begin(), frozen.end(), ta.group) == frozen.end()) continue;
    ++frozen_tensors;
    o.require(ta.name == tb.name && ta.shape == tb.shape &&
                  std::memcmp(ta.data.data(), tb.data.data(), ta.data.size() * sizeof(float)) == 0,
              "tensor " + std::string(group_name(ta.group)) + "." + ta.name + " changed");
  }
  for (Group g : frozen) o.require(a.groups_hash({g}) == b.groups_hash({g}), std::string(group_name(g)) + " hash");
  const auto trainable = trainable_groups(Phase::adapt);
  o.require(trainable == std::vector<Group>{Group::adaptive, Group::classifier}, "trainable set");
  for (Group g : trainable) o.require(a.groups_hash({g}) != b.groups_hash({g}), std::string(group_name(g)) + " not trained");

  const auto desk = Network<float>::make_store(model).count(trainable);
  const auto paper = Network<float>::make_store(ModelConfig::paper_default()).count(trainable);
  const std::size_t d = static_cast<std::size_t>(model.token_dim);
  o.require(desk == d * d + d + 2 * d + 2, "desk-reduced count");
  o.require(paper == 768u * 768 + 768 + 768 * 2 + 2, "full-size count");
  o.detail << frozen_tensors << " frozen tensors byte-identical over 10 epochs; trainable {adaptive, classifier}: "
           << desk << " parameters desk-reduced, " << paper << " full size";
}

// ---- 4. metric oracles

void metric_oracles(Outcome& o) {
  auto hand = compute_metrics({0.1, 0.2, 0.3, 0.4, 0.35, 0.6, 0.7, 0.8}, {0, 0, 0, 0, 1, 1, 1, 1});
  o.require(hand.auc == 93.75, "hand AUC " + fixed(hand.auc, 4));
  o.require(hand.eer == 25.0, "hand EER " + fixed(hand.eer, 4));
  Rng rng(2024);
  std::uniform_int_distribution<int> size(2, 32), score(0, 1000), coin(0, 1), coarse(0, 10);
  double worst_auc = 0, worst_eer = 0;
  for (int instance = 0; instance < 1000; ++instance) {
    const int n = size(rng);
    std::vector<int> labels(n), thousandths(n);
    for (int i = 0; i < n; ++i) labels[i] = coin(rng);
    labels[0] = 0;
    labels[1] = 1;
    const bool ties = instance % 3 == 0;
    for (int i = 0; i < n; ++i) thousandths[i] = ties ? 100 * coarse(rng) : score(rng);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) scores[i] = thousandths[i] / 1000.0;
    auto r = compute_metrics(scores, labels);
    worst_auc = std::max(worst_auc, std::abs(r.auc - last::testing::brute_force_auc(scores, labels)));
    worst_eer = std::max(worst_eer, std::abs(r.eer - last::testing::grid_eer(thousandths, labels)));
  }
  o.require(worst_auc <= 1e-6, "AUC deviation " + std::to_string(worst_auc));
  o.require(worst_eer <= 1e-6, "EER deviation " + std::to_string(worst_eer));
  o.detail << "hand example AUC " << hand.auc << " EER " << hand.eer << "; 1000 instances, max |dAUC| "
           << std::scientific << worst_auc << ", max |dEER| " << worst_eer << std::defaultfloat;
}

// ---- 5. overfit sanity

void overfit_sanity(Outcome& o) {
  const auto& run = protocol_run("ablation.cfg", "ablation");
  Config c = protocol_config("ablation.cfg", "ablation");
  o.require(c.get_int("adapt.epochs") <= 10, "more than 10 epochs");
  const auto src = resolve_dataset(c, c.get("data.source"), ManifestRole::source, g_work / "data");
  o.require(src.size() == 100, "source size");
  std::vector<double> accs;
  for (std::uint64_t seed : {0, 1, 2}) {
    const Checkpoint ck = load_checkpoint(run.directory / ("seed_" + std::to_string(seed)) / "source-only" / "model.ckpt");
    accs.push_back(evaluate(ck, src, "source-only/train", c.get_int("eval.clips")).acc);
  }
  const double m = mean(accs);
  o.require(m >= 95.0, "mean train ACC below 95");
  o.detail << "train ACC after " << c.get_int("adapt.epochs") << " epochs on " << src.size() << " videos: " << fixed(accs[0])
           << ", " << fixed(accs[1]) << ", " << fixed(accs[2]) << " (mean " << fixed(m) << ")";
}

// ---- 6. adaptation benefit

void adaptation_benefit(Outcome& o) {
  const auto& run = protocol_run("ablation.cfg", "ablation");
  std::map<std::string, std::vector<double>> auc;
  for (const auto& cell : run.cells) auc[cell.variant].push_back(cell.report.auc);
  o.require(auc["last"].size() == 5 && auc["source-only"].size() == 5, "five seeds per variant");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const fs::path seed_dir = run.directory / ("seed_" + std::to_string(seed));
    const auto parent = load_checkpoint(seed_dir / "pretrain.ckpt").content_hash();
    o.require(load_checkpoint(seed_dir / "last" / "model.ckpt").parent_hash == parent &&
                  load_checkpoint(seed_dir / "source-only" / "model.ckpt").parent_hash == parent,
              "shared pretraining checkpoint");
  }
  const double gain = mean(auc["last"]) - mean(auc["source-only"]);
  o.require(gain >= 3.0, "gain below 3 points");
  o.detail << "target AUC adapted " << fixed(mean(auc["last"])) << " vs source-only " << fixed(mean(auc["source-only"]))
           << " (gain " << fixed(gain) << ", 5 seeds)";
}

// ---- 7. data-scale trend

void data_scale(Outcome& o) {
  const auto& run = protocol_run("data-scale.cfg", "data-scale");
  Config c = protocol_config("data-scale.cfg", "data-scale");
  std::map<std::string, std::vector<double>> auc;
  for (const auto& cell : run.cells) auc[cell.variant].push_back(cell.report.auc);
  std::vector<std::pair<double, double>> by_fraction;
  for (const auto& f : c.get_list("protocol.fractions")) {
    const double fraction = std::stod(f);
    std::string name;
    for (const auto& [variant, values] : auc)
      if (variant.starts_with("scale_") && std::abs(std::stod(variant.substr(6)) - fraction) < 1e-9) name = variant;
    o.require(!name.empty() && auc[name].size() == 5, "five seeds at fraction " + f);
    by_fraction.emplace_back(fraction, name.empty() ? std::nan("") : mean(auc[name]));
  }
  for (std::size_t i = 1; i < by_fraction.size(); ++i)
    o.require(by_fraction[i].second >= by_fraction[i - 1].second - 1.0,
              "AUC drops from fraction " + fixed(by_fraction[i - 1].first) + " to " + fixed(by_fraction[i].first));
  o.detail << "mean target AUC by pretraining fraction:";
  for (const auto& [f, a] : by_fraction) o.detail << " " << fixed(f) << " -> " << fixed(a);
}

// ---- 8. robustness harness

void robustness(Outcome& o) {
  const auto& run = protocol_run("robustness.cfg", "robustness");
  o.require(run.cells.size() == 36, "36 evaluations");
  const fs::path dir = run.directory / "seed_0" / "last";
  o.require(last::testing::read_tree(dir / "reports", ".txt").size() == 36, "36 report files");
  std::set<std::string> seen;
  for (const auto& cell : run.cells) seen.insert(cell.perturbation);
  o.require(seen.size() == 36 && seen.count("none") == 1, "distinct perturbation cells");
  const auto avg = severity_averaged_auc(run.cells);
  o.require(avg.size() == 7, "seven kinds");

  const fs::path table = dir / "robustness_src_test.tsv";
  const std::string text = fs::exists(table) ? last::testing::read_file(table) : "";
  o.require(text.find("s1\ts2\ts3\ts4\ts5\tavg") != std::string::npos, "table header");
  for (auto kind : kPerturbationKinds)
    o.require(text.find("\n" + std::string(kind_name(kind)) + "\t") != std::string::npos,
              "table row " + std::string(kind_name(kind)));

  // Noise: empirical standard deviation on a constant gray clip.
  double worst_noise = 0;
  for (int s = 1; s <= 5; ++s) {
    const double sigma = perturbation_parameter(PerturbationKind::noise, s);
    FrameClip clip;
    clip.video_id = "gray";
    clip.length = 4;
    clip.height = clip.width = 64;
    clip.pixels.assign(clip.frame_stride() * 4, 0.5f);
    Rng rng(500 + s);
    const FrameClip out = apply_perturbation(clip, {PerturbationKind::noise, s}, rng);
    double sum = 0, sq = 0;
    for (float v : out.pixels) {
      sum += v - 0.5;
      sq += (v - 0.5) * (v - 0.5);
    }
    const double n = static_cast<double>(out.pixels.size());
    const double rel = std::abs(std::sqrt(sq / n - (sum / n) * (sum / n)) - sigma) / sigma;
    worst_noise = std::max(worst_noise, rel);
    o.require(rel <= 0.05, "noise sigma at severity " + std::to_string(s));
  }
  // Pixelation: exact constancy on factor-aligned blocks.
  int periodic = 0;
  const FrameClip clip = last::testing::random_clip(last::testing::small_model(2), 9);
  for (int s = 1; s <= 5; ++s) {
    const int factor = static_cast<int>(perturbation_parameter(PerturbationKind::pixel, s));
    if (clip.width % factor != 0) continue;
    Rng rng(0);
    const FrameClip out = apply_perturbation(clip, {PerturbationKind::pixel, s}, rng);
    bool exact = true;
    for (int f = 0; f < out.length; ++f)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
          for (int ch = 0; ch < 3; ++ch)
            exact &= out.at(f, y, x, ch) == out.at(f, y - y % factor, x - x % factor, ch);
    o.require(exact, "pixel block period " + std::to_string(factor));
    ++periodic;
  }
  o.detail << "36 reports; severity-averaged AUC";
  for (const auto& [kind, v] : avg) o.detail << " " << kind << " " << fixed(v);
  o.detail << "; worst noise sigma deviation " << fixed(100 * worst_noise) << "%, " << periodic
           << " pixel severities exactly periodic";
}

// ---- 9. contrastive non-collapse

void non_collapse(Outcome& o) {
  last::testing::TempDir dir("last-accept");
  const ModelConfig model = ModelConfig::desk_reduced();
  Config c = protocol_config("ablation.cfg", "ablation");
  const auto pre = resolve_dataset(c, c.get("data.pretrain"), ManifestRole::pretrain, g_work / "data");
  o.require(pre.size() >= 20, "at least 20 videos");
  PretrainConfig pc = c.pretrain();
  auto result = pretrain(pre, initial_checkpoint(model, 0), pc);
  o.require(!result.history.empty(), "no epochs");
  if (result.history.empty()) return;
  const auto& final = result.history.back();
  // Smallest batch gives the strictest all-identical bound.
  const std::size_t n = pre.size();
  const std::size_t steps = std::min<std::size_t>((n + pc.videos_per_batch - 1) / pc.videos_per_batch, n / 2);
  const std::size_t smallest = n / steps;
  const double bound = std::log(1.0 + 2.0 * static_cast<double>(smallest - 1)) - 0.05;
  o.require(final.mean_pairwise_sim < 0.95, "mean inter-video cosine");
  o.require(final.l_con < bound, "L_con above bound");
  o.detail << pc.epochs << " epochs on " << n << " videos: final cosine " << fixed(final.mean_pairwise_sim, 3)
           << ", L_con " << fixed(final.l_con, 3) << " < " << fixed(bound, 3) << " (" << 2 * (smallest - 1)
           << " negatives)";
}

// ---- 10. reproducibility

void reproducibility(Outcome& o) {
  Config c = protocol_config("ablation.cfg", "repro");
  c.set("protocol.seeds", "0, 1");
  c.set("pretrain.epochs", "3");
  c.set("adapt.epochs", "2");
  c.set("data.eval", "tgt_test, src_test");
  std::vector<std::vector<std::pair<std::string, std::string>>> trees;
  std::vector<std::string> summaries;
  for (const char* name : {"repro_a", "repro_b"}) {
    const fs::path out = g_work / "runs" / name;
    fs::remove_all(out);
    c.set("run.output", out.string());
    run_protocol(c);
    trees.push_back(last::testing::read_tree(out, ".txt"));
    summaries.push_back(last::testing::read_file(out / "summary.tsv"));
  }
  o.require(!trees[0].empty(), "no reports");
  o.require(trees[0] == trees[1], "reports differ");
  o.require(summaries[0] == summaries[1], "summaries differ");
  o.detail << "two runs, " << trees[0].size() << " reports and summary byte-identical";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance-work";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for datasets and protocol runs");
  app.add_option("--criterion", only, "run only these criteria (repeatable)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);
  fs::create_directories(g_work);

  const std::vector<std::function<void(Outcome&)>> criteria = {
      loss_oracles, gradient_checks, freeze_contract, metric_oracles, overfit_sanity,
      adaptation_benefit, data_scale, robustness, non_collapse, reproducibility};
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i](o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "criterion " << number << ": " << (o.pass ? "PASS" : "FAIL") << " " << o.detail.str() << " ("
              << fixed(seconds, 1) << " s)" << std::endl;
    all &= o.pass;
  }
  return all ? 0 : 1;
}
