#include "last/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "last/hash.hpp"

namespace fs = std::filesystem;

namespace last {
namespace {

std::string spec_text(const SyntheticSpec& s) {
  std::ostringstream out;
  out << "name=" << s.name << "\nn_videos=" << s.n_videos << "\nframes=" << s.frames_per_video << "\nfamilies=";
  for (std::size_t i = 0; i < s.families.size(); ++i) out << (i ? "," : "") << family_name(s.families[i]);
  out << "\nstyle=" << style_name(s.style) << "\nseed=" << s.seed << "\nimage_size=" << s.image_size
      << "\nrole=" << (s.role ? role_name(*s.role) : "") << "\n";
  return out.str();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_fraction(double f) {
  std::ostringstream s;
  s << f;
  return s.str();
}

void say(std::ostream* progress, const std::string& line) {
  if (progress) *progress << line << std::endl;
}

std::string cell_file_name(const std::string& eval_set, const std::string& perturbation) {
  std::string name = eval_set;
  if (perturbation != "none") {
    std::string p = perturbation;
    std::replace(p.begin(), p.end(), ':', '_');
    name += "__" + p;
  }
  return name + ".txt";
}

struct Run {
  const Config& config;
  fs::path out;
  fs::path data_dir;
  std::ostream* progress;
  ModelConfig model;
  int eval_clips;
  std::vector<ProtocolCell> cells;
};

ProtocolCell evaluate_cell(Run& run, const Checkpoint& ckpt, const DatasetManifest& eval, const std::string& variant,
                           std::uint64_t seed, const fs::path& dir) {
  Network<float> net(ckpt.config, ckpt.params);
  const auto scores = score_manifest(net, eval, run.eval_clips);
  write_scores(scores, dir / "scores" / (eval.name() + ".tsv"));
  ProtocolCell cell{variant, seed, eval.name(), "none", compute_metrics(scores, variant + "/" + eval.name())};
  write_report(cell.report, dir / "reports" / cell_file_name(eval.name(), "none"));
  say(run.progress, "  " + variant + " seed " + std::to_string(seed) + " on " + eval.name() +
                        ": AUC " + std::to_string(cell.report.auc) + " ACC " + std::to_string(cell.report.acc));
  return cell;
}

Checkpoint train_variant(Run& run, const std::string& variant, const Checkpoint& start, const DatasetManifest& source,
                         const DatasetManifest* target, std::uint64_t seed, const fs::path& dir) {
  AdaptConfig ac = run.config.adapt();
  ac.seed = seed;
  if (start.phase != Phase::pretrain) ac.allow_any_phase = true;
  std::ofstream log(dir / "train_log.csv");
  AdaptResult result;
  if (variant == "source-only") {
    result = train_source_only(start, source, ac, &log);
  } else if (variant == "last") {
    if (!target) throw std::invalid_argument("variant 'last' needs data.target");
    Rng pool_rng(seed);
    const AdaptationPool pool = build_adaptation_pool(source, *target, run.config.get_double("adapt.target_ratio"), pool_rng);
    result = adapt(start, pool, ac, &log);
  } else {
    throw std::invalid_argument("unknown protocol variant '" + variant + "' (expected last or source-only)");
  }
  save_checkpoint(result.checkpoint, dir / "model.ckpt");
  return result.checkpoint;
}

Checkpoint pretrain_stage(Run& run, const Checkpoint& init, const DatasetManifest* pretrain_set, std::uint64_t seed,
                          const fs::path& dir) {
  if (!pretrain_set || run.config.get_int("pretrain.epochs") == 0) return init;
  PretrainConfig pc = run.config.pretrain();
  pc.seed = seed;
  std::ofstream log(dir / "pretrain_log.csv");
  auto result = pretrain(*pretrain_set, init, pc, &log);
  save_checkpoint(result.checkpoint, dir / "pretrain.ckpt");
  if (!result.history.empty())
    say(run.progress, "  pretrain seed " + std::to_string(seed) + ": final L_con " +
                          std::to_string(result.history.back().l_con) + ", mean pairwise similarity " +
                          std::to_string(result.history.back().mean_pairwise_sim));
  return result.checkpoint;
}

}  // namespace

std::string manifest_content_hash(const DatasetManifest& manifest) {
  Sha256 h;
  h.update("name=" + manifest.name() + "\n");
  for (const auto& r : manifest.records()) {
    std::ostringstream line;
    line << r.video_id << "\t" << (r.label ? std::to_string(static_cast<int>(*r.label)) : "-") << "\t" << r.domain_tag
         << "\t" << r.method_tag.value_or("-") << "\t" << r.frame_count << "\n";
    h.update(line.str());
    for (int f = 0; f < r.frame_count; ++f) h.update(sha256_file(frame_file(r.frames_path, f)));
  }
  auto d = h.digest();
  return to_hex(d);
}

DatasetManifest resolve_dataset(const Config& config, const std::string& entry, ManifestRole role,
                                const fs::path& data_dir) {
  const int n = config.model().clip_length;
  if (!config.has_dataset(entry)) return load_manifest(entry, n, role);
  SyntheticSpec spec = config.dataset(entry);
  spec.role = role;
  const fs::path dir = data_dir / entry;
  const fs::path stamp = dir / "spec.txt";
  const std::string text = spec_text(spec);
  if (fs::exists(stamp) && fs::exists(dir / "manifest.tsv") && read_text(stamp) == text)
    return load_manifest(dir / "manifest.tsv", n, role);
  if (fs::exists(dir)) fs::remove_all(dir);
  auto manifest = make_synthetic_dataset(spec, dir, n);
  std::ofstream(stamp) << text;
  return manifest;
}

std::vector<ProtocolCell> robustness_sweep(const Checkpoint& checkpoint, const DatasetManifest& manifest,
                                           int n_eval_clips, const fs::path& reports_dir, const std::string& variant,
                                           std::uint64_t seed, std::ostream* progress) {
  Network<float> net(checkpoint.config, checkpoint.params);
  std::vector<ProtocolCell> cells;
  auto run_one = [&](const std::optional<Perturbation>& p) {
    const std::string tag = p ? p->to_string() : "none";
    auto report = compute_metrics(score_manifest(net, manifest, n_eval_clips, p), variant + "/" + manifest.name());
    if (p) report.perturbation = tag;
    write_report(report, reports_dir / cell_file_name(manifest.name(), tag));
    say(progress, "  " + manifest.name() + " " + tag + ": AUC " + std::to_string(report.auc));
    cells.push_back({variant, seed, manifest.name(), tag, report});
  };
  run_one(std::nullopt);
  for (const auto& p : perturbation_grid()) run_one(p);
  return cells;
}

std::vector<std::pair<std::string, double>> severity_averaged_auc(const std::vector<ProtocolCell>& cells) {
  std::vector<std::pair<std::string, double>> out;
  for (PerturbationKind kind : kPerturbationKinds) {
    double sum = 0;
    int count = 0;
    for (int s = 1; s <= 5; ++s) {
      const std::string tag = Perturbation(kind, s).to_string();
      for (const auto& c : cells)
        if (c.perturbation == tag) {
          sum += c.report.auc;
          ++count;
        }
    }
    if (count > 0) out.emplace_back(std::string(kind_name(kind)), sum / count);
  }
  return out;
}

void write_robustness_table(const std::vector<ProtocolCell>& cells, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::fixed << std::setprecision(2);
  out << "kind\ts1\ts2\ts3\ts4\ts5\tavg\n";
  for (PerturbationKind kind : kPerturbationKinds) {
    out << kind_name(kind);
    double sum = 0;
    for (int s = 1; s <= 5; ++s) {
      const std::string tag = Perturbation(kind, s).to_string();
      auto it = std::find_if(cells.begin(), cells.end(), [&](const ProtocolCell& c) { return c.perturbation == tag; });
      if (it == cells.end()) throw std::invalid_argument("robustness table is missing " + tag);
      out << "\t" << it->report.auc;
      sum += it->report.auc;
    }
    out << "\t" << sum / 5 << "\n";
  }
  auto clean = std::find_if(cells.begin(), cells.end(), [](const ProtocolCell& c) { return c.perturbation == "none"; });
  out << "\nclean";
  for (PerturbationKind kind : kPerturbationKinds) out << "\t" << kind_name(kind);
  out << "\n" << (clean != cells.end() ? clean->report.auc : std::nan(""));
  for (const auto& [kind, auc] : severity_averaged_auc(cells)) out << "\t" << auc;
  out << "\n";
}

void write_summary(const std::vector<ProtocolCell>& cells, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "variant\tseed\teval\tperturbation\tacc\tauc\teer\tthreshold\tn_videos\n";
  for (const auto& c : cells)
    out << c.variant << "\t" << c.seed << "\t" << c.eval_set << "\t" << c.perturbation << "\t" << c.report.acc << "\t"
        << c.report.auc << "\t" << c.report.eer << "\t" << c.report.threshold << "\t" << c.report.n_videos << "\n";
}

ProtocolResult run_protocol(const Config& config, std::ostream* progress) {
  Run run{config, fs::path(config.get("run.output")), {}, progress, config.model(), config.get_int("eval.clips"), {}};
  run.data_dir = config.has("run.data_dir") ? fs::path(config.get("run.data_dir")) : run.out / "data";
  const std::string kind = config.get("protocol.kind");
  if (kind != "standard" && kind != "ablation" && kind != "robustness" && kind != "data-scale")
    throw std::invalid_argument("unknown protocol.kind '" + kind + "'");
  // Validate every stage's settings before any work happens.
  (void)config.pretrain();
  (void)config.adapt();

  fs::create_directories(run.out);
  config.save(run.out / "config.cfg");

  std::vector<std::string> seeds_text = config.get_list("protocol.seeds");
  if (seeds_text.empty()) throw std::invalid_argument("protocol.seeds is empty");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : seeds_text) seeds.push_back(std::stoull(s));

  std::vector<std::string> variants = config.get_list("protocol.variants");
  if (kind == "ablation" && variants == std::vector<std::string>{"last"}) variants = {"last", "source-only"};
  if (variants.empty()) throw std::invalid_argument("protocol.variants is empty");

  // ---- data ----
  say(progress, "resolving datasets");
  std::optional<DatasetManifest> pretrain_set, source, target;
  if (config.has("data.pretrain")) pretrain_set = resolve_dataset(config, config.get("data.pretrain"), ManifestRole::pretrain, run.data_dir);
  if (!config.has("data.source")) throw std::invalid_argument("data.source is not set");
  source = resolve_dataset(config, config.get("data.source"), ManifestRole::source, run.data_dir);
  if (config.has("data.target")) target = resolve_dataset(config, config.get("data.target"), ManifestRole::target, run.data_dir);
  std::vector<DatasetManifest> evals;
  for (const auto& e : config.get_list("data.eval")) {
    evals.push_back(resolve_dataset(config, e, ManifestRole::eval, run.data_dir));
    if (evals.back().empty()) throw std::invalid_argument("evaluation set '" + e + "' is empty");
  }
  if (evals.empty()) throw std::invalid_argument("no evaluation sets (data.eval is empty)");
  if (kind == "data-scale" && !pretrain_set) throw std::invalid_argument("data-scale protocol needs data.pretrain");

  {
    std::ofstream inputs(run.out / "inputs.tsv");
    inputs << "role\tname\tvideos\tsha256\n";
    auto record = [&](const std::string& role, const DatasetManifest& m) {
      inputs << role << "\t" << m.name() << "\t" << m.size() << "\t" << manifest_content_hash(m) << "\n";
    };
    if (pretrain_set) record("pretrain", *pretrain_set);
    record("source", *source);
    if (target) record("target", *target);
    for (const auto& e : evals) record("eval", e);
  }

  for (std::uint64_t seed : seeds) {
    const fs::path seed_dir = run.out / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);
    say(progress, "seed " + std::to_string(seed));
    const Checkpoint init = initial_checkpoint(run.model, seed, config.init_options());

    if (kind == "data-scale") {
      std::vector<std::size_t> order(pretrain_set->size());
      std::iota(order.begin(), order.end(), 0);
      Rng subset_rng(seed);
      std::shuffle(order.begin(), order.end(), subset_rng);
      for (const auto& f_text : config.get_list("protocol.fractions")) {
        const double fraction = std::stod(f_text);
        if (!(fraction >= 0 && fraction <= 1)) throw std::invalid_argument("protocol.fractions must lie in [0, 1]");
        const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
        const std::string variant = "scale_" + format_fraction(fraction);
        const fs::path dir = seed_dir / variant;
        fs::create_directories(dir);
        Checkpoint start = init;
        if (count >= 2) {
          std::vector<bool> keep(pretrain_set->size(), false);
          for (std::size_t i = 0; i < count; ++i) keep[order[i]] = true;
          std::size_t index = 0;
          const auto subset = pretrain_set->filter([&](const VideoRecord&) { return keep[index++]; },
                                                   pretrain_set->name(), ManifestRole::pretrain, run.model.clip_length);
          start = pretrain_stage(run, init, &subset, seed, dir);
        }
        const std::string train_variant_name = variants.front();
        const Checkpoint trained = train_variant(run, train_variant_name, start, *source, target ? &*target : nullptr, seed, dir);
        for (const auto& e : evals) run.cells.push_back(evaluate_cell(run, trained, e, variant, seed, dir));
      }
      continue;
    }

    const Checkpoint pretrained = pretrain_stage(run, init, pretrain_set ? &*pretrain_set : nullptr, seed, seed_dir);
    for (const auto& variant : variants) {
      const fs::path dir = seed_dir / variant;
      fs::create_directories(dir);
      const Checkpoint trained = train_variant(run, variant, pretrained, *source, target ? &*target : nullptr, seed, dir);
      for (const auto& e : evals) {
        if (kind == "robustness") {
          auto cells = robustness_sweep(trained, e, run.eval_clips, dir / "reports", variant, seed, progress);
          write_robustness_table(cells, dir / ("robustness_" + e.name() + ".tsv"));
          run.cells.insert(run.cells.end(), cells.begin(), cells.end());
        } else {
          run.cells.push_back(evaluate_cell(run, trained, e, variant, seed, dir));
        }
      }
    }
  }

  write_summary(run.cells, run.out / "summary.tsv");
  return {run.out, run.cells};
}

}  // namespace last
