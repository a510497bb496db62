// Command-line front end: data generation, training, evaluation and protocols.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "last/checkpoint.hpp"
#include "last/config.hpp"
#include "last/evaluation.hpp"
#include "last/hash.hpp"
#include "last/protocol.hpp"
#include "last/synthetic.hpp"
#include "last/training.hpp"

namespace fs = std::filesystem;
using namespace last;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "config file (key = value lines)");
  cmd->add_option("--set", c.sets, "override one setting, key=value (repeatable)");
  cmd->add_option("--out", c.out, "output directory (default: run.output)");
  cmd->add_option("--seed", c.seed, "run.seed");
}

Config load_config(const Common& c) {
  Config config;
  if (!c.config_file.empty()) config.load_file(c.config_file);
  for (const auto& s : c.sets) config.assign(s);
  if (c.seed) config.set("run.seed", std::to_string(*c.seed));
  if (!c.out.empty()) config.set("run.output", c.out);
  return config;
}

fs::path output_dir(const Config& config) { return fs::path(config.get("run.output")); }

fs::path data_dir(const Config& config) {
  return config.has("run.data_dir") ? fs::path(config.get("run.data_dir")) : output_dir(config) / "data";
}

// Records the resolved config and the content hashes of every input.
class RunDirectory {
 public:
  explicit RunDirectory(const Config& config) : dir_(output_dir(config)) {
    fs::create_directories(dir_);
    config.save(dir_ / "config.cfg");
  }
  const fs::path& path() const { return dir_; }

  void add_file(const std::string& role, const fs::path& file) {
    rows_.push_back(role + "\t" + file.string() + "\t" + sha256_file(file));
    flush();
  }
  void add_manifest(const std::string& role, const DatasetManifest& m) {
    rows_.push_back(role + "\t" + m.name() + "\t" + manifest_content_hash(m));
    flush();
  }

 private:
  void flush() const {
    std::ofstream out(dir_ / "inputs.tsv");
    out << "role\tinput\tsha256\n";
    for (const auto& r : rows_) out << r << "\n";
  }
  fs::path dir_;
  std::vector<std::string> rows_;
};

Checkpoint read_checkpoint(const std::string& path, RunDirectory& run) {
  if (path.empty()) throw std::invalid_argument("--checkpoint is required");
  Checkpoint c = load_checkpoint(path);
  run.add_file("checkpoint", path);
  return c;
}

// `--manifest` wins over the config entry; dataset names are generated on demand.
DatasetManifest read_dataset(const Config& config, const std::string& flag, const std::string& key, ManifestRole role,
                             const ModelConfig& model, RunDirectory& run) {
  std::string entry = flag;
  if (entry.empty()) {
    if (!config.has(key)) throw std::invalid_argument("no input set: pass a manifest or set " + key);
    entry = split_list(config.get(key)).front();
  }
  DatasetManifest m = config.has_dataset(entry) ? resolve_dataset(config, entry, role, data_dir(config))
                                                : load_manifest(entry, model.clip_length, role);
  run.add_manifest(std::string(role_name(role)), m);
  return m;
}

std::string format_metric(double v) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << v;
  return s.str();
}

void print_report(const MetricsReport& r) {
  std::cout << r.protocol << (r.perturbation ? " [" + *r.perturbation + "]" : "") << ": ACC "
            << format_metric(r.acc) << "  AUC " << format_metric(r.auc) << "  EER " << format_metric(r.eer) << "  ("
            << r.n_videos << " videos, " << r.n_real << " real, " << r.n_fake << " fake)\n";
}

std::string schema_help() {
  std::ostringstream out;
  out << "\nSettings (key = default: description); dataset.<name>.{families,style,n_videos,frames,seed,"
         "image_size,role} describe synthetic sets:\n";
  for (const auto& k : config_schema())
    out << "  " << k.key << " = " << (k.default_value.empty() ? "\"\"" : k.default_value) << ": " << k.help << "\n";
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LAST face-forgery video detector"};
  app.require_subcommand(1);
  app.footer(schema_help());

  // ---- synth
  Common synth_c;
  std::vector<std::pair<std::string, std::string>> synth_flags = {
      {"name", ""}, {"n_videos", ""}, {"frames", ""}, {"families", ""}, {"style", ""}, {"role", ""}};
  bool synth_real_only = false;
  auto* synth = app.add_subcommand("synth", "generate a synthetic video dataset and its manifest");
  add_common(synth, synth_c);
  for (auto& [key, value] : synth_flags) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    synth->add_option(flag, value, "synth." + key);
  }
  synth->add_flag("--real-only", synth_real_only, "no forged videos");

  // ---- pretrain
  Common pre_c;
  std::string pre_manifest, pre_checkpoint;
  std::optional<int> pre_epochs;
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining on real videos");
  add_common(pre, pre_c);
  pre->add_option("--manifest", pre_manifest, "real-only manifest (default: data.pretrain)");
  pre->add_option("--checkpoint", pre_checkpoint, "start checkpoint (default: fresh initialization)");
  pre->add_option("--epochs", pre_epochs, "pretrain.epochs");

  // ---- adapt / train-source-only
  Common ad_c, so_c;
  std::string ad_checkpoint, ad_source, ad_target, so_checkpoint, so_source;
  std::optional<int> ad_epochs, so_epochs;
  auto* ad = app.add_subcommand("adapt", "train the adaptive layer and classifier with target reconstruction");
  add_common(ad, ad_c);
  ad->add_option("--checkpoint", ad_checkpoint, "pretrained checkpoint")->required();
  ad->add_option("--source", ad_source, "labeled source manifest (default: data.source)");
  ad->add_option("--target", ad_target, "target manifest, labels ignored (default: data.target)");
  ad->add_option("--epochs", ad_epochs, "adapt.epochs");
  auto* so = app.add_subcommand("train-source-only", "train the adaptive layer and classifier on source labels only");
  add_common(so, so_c);
  so->add_option("--checkpoint", so_checkpoint, "pretrained checkpoint")->required();
  so->add_option("--source", so_source, "labeled source manifest (default: data.source)");
  so->add_option("--epochs", so_epochs, "adapt.epochs");

  // ---- eval / robustness
  Common ev_c, rb_c;
  std::string ev_checkpoint, ev_manifest, ev_perturb, rb_checkpoint, rb_manifest;
  auto* ev = app.add_subcommand("eval", "video-level ACC, AUC and EER of a checkpoint");
  add_common(ev, ev_c);
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint to evaluate")->required();
  ev->add_option("--manifest", ev_manifest, "evaluation manifest (default: first of data.eval)");
  ev->add_option("--perturb", ev_perturb, "corruption kind:severity, e.g. noise:3");
  auto* rb = app.add_subcommand("robustness", "clean plus 7 x 5 corrupted evaluations");
  add_common(rb, rb_c);
  rb->add_option("--checkpoint", rb_checkpoint, "checkpoint to evaluate")->required();
  rb->add_option("--manifest", rb_manifest, "evaluation manifest (default: first of data.eval)");

  // ---- embed / saliency
  Common em_c, sa_c;
  std::string em_checkpoint, em_manifest, em_layer = "z", sa_checkpoint, sa_manifest, sa_video;
  int sa_offset = 0, sa_class = 1;
  auto* em = app.add_subcommand("embed", "export per-video representations for plotting");
  add_common(em, em_c);
  em->add_option("--checkpoint", em_checkpoint, "checkpoint")->required();
  em->add_option("--manifest", em_manifest, "videos to embed (default: first of data.eval)");
  em->add_option("--layer", em_layer, "z (transformer output) or h (adaptive layer output)")
      ->check(CLI::IsMember({"z", "h"}));
  auto* sa = app.add_subcommand("saliency", "Grad-CAM heat map of one clip");
  add_common(sa, sa_c);
  sa->add_option("--checkpoint", sa_checkpoint, "checkpoint")->required();
  sa->add_option("--manifest", sa_manifest, "manifest holding the video (default: first of data.eval)");
  sa->add_option("--video", sa_video, "video id (default: first video)");
  sa->add_option("--offset", sa_offset, "first frame of the clip");
  sa->add_option("--class", sa_class, "explained class: 0 real, 1 fake")->check(CLI::Range(0, 1));

  // ---- protocol
  Common pr_c;
  std::string pr_file;
  auto* pr = app.add_subcommand("protocol", "run a full experiment protocol from a config file");
  pr->add_option("config", pr_file, "protocol config file");
  pr->add_option("--set", pr_c.sets, "override one setting, key=value (repeatable)");
  pr->add_option("--out", pr_c.out, "output directory (default: run.output)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      Config config = load_config(synth_c);
      for (const auto& [key, value] : synth_flags)
        if (!value.empty()) config.set("synth." + key, value);
      if (synth_c.seed) config.set("synth.seed", std::to_string(*synth_c.seed));
      if (synth_real_only) config.set("synth.families", "");
      SyntheticSpec spec;
      spec.name = config.get("synth.name");
      spec.n_videos = config.get_int("synth.n_videos");
      spec.frames_per_video = config.get_int("synth.frames");
      for (const auto& f : config.get_list("synth.families")) spec.families.push_back(parse_family(f));
      spec.style = parse_style(config.get("synth.style"));
      spec.seed = static_cast<std::uint64_t>(config.get_int64("synth.seed"));
      spec.image_size = config.get_int("synth.image_size");
      if (config.has("synth.role")) spec.role = parse_role(config.get("synth.role"));
      const fs::path dir = output_dir(config);
      const auto manifest = make_synthetic_dataset(spec, dir, config.model().clip_length);
      std::cout << "wrote " << manifest.size() << " videos to " << (dir / "manifest.tsv").string() << "\n";
      return 0;
    }

    if (*pre) {
      Config config = load_config(pre_c);
      if (pre_epochs) config.set("pretrain.epochs", std::to_string(*pre_epochs));
      RunDirectory run(config);
      Checkpoint start;
      if (pre_checkpoint.empty()) {
        start = initial_checkpoint(config.model(), static_cast<std::uint64_t>(config.get_int64("run.seed")),
                                   config.init_options());
        save_checkpoint(start, run.path() / "init.ckpt");
      } else {
        start = read_checkpoint(pre_checkpoint, run);
      }
      const auto manifest = read_dataset(config, pre_manifest, "data.pretrain", ManifestRole::pretrain, start.config, run);
      std::ofstream log(run.path() / "pretrain_log.csv");
      const auto result = pretrain(manifest, start, config.pretrain(), &log);
      save_checkpoint(result.checkpoint, run.path() / "pretrain.ckpt");
      std::cout << "wrote " << (run.path() / "pretrain.ckpt").string() << " (" << result.checkpoint.content_hash()
                << ")\n";
      return 0;
    }

    if (*ad || *so) {
      const bool is_adapt = ad->parsed();
      Config config = load_config(is_adapt ? ad_c : so_c);
      const auto epochs = is_adapt ? ad_epochs : so_epochs;
      if (epochs) config.set("adapt.epochs", std::to_string(*epochs));
      RunDirectory run(config);
      const Checkpoint start = read_checkpoint(is_adapt ? ad_checkpoint : so_checkpoint, run);
      const auto source = read_dataset(config, is_adapt ? ad_source : so_source, "data.source", ManifestRole::source,
                                       start.config, run);
      std::ofstream log(run.path() / "train_log.csv");
      AdaptResult result;
      if (is_adapt) {
        const auto target = read_dataset(config, ad_target, "data.target", ManifestRole::target, start.config, run);
        Rng rng(static_cast<std::uint64_t>(config.get_int64("run.seed")));
        const auto pool = build_adaptation_pool(source, target, config.get_double("adapt.target_ratio"), rng);
        result = adapt(start, pool, config.adapt(), &log);
      } else {
        result = train_source_only(start, source, config.adapt(), &log);
      }
      save_checkpoint(result.checkpoint, run.path() / "model.ckpt");
      if (!result.history.empty())
        std::cout << "final source clip accuracy " << format_metric(100 * result.history.back().source_acc) << "%\n";
      std::cout << "wrote " << (run.path() / "model.ckpt").string() << " (" << result.checkpoint.content_hash()
                << ")\n";
      return 0;
    }

    if (*ev) {
      Config config = load_config(ev_c);
      RunDirectory run(config);
      const Checkpoint ckpt = read_checkpoint(ev_checkpoint, run);
      const auto manifest = read_dataset(config, ev_manifest, "data.eval", ManifestRole::eval, ckpt.config, run);
      std::optional<Perturbation> p;
      if (!ev_perturb.empty()) p = Perturbation::parse(ev_perturb);
      const Network<float> net(ckpt.config, ckpt.params);
      const auto scores = score_manifest(net, manifest, config.get_int("eval.clips"), p);
      auto report = compute_metrics(scores, manifest.name());
      if (p) report.perturbation = p->to_string();
      write_scores(scores, run.path() / "scores.tsv");
      write_report(report, run.path() / "report.txt");
      print_report(report);
      return 0;
    }

    if (*rb) {
      Config config = load_config(rb_c);
      RunDirectory run(config);
      const Checkpoint ckpt = read_checkpoint(rb_checkpoint, run);
      const auto manifest = read_dataset(config, rb_manifest, "data.eval", ManifestRole::eval, ckpt.config, run);
      const auto cells = robustness_sweep(ckpt, manifest, config.get_int("eval.clips"), run.path() / "reports",
                                          "robustness", 0, &std::cout);
      write_robustness_table(cells, run.path() / "robustness.tsv");
      write_summary(cells, run.path() / "summary.tsv");
      std::cout << "wrote " << (run.path() / "robustness.tsv").string() << "\n";
      return 0;
    }

    if (*em) {
      Config config = load_config(em_c);
      RunDirectory run(config);
      const Checkpoint ckpt = read_checkpoint(em_checkpoint, run);
      const auto manifest = read_dataset(config, em_manifest, "data.eval", ManifestRole::eval, ckpt.config, run);
      const Network<float> net(ckpt.config, ckpt.params);
      const auto rows = compute_embeddings(net, manifest, parse_layer(em_layer), config.get_int("eval.clips"));
      const fs::path path = run.path() / ("embeddings_" + em_layer + ".tsv");
      write_embeddings(rows, path);
      std::cout << "wrote " << rows.size() << " rows to " << path.string() << "\n";
      return 0;
    }

    if (*sa) {
      Config config = load_config(sa_c);
      RunDirectory run(config);
      const Checkpoint ckpt = read_checkpoint(sa_checkpoint, run);
      const auto manifest = read_dataset(config, sa_manifest, "data.eval", ManifestRole::eval, ckpt.config, run);
      const VideoRecord* record = nullptr;
      for (const auto& r : manifest.records())
        if (sa_video.empty() || r.video_id == sa_video) {
          record = &r;
          break;
        }
      if (!record) throw std::invalid_argument("video '" + sa_video + "' is not in " + manifest.name());
      const int n = ckpt.config.clip_length;
      if (sa_offset < 0 || sa_offset + n > record->frame_count)
        throw std::invalid_argument("offset " + std::to_string(sa_offset) + " leaves no room for a " +
                                    std::to_string(n) + "-frame clip");
      const FrameClip clip = load_clip(*record, sa_offset, n);
      const Network<float> net(ckpt.config, ckpt.params);
      const auto map = saliency_map(net, clip, sa_class);
      const std::string stem = "saliency_" + record->video_id;
      write_saliency(map, clip, run.path() / (stem + ".tsv"), run.path() / (stem + ".png"));
      std::cout << "wrote " << (run.path() / (stem + ".png")).string() << "\n";
      return 0;
    }

    if (*pr) {
      if (pr_file.empty()) throw std::invalid_argument("protocol needs a config file");
      pr_c.config_file = pr_file;
      const Config config = load_config(pr_c);
      const auto result = run_protocol(config, &std::cout);
      std::cout << "wrote " << (result.directory / "summary.tsv").string() << " (" << result.cells.size()
                << " reports)\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
