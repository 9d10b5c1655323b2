// pfmn: command-line front end for segmentation, view scoring, training,
// summarization, evaluation and synthetic-corpus generation.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pfmn/checkpoint.hpp"
#include "pfmn/error.hpp"
#include "pfmn/features.hpp"
#include "pfmn/pipeline.hpp"
#include "pfmn/sphere.hpp"
#include "pfmn/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pfmn;

namespace {

constexpr int kExitUsage = 2, kExitIo = 3, kExitFormat = 4, kExitNumeric = 5, kExitInternal = 1;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return kExitUsage;
    case ErrorKind::kIo: return kExitIo;
    case ErrorKind::kFormat:
    case ErrorKind::kDimension: return kExitFormat;
    default: return kExitNumeric;
  }
}

int report(const std::string& kind, int code, const std::string& message) {
  std::cerr << json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << "\n";
  return code;
}

struct Options {
  std::string manifest, checkpoint, out, config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::optional<double> ratio;
  std::optional<std::size_t> m;
  std::string phase;
  std::string view_selection = "soft";
  std::string positives, negatives, pred, baseline, image, sidecar;
  std::optional<std::size_t> view;
  std::size_t crop_width = 256, crop_height = 144;
  double min_mean = 25.0, max_mean = 36.0;
  std::size_t pairs = 512;
};

// Every run leaves config.json (resolved settings, seed) and artifacts.json in --out.
class Run {
 public:
  Run(std::string command, const Options& o) : command_(std::move(command)), out_(o.out) {
    if (out_.empty()) throw ConfigError("--out is required");
    fs::create_directories(out_);
    config_ = {{"command", command_}, {"seed", o.seed}};
  }
  const fs::path& dir() const { return out_; }
  json& config() { return config_; }
  fs::path file(const fs::path& rel) {
    const auto p = out_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    artifacts_.push_back(rel.generic_string());
    return p;
  }
  void finish() {
    write_json(config_, out_ / "config.json");
    write_json({{"command", command_}, {"artifacts", artifacts_}}, out_ / "artifacts.json");
  }

 private:
  std::string command_;
  fs::path out_;
  json config_;
  std::vector<std::string> artifacts_;
};

TrainConfig load_train_config(const Options& o, Phase phase) {
  TrainConfig c;
  if (!o.config.empty()) c = read_json(o.config).get<TrainConfig>();
  if (o.seed_given || o.config.empty()) c.seed = o.seed;
  c.phase = phase;
  c.view_selection = o.view_selection == "hard" ? ViewSelection::kHard : ViewSelection::kSoft;
  c.validate();
  return c;
}

Manifest require_manifest(const Options& o) {
  if (o.manifest.empty()) throw ConfigError("--manifest is required");
  return load_manifest(o.manifest);
}

Model require_model(const Options& o, const TrainConfig& c) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_model(o.checkpoint, c.pfmn, c.ranker);
}

void check_phase(const Options& o, Phase expected) {
  if (!o.phase.empty() && phase_from_string(o.phase) != expected)
    throw ConfigError("--phase " + o.phase + " does not match subcommand " + to_string(expected));
}

std::ofstream open_trace(Run& run) {
  std::ofstream f(run.file("trace.ndjson"));
  if (!f) throw IoError("cannot write " + (run.dir() / "trace.ndjson").string());
  return f;
}

json trace_json(const TrainingTrace& t) {
  json epochs = json::array();
  for (const auto& e : t.epochs) epochs.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"learning_rate", e.learning_rate}});
  return {{"initial_loss", t.initial_loss}, {"epochs", epochs}};
}

void save_model(Run& run, const Model& model, const std::string& name, const std::vector<fs::path>& extra) {
  save_checkpoint(model.params, run.file(name));
  for (const auto& p : extra) run.file(fs::relative(p, run.dir()));
}

// --- subcommands ---

void cmd_segment(const Options& o) {
  Run run("segment", o);
  const auto manifest = require_manifest(o);
  run.config()["manifest"] = fs::absolute(o.manifest).string();
  run.config()["min_mean"] = o.min_mean;
  run.config()["max_mean"] = o.max_mean;
  Manifest out = manifest;
  out.root = run.dir();
  std::vector<json> results(manifest.videos.size());
  parallel_for(manifest.videos.size(), default_thread_count(), [&](std::size_t, std::size_t i) {
    const auto& e = manifest.videos[i];
    if (!e.frames) throw ConfigError("entry '" + e.id + "' has no frame features to segment");
    const auto frames = read_features(*e.frames);
    if (frames.data.rank() != 2) throw FormatError("entry '" + e.id + "': frame features must be T x d");
    const auto r = kts_segment_auto(frames.data, o.min_mean, o.max_mean);
    auto j = segmentation_to_json(r.segmentation);
    j["penalty"] = r.penalty;
    j["in_target"] = r.in_target;
    results[i] = std::move(j);
  });
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto path = run.file(manifest.videos[i].id + ".seg.json");
    write_json(results[i], path);
    out.videos[i].segmentation = path;
  }
  save_manifest(out, run.file("manifest.json"));
  run.finish();
}

void cmd_score_views(const Options& o) {
  Run run("score-views", o);
  const auto manifest = require_manifest(o);
  const auto cfg = load_train_config(o, Phase::kFinetune);
  auto model = require_model(o, cfg);
  if (!model.ranker) throw FormatError("checkpoint " + o.checkpoint + " has no ranker parameters");
  run.config()["manifest"] = fs::absolute(o.manifest).string();
  run.config()["checkpoint"] = fs::absolute(o.checkpoint).string();
  run.config()["ranker"] = *model.ranker;
  Manifest out = manifest;
  out.root = run.dir();
  const std::size_t threads = default_thread_count();
  std::vector<Model> workers(std::min(threads, std::max<std::size_t>(1, manifest.videos.size())), model);
  std::vector<Tensor> scores(manifest.videos.size());
  parallel_for(manifest.videos.size(), threads, [&](std::size_t w, std::size_t i) {
    const auto& e = manifest.videos[i];
    if (!e.maps) throw ConfigError("entry '" + e.id + "' has no per-view maps");
    const auto maps = read_features(*e.maps).data;
    const auto& s = maps.shape();
    if (s.size() != 5) throw FormatError("entry '" + e.id + "': maps must be n x V x H x W x C");
    auto raw = score_views(maps.reshape({s[0] * s[1], s[2], s[3], s[4]}), workers[w].params, *workers[w].ranker, s[1]);
    Tensor t({s[0], s[1]});
    std::copy(raw.begin(), raw.end(), t.raw());
    scores[i] = std::move(t);
  });
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto path = run.file(manifest.videos[i].id + ".scores.feat");
    write_features({FeatureKind::kScores, 0, std::move(scores[i])}, path);
    out.videos[i].scores = path;
  }
  save_manifest(out, run.file("manifest.json"));
  run.finish();
}

void cmd_train_ranker(const Options& o) {
  check_phase(o, Phase::kRanker);
  Run run("train-ranker", o);
  auto cfg = load_train_config(o, Phase::kRanker);
  if (o.positives.empty() || o.negatives.empty()) throw ConfigError("--positives and --negatives are required");
  const auto pos = read_features(o.positives), neg = read_features(o.negatives);
  const auto& ps = pos.data.shape();
  if (ps.size() != 4 || ps[1] != ps[2]) throw FormatError("pair maps must be N x S x S x C, got " + shape_string(ps));
  cfg.ranker.map_size = ps[1];
  cfg.ranker.in_channels = ps[3];
  cfg.ranker.validate();
  Model model;
  if (!o.checkpoint.empty()) {
    model = load_model(o.checkpoint, cfg.pfmn, cfg.ranker);
    if (!model.ranker) throw FormatError("checkpoint " + o.checkpoint + " has no ranker parameters");
  } else {
    model.ranker = cfg.ranker;
    add_ranker_params(model.params, cfg.ranker, derive_seed(cfg.seed, "init/ranker"));
  }
  run.config()["train"] = cfg;
  run.config()["positives"] = fs::absolute(o.positives).string();
  run.config()["negatives"] = fs::absolute(o.negatives).string();
  auto trace_file = open_trace(run);
  const auto trace = train_ranker(model, {pos.data, neg.data}, cfg, {run.dir(), &trace_file});
  const auto ev = evaluate_ranker(model, {pos.data, neg.data});
  save_model(run, model, "ranker.ckpt", trace.checkpoints);
  auto summary = trace_json(trace);
  summary["train_pair_accuracy"] = ev.pair_accuracy;
  summary["train_mean_hinge"] = ev.mean_hinge;
  write_json(summary, run.file("summary.json"));
  run.finish();
}

void cmd_fit(const Options& o, Phase phase) {
  check_phase(o, phase);
  const std::string name = to_string(phase);
  Run run(name, o);
  auto cfg = load_train_config(o, phase);
  const auto manifest = require_manifest(o);
  if (manifest.videos.empty()) throw ConfigError("manifest lists no sequences");
  Model model;
  bool initialized = false;
  if (!o.checkpoint.empty()) {
    model = load_model(o.checkpoint, cfg.pfmn, cfg.ranker);
    initialized = has_pfmn(model.params);
  } else if (phase == Phase::kFinetune) {
    throw ConfigError("finetune needs --checkpoint from a pretrain run");
  }
  if (!has_pfmn(model.params)) {
    const auto first = load_sequence(manifest.videos.front(), false);
    cfg.pfmn.feature_dim = first.candidates.empty() ? first.features.dim(1) : first.candidates.dim(2);
    auto fresh = make_model(cfg.pfmn, std::nullopt, cfg.seed);
    for (const auto& [pname, p] : model.params) fresh.params.add(pname, p.value, p.trainable);
    fresh.ranker = model.ranker;
    model = std::move(fresh);
  }
  run.config()["train"] = cfg;
  run.config()["model"] = {{"pfmn", model.pfmn}};
  if (model.ranker) run.config()["model"]["ranker"] = *model.ranker;
  run.config()["manifest"] = fs::absolute(o.manifest).string();
  if (!o.checkpoint.empty()) run.config()["checkpoint"] = fs::absolute(o.checkpoint).string();
  auto trace_file = open_trace(run);
  const auto trace = fit(model, manifest_corpus(manifest, true), cfg, initialized, {run.dir(), &trace_file});
  save_model(run, model, name + ".ckpt", trace.checkpoints);
  write_json(trace_json(trace), run.file("summary.json"));
  run.finish();
}

void cmd_summarize(const Options& o) {
  Run run("summarize", o);
  const auto cfg = load_train_config(o, Phase::kFinetune);
  const auto manifest = require_manifest(o);
  auto model = require_model(o, cfg);
  if (!has_pfmn(model.params)) throw FormatError("checkpoint " + o.checkpoint + " has no memory-network parameters");
  SummaryOptions so;
  so.m = o.m;
  if (o.ratio) so.ratio = *o.ratio;
  so.mode = cfg.view_selection;
  so.hard_k = cfg.hard_k;
  run.config()["manifest"] = fs::absolute(o.manifest).string();
  run.config()["checkpoint"] = fs::absolute(o.checkpoint).string();
  run.config()["ratio"] = so.ratio;
  run.config()["m"] = o.m ? json(*o.m) : json(nullptr);
  run.config()["view_selection"] = o.view_selection;
  run.config()["hard_k"] = so.hard_k;
  const std::size_t threads = default_thread_count();
  std::vector<Model> workers(std::min(threads, std::max<std::size_t>(1, manifest.videos.size())), model);
  std::vector<json> out(manifest.videos.size());
  parallel_for(manifest.videos.size(), threads, [&](std::size_t w, std::size_t i) {
    out[i] = summarize_entry(manifest.videos[i], workers[w], so);
  });
  write_json({{"videos", out}}, run.file("summaries.json"));
  run.finish();
}

// Predictions come from a summaries file, a manifest (its first GT per video), or a baseline.
std::map<std::string, std::vector<std::size_t>> load_predictions(const Options& o) {
  std::map<std::string, std::vector<std::size_t>> pred;
  const auto j = read_json(o.pred);
  if (!j.contains("videos") || !j.at("videos").is_array()) throw FormatError(o.pred + " has no videos array");
  const bool is_manifest = !j.at("videos").empty() && j.at("videos").front().contains("id");
  if (is_manifest) {
    const auto m = load_manifest(o.pred);
    for (const auto& e : m.videos) {
      if (e.gt.empty()) throw ConfigError("prediction manifest entry '" + e.id + "' has no GT summary");
      pred[e.id] = gt_from_json(read_json(e.gt.front())).indices;
    }
  } else {
    try {
      for (const auto& v : j.at("videos")) pred[v.at("video_id").get<std::string>()] = v.at("indices").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
      throw FormatError(o.pred + ": malformed summaries (" + e.what() + ")");
    }
  }
  return pred;
}

void cmd_evaluate(const Options& o) {
  Run run("evaluate", o);
  const auto manifest = require_manifest(o);
  if (o.pred.empty() == o.baseline.empty()) throw ConfigError("evaluate needs exactly one of --pred or --baseline");
  run.config()["manifest"] = fs::absolute(o.manifest).string();
  std::map<std::string, std::vector<std::size_t>> pred;
  std::optional<BaselineKind> baseline;
  if (!o.pred.empty()) {
    pred = load_predictions(o);
    run.config()["pred"] = fs::absolute(o.pred).string();
  } else {
    baseline = baseline_from_string(o.baseline);
    run.config()["baseline"] = o.baseline;
    run.config()["ratio"] = o.ratio.value_or(0.15);
    if (o.m) run.config()["m"] = *o.m;
  }
  std::vector<json> per(manifest.videos.size());
  double total = 0;
  for (std::size_t i = 0; i < manifest.videos.size(); ++i) {
    const auto& e = manifest.videos[i];
    Segmentation seg = entry_segmentation(e);
    std::vector<std::size_t> p;
    if (baseline) {
      SummaryOptions so;
      so.m = o.m;
      so.ratio = o.ratio.value_or(0.15);
      const std::size_t n = seg.segment_count();
      p = baseline_select(*baseline, n, resolve_summary_length(n, so), derive_seed(o.seed, "baseline/" + e.id));
    } else {
      const auto it = pred.find(e.id);
      if (it == pred.end()) throw ConfigError("no prediction for video '" + e.id + "'");
      p = it->second;
    }
    const auto gts = entry_gt(e, seg);
    if (gts.empty()) throw ConfigError("entry '" + e.id + "' has no GT summaries");
    const auto rep = f1_summary(p, gts, seg);
    per[i] = metrics_report(e.id, rep);
    std::vector<std::vector<std::size_t>> gt_sets;
    for (const auto& g : gts) gt_sets.push_back(g.indices);
    const auto [prec, rec] = precision_recall(p, gt_sets);
    per[i]["precision"] = prec;
    per[i]["recall"] = rec;
    total += rep.f1;
  }
  const double mean = manifest.videos.empty() ? 0.0 : total / double(manifest.videos.size());
  write_json({{"mean_f1", mean}, {"videos", per}}, run.file("metrics.json"));
  std::cout << "mean_f1 " << mean << "\n";
  run.finish();
}

void cmd_synth_gen(const Options& o) {
  Run run("synth-gen", o);
  SynthConfig sc;
  if (!o.config.empty()) sc = read_json(o.config).get<SynthConfig>();
  if (o.seed_given || o.config.empty()) sc.seed = o.seed;
  sc.validate();
  run.config()["seed"] = sc.seed;
  run.config()["synth"] = sc;
  run.config()["pairs"] = o.pairs;
  const SynthCorpus corpus(sc);
  const auto exp = export_synthetic(corpus, run.dir(), o.pairs);
  for (const auto& f : exp.files) run.file(fs::relative(f, run.dir()));
  run.finish();
}

void cmd_crop_nfov(const Options& o) {
  Run run("crop-nfov", o);
  if (o.image.empty()) throw ConfigError("--image is required");
  const auto erp = load_erp(o.image, o.sidecar);
  const auto grid = viewpoint_grid();
  if (o.view && *o.view >= grid.size())
    throw ConfigError("--view must be below " + std::to_string(grid.size()));
  run.config()["image"] = fs::absolute(o.image).string();
  run.config()["width"] = o.crop_width;
  run.config()["height"] = o.crop_height;
  json listing = json::array();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (o.view && *o.view != i) continue;
    NfovSpec spec;
    spec.center = grid[i];
    spec.out_width = o.crop_width;
    spec.out_height = o.crop_height;
    spec.validate();
    char name[32];
    std::snprintf(name, sizeof name, "view-%02zu.png", i);
    write_png(gnomonic_crop(erp, spec), run.file(name));
    listing.push_back({{"index", i}, {"longitude", grid[i].longitude}, {"latitude", grid[i].latitude}, {"file", name}});
  }
  write_json({{"views", listing}}, run.file("views.json"));
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pfmn: 360 video summarization with a past-future memory network"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c, bool manifest, bool checkpoint) {
    c->add_option("--out", o.out, "output directory")->required();
    c->add_option("--seed", o.seed, "random seed")->each([&](const std::string&) { o.seed_given = true; });
    c->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    if (manifest) c->add_option("--manifest", o.manifest, "dataset manifest")->required();
    if (checkpoint) c->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  };
  auto view_flag = [&](CLI::App* c) {
    c->add_option("--view-selection", o.view_selection, "soft or hard view weighting")
        ->check(CLI::IsMember({"soft", "hard"}));
  };

  auto* seg = app.add_subcommand("segment", "KTS segmentation of frame features");
  common(seg, true, false);
  seg->add_option("--min-mean", o.min_mean, "lower bound of the mean segment length (frames)");
  seg->add_option("--max-mean", o.max_mean, "upper bound of the mean segment length (frames)");

  auto* sv = app.add_subcommand("score-views", "score every candidate view with the ranker");
  common(sv, true, true);
  sv->get_option("--checkpoint")->required();

  auto* tr = app.add_subcommand("train-ranker", "train the view ranker on photo/crop pairs");
  common(tr, false, true);
  tr->add_option("--positives", o.positives, "positive maps (N x S x S x C)")->required();
  tr->add_option("--negatives", o.negatives, "negative maps (N x S x S x C)")->required();
  tr->add_option("--phase", o.phase, "must be ranker when given");

  auto* pre = app.add_subcommand("pretrain", "train the memory network on photostreams");
  common(pre, true, true);
  pre->add_option("--phase", o.phase, "must be pretrain when given");

  auto* ft = app.add_subcommand("finetune", "fine-tune on 360 videos (ranker in the loop)");
  common(ft, true, true);
  ft->add_option("--phase", o.phase, "must be finetune when given");
  view_flag(ft);

  auto* train = app.add_subcommand("train", "run one training phase selected by --phase");
  common(train, false, true);
  train->add_option("--phase", o.phase, "ranker, pretrain or finetune")->required();
  train->add_option("--manifest", o.manifest, "dataset manifest");
  train->add_option("--positives", o.positives, "positive maps for the ranker phase");
  train->add_option("--negatives", o.negatives, "negative maps for the ranker phase");
  view_flag(train);

  auto* sum = app.add_subcommand("summarize", "decode summaries");
  common(sum, true, true);
  sum->get_option("--checkpoint")->required();
  auto* ratio = sum->add_option("--ratio", o.ratio, "summary length as a fraction of n (default 0.15)");
  sum->add_option("--m", o.m, "summary length in subshots")->excludes(ratio);
  view_flag(sum);

  auto* ev = app.add_subcommand("evaluate", "frame-level F1 against GT summaries");
  common(ev, true, false);
  ev->add_option("--pred", o.pred, "summaries JSON or a manifest whose GT is the prediction");
  ev->add_option("--baseline", o.baseline, "random or uniform");
  auto* eratio = ev->add_option("--ratio", o.ratio, "baseline summary length fraction");
  ev->add_option("--m", o.m, "baseline summary length")->excludes(eratio);

  auto* sg = app.add_subcommand("synth-gen", "write a synthetic storyline corpus");
  common(sg, false, false);
  sg->add_option("--pairs", o.pairs, "ranker pairs per split");

  auto* crop = app.add_subcommand("crop-nfov", "render the 81 candidate views of an ERP image");
  common(crop, false, false);
  crop->add_option("--image", o.image, "ERP image (PNG)")->required();
  crop->add_option("--sidecar", o.sidecar, "ERP sidecar JSON");
  crop->add_option("--view", o.view, "render a single candidate index");
  crop->add_option("--width", o.crop_width, "crop width in pixels");
  crop->add_option("--height", o.crop_height, "crop height in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", kExitUsage, e.what());
  }

  try {
    if (*seg) cmd_segment(o);
    else if (*sv) cmd_score_views(o);
    else if (*tr) cmd_train_ranker(o);
    else if (*pre) cmd_fit(o, Phase::kPretrain);
    else if (*ft) cmd_fit(o, Phase::kFinetune);
    else if (*train) {
      const auto phase = phase_from_string(o.phase);
      if (phase == Phase::kRanker) cmd_train_ranker(o);
      else cmd_fit(o, phase);
    }
    else if (*sum) cmd_summarize(o);
    else if (*ev) cmd_evaluate(o);
    else if (*sg) cmd_synth_gen(o);
    else if (*crop) cmd_crop_nfov(o);
  } catch (const Error& e) {
    return report(to_string(e.kind()), exit_code(e.kind()), e.what());
  } catch (const fs::filesystem_error& e) {
    return report("io", kExitIo, e.what());
  } catch (const std::exception& e) {
    return report("internal", kExitInternal, e.what());
  }
  return 0;
}
