#include "pfmn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"
#include "pfmn/features.hpp"
#include "pfmn/params.hpp"

namespace pfmn {
namespace fs = std::filesystem;

namespace {

Tensor read_kind(const fs::path& path, FeatureKind kind, const std::string& id, const char* field) {
  auto f = read_features(path);
  if (f.kind != kind) {
    throw FormatError("entry '" + id + "' field " + field + ": " + path.string() + " holds feature kind " +
                      std::to_string(int(f.kind)) + ", expected " + std::to_string(int(kind)));
  }
  return std::move(f.data);
}

std::string seq_file(const std::string& id, const char* suffix) { return id + "." + suffix; }

}  // namespace

TrainingSequence load_sequence(const VideoEntry& e, bool with_maps) {
  TrainingSequence s;
  s.id = e.id;
  if (e.candidates) {
    s.candidates = read_kind(*e.candidates, FeatureKind::kPoolVectors, e.id, "candidates");
    if (s.candidates.rank() != 3) throw FormatError("entry '" + e.id + "': candidates must be n x V x D");
    if (with_maps && e.maps) {
      s.maps = read_kind(*e.maps, FeatureKind::kSpatialMaps, e.id, "maps");
    } else if (e.scores) {
      s.scores = read_kind(*e.scores, FeatureKind::kScores, e.id, "scores");
    }
    return s;
  }
  if (!e.features) throw ConfigError("entry '" + e.id + "' has neither features nor candidates");
  s.features = read_kind(*e.features, FeatureKind::kPoolVectors, e.id, "features");
  if (s.features.rank() != 2) throw FormatError("entry '" + e.id + "': features must be n x D");
  return s;
}

SequenceCorpus manifest_corpus(const Manifest& manifest, bool with_maps) {
  return {manifest.videos.size(),
          [&manifest, with_maps](std::size_t i) { return load_sequence(manifest.videos[i], with_maps); }};
}

Segmentation entry_segmentation(const VideoEntry& e, std::optional<std::size_t> subshots) {
  Segmentation seg;
  if (e.segmentation) {
    seg = segmentation_from_json(read_json(*e.segmentation));
  } else if (e.frames) {
    const auto frames = read_kind(*e.frames, FeatureKind::kPoolVectors, e.id, "frames");
    if (frames.rank() != 2) throw FormatError("entry '" + e.id + "': frame features must be T x d");
    seg = kts_segment_auto(frames).segmentation;
  } else if (subshots) {
    seg = uniform_segmentation(*subshots, *subshots);
  } else {
    throw ConfigError("entry '" + e.id + "' has no segmentation, frame features or subshot count");
  }
  if (subshots && seg.segment_count() != *subshots) {
    throw FormatError("entry '" + e.id + "': segmentation has " + std::to_string(seg.segment_count()) +
                      " subshots but the descriptors have " + std::to_string(*subshots));
  }
  return seg;
}

std::size_t resolve_summary_length(std::size_t n, const SummaryOptions& o) {
  if (n == 0) throw ConfigError("video has no subshots");
  if (o.m) {
    if (*o.m == 0) throw ConfigError("m must be at least 1");
    if (*o.m > n) {
      throw ConfigError("m = " + std::to_string(*o.m) + " exceeds the n = " + std::to_string(n) +
                        " subshots of the video (need 1 <= m <= n)");
    }
    return *o.m;
  }
  if (!(o.ratio > 0.0 && o.ratio <= 1.0)) throw ConfigError("ratio must lie in (0, 1]");
  return summary_length(n, o.ratio);
}

nlohmann::json summarize_entry(const VideoEntry& entry, Model& model, const SummaryOptions& options) {
  const auto seq = load_sequence(entry, true);
  const auto desc = descriptors_for(seq, model, options.mode, options.hard_k);
  const std::size_t n = desc.dim(0);
  const std::size_t m = resolve_summary_length(n, options);
  const auto seg = entry_segmentation(entry, n);
  const auto result = decode(desc, m, model.params, model.pfmn);
  const auto ranges = seg.segments();

  nlohmann::json out;
  out["video_id"] = entry.id;
  out["n"] = n;
  out["m"] = m;
  out["indices"] = result.indices;
  auto& fr = out["subshot_frame_ranges"] = nlohmann::json::array();
  for (auto z : result.indices) fr.push_back({ranges[z].first, ranges[z].second});
  auto& steps = out["per_step"] = nlohmann::json::array();
  std::size_t first = 0;  // first subshot of the step's candidate window
  for (const auto& st : result.steps) {
    std::vector<std::size_t> order(st.s.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min<std::size_t>(5, order.size());
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return st.s[a] > st.s[b] || (st.s[a] == st.s[b] && a < b); });
    auto top = nlohmann::json::array();
    for (std::size_t i = 0; i < k; ++i) top.push_back({{"z", first + order[i]}, {"s", st.s[order[i]]}});
    steps.push_back({{"t", st.t}, {"z", st.z}, {"top5_s", top}, {"degenerate", st.degenerate}});
    first = st.z + 1;
  }
  return out;
}

std::vector<GtSummary> entry_gt(const VideoEntry& entry, const Segmentation& seg) {
  std::vector<GtSummary> out;
  for (const auto& p : entry.gt) out.push_back(gt_from_json(read_json(p), &seg));
  return out;
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("PFMN_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v <= 0) throw ConfigError(std::string("PFMN_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_item = count;
  std::exception_ptr failure;
  auto work = [&](std::size_t worker) {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(worker, i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_item) {
          failed_item = i;
          failure = std::current_exception();
        }
      }
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
  }
  if (failure) std::rethrow_exception(failure);
}

SynthExport export_synthetic(const SynthCorpus& corpus, const fs::path& dir, std::size_t pair_count) {
  const auto& cfg = corpus.config();
  SynthExport out;
  const std::uint64_t provenance = derive_seed(cfg.seed, "synthetic");
  auto write_feat = [&](FeatureKind kind, Tensor data, const fs::path& rel) {
    fs::create_directories((dir / rel).parent_path());
    write_features({kind, provenance, std::move(data)}, dir / rel);
    out.files.push_back(dir / rel);
    return dir / rel;
  };
  auto write_js = [&](const nlohmann::json& j, const fs::path& rel) {
    fs::create_directories((dir / rel).parent_path());
    write_json(j, dir / rel);
    out.files.push_back(dir / rel);
    return dir / rel;
  };
  // Frame features: a per-cluster code plus noise, so KTS can find the subshot boundaries.
  constexpr std::size_t kFrameDim = 16;
  auto frames_of = [&](const SynthSequence& s) {
    const std::size_t per = cfg.frames_per_subshot, n = s.cluster.size();
    Tensor f({n * per, kFrameDim});
    std::mt19937_64 noise(derive_seed(cfg.seed, s.id + "/frames"));
    std::normal_distribution<float> g(0.f, 1.f);
    for (std::size_t i = 0; i < n; ++i) {
      std::mt19937_64 code(derive_seed(cfg.seed, "frame-code/" + std::to_string(s.cluster[i])));
      float c[kFrameDim];
      for (auto& v : c) v = g(code);
      for (std::size_t k = 0; k < per; ++k)
        for (std::size_t q = 0; q < kFrameDim; ++q) f[(i * per + k) * kFrameDim + q] = c[q] + 0.05f * g(noise);
    }
    return f;
  };

  for (auto split : {SynthSplit::kTrain, SynthSplit::kHeldOut}) {
    const std::string sname = split == SynthSplit::kTrain ? "train" : "heldout";
    for (bool videos : {false, true}) {
      const std::string kind = videos ? "videos" : "photostreams";
      Manifest m;
      m.topic = "synthetic";
      m.root = dir;
      for (std::size_t i = 0; i < corpus.size(split); ++i) {
        VideoEntry e;
        SynthSequence seq;
        const fs::path base = fs::path(kind) / sname;
        if (videos) {
          auto v = corpus.video(i, split);
          e.candidates = write_feat(FeatureKind::kPoolVectors, std::move(v.candidates), base / seq_file(v.id, "cand.feat"));
          e.maps = write_feat(FeatureKind::kSpatialMaps, std::move(v.maps), base / seq_file(v.id, "maps.feat"));
          seq = std::move(v);
          e.frames = write_feat(FeatureKind::kPoolVectors, frames_of(seq), base / seq_file(seq.id, "frames.feat"));
        } else {
          seq = corpus.photostream(i, split);
          e.features = write_feat(FeatureKind::kPoolVectors, seq.features, base / seq_file(seq.id, "feat"));
        }
        e.id = seq.id;
        e.topic = m.topic;
        e.storyline = seq.storyline;
        e.segmentation = write_js(segmentation_to_json(seq.segmentation), base / seq_file(seq.id, "seg.json"));
        e.gt.push_back(write_js(gt_to_json(planted_gt(seq)), base / seq_file(seq.id, "gt.json")));
        m.videos.push_back(std::move(e));
      }
      const fs::path mpath = dir / (kind + "-" + sname + ".json");
      save_manifest(m, mpath);
      out.files.push_back(mpath);
    }
  }
  const auto pairs = corpus.rank_pairs(pair_count, "train");
  write_feat(FeatureKind::kSpatialMaps, pairs.positives, fs::path("pairs") / "positives.feat");
  write_feat(FeatureKind::kSpatialMaps, pairs.negatives, fs::path("pairs") / "negatives.feat");
  const auto held = corpus.rank_pairs(pair_count, "heldout");
  write_feat(FeatureKind::kSpatialMaps, held.positives, fs::path("pairs") / "heldout-positives.feat");
  write_feat(FeatureKind::kSpatialMaps, held.negatives, fs::path("pairs") / "heldout-negatives.feat");
  return out;
}

}  // namespace pfmn
