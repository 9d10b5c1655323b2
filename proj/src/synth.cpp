#include "pfmn/synth.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"
#include "pfmn/params.hpp"

namespace pfmn {
namespace {

using Rng = std::mt19937_64;

void fill_normal(float* out, std::size_t count, double mean, double sd, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<float>(mean + sd * g(rng));
}

void scale_to_norm(float* v, std::size_t d, double norm) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) s += double(v[i]) * v[i];
  const double f = norm / std::sqrt(s);
  for (std::size_t i = 0; i < d; ++i) v[i] = static_cast<float>(v[i] * f);
}

const char* split_name(SynthSplit s) { return s == SynthSplit::kTrain ? "train" : "heldout"; }

}  // namespace

void SynthConfig::validate() const {
  if (storyline < 2) throw ConfigError("synthetic storyline needs K >= 2");
  if (dim < storyline) throw ConfigError("synthetic dim must be at least K for orthogonal centroids");
  const auto min_fit = static_cast<std::size_t>(std::ceil(double(storyline) / kGtBudgetFraction - 1e-9));
  if (min_length < min_fit) {
    throw ConfigError("synthetic min_length " + std::to_string(min_length) + " cannot hold a " +
                      std::to_string(storyline) + "-item storyline within the 15% budget (needs >= " +
                      std::to_string(min_fit) + ")");
  }
  if (max_length < min_length) throw ConfigError("synthetic max_length < min_length");
  if (!(sigma >= 0.0) || !(map_noise >= 0.0)) throw ConfigError("synthetic noise scales must be >= 0");
  if (distractors == 0) throw ConfigError("synthetic corpus needs at least one distractor cluster");
  if (frames_per_subshot == 0 || views == 0 || backgrounds == 0 || map_size == 0 || map_channels == 0)
    throw ConfigError("synthetic extents must be positive");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"storyline", c.storyline},   {"sequences", c.sequences},
       {"heldout", c.heldout},       {"min_length", c.min_length},
       {"max_length", c.max_length}, {"sigma", c.sigma},
       {"distractors", c.distractors}, {"dim", c.dim},
       {"centroid_norm", c.centroid_norm}, {"frames_per_subshot", c.frames_per_subshot},
       {"views", c.views},           {"backgrounds", c.backgrounds},
       {"map_size", c.map_size},     {"map_channels", c.map_channels},
       {"map_noise", c.map_noise},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  SynthConfig d;
  c.storyline = j.value("storyline", d.storyline);
  c.sequences = j.value("sequences", d.sequences);
  c.heldout = j.value("heldout", d.heldout);
  c.min_length = j.value("min_length", d.min_length);
  c.max_length = j.value("max_length", d.max_length);
  c.sigma = j.value("sigma", d.sigma);
  c.distractors = j.value("distractors", d.distractors);
  c.dim = j.value("dim", d.dim);
  c.centroid_norm = j.value("centroid_norm", d.centroid_norm);
  c.frames_per_subshot = j.value("frames_per_subshot", d.frames_per_subshot);
  c.views = j.value("views", d.views);
  c.backgrounds = j.value("backgrounds", d.backgrounds);
  c.map_size = j.value("map_size", d.map_size);
  c.map_channels = j.value("map_channels", d.map_channels);
  c.map_noise = j.value("map_noise", d.map_noise);
  c.seed = j.value("seed", d.seed);
}

SynthCorpus::SynthCorpus(SynthConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t k = config_.storyline, d = config_.dim;

  // Orthogonal storyline centroids by Gram-Schmidt.
  Rng rng(derive_seed(config_.seed, "synth/centroids"));
  centroids_ = Tensor({k, d});
  std::vector<double> v(d);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (auto& x : v) x = g(rng);
    for (std::size_t p = 0; p < r; ++p) {
      double dot = 0, nn = 0;
      for (std::size_t i = 0; i < d; ++i) {
        dot += v[i] * centroids_(p, i);
        nn += double(centroids_(p, i)) * centroids_(p, i);
      }
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot / nn * centroids_(p, i);
    }
    double nrm = 0;
    for (auto x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < d; ++i) centroids_(r, i) = static_cast<float>(v[i] / nrm * config_.centroid_norm);
  }

  Rng drng(derive_seed(config_.seed, "synth/distractors"));
  distractors_ = Tensor({config_.distractors, d});
  for (std::size_t r = 0; r < config_.distractors; ++r) {
    fill_normal(distractors_.raw() + r * d, d, 0.0, 1.0, drng);
    scale_to_norm(distractors_.raw() + r * d, d, config_.centroid_norm);
  }

  Rng mrng(derive_seed(config_.seed, "synth/maps"));
  const std::size_t c = config_.map_channels;
  object_proto_ = Tensor({c});
  fill_normal(object_proto_.raw(), c, 0.0, 1.0, mrng);
  background_protos_ = Tensor({config_.backgrounds, c});
  fill_normal(background_protos_.raw(), background_protos_.size(), 0.0, 1.0, mrng);
  background_vectors_ = Tensor({config_.backgrounds, d});
  for (std::size_t r = 0; r < config_.backgrounds; ++r) {
    fill_normal(background_vectors_.raw() + r * d, d, 0.0, 1.0, mrng);
    scale_to_norm(background_vectors_.raw() + r * d, d, config_.centroid_norm);
  }
}

std::size_t SynthCorpus::size(SynthSplit split) const {
  return split == SynthSplit::kTrain ? config_.sequences : config_.heldout;
}

SynthSequence SynthCorpus::base_sequence(const std::string& id, std::uint64_t seed) const {
  Rng rng(seed);
  const std::size_t k = config_.storyline, d = config_.dim;
  std::uniform_int_distribution<std::size_t> len(config_.min_length, config_.max_length);
  const std::size_t n = len(rng);

  SynthSequence s;
  s.id = id;
  std::vector<std::size_t> slots(n);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  s.storyline.assign(slots.begin(), slots.begin() + std::ptrdiff_t(k));
  std::sort(s.storyline.begin(), s.storyline.end());

  s.cluster.assign(n, 0);
  std::uniform_int_distribution<int> pick(0, int(config_.distractors) - 1);
  for (auto& c : s.cluster) c = -(1 + pick(rng));
  for (std::size_t r = 0; r < k; ++r) s.cluster[s.storyline[r]] = int(r);

  s.features = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const int c = s.cluster[i];
    const float* mu = c >= 0 ? centroids_.raw() + std::size_t(c) * d : distractors_.raw() + std::size_t(-c - 1) * d;
    float* row = s.features.raw() + i * d;
    fill_normal(row, d, 0.0, config_.sigma, rng);
    for (std::size_t j = 0; j < d; ++j) row[j] += mu[j];
  }
  s.segmentation.frame_count = n * config_.frames_per_subshot;
  for (std::size_t i = 1; i < n; ++i) s.segmentation.boundaries.push_back(i * config_.frames_per_subshot);
  return s;
}

SynthSequence SynthCorpus::photostream(std::size_t i, SynthSplit split) const {
  if (i >= size(split)) throw ConfigError("synthetic sequence index out of range");
  const std::string id = std::string("photo-") + split_name(split) + "-" + std::to_string(i);
  return base_sequence(id, derive_seed(config_.seed, id));
}

SynthSequence SynthCorpus::video_content(std::size_t i, SynthSplit split) const {
  if (i >= size(split)) throw ConfigError("synthetic sequence index out of range");
  const std::string id = std::string("video-") + split_name(split) + "-" + std::to_string(i);
  return base_sequence(id, derive_seed(config_.seed, id));
}

SynthVideo SynthCorpus::video(std::size_t i, SynthSplit split) const {
  SynthVideo v;
  static_cast<SynthSequence&>(v) = video_content(i, split);
  const auto& id = v.id;
  Rng rng(derive_seed(config_.seed, id + "/views"));
  const std::size_t n = v.features.dim(0), d = config_.dim, nv = config_.views;
  const std::size_t s = config_.map_size, c = config_.map_channels, cells = s * s;
  std::uniform_int_distribution<std::size_t> key(0, nv - 1), bg(0, config_.backgrounds - 1);
  v.candidates = Tensor({n, nv, d});
  v.maps = Tensor({n, nv, s, s, c});
  for (std::size_t i2 = 0; i2 < n; ++i2) {
    const std::size_t kv = key(rng);
    v.key_views.push_back(kv);
    for (std::size_t j = 0; j < nv; ++j) {
      float* vec = v.candidates.raw() + (i2 * nv + j) * d;
      float* map = v.maps.raw() + (i2 * nv + j) * cells * c;
      const float* proto;
      if (j == kv) {
        std::copy_n(v.features.raw() + i2 * d, d, vec);
        proto = object_proto_.raw();
      } else {
        const std::size_t b = bg(rng);
        fill_normal(vec, d, 0.0, config_.sigma, rng);
        for (std::size_t q = 0; q < d; ++q) vec[q] += background_vectors_[b * d + q];
        proto = background_protos_.raw() + b * c;
      }
      fill_normal(map, cells * c, 0.0, config_.map_noise, rng);
      for (std::size_t q = 0; q < cells * c; ++q) map[q] += proto[q % c];
    }
  }
  return v;
}

RankPairs SynthCorpus::rank_pairs(std::size_t count, const std::string& stream) const {
  Rng rng(derive_seed(config_.seed, "pairs/" + stream));
  const std::size_t s = config_.map_size, c = config_.map_channels, cells = s * s;
  std::uniform_int_distribution<std::size_t> bg(0, config_.backgrounds - 1);
  RankPairs out{Tensor({count, s, s, c}), Tensor({count, s, s, c})};
  for (std::size_t i = 0; i < count; ++i) {
    float* pos = out.positives.raw() + i * cells * c;
    float* neg = out.negatives.raw() + i * cells * c;
    const float* bproto = background_protos_.raw() + bg(rng) * c;
    fill_normal(pos, cells * c, 0.0, config_.map_noise, rng);
    fill_normal(neg, cells * c, 0.0, config_.map_noise, rng);
    for (std::size_t q = 0; q < cells * c; ++q) {
      pos[q] += object_proto_[q % c];
      neg[q] += bproto[q % c];
    }
  }
  return out;
}

Tensor SynthCorpus::exemplars(int cluster, std::size_t count, const std::string& stream) const {
  const std::size_t d = config_.dim;
  if (cluster >= int(config_.storyline) || -cluster - 1 >= int(config_.distractors))
    throw ConfigError("synthetic cluster id out of range");
  const float* mu = cluster >= 0 ? centroids_.raw() + std::size_t(cluster) * d
                                 : distractors_.raw() + std::size_t(-cluster - 1) * d;
  Rng rng(derive_seed(config_.seed, "exemplars/" + stream));
  Tensor out({count, d});
  for (std::size_t i = 0; i < count; ++i) {
    float* row = out.raw() + i * d;
    fill_normal(row, d, 0.0, config_.sigma, rng);
    for (std::size_t j = 0; j < d; ++j) row[j] += mu[j];
  }
  return out;
}

GtSummary planted_gt(const SynthSequence& seq) {
  GtSummary gt;
  gt.annotator = "planted";
  gt.indices = seq.storyline;
  gt.budget_frames = static_cast<std::size_t>(std::floor(kGtBudgetFraction * double(seq.segmentation.frame_count) + 1e-9));
  return gt;
}

std::size_t nearest_centroid(const Tensor& centroids, const float* v) {
  const std::size_t k = centroids.dim(0), d = centroids.dim(1);
  std::size_t best = 0;
  double best_d = 0;
  for (std::size_t r = 0; r < k; ++r) {
    double dist = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = double(v[j]) - centroids(r, j);
      dist += diff * diff;
    }
    if (r == 0 || dist < best_d) {
      best = r;
      best_d = dist;
    }
  }
  return best;
}

}  // namespace pfmn
