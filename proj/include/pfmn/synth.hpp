#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pfmn/eval.hpp"
#include "pfmn/temporal_seg.hpp"
#include "pfmn/tensor.hpp"

namespace pfmn {

/// Synthetic same-topic corpus with a planted storyline: every sequence holds
/// one noisy exemplar of each of K storyline centroids, in order, at sorted
/// random positions; every other slot is an exemplar of a random distractor
/// cluster. The 360 variant hides each subshot's content vector in one of
/// `views` candidate views and gives that view an object-like spatial map.
struct SynthConfig {
  std::size_t storyline = 5;
  std::size_t sequences = 200;
  std::size_t heldout = 50;
  std::size_t min_length = 40;
  std::size_t max_length = 60;
  double sigma = 0.1;
  std::size_t distractors = 100;
  std::size_t dim = 2048;
  double centroid_norm = std::sqrt(2.0);
  std::size_t frames_per_subshot = 30;

  std::size_t views = 81;
  std::size_t backgrounds = 4;  // background prototypes for non-key views
  std::size_t map_size = 7;
  std::size_t map_channels = 16;
  double map_noise = 1.0;

  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

enum class SynthSplit { kTrain, kHeldOut };

struct SynthSequence {
  std::string id;
  Tensor features;                     // [n, dim]; for videos the key-view vectors
  std::vector<std::size_t> storyline;  // planted positions, ascending, 0-based
  std::vector<int> cluster;            // storyline slot k >= 0, or -(1 + distractor id)
  Segmentation segmentation;
};

struct SynthVideo : SynthSequence {
  Tensor candidates;  // [n, views, dim]
  Tensor maps;        // [n, views, S, S, C]
  std::vector<std::size_t> key_views;
};

struct RankPairs {
  Tensor positives;  // [N, S, S, C] object maps
  Tensor negatives;  // [N, S, S, C] background maps
};

class SynthCorpus {
 public:
  explicit SynthCorpus(SynthConfig config);

  const SynthConfig& config() const { return config_; }
  const Tensor& centroids() const { return centroids_; }              // [K, dim]
  const Tensor& distractor_centroids() const { return distractors_; }  // [distractors, dim]
  std::size_t size(SynthSplit split) const;

  /// Sequences are generated on demand from (seed, split, index).
  SynthSequence photostream(std::size_t i, SynthSplit split = SynthSplit::kTrain) const;
  SynthVideo video(std::size_t i, SynthSplit split = SynthSplit::kTrain) const;
  /// The video's subshot contents and storyline without the per-view data.
  SynthSequence video_content(std::size_t i, SynthSplit split = SynthSplit::kTrain) const;

  RankPairs rank_pairs(std::size_t count, const std::string& stream) const;

  /// Exemplar of storyline slot k (or a distractor when k < 0) drawn from `stream`.
  Tensor exemplars(int cluster, std::size_t count, const std::string& stream) const;

 private:
  SynthSequence base_sequence(const std::string& id, std::uint64_t seed) const;

  SynthConfig config_;
  Tensor centroids_;
  Tensor distractors_;
  Tensor object_proto_;  // [C]
  Tensor background_protos_;  // [backgrounds, C]
  Tensor background_vectors_;  // [backgrounds, dim]
};

/// The planted storyline as a GT summary over the sequence's segmentation.
GtSummary planted_gt(const SynthSequence& seq);

/// Index of the nearest row of `centroids` ([K, D]) to `v` (lowest index on ties).
std::size_t nearest_centroid(const Tensor& centroids, const float* v);

}  // namespace pfmn
