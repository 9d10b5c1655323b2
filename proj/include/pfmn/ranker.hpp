#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pfmn/ops.hpp"
#include "pfmn/params.hpp"
#include "pfmn/tape.hpp"

namespace pfmn {

/// Key-objectness ranking CNN over res5c-style maps: three valid 2x2 convs
/// (each followed by batchnorm and ReLU), global average pool, linear, sigmoid.
struct RankerConfig {
  std::size_t in_channels = 2048;
  std::array<std::size_t, 3> channels{2048, 1024, 512};
  std::size_t map_size = 7;  // nominal extent; any map at least 3 * (kernel - 1) + 1 wide is accepted
  std::size_t kernel = 2;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  Shape map_shape() const { return {map_size, map_size, in_channels}; }
  void validate() const;
};

void to_json(nlohmann::json& j, const RankerConfig& c);
void from_json(const nlohmann::json& j, RankerConfig& c);

/// Registers "ranker/..." parameters with He initialization.
void add_ranker_params(ParamRegistry<float>& registry, const RankerConfig& config, std::uint64_t seed);

/// Scores a batch of maps (N x H x W x C, or one H x W x C map) and returns an
/// N-vector of sigmoid scores. `layer_shapes`, when given, receives the
/// activation shape after each conv block.
template <class T>
Var<T> ranker_forward(Tape<T>& tape, ParamRegistry<T>& params, Var<T> maps, const RankerConfig& config,
                      NormMode mode, std::vector<Shape>* layer_shapes = nullptr);

/// Inference-mode score of a single map.
float score_view(const Tensor& map, ParamRegistry<float>& params, const RankerConfig& config);
/// Inference-mode scores of N maps (N x H x W x C), evaluated in chunks.
std::vector<float> score_views(const Tensor& maps, ParamRegistry<float>& params, const RankerConfig& config,
                               std::size_t chunk = 81);

/// max(0, neg - pos + 1).
double rank_loss(double pos_score, double neg_score);
/// Summed hinge over aligned positive/negative score vectors.
template <class T>
Var<T> rank_hinge(Var<T> pos, Var<T> neg);

/// L1 normalization; throws DomainError when the scores do not sum to a positive value.
std::vector<float> normalize_scores(const std::vector<float>& raw);

/// Keeps the K largest raw scores (lowest index wins ties) and renormalizes them.
std::vector<float> top_k_weights(const std::vector<float>& raw, std::size_t k);

/// Convex combination of candidate rows (K x D) with aligned weights.
Tensor subshot_descriptor(const Tensor& candidates, const std::vector<float>& weights);

enum class ViewSelection { kSoft, kHard };
inline constexpr std::size_t kHardTopK = 12;

/// Candidate weights for one subshot under the chosen selection mode.
std::vector<float> view_weights(const std::vector<float>& raw, ViewSelection mode, std::size_t k = kHardTopK);

}  // namespace pfmn
