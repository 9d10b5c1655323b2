#include "pfmn/ranker.hpp"

#include <algorithm>
#include <numeric>
#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"

namespace pfmn {
namespace {

std::string conv_name(std::size_t i) { return "ranker/conv" + std::to_string(i + 1) + "/kernel"; }
std::string bn_name(std::size_t i, const char* field) { return "ranker/bn" + std::to_string(i + 1) + "/" + field; }

}  // namespace

void RankerConfig::validate() const {
  if (in_channels == 0 || kernel == 0) throw ConfigError("ranker channels and kernel must be positive");
  for (auto c : channels)
    if (c == 0) throw ConfigError("ranker channels must be positive");
  if (map_size < 3 * (kernel - 1) + 1) throw ConfigError("ranker map is too small for three valid convs");
}

void to_json(nlohmann::json& j, const RankerConfig& c) {
  j = {{"in_channels", c.in_channels}, {"channels", c.channels}, {"map_size", c.map_size},
       {"kernel", c.kernel},           {"bn_momentum", c.bn_momentum}, {"bn_eps", c.bn_eps}};
}

void from_json(const nlohmann::json& j, RankerConfig& c) {
  c.in_channels = j.value("in_channels", c.in_channels);
  c.channels = j.value("channels", c.channels);
  c.map_size = j.value("map_size", c.map_size);
  c.kernel = j.value("kernel", c.kernel);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
}

void add_ranker_params(ParamRegistry<float>& registry, const RankerConfig& config, std::uint64_t seed) {
  config.validate();
  std::size_t cin = config.in_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t cout = config.channels[i];
    const std::size_t fan_in = config.kernel * config.kernel * cin;
    registry.add(conv_name(i), he_init({config.kernel, config.kernel, cin, cout}, fan_in, derive_seed(seed, conv_name(i))));
    registry.add(bn_name(i, "gamma"), Tensor({cout}, 1.f));
    registry.add(bn_name(i, "beta"), Tensor({cout}, 0.f));
    registry.add(bn_name(i, "running_mean"), Tensor({cout}, 0.f), false);
    registry.add(bn_name(i, "running_var"), Tensor({cout}, 1.f), false);
    cin = cout;
  }
  registry.add("ranker/proj/weight", he_init({1, cin}, cin, derive_seed(seed, "ranker/proj/weight")));
  registry.add("ranker/proj/bias", he_init({1}, cin, derive_seed(seed, "ranker/proj/bias")));
}

template <class T>
Var<T> ranker_forward(Tape<T>& tape, ParamRegistry<T>& params, Var<T> maps, const RankerConfig& config,
                      NormMode mode, std::vector<Shape>* layer_shapes) {
  const auto& shape = maps.shape();
  const bool single = shape.size() == 3;
  // Global pooling makes the ranker size-agnostic; only the channel count and
  // the minimum extent for three valid convolutions are fixed.
  const std::size_t min_extent = 3 * (config.kernel - 1) + 1;
  const bool ok = (single || shape.size() == 4) && shape.back() == config.in_channels &&
                  shape[shape.size() - 3] >= min_extent && shape[shape.size() - 2] >= min_extent;
  if (!ok) {
    throw DimensionError("ranker expects maps of shape [HxWx" + std::to_string(config.in_channels) + "] with H, W >= " +
                         std::to_string(min_extent) + ", got " + shape_string(shape));
  }
  Var<T> x = single ? reshape(maps, Shape{1, shape[0], shape[1], shape[2]}) : maps;
  const BatchNormOptions bn{mode, config.bn_momentum, config.bn_eps};
  for (std::size_t i = 0; i < 3; ++i) {
    x = conv2d(x, tape.parameter(params.get(conv_name(i))));
    x = batchnorm(x, tape.parameter(params.get(bn_name(i, "gamma"))), tape.parameter(params.get(bn_name(i, "beta"))),
                  params.get(bn_name(i, "running_mean")), params.get(bn_name(i, "running_var")), bn);
    x = relu(x);
    if (layer_shapes) layer_shapes->push_back(Shape(x.shape().begin() + 1, x.shape().end()));
  }
  const std::size_t n = x.shape()[0];
  Var<T> logits = linear(global_avg_pool(x), tape.parameter(params.get("ranker/proj/weight")),
                         tape.parameter(params.get("ranker/proj/bias")));
  return sigmoid(reshape(logits, Shape{n}));
}

float score_view(const Tensor& map, ParamRegistry<float>& params, const RankerConfig& config) {
  Tape<float> tape;
  return ranker_forward(tape, params, tape.constant(map), config, NormMode::kInference).value()[0];
}

std::vector<float> score_views(const Tensor& maps, ParamRegistry<float>& params, const RankerConfig& config,
                               std::size_t chunk) {
  if (maps.rank() != 4) throw DimensionError("score_views expects N x H x W x C maps");
  std::vector<float> out;
  out.reserve(maps.dim(0));
  for (std::size_t b = 0; b < maps.dim(0); b += chunk) {
    Tape<float> tape;
    const auto s = ranker_forward(tape, params, tape.constant(maps.slice(b, std::min(maps.dim(0), b + chunk))), config,
                                  NormMode::kInference);
    out.insert(out.end(), s.value().values().begin(), s.value().values().end());
  }
  return out;
}

double rank_loss(double pos_score, double neg_score) { return std::max(0.0, neg_score - pos_score + 1.0); }

template <class T>
Var<T> rank_hinge(Var<T> pos, Var<T> neg) {
  return sum(relu(add_scalar(sub(neg, pos), 1.0)));
}

std::vector<float> normalize_scores(const std::vector<float>& raw) {
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  if (!(total > 0)) throw DomainError("cannot normalize view scores that sum to " + std::to_string(total));
  std::vector<float> w(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) w[i] = static_cast<float>(raw[i] / total);
  return w;
}

std::vector<float> top_k_weights(const std::vector<float>& raw, std::size_t k) {
  if (k == 0) throw ConfigError("top-K view selection needs K >= 1");
  if (k >= raw.size()) return normalize_scores(raw);
  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] > raw[b]; });
  std::vector<float> kept(raw.size(), 0.f);
  for (std::size_t i = 0; i < k; ++i) kept[order[i]] = raw[order[i]];
  return normalize_scores(kept);
}

std::vector<float> view_weights(const std::vector<float>& raw, ViewSelection mode, std::size_t k) {
  return mode == ViewSelection::kHard ? top_k_weights(raw, k) : normalize_scores(raw);
}

Tensor subshot_descriptor(const Tensor& candidates, const std::vector<float>& weights) {
  if (candidates.rank() != 2 || candidates.dim(0) != weights.size()) {
    throw DimensionError("descriptor: " + std::to_string(weights.size()) + " weights for candidates " +
                         shape_string(candidates.shape()));
  }
  const std::size_t k = candidates.dim(0), d = candidates.dim(1);
  std::vector<double> acc(d, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t c = 0; c < d; ++c) acc[c] += static_cast<double>(weights[j]) * candidates(j, c);
  Tensor out({d});
  for (std::size_t c = 0; c < d; ++c) out[c] = static_cast<float>(acc[c]);
  return out;
}

template Var<float> ranker_forward(Tape<float>&, ParamRegistry<float>&, Var<float>, const RankerConfig&, NormMode,
                                   std::vector<Shape>*);
template Var<double> ranker_forward(Tape<double>&, ParamRegistry<double>&, Var<double>, const RankerConfig&, NormMode,
                                    std::vector<Shape>*);
template Var<float> rank_hinge(Var<float>, Var<float>);
template Var<double> rank_hinge(Var<double>, Var<double>);

}  // namespace pfmn
