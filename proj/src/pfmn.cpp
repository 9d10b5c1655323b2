#include "pfmn/pfmn.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"

namespace pfmn {
namespace {

struct Names {
  const char* weight;
  const char* bias;
};

constexpr Names kPastIn{"pfmn/past_in/weight", "pfmn/past_in/bias"};
constexpr Names kPastOut{"pfmn/past_out/weight", "pfmn/past_out/bias"};
constexpr Names kFutureIn{"pfmn/future_in/weight", "pfmn/future_in/bias"};
constexpr Names kFutureOut{"pfmn/future_out/weight", "pfmn/future_out/bias"};
constexpr Names kQuery{"pfmn/query/weight", "pfmn/query/bias"};
constexpr Names kRead{"pfmn/read/kernel", "pfmn/read/bias"};
constexpr Names kOutput{"pfmn/output/weight", "pfmn/output/bias"};

template <class T>
Var<T> affine_relu(Tape<T>& tape, ParamRegistry<T>& params, Var<T> x, Names n) {
  return relu(linear(x, tape.parameter(params.get(n.weight)), tape.parameter(params.get(n.bias))));
}

template <class T>
std::vector<double> to_double(const BasicTensor<T>& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

std::vector<std::size_t> range(std::size_t b, std::size_t e) {
  std::vector<std::size_t> r;
  for (std::size_t i = b; i < e; ++i) r.push_back(i);
  return r;
}

}  // namespace

std::string to_string(WindowPolicy p) {
  switch (p) {
    case WindowPolicy::kFull: return "full";
    case WindowPolicy::kFutureFrame: return "ff";
    case WindowPolicy::kFutureAll: return "fa";
    case WindowPolicy::kPastAll: return "pa";
  }
  return "full";
}

WindowPolicy window_policy_from_string(const std::string& s) {
  if (s == "full") return WindowPolicy::kFull;
  if (s == "ff") return WindowPolicy::kFutureFrame;
  if (s == "fa") return WindowPolicy::kFutureAll;
  if (s == "pa") return WindowPolicy::kPastAll;
  throw ConfigError("unknown window policy '" + s + "' (expected full, ff, fa or pa)");
}

void PfmnConfig::validate() const {
  if (feature_dim == 0 || memory_dim == 0) throw ConfigError("pfmn dimensions must be positive");
  if (read_height == 0 || read_stride == 0) throw ConfigError("pfmn read kernel height and stride must be positive");
  if (!(ff_fraction > 0) || ff_fraction > 1) throw ConfigError("ff_fraction must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const PfmnConfig& c) {
  j = {{"feature_dim", c.feature_dim},
       {"memory_dim", c.memory_dim},
       {"read_height", c.read_height},
       {"read_stride", c.read_stride},
       {"window", to_string(c.window)},
       {"ff_fraction", c.ff_fraction},
       {"attended", c.attended == AttendedEmbedding::kInput ? "input" : "output"}};
}

void from_json(const nlohmann::json& j, PfmnConfig& c) {
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.memory_dim = j.value("memory_dim", c.memory_dim);
  c.read_height = j.value("read_height", c.read_height);
  c.read_stride = j.value("read_stride", c.read_stride);
  c.window = window_policy_from_string(j.value("window", to_string(c.window)));
  c.ff_fraction = j.value("ff_fraction", c.ff_fraction);
  const std::string attended = j.value("attended", std::string("input"));
  if (attended != "input" && attended != "output") throw ConfigError("attended must be 'input' or 'output'");
  c.attended = attended == "input" ? AttendedEmbedding::kInput : AttendedEmbedding::kOutput;
}

void add_pfmn_params(ParamRegistry<float>& registry, const PfmnConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.feature_dim, h = config.memory_dim;
  const auto add = [&](const char* name, Shape shape, std::size_t fan_in) {
    registry.add(name, he_init(shape, fan_in, derive_seed(seed, name)));
  };
  for (Names n : {kPastIn, kPastOut, kFutureIn, kFutureOut, kQuery}) {
    add(n.weight, {h, d}, d);
    add(n.bias, {h}, d);
  }
  add(kRead.weight, {config.read_height, h, 1, h}, config.read_height * h);
  add(kRead.bias, {h}, config.read_height * h);
  add(kOutput.weight, {d, h}, h);
  add(kOutput.bias, {d}, h);
}

template <class T>
MemoryBank<T> embed_memory(Tape<T>& tape, ParamRegistry<T>& params, Var<T> descriptors, MemoryKind which,
                           const PfmnConfig& config, std::vector<std::size_t> slot_to_subshot) {
  const auto& shape = descriptors.shape();
  if (shape.size() != 2 || shape[1] != config.feature_dim) {
    throw DimensionError("memory descriptors must be R x " + std::to_string(config.feature_dim) + ", got " +
                         shape_string(shape));
  }
  const std::size_t r = shape[0];
  if (slot_to_subshot.empty()) slot_to_subshot = range(0, r);
  if (slot_to_subshot.size() != r) throw DimensionError("memory slot map does not match the descriptor rows");
  MemoryBank<T> bank;
  bank.slot_to_subshot = std::move(slot_to_subshot);
  if (r == 0) {
    bank.input = tape.constant(BasicTensor<T>(Shape{0, config.memory_dim}));
    bank.output = tape.constant(BasicTensor<T>(Shape{0, config.memory_dim}));
    return bank;
  }
  const bool past = which == MemoryKind::kPast;
  bank.input = affine_relu(tape, params, descriptors, past ? kPastIn : kFutureIn);
  bank.output = affine_relu(tape, params, descriptors, past ? kPastOut : kFutureOut);
  return bank;
}

template <class T>
Var<T> compute_query(Tape<T>& tape, ParamRegistry<T>& params, Var<T> selected, const PfmnConfig& config) {
  if (!selected.valid() || selected.shape()[0] == 0) {
    // W_q * 0 + b_q.
    return relu(tape.parameter(params.get(kQuery.bias)));
  }
  if (selected.shape().size() != 2 || selected.shape()[1] != config.feature_dim) {
    throw DimensionError("selected descriptors must be rows of width " + std::to_string(config.feature_dim));
  }
  return affine_relu(tape, params, mean_rows(selected), kQuery);
}

template <class T>
FutureAttention<T> future_attend(Var<T> input_embed, Var<T> rescaled, Var<T> query) {
  if (input_embed.shape()[0] == 0) throw DomainError("decode exhausted: the future memory is empty");
  FutureAttention<T> out;
  out.weights = softmax(matvec(input_embed, query));
  out.attended = scale_rows(rescaled, out.weights);
  return out;
}

template <class T>
Var<T> read_key(Tape<T>& tape, ParamRegistry<T>& params, Var<T> attended, const PfmnConfig& config) {
  const auto& shape = attended.shape();
  if (shape.size() != 2 || shape[1] != config.memory_dim || shape[0] == 0) {
    throw DimensionError("read_key expects R x " + std::to_string(config.memory_dim) + " with R >= 1, got " +
                         shape_string(shape));
  }
  const std::size_t r = shape[0], h = config.memory_dim;
  Padding pad;
  pad.bottom = r < config.read_height ? config.read_height - r : 0;
  auto y = conv2d(reshape(attended, Shape{r, h, 1}), tape.parameter(params.get(kRead.weight)), config.read_stride, 1,
                  pad);
  const std::size_t steps = y.shape()[0];
  return add(mean_rows(reshape(y, Shape{steps, h})), tape.parameter(params.get(kRead.bias)));
}

template <class T>
Var<T> past_read(const MemoryBank<T>& bank, Var<T> key, Var<T>* weights) {
  if (bank.rows() == 0) throw ContractError("past_read on an empty past memory");
  auto p = softmax(matvec(bank.input, key));
  if (weights) *weights = p;
  return vecmat(p, bank.output);
}

template <class T>
Var<T> compatibility(Tape<T>& tape, ParamRegistry<T>& params, Var<T> memory_out, Var<T> candidates) {
  if (candidates.shape()[0] == 0) throw DomainError("compatibility needs at least one candidate");
  auto o = linear(memory_out, tape.parameter(params.get(kOutput.weight)), tape.parameter(params.get(kOutput.bias)));
  return softmax(matvec(candidates, reshape(o, Shape{o.value().size()})));
}

std::vector<double> selection_prior(std::size_t n, std::size_t m, std::size_t t, std::size_t z_prev) {
  if (m == 0 || t == 0 || t > m || m > n) {
    throw ConfigError("selection prior needs 1 <= t <= m <= n (n=" + std::to_string(n) + ", m=" + std::to_string(m) +
                      ", t=" + std::to_string(t) + ")");
  }
  const std::size_t last = n - m + t;  // 1-based, last feasible candidate
  if (z_prev >= last) {
    throw DomainError("decode infeasible: no candidate after z=" + std::to_string(z_prev) + " can still fit " +
                      std::to_string(m - t + 1) + " picks in n=" + std::to_string(n));
  }
  const double r = static_cast<double>(m - t + 1) / static_cast<double>(n - t + 1);
  std::vector<double> u(n - z_prev, 0.0);
  double survive = 1.0;
  for (std::size_t j = z_prev + 1; j <= last; ++j) {
    u[j - z_prev - 1] = survive * r;
    survive *= 1.0 - u[j - z_prev - 1];
  }
  return u;
}

Selection select_next(const std::vector<double>& c, const std::vector<double>& u) {
  if (c.size() != u.size() || c.empty()) {
    throw DimensionError("select_next: " + std::to_string(c.size()) + " scores vs " + std::to_string(u.size()) +
                         " prior entries");
  }
  Selection sel;
  sel.s.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) sel.s[i] = c[i] * u[i];
  for (std::size_t i = 1; i < c.size(); ++i)
    if (sel.s[i] > sel.s[sel.offset]) sel.offset = i;
  if (sel.s[sel.offset] <= 0.0) {
    sel.degenerate = true;
    const auto it = std::find_if(u.begin(), u.end(), [](double x) { return x > 0.0; });
    if (it == u.end()) throw DomainError("select_next: the prior has no feasible candidate");
    sel.offset = static_cast<std::size_t>(it - u.begin());
  }
  return sel;
}

template <class T>
DecodeGraph<T> decode_graph(Tape<T>& tape, ParamRegistry<T>& params, Var<T> features, std::size_t m,
                            const PfmnConfig& config, const std::vector<std::size_t>* forced) {
  const auto& shape = features.shape();
  if (shape.size() != 2 || shape[1] != config.feature_dim) {
    throw DimensionError("decode expects n x " + std::to_string(config.feature_dim) + " features, got " +
                         shape_string(shape));
  }
  const std::size_t n = shape[0];
  if (m == 0 || m > n) {
    throw ConfigError("summary length m=" + std::to_string(m) + " must satisfy 1 <= m <= n=" + std::to_string(n));
  }
  if (forced && forced->size() != m) throw ConfigError("forced selection must have exactly m indices");

  const auto future_in = affine_relu(tape, params, features, kFutureIn);
  const auto future_out = config.attended == AttendedEmbedding::kOutput
                              ? affine_relu(tape, params, features, kFutureOut)
                              : future_in;

  DecodeGraph<T> g;
  std::size_t z_prev = 0;  // 1-based last pick == 0-based first candidate
  for (std::size_t t = 1; t <= m; ++t) {
    const std::size_t remaining = n - z_prev;
    std::size_t fb = z_prev, fe = n;
    if (config.window == WindowPolicy::kFutureFrame) {
      const auto w = static_cast<std::size_t>(std::ceil(config.ff_fraction * static_cast<double>(remaining) - 1e-9));
      fe = z_prev + std::clamp<std::size_t>(w, 1, remaining);
    } else if (config.window == WindowPolicy::kFutureAll) {
      fb = 0;
    }
    const auto fin = slice_rows(future_in, fb, fe);
    const auto fres = config.attended == AttendedEmbedding::kOutput ? slice_rows(future_out, fb, fe) : fin;

    const auto query = compute_query(tape, params, g.indices.empty() ? Var<T>{} : gather_rows(features, g.indices),
                                     config);
    const auto fa = future_attend(fin, fres, query);
    const auto key = read_key(tape, params, fa.attended, config);

    const auto past_rows = config.window == WindowPolicy::kPastAll ? range(0, z_prev) : g.indices;
    Var<T> memory = key;
    Var<T> past_weights;
    if (!past_rows.empty()) {
      const auto bank = embed_memory(tape, params, gather_rows(features, past_rows), MemoryKind::kPast, config,
                                     past_rows);
      memory = past_read(bank, key, &past_weights);
    }

    const auto c = compatibility(tape, params, memory, slice_rows(features, z_prev, n));
    StepTrace step;
    step.t = t;
    step.c = to_double(c.value());
    step.u = selection_prior(n, m, t, z_prev);
    auto sel = select_next(step.c, step.u);
    if (forced) {
      const std::size_t z = (*forced)[t - 1];
      if (z < z_prev || z >= n - m + t) throw ConfigError("forced index " + std::to_string(z) + " is infeasible");
      sel.offset = z - z_prev;
    }
    step.s = std::move(sel.s);
    step.degenerate = sel.degenerate;
    step.z = z_prev + sel.offset;
    step.future_attention = to_double(fa.weights.value());
    if (past_weights.valid()) step.past_attention = to_double(past_weights.value());

    g.indices.push_back(step.z);
    g.compatibilities.push_back(c);
    g.targets.push_back(sel.offset);
    g.steps.push_back(std::move(step));
    z_prev = g.indices.back() + 1;
  }
  return g;
}

template <class T>
Var<T> selection_nll(const DecodeGraph<T>& graph, bool* floored) {
  if (graph.compatibilities.empty()) throw ContractError("selection_nll of an empty decode");
  Var<T> total;
  bool any_floor = false;
  for (std::size_t i = 0; i < graph.compatibilities.size(); ++i) {
    const auto p = pick(graph.compatibilities[i], graph.targets[i]);
    any_floor = any_floor || p.value()[0] < 1e-12;
    const auto term = scale(log_floor(p, 1e-12), -1.0);
    total = total.valid() ? add(total, term) : term;
  }
  if (floored) *floored = any_floor;
  return total;
}

DecodeResult decode(const Tensor& features, std::size_t m, ParamRegistry<float>& params, const PfmnConfig& config) {
  Tape<float> tape;
  auto g = decode_graph(tape, params, tape.constant(features), m, config);
  return {std::move(g.indices), std::move(g.steps)};
}

std::size_t summary_length(std::size_t n, double ratio) {
  if (!(ratio > 0) || ratio > 1) throw ConfigError("summary ratio must lie in (0, 1]");
  if (n == 0) throw ConfigError("cannot summarize an empty sequence");
  const auto m = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(m, 1, n);
}

#define PFMN_INSTANTIATE(T)                                                                                      \
  template MemoryBank<T> embed_memory(Tape<T>&, ParamRegistry<T>&, Var<T>, MemoryKind, const PfmnConfig&,        \
                                      std::vector<std::size_t>);                                                 \
  template Var<T> compute_query(Tape<T>&, ParamRegistry<T>&, Var<T>, const PfmnConfig&);                         \
  template FutureAttention<T> future_attend(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> read_key(Tape<T>&, ParamRegistry<T>&, Var<T>, const PfmnConfig&);                              \
  template Var<T> past_read(const MemoryBank<T>&, Var<T>, Var<T>*);                                              \
  template Var<T> compatibility(Tape<T>&, ParamRegistry<T>&, Var<T>, Var<T>);                                    \
  template DecodeGraph<T> decode_graph(Tape<T>&, ParamRegistry<T>&, Var<T>, std::size_t, const PfmnConfig&,      \
                                       const std::vector<std::size_t>*);                                         \
  template Var<T> selection_nll(const DecodeGraph<T>&, bool*);

PFMN_INSTANTIATE(float)
PFMN_INSTANTIATE(double)

}  // namespace pfmn
