#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pfmn/ops.hpp"
#include "pfmn/params.hpp"
#include "pfmn/tape.hpp"

namespace pfmn {

/// Which subshots populate the memories at each step. Candidates for
/// selection are always the subshots after the last pick.
///   kFull: future = subshots after the last pick, past = the picks so far.
///   kFutureFrame: future = the next ceil(ff_fraction * remaining) subshots.
///   kFutureAll: future = all n subshots.
///   kPastAll: past = every subshot up to and including the last pick.
enum class WindowPolicy { kFull, kFutureFrame, kFutureAll, kPastAll };

/// Which future embedding the attention rescales before the read convolution.
enum class AttendedEmbedding { kInput, kOutput };

std::string to_string(WindowPolicy p);
WindowPolicy window_policy_from_string(const std::string& s);

struct PfmnConfig {
  std::size_t feature_dim = 2048;
  std::size_t memory_dim = 1024;
  std::size_t read_height = 20;
  std::size_t read_stride = 10;
  WindowPolicy window = WindowPolicy::kFull;
  double ff_fraction = 0.05;
  AttendedEmbedding attended = AttendedEmbedding::kInput;

  void validate() const;
};

void to_json(nlohmann::json& j, const PfmnConfig& c);
void from_json(const nlohmann::json& j, PfmnConfig& c);

/// Registers "pfmn/..." parameters with He initialization (weights and biases).
void add_pfmn_params(ParamRegistry<float>& registry, const PfmnConfig& config, std::uint64_t seed);

enum class MemoryKind { kPast, kFuture };

template <class T>
struct MemoryBank {
  Var<T> input;   // R x memory_dim
  Var<T> output;  // R x memory_dim
  std::vector<std::size_t> slot_to_subshot;
  std::size_t rows() const { return slot_to_subshot.size(); }
};

/// ReLU(W v + b) for both embeddings of the chosen memory. `descriptors` is
/// R x feature_dim; R = 0 yields an empty bank.
template <class T>
MemoryBank<T> embed_memory(Tape<T>& tape, ParamRegistry<T>& params, Var<T> descriptors, MemoryKind which,
                           const PfmnConfig& config, std::vector<std::size_t> slot_to_subshot = {});

/// q = ReLU(W_q v_avg + b_q); v_avg is the row mean of `selected`, or zero
/// when `selected` has no rows or is invalid.
template <class T>
Var<T> compute_query(Tape<T>& tape, ParamRegistry<T>& params, Var<T> selected, const PfmnConfig& config);

template <class T>
struct FutureAttention {
  Var<T> attended;  // M_fr, R x memory_dim
  Var<T> weights;   // p_f, length R
};

/// p_f = softmax(M_in q); row i of the result is p_f[i] times row i of `rescaled`.
template <class T>
FutureAttention<T> future_attend(Var<T> input_embed, Var<T> rescaled, Var<T> query);

/// Convolution over time (kernel height read_height spanning the full width,
/// stride read_stride), rows zero-padded at the bottom up to read_height,
/// then averaged over time.
template <class T>
Var<T> read_key(Tape<T>& tape, ParamRegistry<T>& params, Var<T> attended, const PfmnConfig& config);

/// m = softmax(M_in k)^T M_out. Throws ContractError on an empty bank.
template <class T>
Var<T> past_read(const MemoryBank<T>& bank, Var<T> key, Var<T>* weights = nullptr);

/// c = softmax(candidates o) with o = W_out m + b_out.
template <class T>
Var<T> compatibility(Tape<T>& tape, ParamRegistry<T>& params, Var<T> memory_out, Var<T> candidates);

/// Prior over candidates j = z_prev+1..n (1-based) at iteration t: the
/// recurrence u_j = prod_{k<j}(1 - u_k) * (m-t+1)/(n-t+1) up to j = n-m+t,
/// zero beyond. `z_prev` is the 1-based index of the last pick (0 at t = 1),
/// which equals the 0-based index of the first candidate.
std::vector<double> selection_prior(std::size_t n, std::size_t m, std::size_t t, std::size_t z_prev);

struct Selection {
  std::size_t offset = 0;  // position inside the candidate window
  std::vector<double> s;
  bool degenerate = false;  // every s was zero; fell back to the first feasible candidate
};

/// s = c * u elementwise; argmax with lowest index on ties.
Selection select_next(const std::vector<double>& c, const std::vector<double>& u);

struct StepTrace {
  std::size_t t = 0;
  std::size_t z = 0;  // 0-based subshot index
  std::vector<double> c, u, s;
  std::vector<double> future_attention, past_attention;
  bool degenerate = false;
};

template <class T>
struct DecodeGraph {
  std::vector<std::size_t> indices;   // 0-based, strictly increasing
  std::vector<Var<T>> compatibilities;  // c per step over its candidate window
  std::vector<std::size_t> targets;   // offset of z_t inside each window
  std::vector<StepTrace> steps;
};

/// Records the full decode on `tape`. When `forced` is given, those indices
/// are used instead of the greedy choice (for fixed-target gradient checks).
template <class T>
DecodeGraph<T> decode_graph(Tape<T>& tape, ParamRegistry<T>& params, Var<T> features, std::size_t m,
                            const PfmnConfig& config, const std::vector<std::size_t>* forced = nullptr);

/// Sum over steps of -log(max(c_target, 1e-12)).
template <class T>
Var<T> selection_nll(const DecodeGraph<T>& graph, bool* floored = nullptr);

struct DecodeResult {
  std::vector<std::size_t> indices;
  std::vector<StepTrace> steps;
};

DecodeResult decode(const Tensor& features, std::size_t m, ParamRegistry<float>& params, const PfmnConfig& config);

/// m = max(1, floor(ratio * n)), capped at n.
std::size_t summary_length(std::size_t n, double ratio);

}  // namespace pfmn
