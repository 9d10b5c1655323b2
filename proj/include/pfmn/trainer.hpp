#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pfmn/params.hpp"
#include "pfmn/pfmn.hpp"
#include "pfmn/ranker.hpp"

namespace pfmn {

enum class Phase { kRanker, kPretrain, kFinetune };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

inline constexpr int kTrainConfigVersion = 1;

struct TrainConfig {
  int version = kTrainConfigVersion;
  Phase phase = Phase::kPretrain;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs between checkpoints; 0 keeps only the final one

  // Ranker (SGD with Nesterov momentum, hinge + lambda * ||M_rank||^2).
  std::size_t ranker_batch = 16;
  double ranker_lr = 1e-4;
  std::size_t lr_halving_epochs = 16;
  double momentum = 0.5;
  double weight_decay = 1e-7;

  // Memory network (AdaGrad on the selection likelihood).
  std::size_t sequence_batch = 1;
  double memory_lr = 1e-3;
  double initial_accumulator = 0.1;
  double train_fraction = 0.15;  // m = ceil(train_fraction * n) unless train_m is set
  std::optional<std::size_t> train_m;
  ViewSelection view_selection = ViewSelection::kSoft;
  std::size_t hard_k = kHardTopK;

  PfmnConfig pfmn;
  RankerConfig ranker;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing fields keep their defaults; a different version is a FormatError.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// base * 0.5^floor(epoch / every), epochs counted from 0.
double learning_rate_at(double base, std::size_t epoch, std::size_t every);

/// Summary length used for a training sequence of n subshots.
std::size_t training_summary_length(std::size_t n, const TrainConfig& config);

/// Model parameters plus the shapes needed to run them.
struct Model {
  PfmnConfig pfmn;
  std::optional<RankerConfig> ranker;
  ParamRegistry<float> params;
};

Model make_model(const PfmnConfig& pfmn, const std::optional<RankerConfig>& ranker, std::uint64_t seed);
/// Rebuilds the model from a checkpoint; dimensions are read from the tensor
/// shapes, behavioural options (window policy, attended embedding, batchnorm
/// constants) come from the given bases. Throws FormatError when the
/// checkpoint does not describe a consistent model.
Model load_model(const std::filesystem::path& path, const PfmnConfig& pfmn_base, const RankerConfig& ranker_base);
bool has_ranker(const ParamRegistry<float>& params);
bool has_pfmn(const ParamRegistry<float>& params);

/// One training item. Photostreams set `features`; 360 videos set
/// `candidates` plus either `maps` (ranker in the loop) or `scores`.
struct TrainingSequence {
  std::string id;
  Tensor features;    // [n, D]
  Tensor candidates;  // [n, V, D]
  Tensor maps;        // [n, V, S, S, C]
  Tensor scores;      // [n, V]
};

struct SequenceCorpus {
  std::size_t size = 0;
  std::function<TrainingSequence(std::size_t)> get;
};

/// Differentiable subshot descriptors of a training item.
template <class T>
Var<T> sequence_descriptors(Tape<T>& tape, ParamRegistry<T>& params, const TrainingSequence& seq,
                            const TrainConfig& config, bool ranker_in_loop);

/// Inference-mode descriptors (ranker scores when maps and ranker are present).
Tensor descriptors_for(const TrainingSequence& seq, Model& model, ViewSelection mode = ViewSelection::kSoft,
                       std::size_t hard_k = kHardTopK);

struct SequenceLoss {
  double loss = 0.0;
  std::vector<std::size_t> indices;
  bool floored = false;
};

/// Decodes greedily, then scores the chosen indices as fixed targets:
/// sum_t -log max(c_{z_t}, 1e-12). With `backward` the gradients are
/// accumulated into the registry.
template <class T>
SequenceLoss sequence_loss(Tape<T>& tape, ParamRegistry<T>& params, Var<T> descriptors, std::size_t m,
                           const PfmnConfig& config, bool backward,
                           const std::vector<std::size_t>* forced = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  std::size_t items = 0;
  std::size_t floored = 0;
  std::optional<std::filesystem::path> checkpoint;
};

struct TrainingTrace {
  double initial_loss = 0.0;  // mean loss of the starting model, before any update
  std::vector<EpochRecord> epochs;
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainOutput {
  std::optional<std::filesystem::path> directory;  // checkpoints land in <dir>/checkpoints
  std::ostream* ndjson = nullptr;                  // one record per epoch and per sequence
};

/// Pairs of positive (photo-like) and negative (random crop) maps.
struct PairSource {
  Tensor positives;  // [N, S, S, C]
  Tensor negatives;  // [N, S, S, C]
};

/// Optimizes sum(hinge) + weight_decay * ||ranker||^2 per mini-batch with
/// SGD-Nesterov. Batchnorm statistics come from each mini-batch of
/// positives and negatives together.
TrainingTrace train_ranker(Model& model, const PairSource& pairs, const TrainConfig& config,
                           const TrainOutput& out = {});

/// Mean hinge and the fraction of (positive, negative) combinations ranked
/// correctly, in inference mode.
struct RankerEval {
  double mean_hinge = 0.0;
  double pair_accuracy = 0.0;
};
RankerEval evaluate_ranker(Model& model, const PairSource& pairs);

/// Memory-network training (pretrain or finetune phase). Finetune requires a
/// model restored from a checkpoint (`initialized` = true), else ConfigError.
TrainingTrace fit(Model& model, const SequenceCorpus& corpus, const TrainConfig& config, bool initialized,
                  const TrainOutput& out = {});

/// Mean selection loss over a corpus without updating anything.
double corpus_loss(Model& model, const SequenceCorpus& corpus, const TrainConfig& config);

}  // namespace pfmn
