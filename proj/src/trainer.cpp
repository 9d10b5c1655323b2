#include "pfmn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pfmn/checkpoint.hpp"
#include "pfmn/error.hpp"
#include "pfmn/optim.hpp"

namespace pfmn {
namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "epoch/" + std::to_string(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::optional<fs::path> save_epoch_checkpoint(const Model& model, const TrainConfig& config, const TrainOutput& out,
                                              std::size_t epoch) {
  if (!out.directory || config.checkpoint_every == 0 || (epoch + 1) % config.checkpoint_every != 0) return {};
  std::ostringstream name;
  name << to_string(config.phase) << "-epoch-" << std::setw(4) << std::setfill('0') << epoch + 1 << ".ckpt";
  const auto path = *out.directory / "checkpoints" / name.str();
  save_checkpoint(model.params, path);
  return path;
}

void emit(const TrainOutput& out, const nlohmann::json& record) {
  if (out.ndjson) *out.ndjson << record.dump() << '\n';
}

void emit_epoch(const TrainOutput& out, Phase phase, const EpochRecord& r) {
  nlohmann::json j{{"type", "epoch"},          {"phase", to_string(phase)}, {"epoch", r.epoch},
                   {"mean_loss", r.mean_loss}, {"lr", r.learning_rate},     {"items", r.items},
                   {"floored", r.floored}};
  if (r.checkpoint) j["checkpoint"] = r.checkpoint->string();
  emit(out, j);
}

bool ranker_in_loop(const Model& model, const TrainConfig& config, const TrainingSequence& seq) {
  return config.phase == Phase::kFinetune && model.ranker && has_ranker(model.params) && !seq.maps.empty();
}

template <class T>
Var<T> view_weights_var(Tape<T>& tape, ParamRegistry<T>& params, const TrainingSequence& seq,
                        const TrainConfig& config, const RankerConfig& ranker, std::size_t n, std::size_t v) {
  const auto& ms = seq.maps.shape();
  if (ms.size() != 5 || ms[0] != n || ms[1] != v) {
    throw DimensionError("maps " + shape_string(ms) + " do not align with candidates of " + std::to_string(n) + " x " +
                         std::to_string(v));
  }
  const auto maps = tape.constant(seq.maps.template cast<T>().reshape({n * v, ms[2], ms[3], ms[4]}));
  auto scores = reshape(ranker_forward(tape, params, maps, ranker, NormMode::kInference), Shape{n, v});
  if (config.view_selection == ViewSelection::kHard && config.hard_k < v) {
    BasicTensor<T> mask({n, v});
    const auto& sv = scores.value();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> row(sv.raw() + i * v, sv.raw() + (i + 1) * v);
      const auto kept = top_k_weights(row, config.hard_k);
      for (std::size_t j = 0; j < v; ++j) mask[i * v + j] = kept[j] > 0 ? T(1) : T(0);
    }
    scores = mul(scores, tape.constant(std::move(mask)));
  }
  return normalize_l1(scores);
}

// The model's own shapes win over whatever the config file says.
TrainConfig bind_model(const TrainConfig& config, const Model& model) {
  TrainConfig c = config;
  c.pfmn = model.pfmn;
  if (model.ranker) c.ranker = *model.ranker;
  return c;
}

}  // namespace

std::string to_string(Phase p) {
  switch (p) {
    case Phase::kRanker: return "ranker";
    case Phase::kPretrain: return "pretrain";
    case Phase::kFinetune: return "finetune";
  }
  return "?";
}

Phase phase_from_string(const std::string& s) {
  if (s == "ranker") return Phase::kRanker;
  if (s == "pretrain") return Phase::kPretrain;
  if (s == "finetune") return Phase::kFinetune;
  throw ConfigError("unknown phase '" + s + "' (expected ranker, pretrain or finetune)");
}

void TrainConfig::validate() const {
  if (version != kTrainConfigVersion) throw ConfigError("unsupported train config version " + std::to_string(version));
  if (ranker_batch == 0 || sequence_batch == 0) throw ConfigError("batch sizes must be positive");
  if (lr_halving_epochs == 0) throw ConfigError("lr_halving_epochs must be positive");
  if (!(ranker_lr >= 0) || !(memory_lr >= 0)) throw ConfigError("learning rates must be non-negative");
  if (!(momentum >= 0)) throw ConfigError("momentum must be non-negative");
  if (!(initial_accumulator > 0)) throw ConfigError("initial accumulator must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  if (!(train_fraction > 0 && train_fraction <= 1)) throw ConfigError("train_fraction must lie in (0, 1]");
  if (train_m && *train_m == 0) throw ConfigError("train_m must be positive");
  if (hard_k == 0) throw ConfigError("hard_k must be positive");
  pfmn.validate();
  ranker.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"version", c.version},
       {"phase", to_string(c.phase)},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"ranker_batch", c.ranker_batch},
       {"ranker_lr", c.ranker_lr},
       {"lr_halving_epochs", c.lr_halving_epochs},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"sequence_batch", c.sequence_batch},
       {"memory_lr", c.memory_lr},
       {"initial_accumulator", c.initial_accumulator},
       {"train_fraction", c.train_fraction},
       {"train_m", c.train_m ? nlohmann::json(*c.train_m) : nlohmann::json(nullptr)},
       {"view_selection", c.view_selection == ViewSelection::kHard ? "hard" : "soft"},
       {"hard_k", c.hard_k},
       {"pfmn", c.pfmn},
       {"ranker", c.ranker}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.version = j.value("version", kTrainConfigVersion);
    if (c.version != kTrainConfigVersion) {
      throw FormatError("unsupported train config version " + std::to_string(c.version));
    }
    if (j.contains("phase")) c.phase = phase_from_string(j.at("phase").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.ranker_batch = j.value("ranker_batch", c.ranker_batch);
    c.ranker_lr = j.value("ranker_lr", c.ranker_lr);
    c.lr_halving_epochs = j.value("lr_halving_epochs", c.lr_halving_epochs);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.sequence_batch = j.value("sequence_batch", c.sequence_batch);
    c.memory_lr = j.value("memory_lr", c.memory_lr);
    c.initial_accumulator = j.value("initial_accumulator", c.initial_accumulator);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    if (j.contains("train_m")) {
      c.train_m = j.at("train_m").is_null() ? std::nullopt : std::optional<std::size_t>(j.at("train_m").get<std::size_t>());
    }
    if (j.contains("view_selection")) {
      const auto s = j.at("view_selection").get<std::string>();
      if (s != "soft" && s != "hard") throw ConfigError("view_selection must be soft or hard");
      c.view_selection = s == "hard" ? ViewSelection::kHard : ViewSelection::kSoft;
    }
    c.hard_k = j.value("hard_k", c.hard_k);
    if (j.contains("pfmn")) from_json(j.at("pfmn"), c.pfmn);
    if (j.contains("ranker")) from_json(j.at("ranker"), c.ranker);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed train config: ") + e.what());
  }
}

double learning_rate_at(double base, std::size_t epoch, std::size_t every) {
  if (every == 0) throw ConfigError("halving interval must be positive");
  return base * std::pow(0.5, static_cast<double>(epoch / every));
}

std::size_t training_summary_length(std::size_t n, const TrainConfig& config) {
  if (n == 0) throw ConfigError("empty training sequence");
  if (config.train_m) return std::min(*config.train_m, n);
  const auto m = static_cast<std::size_t>(std::ceil(config.train_fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(m, 1, n);
}

bool has_ranker(const ParamRegistry<float>& params) { return params.contains("ranker/conv1/kernel"); }
bool has_pfmn(const ParamRegistry<float>& params) { return params.contains("pfmn/query/weight"); }

Model make_model(const PfmnConfig& pfmn, const std::optional<RankerConfig>& ranker, std::uint64_t seed) {
  Model m;
  m.pfmn = pfmn;
  m.ranker = ranker;
  add_pfmn_params(m.params, pfmn, derive_seed(seed, "init/pfmn"));
  if (ranker) add_ranker_params(m.params, *ranker, derive_seed(seed, "init/ranker"));
  return m;
}

Model load_model(const fs::path& path, const PfmnConfig& pfmn_base, const RankerConfig& ranker_base) {
  const auto loaded = load_checkpoint(path);
  Model m;
  if (has_pfmn(loaded)) {
    m.pfmn = pfmn_base;
    const auto& q = loaded.get("pfmn/query/weight").value.shape();
    if (q.size() != 2) throw FormatError("incompatible checkpoint: pfmn/query/weight is not a matrix");
    m.pfmn.memory_dim = q[0];
    m.pfmn.feature_dim = q[1];
    if (loaded.contains("pfmn/read/kernel")) m.pfmn.read_height = loaded.get("pfmn/read/kernel").value.shape().at(0);
    add_pfmn_params(m.params, m.pfmn, 0);
  }
  if (has_ranker(loaded)) {
    RankerConfig r = ranker_base;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto name = "ranker/conv" + std::to_string(i + 1) + "/kernel";
      if (!loaded.contains(name)) throw FormatError("incompatible checkpoint: missing " + name);
      const auto& s = loaded.get(name).value.shape();
      if (s.size() != 4) throw FormatError("incompatible checkpoint: " + name + " is not a 4-d kernel");
      if (i == 0) {
        r.in_channels = s[2];
        r.kernel = s[0];
      }
      r.channels[i] = s[3];
    }
    try {
      r.validate();
    } catch (const ConfigError& e) {
      throw FormatError(std::string("incompatible checkpoint: ") + e.what());
    }
    m.ranker = r;
    add_ranker_params(m.params, r, 0);
  }
  if (m.params.size() == 0) throw FormatError("checkpoint " + path.string() + " holds neither a ranker nor a memory network");
  restore_checkpoint(m.params, loaded, true);
  return m;
}

template <class T>
Var<T> sequence_descriptors(Tape<T>& tape, ParamRegistry<T>& params, const TrainingSequence& seq,
                            const TrainConfig& config, bool in_loop) {
  if (seq.candidates.empty()) {
    if (seq.features.rank() != 2) throw DimensionError("sequence features must be n x D, got " + shape_string(seq.features.shape()));
    return tape.constant(seq.features.template cast<T>());
  }
  const auto& cs = seq.candidates.shape();
  if (cs.size() != 3) throw DimensionError("candidates must be n x V x D, got " + shape_string(cs));
  const std::size_t n = cs[0], v = cs[1];
  Var<T> weights;
  if (in_loop) {
    weights = view_weights_var(tape, params, seq, config, config.ranker, n, v);
  } else {
    BasicTensor<T> w({n, v}, T(1) / T(v));
    if (!seq.scores.empty()) {
      if (seq.scores.shape() != Shape{n, v}) throw DimensionError("scores " + shape_string(seq.scores.shape()) + " do not align with candidates");
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = view_weights(std::vector<float>(seq.scores.raw() + i * v, seq.scores.raw() + (i + 1) * v),
                                      config.view_selection, config.hard_k);
        std::copy(row.begin(), row.end(), w.raw() + i * v);
      }
    }
    weights = tape.constant(std::move(w));
  }
  return batched_weighted_sum(weights, tape.constant(seq.candidates.template cast<T>()));
}

Tensor descriptors_for(const TrainingSequence& seq, Model& model, ViewSelection mode, std::size_t hard_k) {
  if (seq.candidates.empty()) return seq.features;
  const auto& cs = seq.candidates.shape();
  if (cs.size() != 3) throw DimensionError("candidates must be n x V x D, got " + shape_string(cs));
  const std::size_t n = cs[0], v = cs[1], d = cs[2];
  std::vector<float> scores(n * v, 1.0f);
  if (!seq.maps.empty() && model.ranker && has_ranker(model.params)) {
    const auto& ms = seq.maps.shape();
    if (ms.size() != 5 || ms[0] != n || ms[1] != v) throw DimensionError("maps do not align with candidates");
    scores = score_views(seq.maps.reshape({n * v, ms[2], ms[3], ms[4]}), model.params, *model.ranker, v);
  } else if (!seq.scores.empty()) {
    if (seq.scores.shape() != Shape{n, v}) throw DimensionError("scores do not align with candidates");
    scores = seq.scores.values();
  }
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = view_weights(std::vector<float>(scores.begin() + std::ptrdiff_t(i * v), scores.begin() + std::ptrdiff_t((i + 1) * v)),
                                mode, hard_k);
    const auto desc = subshot_descriptor(seq.candidates.slice(i, i + 1).reshape({v, d}), w);
    std::copy(desc.raw(), desc.raw() + d, out.raw() + i * d);
  }
  return out;
}

template <class T>
SequenceLoss sequence_loss(Tape<T>& tape, ParamRegistry<T>& params, Var<T> descriptors, std::size_t m,
                           const PfmnConfig& config, bool backward, const std::vector<std::size_t>* forced) {
  auto graph = decode_graph(tape, params, descriptors, m, config, forced);
  SequenceLoss out;
  const auto loss = selection_nll(graph, &out.floored);
  out.loss = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(out.loss)) throw NumericError("selection loss is not finite");
  out.indices = std::move(graph.indices);
  if (backward) tape.backward(loss);
  return out;
}

TrainingTrace train_ranker(Model& model, const PairSource& pairs, const TrainConfig& config, const TrainOutput& out) {
  config.validate();
  if (!model.ranker) throw ConfigError("train_ranker needs a model with a ranker");
  const auto& ps = pairs.positives.shape();
  if (ps.empty() || ps[0] == 0) throw ConfigError("train_ranker needs a nonempty pair stream");
  if (pairs.negatives.shape() != ps) throw DimensionError("positive and negative pair tensors differ in shape");
  const std::size_t count = ps[0];
  const Shape item(ps.begin() + 1, ps.end());
  const std::size_t item_size = shape_size(item);

  TrainingTrace trace;
  trace.initial_loss = evaluate_ranker(model, pairs).mean_hinge;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    OptimizerConfig opt{OptimizerKind::kSgdNesterov, learning_rate_at(config.ranker_lr, epoch, config.lr_halving_epochs),
                        config.momentum, config.initial_accumulator};
    const auto order = epoch_order(count, config.seed, epoch);
    double hinge_total = 0;
    for (std::size_t b = 0; b < count; b += config.ranker_batch) {
      const std::size_t e = std::min(count, b + config.ranker_batch), bs = e - b;
      Shape batch_shape = item;
      batch_shape.insert(batch_shape.begin(), 2 * bs);
      Tensor batch(batch_shape);
      for (std::size_t i = 0; i < bs; ++i) {
        std::copy_n(pairs.positives.raw() + order[b + i] * item_size, item_size, batch.raw() + i * item_size);
        std::copy_n(pairs.negatives.raw() + order[b + i] * item_size, item_size, batch.raw() + (bs + i) * item_size);
      }
      model.params.zero_grad();
      Tape<float> tape;
      const auto scores = ranker_forward(tape, model.params, tape.constant(std::move(batch)), *model.ranker, NormMode::kTrain);
      const auto hinge = rank_hinge(slice_rows(scores, 0, bs), slice_rows(scores, bs, 2 * bs));
      hinge_total += hinge.value()[0];
      tape.backward(hinge);
      if (config.weight_decay > 0) {
        for (auto& [name, p] : model.params) {
          if (!p.trainable || name.rfind("ranker/", 0) != 0) continue;
          for (std::size_t i = 0; i < p.value.size(); ++i)
            p.grad[i] += static_cast<float>(2.0 * config.weight_decay * p.value[i]);
        }
      }
      optimizer_step(model.params, opt, "ranker/");
    }
    EpochRecord r;
    r.epoch = epoch;
    r.mean_loss = hinge_total / double(count);
    if (!std::isfinite(r.mean_loss)) throw NumericError("ranker loss is not finite at epoch " + std::to_string(epoch));
    r.learning_rate = opt.learning_rate;
    r.items = count;
    r.checkpoint = save_epoch_checkpoint(model, config, out, epoch);
    if (r.checkpoint) trace.checkpoints.push_back(*r.checkpoint);
    emit_epoch(out, config.phase, r);
    trace.epochs.push_back(r);
  }
  return trace;
}

RankerEval evaluate_ranker(Model& model, const PairSource& pairs) {
  if (!model.ranker) throw ConfigError("evaluate_ranker needs a model with a ranker");
  const auto pos = score_views(pairs.positives, model.params, *model.ranker, 256);
  const auto neg = score_views(pairs.negatives, model.params, *model.ranker, 256);
  RankerEval ev;
  for (std::size_t i = 0; i < pos.size(); ++i) ev.mean_hinge += rank_loss(pos[i], neg[i]);
  ev.mean_hinge /= double(pos.size());
  std::vector<float> sorted_neg = neg;
  std::sort(sorted_neg.begin(), sorted_neg.end());
  double correct = 0;
  for (auto p : pos) correct += double(std::lower_bound(sorted_neg.begin(), sorted_neg.end(), p) - sorted_neg.begin());
  ev.pair_accuracy = correct / (double(pos.size()) * double(neg.size()));
  return ev;
}

double corpus_loss(Model& model, const SequenceCorpus& corpus, const TrainConfig& base) {
  if (corpus.size == 0) throw ConfigError("empty training corpus");
  const auto config = bind_model(base, model);
  double total = 0;
  for (std::size_t i = 0; i < corpus.size; ++i) {
    const auto seq = corpus.get(i);
    Tape<float> tape;
    const auto desc = sequence_descriptors(tape, model.params, seq, config, ranker_in_loop(model, config, seq));
    total += sequence_loss(tape, model.params, desc, training_summary_length(desc.shape()[0], config), model.pfmn,
                           false)
                 .loss;
  }
  return total / double(corpus.size);
}

TrainingTrace fit(Model& model, const SequenceCorpus& corpus, const TrainConfig& base, bool initialized,
                  const TrainOutput& out) {
  const auto config = bind_model(base, model);
  config.validate();
  if (config.phase == Phase::kRanker) throw ConfigError("fit trains the memory network; use train_ranker for the ranker phase");
  if (config.phase == Phase::kFinetune && !initialized) {
    throw ConfigError("finetune needs an initial checkpoint from pretraining");
  }
  if (corpus.size == 0) throw ConfigError("empty training corpus");
  const OptimizerConfig opt{OptimizerKind::kAdaGrad, config.memory_lr, 0.0, config.initial_accumulator};

  TrainingTrace trace;
  trace.initial_loss = corpus_loss(model, corpus, config);
  emit(out, {{"type", "start"}, {"phase", to_string(config.phase)}, {"initial_loss", trace.initial_loss}});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(corpus.size, config.seed, epoch);
    EpochRecord r;
    r.epoch = epoch;
    r.learning_rate = config.memory_lr;
    double total = 0;
    for (std::size_t b = 0; b < corpus.size; b += config.sequence_batch) {
      const std::size_t e = std::min(corpus.size, b + config.sequence_batch);
      model.params.zero_grad();
      bool through_ranker = false;
      for (std::size_t k = b; k < e; ++k) {
        const auto seq = corpus.get(order[k]);
        const bool in_loop = ranker_in_loop(model, config, seq);
        through_ranker = through_ranker || in_loop;
        Tape<float> tape;
        const auto desc = sequence_descriptors(tape, model.params, seq, config, in_loop);
        const auto res = sequence_loss(tape, model.params, desc, training_summary_length(desc.shape()[0], config),
                                       model.pfmn, true);
        total += res.loss;
        r.floored += res.floored;
        emit(out, {{"type", "sequence"}, {"epoch", epoch}, {"id", seq.id}, {"loss", res.loss}, {"indices", res.indices}});
      }
      optimizer_step(model.params, opt, "pfmn/");
      if (through_ranker) optimizer_step(model.params, opt, "ranker/");
    }
    r.items = corpus.size;
    r.mean_loss = total / double(corpus.size);
    r.checkpoint = save_epoch_checkpoint(model, config, out, epoch);
    if (r.checkpoint) trace.checkpoints.push_back(*r.checkpoint);
    emit_epoch(out, config.phase, r);
    trace.epochs.push_back(r);
  }
  return trace;
}

template Var<float> sequence_descriptors(Tape<float>&, ParamRegistry<float>&, const TrainingSequence&,
                                         const TrainConfig&, bool);
template Var<double> sequence_descriptors(Tape<double>&, ParamRegistry<double>&, const TrainingSequence&,
                                          const TrainConfig&, bool);
template SequenceLoss sequence_loss(Tape<float>&, ParamRegistry<float>&, Var<float>, std::size_t, const PfmnConfig&,
                                    bool, const std::vector<std::size_t>*);
template SequenceLoss sequence_loss(Tape<double>&, ParamRegistry<double>&, Var<double>, std::size_t,
                                    const PfmnConfig&, bool, const std::vector<std::size_t>*);

}  // namespace pfmn
