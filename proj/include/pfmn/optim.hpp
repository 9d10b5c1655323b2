#pragma once

#include <string>

#include "pfmn/params.hpp"

namespace pfmn {

enum class OptimizerKind { kSgdNesterov, kAdaGrad };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdaGrad;
  double learning_rate = 1e-3;
  double momentum = 0.5;             // SGD-Nesterov only
  double initial_accumulator = 0.1;  // AdaGrad only
};

/// Applies one update to every trainable parameter whose name starts with
/// `prefix`, using the gradients currently stored in the registry.
///
/// SGD-Nesterov: buf = mu*buf + g; theta -= lr*(g + mu*buf).
/// AdaGrad:      acc += g^2;       theta -= lr*g/sqrt(acc).
///
/// Slots ("momentum", "accumulator") are created on first use and persist.
template <class T>
void optimizer_step(ParamRegistry<T>& registry, const OptimizerConfig& config, const std::string& prefix = {});

}  // namespace pfmn
