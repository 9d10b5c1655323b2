#include "pfmn/optim.hpp"

#include <cmath>

namespace pfmn {

template <class T>
void optimizer_step(ParamRegistry<T>& registry, const OptimizerConfig& config, const std::string& prefix) {
  if (!(config.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (config.momentum < 0.0) throw ConfigError("momentum must be non-negative");
  if (!(config.initial_accumulator > 0.0)) throw ConfigError("AdaGrad initial accumulator must be positive");
  const double lr = config.learning_rate;
  for (auto& [name, p] : registry) {
    if (!p.trainable || name.rfind(prefix, 0) != 0) continue;
    auto theta = p.value.data();
    auto g = p.grad.data();
    if (config.kind == OptimizerKind::kSgdNesterov) {
      auto [it, fresh] = p.slots.try_emplace("momentum", p.value.shape());
      auto buf = it->second.data();
      const double mu = config.momentum;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double b = mu * buf[i] + g[i];
        buf[i] = static_cast<T>(b);
        theta[i] = static_cast<T>(theta[i] - lr * (g[i] + mu * b));
      }
    } else {
      auto [it, fresh] =
          p.slots.try_emplace("accumulator", p.value.shape(), static_cast<T>(config.initial_accumulator));
      auto acc = it->second.data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        if (g[i] == T(0)) continue;
        const double a = static_cast<double>(acc[i]) + static_cast<double>(g[i]) * g[i];
        acc[i] = static_cast<T>(a);
        theta[i] = static_cast<T>(theta[i] - lr * g[i] / std::sqrt(a));
      }
    }
  }
}

template void optimizer_step(ParamRegistry<float>&, const OptimizerConfig&, const std::string&);
template void optimizer_step(ParamRegistry<double>&, const OptimizerConfig&, const std::string&);

}  // namespace pfmn
