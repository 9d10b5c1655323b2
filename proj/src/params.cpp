#include "pfmn/params.hpp"

#include <cmath>
#include <random>

namespace pfmn {

template <class T>
Parameter<T>& ParamRegistry<T>::add(const std::string& name, BasicTensor<T> value, bool trainable) {
  if (params_.count(name)) throw ConfigError("parameter registered twice: " + name);
  Parameter<T> p;
  p.name = name;
  p.grad = BasicTensor<T>(value.shape());
  p.value = std::move(value);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

template <class T>
Parameter<T>& ParamRegistry<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

template <class T>
const Parameter<T>& ParamRegistry<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

template <class T>
void ParamRegistry<T>::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(T(0));
}

template <class T>
std::vector<std::string> ParamRegistry<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

template <class T>
std::size_t ParamRegistry<T>::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) {
    if (!trainable_only || p.trainable) n += p.value.size();
  }
  return n;
}

template <class T>
double ParamRegistry<T>::squared_norm(const std::string& prefix) const {
  double acc = 0.0;
  for (const auto& [name, p] : params_) {
    if (!p.trainable || name.rfind(prefix, 0) != 0) continue;
    for (T v : p.value.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return acc;
}

template <class T>
void ParamRegistry<T>::assign_values(const ParamRegistry& other) {
  for (const auto& [name, p] : other.params_) {
    auto& mine = get(name);
    if (mine.value.shape() != p.value.shape()) {
      throw DimensionError("parameter " + name + " has shape " + shape_string(mine.value.shape()) +
                           ", source has " + shape_string(p.value.shape()));
    }
    mine.value = p.value;
  }
}

template class ParamRegistry<float>;
template class ParamRegistry<double>;

Tensor he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw ConfigError("he_init requires a positive fan-in");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor out(shape);
  for (auto& v : out.data()) v = static_cast<float>(normal(rng));
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, const std::string& label) {
  // FNV-1a over the label, mixed with splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (h | 1ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace pfmn
