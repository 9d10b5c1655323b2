#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pfmn/tensor.hpp"

namespace pfmn {

/// A named learnable (or buffered, e.g. batchnorm running statistics) tensor.
/// Optimizer slots live beside the value so they follow the parameter around.
template <class T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;
  std::map<std::string, BasicTensor<T>> slots;
};

template <class T>
class ParamRegistry {
 public:
  using Map = std::map<std::string, Parameter<T>>;

  Parameter<T>& add(const std::string& name, BasicTensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;

  void zero_grad();
  std::vector<std::string> names() const;
  std::size_t scalar_count(bool trainable_only = false) const;
  /// Sum of squared trainable values whose name starts with `prefix`.
  double squared_norm(const std::string& prefix = {}) const;

  template <class U>
  ParamRegistry<U> cast() const {
    ParamRegistry<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>(), p.trainable);
    return out;
  }

  /// Copies values (not slots) of every parameter present in `other`.
  void assign_values(const ParamRegistry& other);

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  Map params_;
};

extern template class ParamRegistry<float>;
extern template class ParamRegistry<double>;

/// Samples N(0, 2/fan_in). Deterministic for a given seed.
Tensor he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed);

/// Derives an independent stream seed from a base seed and a label.
std::uint64_t derive_seed(std::uint64_t base, const std::string& label);

}  // namespace pfmn
