#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "pfmn/params.hpp"
#include "pfmn/tensor.hpp"

namespace pfmn {

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr; }
};

/// Record of executed primitives. Nodes are appended in execution order, so
/// reverse iteration is a valid topological order for backpropagation.
/// Parameter leaves alias the registry: their gradients accumulate directly
/// into Parameter::grad.
template <class T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(TensorT value);
  Var<T> variable(TensorT value);
  Var<T> parameter(Parameter<T>& p);

  /// Appends an op result. `fn` is only invoked when some input needs a gradient.
  Var<T> record(TensorT value, std::vector<std::size_t> inputs, BackwardFn fn);

  const TensorT& value(std::size_t id) const;
  /// Gradient buffer of a node, zero-allocated on first access.
  TensorT& grad(std::size_t id);
  bool has_grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Backpropagates from a single-element node. Each node is visited once.
  void backward(Var<T> loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of nodes whose backward function ran in the last backward pass.
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    TensorT value;
    const TensorT* external_value = nullptr;
    TensorT grad;
    TensorT* external_grad = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool grad_ready = false;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pfmn
