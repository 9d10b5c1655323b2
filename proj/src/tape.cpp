#include "pfmn/tape.hpp"

namespace pfmn {

template <class T>
Var<T> Tape<T>::constant(TensorT value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::variable(TensorT value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.external_value = &p.value;
  if (p.trainable) {
    if (p.grad.shape() != p.value.shape()) p.grad = TensorT(p.value.shape());
    n.external_grad = &p.grad;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::record(TensorT value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw ContractError("tape input refers to a future node");
    n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class T>
const typename Tape<T>::TensorT& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external_value ? *n.external_value : n.value;
}

template <class T>
typename Tape<T>::TensorT& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.external_grad) return *n.external_grad;
  if (!n.grad_ready) {
    n.grad = TensorT(value(id).shape());
    n.grad_ready = true;
  }
  return n.grad;
}

template <class T>
bool Tape<T>::has_grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external_grad != nullptr || n.grad_ready;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(value(loss.id).shape()));
  }
  visits_ = 0;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] += T(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || !n.grad_ready) continue;
    n.backward(*this, id);
    ++visits_;
    // Intermediate gradients are no longer needed once propagated.
    n.grad = TensorT();
    n.grad_ready = false;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace pfmn
