#include "pfmn/tensor.hpp"

#include <cmath>

namespace pfmn {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDecode: return "decode";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "unknown";
}

std::size_t shape_size(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
bool BasicTensor<T>::all_finite() const noexcept {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace pfmn
