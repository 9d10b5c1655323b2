#pragma once

#include <cstddef>
#include <vector>

#include "pfmn/params.hpp"
#include "pfmn/tape.hpp"

// Differentiable primitives. Every op records its result on the tape of its
// first argument. Vectors are rank-1, matrices rank-2 (rows x cols), feature
// maps are channels-last: H x W x C or N x H x W x C.
namespace pfmn {

template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, double s);
template <class T> Var<T> add_scalar(Var<T> a, double s);
template <class T> Var<T> reshape(Var<T> a, Shape shape);

template <class T> Var<T> relu(Var<T> x);
template <class T> Var<T> sigmoid(Var<T> x);
/// log(max(x, floor)); the gradient is zero where the floor is active.
template <class T> Var<T> log_floor(Var<T> x, double floor);
/// Softmax of a rank-1 vector with max subtraction.
template <class T> Var<T> softmax(Var<T> x);
/// x / sum(x) for a vector, or per row for a matrix.
template <class T> Var<T> normalize_l1(Var<T> x);

/// Y = X W^T + b with X rows x in (or a vector of length in), W out x in, b out.
/// `b` may be an invalid Var to omit the bias.
template <class T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
/// M v for M rows x cols and v of length cols.
template <class T> Var<T> matvec(Var<T> m, Var<T> v);
/// p^T M for p of length rows.
template <class T> Var<T> vecmat(Var<T> p, Var<T> m);
/// Row i of M multiplied by p[i].
template <class T> Var<T> scale_rows(Var<T> m, Var<T> p);

template <class T> Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end);
template <class T> Var<T> gather_rows(Var<T> x, const std::vector<std::size_t>& rows);
template <class T> Var<T> stack_rows(const std::vector<Var<T>>& rows);
template <class T> Var<T> mean_rows(Var<T> x);

template <class T> Var<T> sum(Var<T> x);
template <class T> Var<T> mean(Var<T> x);
template <class T> Var<T> sum_squares(Var<T> x);
template <class T> Var<T> pick(Var<T> x, std::size_t index);

struct Padding {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;
};

/// Cross-correlation of X (H x W x Cin or N x H x W x Cin) with a kernel of
/// shape kh x kw x Cin x Cout. Zero padding is explicit; none means "valid".
template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t stride_v = 1, std::size_t stride_h = 1,
              Padding pad = {});

/// Mean over the spatial axes: H x W x C -> C, N x H x W x C -> N x C.
template <class T> Var<T> global_avg_pool(Var<T> x);

enum class NormMode { kTrain, kInference };

struct BatchNormOptions {
  NormMode mode = NormMode::kInference;
  double momentum = 0.9;
  double eps = 1e-5;
};

/// Per-channel batch normalization over every leading axis. In train mode the
/// batch statistics are used and folded into the running buffers.
template <class T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean,
                 Parameter<T>& running_var, const BatchNormOptions& opts);

/// out[i] = sum_k w[i,k] * v[i,k,:] for w n x K and v n x K x D.
template <class T> Var<T> batched_weighted_sum(Var<T> w, Var<T> v);

}  // namespace pfmn
