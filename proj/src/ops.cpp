#include "pfmn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace pfmn {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <class T>
CMatMap<T> as_mat(const BasicTensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMatMap<T>(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
MatMap<T> as_mat(BasicTensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

template <class T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

template <class T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// Elementwise unary op with derivative expressed via input and output values.
template <class T, class F, class D>
Var<T> unary(Var<T> x, F f, D df) {
  const auto& xv = x.value();
  BasicTensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return x.tape->record(std::move(y), {x.id}, [df](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    if (!tape.requires_grad(in)) return;
    const auto& g = tape.grad(self);
    const auto& xv = tape.value(in);
    const auto& yv = tape.value(self);
    auto& gx = tape.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  BasicTensor<T> y = a.value();
  accumulate(y, b.value());
  return a.tape->record(std::move(y), {a.id, b.id}, [](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    for (auto in : tape.inputs(self)) {
      if (tape.requires_grad(in)) accumulate(tape.grad(in), g);
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return add(a, scale(b, -1.0));
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  BasicTensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const std::size_t ia = tape.inputs(self)[0], ib = tape.inputs(self)[1];
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad(ia);
      const auto& bv = tape.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad(ib);
      const auto& av = tape.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, double s) {
  const T k = static_cast<T>(s);
  return unary<T>(a, [k](T v) { return v * k; }, [k](T, T) { return k; });
}

template <class T>
Var<T> add_scalar(Var<T> a, double s) {
  const T k = static_cast<T>(s);
  return unary<T>(a, [k](T v) { return v + k; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  BasicTensor<T> y = a.value().reshape(std::move(shape));
  return a.tape->record(std::move(y), {a.id}, [](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    auto& gx = tape.grad(in);
    const auto& g = tape.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  return unary<T>(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> log_floor(Var<T> x, double floor) {
  const T f = static_cast<T>(floor);
  return unary<T>(x, [f](T v) { return std::log(std::max(v, f)); },
                  [f](T v, T) { return v > f ? T(1) / v : T(0); });
}

template <class T>
Var<T> softmax(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() != 1) throw DimensionError("softmax expects a vector, got " + shape_string(xv.shape()));
  if (xv.size() == 0) throw DomainError("softmax of an empty vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : xv.data()) mx = std::max(mx, static_cast<double>(v));
  if (!std::isfinite(mx)) throw DomainError("softmax input is not finite");
  std::vector<double> e(xv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    e[i] = std::exp(static_cast<double>(xv[i]) - mx);
    total += e[i];
  }
  BasicTensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = static_cast<T>(e[i] / total);
  return x.tape->record(std::move(y), {x.id}, [](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const auto& g = tape.grad(self);
    const auto& y = tape.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += static_cast<double>(g[i]) * y[i];
    auto& gx = tape.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += static_cast<T>(y[i] * (g[i] - dot));
  });
}

template <class T>
Var<T> normalize_l1(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() == 1 || xv.rank() == 2, "normalize_l1 expects a vector or matrix");
  const std::size_t rows = xv.rank() == 1 ? 1 : xv.dim(0);
  const std::size_t cols = xv.rank() == 1 ? xv.size() : xv.dim(1);
  BasicTensor<T> y(xv.shape());
  std::vector<double> sums(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += xv[r * cols + c];
    if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("normalize_l1: row sum is not positive");
    sums[r] = s;
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = static_cast<T>(xv[r * cols + c] / s);
  }
  return x.tape->record(std::move(y), {x.id}, [rows, cols, sums](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const auto& g = tape.grad(self);
    const auto& y = tape.value(self);
    auto& gx = tape.grad(in);
    // d(x_i/S)/dx_k = (delta_ik - y_i)/S
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c]) * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += static_cast<T>((g[r * cols + c] - dot) / sums[r]);
      }
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  same_tape(x, w);
  const auto& xv = x.value();
  const auto& wv = w.value();
  require(wv.rank() == 2, "linear: weight must be a matrix");
  const bool vec = xv.rank() == 1;
  require(vec || xv.rank() == 2, "linear: input must be a vector or matrix");
  const std::size_t rows = vec ? 1 : xv.dim(0);
  const std::size_t in = vec ? xv.size() : xv.dim(1);
  const std::size_t out = wv.dim(0);
  require(wv.dim(1) == in, "linear: input width " + std::to_string(in) + " does not match weight " +
                               shape_string(wv.shape()));
  const bool has_bias = b.valid();
  if (has_bias) {
    same_tape(x, b);
    require(b.value().rank() == 1 && b.value().size() == out, "linear: bias must have length " + std::to_string(out));
  }
  BasicTensor<T> y(vec ? Shape{out} : Shape{rows, out});
  auto Y = as_mat(y, rows, out);
  Y.noalias() = as_mat(xv, rows, in) * as_mat(wv, out, in).transpose();
  if (has_bias) Y.rowwise() += CVecMap<T>(b.value().raw(), static_cast<Eigen::Index>(out)).transpose();
  std::vector<std::size_t> inputs{x.id, w.id};
  if (has_bias) inputs.push_back(b.id);
  return x.tape->record(std::move(y), std::move(inputs),
                        [rows, in, out, has_bias](Tape<T>& tape, std::size_t self) {
    const auto& ids = tape.inputs(self);
    const auto& g = tape.grad(self);
    auto G = as_mat(g, rows, out);
    if (tape.requires_grad(ids[0])) {
      auto& gx = tape.grad(ids[0]);
      as_mat(gx, rows, in).noalias() += G * as_mat(tape.value(ids[1]), out, in);
    }
    if (tape.requires_grad(ids[1])) {
      auto& gw = tape.grad(ids[1]);
      as_mat(gw, out, in).noalias() += G.transpose() * as_mat(tape.value(ids[0]), rows, in);
    }
    if (has_bias && tape.requires_grad(ids[2])) {
      auto& gb = tape.grad(ids[2]);
      VecMap<T>(gb.raw(), static_cast<Eigen::Index>(out)) += G.colwise().sum().transpose();
    }
  });
}

template <class T>
Var<T> matvec(Var<T> m, Var<T> v) {
  same_tape(m, v);
  const auto& mv = m.value();
  const auto& vv = v.value();
  require(mv.rank() == 2 && vv.rank() == 1 && mv.dim(1) == vv.size(),
          "matvec: incompatible shapes " + shape_string(mv.shape()) + " and " + shape_string(vv.shape()));
  const std::size_t rows = mv.dim(0), cols = mv.dim(1);
  BasicTensor<T> y(Shape{rows});
  VecMap<T>(y.raw(), static_cast<Eigen::Index>(rows)).noalias() =
      as_mat(mv, rows, cols) * CVecMap<T>(vv.raw(), static_cast<Eigen::Index>(cols));
  return m.tape->record(std::move(y), {m.id, v.id}, [rows, cols](Tape<T>& tape, std::size_t self) {
    const auto& ids = tape.inputs(self);
    CVecMap<T> g(tape.grad(self).raw(), static_cast<Eigen::Index>(rows));
    if (tape.requires_grad(ids[0])) {
      as_mat(tape.grad(ids[0]), rows, cols).noalias() +=
          g * CVecMap<T>(tape.value(ids[1]).raw(), static_cast<Eigen::Index>(cols)).transpose();
    }
    if (tape.requires_grad(ids[1])) {
      VecMap<T>(tape.grad(ids[1]).raw(), static_cast<Eigen::Index>(cols)).noalias() +=
          as_mat(tape.value(ids[0]), rows, cols).transpose() * g;
    }
  });
}

template <class T>
Var<T> vecmat(Var<T> p, Var<T> m) {
  same_tape(p, m);
  const auto& pv = p.value();
  const auto& mv = m.value();
  require(mv.rank() == 2 && pv.rank() == 1 && mv.dim(0) == pv.size(),
          "vecmat: incompatible shapes " + shape_string(pv.shape()) + " and " + shape_string(mv.shape()));
  const std::size_t rows = mv.dim(0), cols = mv.dim(1);
  BasicTensor<T> y(Shape{cols});
  VecMap<T>(y.raw(), static_cast<Eigen::Index>(cols)).noalias() =
      as_mat(mv, rows, cols).transpose() * CVecMap<T>(pv.raw(), static_cast<Eigen::Index>(rows));
  return p.tape->record(std::move(y), {p.id, m.id}, [rows, cols](Tape<T>& tape, std::size_t self) {
    const auto& ids = tape.inputs(self);
    CVecMap<T> g(tape.grad(self).raw(), static_cast<Eigen::Index>(cols));
    if (tape.requires_grad(ids[0])) {
      VecMap<T>(tape.grad(ids[0]).raw(), static_cast<Eigen::Index>(rows)).noalias() +=
          as_mat(tape.value(ids[1]), rows, cols) * g;
    }
    if (tape.requires_grad(ids[1])) {
      as_mat(tape.grad(ids[1]), rows, cols).noalias() +=
          CVecMap<T>(tape.value(ids[0]).raw(), static_cast<Eigen::Index>(rows)) * g.transpose();
    }
  });
}

template <class T>
Var<T> scale_rows(Var<T> m, Var<T> p) {
  same_tape(m, p);
  const auto& mv = m.value();
  const auto& pv = p.value();
  require(mv.rank() == 2 && pv.rank() == 1 && mv.dim(0) == pv.size(),
          "scale_rows: incompatible shapes " + shape_string(mv.shape()) + " and " + shape_string(pv.shape()));
  const std::size_t rows = mv.dim(0), cols = mv.dim(1);
  BasicTensor<T> y = mv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] *= pv[r];
  return m.tape->record(std::move(y), {m.id, p.id}, [rows, cols](Tape<T>& tape, std::size_t self) {
    const auto& ids = tape.inputs(self);
    const auto& g = tape.grad(self);
    if (tape.requires_grad(ids[0])) {
      auto& gm = tape.grad(ids[0]);
      const auto& pv = tape.value(ids[1]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gm[r * cols + c] += g[r * cols + c] * pv[r];
    }
    if (tape.requires_grad(ids[1])) {
      auto& gp = tape.grad(ids[1]);
      const auto& mv = tape.value(ids[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(g[r * cols + c]) * mv[r * cols + c];
        gp[r] += static_cast<T>(acc);
      }
    }
  });
}

template <class T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  BasicTensor<T> y = x.value().slice(begin, end);
  const std::size_t stride = x.value().dim(0) == 0 ? 0 : x.value().size() / x.value().dim(0);
  return x.tape->record(std::move(y), {x.id}, [begin, stride](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const auto& g = tape.grad(self);
    auto& gx = tape.grad(in);
    const std::size_t off = begin * stride;
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  });
}

template <class T>
Var<T> gather_rows(Var<T> x, const std::vector<std::size_t>& rows) {
  const auto& xv = x.value();
  require(xv.rank() >= 1, "gather_rows needs at least rank 1");
  const std::size_t n = xv.dim(0);
  const std::size_t stride = n == 0 ? 0 : xv.size() / n;
  Shape s = xv.shape();
  s[0] = rows.size();
  BasicTensor<T> y(s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < n, "gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(xv.raw() + rows[i] * stride, stride, y.raw() + i * stride);
  }
  return x.tape->record(std::move(y), {x.id}, [rows, stride](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const auto& g = tape.grad(self);
    auto& gx = tape.grad(in);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < stride; ++k) gx[rows[i] * stride + k] += g[i * stride + k];
  });
}

template <class T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows of an empty list");
  const Shape inner = rows[0].shape();
  const std::size_t stride = shape_size(inner);
  Shape s{rows.size()};
  s.insert(s.end(), inner.begin(), inner.end());
  BasicTensor<T> y(s);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    same_tape(rows[0], rows[i]);
    require(rows[i].shape() == inner, "stack_rows: inconsistent row shapes");
    std::copy_n(rows[i].value().raw(), stride, y.raw() + i * stride);
    ids.push_back(rows[i].id);
  }
  return rows[0].tape->record(std::move(y), std::move(ids), [stride](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto& ids = tape.inputs(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!tape.requires_grad(ids[i])) continue;
      auto& gi = tape.grad(ids[i]);
      for (std::size_t k = 0; k < stride; ++k) gi[k] += g[i * stride + k];
    }
  });
}

template <class T>
Var<T> mean_rows(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() == 2, "mean_rows expects a matrix");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (rows == 0) throw DomainError("mean_rows of an empty matrix");
  BasicTensor<T> y(Shape{cols});
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += xv[r * cols + c];
    y[c] = static_cast<T>(acc / static_cast<double>(rows));
  }
  return x.tape->record(std::move(y), {x.id}, [rows, cols](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const auto& g = tape.grad(self);
    auto& gx = tape.grad(in);
    const T inv = T(1) / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] * inv;
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  double acc = 0.0;
  for (T v : x.value().data()) acc += v;
  return x.tape->record(BasicTensor<T>::scalar(static_cast<T>(acc)), {x.id}, [](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const T g = tape.grad(self)[0];
    for (auto& v : tape.grad(in).data()) v += g;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DomainError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

template <class T>
Var<T> sum_squares(Var<T> x) {
  double acc = 0.0;
  for (T v : x.value().data()) acc += static_cast<double>(v) * v;
  return x.tape->record(BasicTensor<T>::scalar(static_cast<T>(acc)), {x.id}, [](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const T g = tape.grad(self)[0];
    const auto& xv = tape.value(in);
    auto& gx = tape.grad(in);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += T(2) * g * xv[i];
  });
}

template <class T>
Var<T> pick(Var<T> x, std::size_t index) {
  require(index < x.value().size(), "pick: index out of range");
  return x.tape->record(BasicTensor<T>::scalar(x.value()[index]), {x.id},
                        [index](Tape<T>& tape, std::size_t self) {
    tape.grad(tape.inputs(self)[0])[index] += tape.grad(self)[0];
  });
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t sv, std::size_t sh, Padding pad) {
  same_tape(x, kernel);
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  require(xv.rank() == 3 || xv.rank() == 4, "conv2d: input must be HxWxC or NxHxWxC, got " + shape_string(xv.shape()));
  require(kv.rank() == 4, "conv2d: kernel must be kh x kw x Cin x Cout");
  if (sv == 0 || sh == 0) throw DomainError("conv2d: stride must be at least 1");
  const bool batched = xv.rank() == 4;
  const std::size_t N = batched ? xv.dim(0) : 1;
  const std::size_t H = xv.dim(batched ? 1 : 0), W = xv.dim(batched ? 2 : 1), C = xv.dim(batched ? 3 : 2);
  const std::size_t kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
  require(kv.dim(2) == C, "conv2d: input has " + std::to_string(C) + " channels, kernel expects " +
                              std::to_string(kv.dim(2)));
  const std::size_t Hp = H + pad.top + pad.bottom, Wp = W + pad.left + pad.right;
  require(kh <= Hp && kw <= Wp, "conv2d: kernel " + shape_string(kv.shape()) + " larger than padded input " +
                                    shape_string(xv.shape()));
  const std::size_t Ho = (Hp - kh) / sv + 1, Wo = (Wp - kw) / sh + 1;
  const std::size_t patch = kh * kw * C;
  const std::size_t positions = N * Ho * Wo;

  // im2col: one row per output position, laid out as [ky][kx][c].
  auto cols = std::make_shared<BasicTensor<T>>(Shape{positions, patch});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T* row = cols->raw() + ((n * Ho + oy) * Wo + ox) * patch;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * sv + ky) - static_cast<std::ptrdiff_t>(pad.top);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * sh + kx) - static_cast<std::ptrdiff_t>(pad.left);
            T* dst = row + (ky * kw + kx) * C;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix >= static_cast<std::ptrdiff_t>(W)) {
              std::fill_n(dst, C, T(0));
            } else {
              std::copy_n(xv.raw() + ((n * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * C,
                          C, dst);
            }
          }
        }
      }
  Shape out_shape = batched ? Shape{N, Ho, Wo, cout} : Shape{Ho, Wo, cout};
  BasicTensor<T> y(out_shape);
  as_mat(y, positions, cout).noalias() = as_mat(*cols, positions, patch) * as_mat(kv, patch, cout);

  return x.tape->record(
      std::move(y), {x.id, kernel.id},
      [cols, N, H, W, C, kh, kw, sv, sh, pad, Ho, Wo, cout, patch, positions](Tape<T>& tape, std::size_t self) {
        const auto& ids = tape.inputs(self);
        auto G = as_mat(tape.grad(self), positions, cout);
        if (tape.requires_grad(ids[1])) {
          as_mat(tape.grad(ids[1]), patch, cout).noalias() += as_mat(*cols, positions, patch).transpose() * G;
        }
        if (tape.requires_grad(ids[0])) {
          RowMat<T> dcols = G * as_mat(tape.value(ids[1]), patch, cout).transpose();
          auto& gx = tape.grad(ids[0]);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t oy = 0; oy < Ho; ++oy)
              for (std::size_t ox = 0; ox < Wo; ++ox) {
                const T* row = dcols.data() + ((n * Ho + oy) * Wo + ox) * patch;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(oy * sv + ky) - static_cast<std::ptrdiff_t>(pad.top);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * sh + kx) - static_cast<std::ptrdiff_t>(pad.left);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                    T* dst = gx.raw() + ((n * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * C;
                    const T* src = row + (ky * kw + kx) * C;
                    for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                  }
                }
              }
        }
      });
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() == 3 || xv.rank() == 4, "global_avg_pool expects HxWxC or NxHxWxC");
  const bool batched = xv.rank() == 4;
  const std::size_t N = batched ? xv.dim(0) : 1;
  const std::size_t HW = xv.dim(batched ? 1 : 0) * xv.dim(batched ? 2 : 1);
  const std::size_t C = xv.dim(batched ? 3 : 2);
  if (HW == 0) throw DomainError("global_avg_pool of an empty map");
  BasicTensor<T> y(batched ? Shape{N, C} : Shape{C});
  std::vector<double> acc(C);
  for (std::size_t n = 0; n < N; ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t c = 0; c < C; ++c) acc[c] += xv[(n * HW + p) * C + c];
    for (std::size_t c = 0; c < C; ++c) y[n * C + c] = static_cast<T>(acc[c] / static_cast<double>(HW));
  }
  return x.tape->record(std::move(y), {x.id}, [N, HW, C](Tape<T>& tape, std::size_t self) {
    const std::size_t in = tape.inputs(self)[0];
    const auto& g = tape.grad(self);
    auto& gx = tape.grad(in);
    const T inv = T(1) / static_cast<T>(HW);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < HW; ++p)
        for (std::size_t c = 0; c < C; ++c) gx[(n * HW + p) * C + c] += g[n * C + c] * inv;
  });
}

template <class T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                 const BatchNormOptions& opts) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const auto& xv = x.value();
  require(xv.rank() >= 1, "batchnorm needs a channel axis");
  const std::size_t C = xv.shape().back();
  require(gamma.value().size() == C && beta.value().size() == C && running_mean.value.size() == C &&
              running_var.value.size() == C,
          "batchnorm: parameter length does not match " + std::to_string(C) + " channels");
  const std::size_t M = C == 0 ? 0 : xv.size() / C;
  const bool train = opts.mode == NormMode::kTrain;
  if (train && M < 2) throw DomainError("batchnorm in train mode requires more than one value per channel");

  std::vector<double> mu(C), inv_std(C);
  if (train) {
    std::vector<double> var(C, 0.0);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t c = 0; c < C; ++c) mu[c] += xv[i * C + c];
    for (std::size_t c = 0; c < C; ++c) mu[c] /= static_cast<double>(M);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xv[i * C + c] - mu[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < C; ++c) {
      const double biased = var[c] / static_cast<double>(M);
      inv_std[c] = 1.0 / std::sqrt(biased + opts.eps);
      const double unbiased = var[c] / static_cast<double>(M - 1);
      running_mean.value[c] = static_cast<T>(opts.momentum * running_mean.value[c] + (1.0 - opts.momentum) * mu[c]);
      running_var.value[c] = static_cast<T>(opts.momentum * running_var.value[c] + (1.0 - opts.momentum) * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean.value[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var.value[c]) + opts.eps);
    }
  }

  auto xhat = std::make_shared<BasicTensor<T>>(xv.shape());
  BasicTensor<T> y(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xv[i * C + c] - mu[c]) * inv_std[c];
      (*xhat)[i * C + c] = static_cast<T>(h);
      y[i * C + c] = static_cast<T>(gv[c] * h + bv[c]);
    }

  return x.tape->record(std::move(y), {x.id, gamma.id, beta.id},
                        [xhat, inv_std, M, C, train](Tape<T>& tape, std::size_t self) {
    const auto& ids = tape.inputs(self);
    const auto& g = tape.grad(self);
    std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        sum_g[c] += g[i * C + c];
        sum_gh[c] += static_cast<double>(g[i * C + c]) * (*xhat)[i * C + c];
      }
    if (tape.requires_grad(ids[1])) {
      auto& gg = tape.grad(ids[1]);
      for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_gh[c]);
    }
    if (tape.requires_grad(ids[2])) {
      auto& gb = tape.grad(ids[2]);
      for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_g[c]);
    }
    if (tape.requires_grad(ids[0])) {
      const auto& gv = tape.value(ids[1]);
      auto& gx = tape.grad(ids[0]);
      const double m = static_cast<double>(M);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t c = 0; c < C; ++c) {
          const double k = gv[c] * inv_std[c];
          const double gi = g[i * C + c];
          gx[i * C + c] += static_cast<T>(
              train ? k / m * (m * gi - sum_g[c] - (*xhat)[i * C + c] * sum_gh[c]) : k * gi);
        }
    }
  });
}

template <class T>
Var<T> batched_weighted_sum(Var<T> w, Var<T> v) {
  same_tape(w, v);
  const auto& wv = w.value();
  const auto& vv = v.value();
  require(wv.rank() == 2 && vv.rank() == 3 && vv.dim(0) == wv.dim(0) && vv.dim(1) == wv.dim(1),
          "batched_weighted_sum: weights " + shape_string(wv.shape()) + " do not align with vectors " +
              shape_string(vv.shape()));
  const std::size_t n = vv.dim(0), K = vv.dim(1), D = vv.dim(2);
  BasicTensor<T> y(Shape{n, D});
  for (std::size_t i = 0; i < n; ++i) {
    VecMap<T>(y.raw() + i * D, static_cast<Eigen::Index>(D)).noalias() =
        CMatMap<T>(vv.raw() + i * K * D, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D)).transpose() *
        CVecMap<T>(wv.raw() + i * K, static_cast<Eigen::Index>(K));
  }
  return w.tape->record(std::move(y), {w.id, v.id}, [n, K, D](Tape<T>& tape, std::size_t self) {
    const auto& ids = tape.inputs(self);
    const auto& g = tape.grad(self);
    for (std::size_t i = 0; i < n; ++i) {
      CVecMap<T> gi(g.raw() + i * D, static_cast<Eigen::Index>(D));
      if (tape.requires_grad(ids[0])) {
        VecMap<T>(tape.grad(ids[0]).raw() + i * K, static_cast<Eigen::Index>(K)).noalias() +=
            CMatMap<T>(tape.value(ids[1]).raw() + i * K * D, static_cast<Eigen::Index>(K),
                       static_cast<Eigen::Index>(D)) * gi;
      }
      if (tape.requires_grad(ids[1])) {
        MatMap<T>(tape.grad(ids[1]).raw() + i * K * D, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D))
            .noalias() += CVecMap<T>(tape.value(ids[0]).raw() + i * K, static_cast<Eigen::Index>(K)) * gi.transpose();
      }
    }
  });
}

#define PFMN_INSTANTIATE_OPS(T)                                                                         \
  template Var<T> add(Var<T>, Var<T>);                                                                  \
  template Var<T> sub(Var<T>, Var<T>);                                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                                  \
  template Var<T> scale(Var<T>, double);                                                                \
  template Var<T> add_scalar(Var<T>, double);                                                           \
  template Var<T> reshape(Var<T>, Shape);                                                               \
  template Var<T> relu(Var<T>);                                                                         \
  template Var<T> sigmoid(Var<T>);                                                                      \
  template Var<T> log_floor(Var<T>, double);                                                            \
  template Var<T> softmax(Var<T>);                                                                      \
  template Var<T> normalize_l1(Var<T>);                                                                 \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                       \
  template Var<T> matvec(Var<T>, Var<T>);                                                               \
  template Var<T> vecmat(Var<T>, Var<T>);                                                               \
  template Var<T> scale_rows(Var<T>, Var<T>);                                                           \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                         \
  template Var<T> gather_rows(Var<T>, const std::vector<std::size_t>&);                                 \
  template Var<T> stack_rows(const std::vector<Var<T>>&);                                               \
  template Var<T> mean_rows(Var<T>);                                                                    \
  template Var<T> sum(Var<T>);                                                                          \
  template Var<T> mean(Var<T>);                                                                         \
  template Var<T> sum_squares(Var<T>);                                                                  \
  template Var<T> pick(Var<T>, std::size_t);                                                            \
  template Var<T> conv2d(Var<T>, Var<T>, std::size_t, std::size_t, Padding);                            \
  template Var<T> global_avg_pool(Var<T>);                                                              \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, Parameter<T>&, Parameter<T>&, const BatchNormOptions&); \
  template Var<T> batched_weighted_sum(Var<T>, Var<T>);

PFMN_INSTANTIATE_OPS(float)
PFMN_INSTANTIATE_OPS(double)

}  // namespace pfmn
