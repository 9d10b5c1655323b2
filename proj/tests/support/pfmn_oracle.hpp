#pragma once

// Straight-line reimplementation of one decode step with plain loops in
// double precision. Shares nothing with the library beyond reading parameter
// values by name.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pfmn/params.hpp"
#include "pfmn/tensor.hpp"

namespace pfmn::testing {

using Vec = std::vector<double>;

struct OracleStep {
  Vec c, u, s;
  std::size_t z = 0;  // 0-based
};

inline Vec oracle_softmax(const Vec& x) {
  const double mx = *std::max_element(x.begin(), x.end());
  Vec y(x.size());
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += y[i] = std::exp(x[i] - mx);
  for (auto& v : y) v /= total;
  return y;
}

// ReLU(W x + b) with W rows x cols stored row-major.
inline Vec oracle_affine(const Tensor& w, const Tensor& b, const Vec& x, bool relu) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  Vec y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += double(w[r * cols + c]) * x[c];
    y[r] = relu ? std::max(0.0, acc) : acc;
  }
  return y;
}

inline Vec row_of(const Tensor& f, std::size_t i) {
  const std::size_t d = f.dim(1);
  return Vec(f.raw() + i * d, f.raw() + (i + 1) * d);
}

/// One step of the full-window decoder: `picked` holds z_1..z_{t-1} (0-based).
inline OracleStep oracle_step(const ParamRegistry<float>& p, const Tensor& f, std::size_t m,
                              const std::vector<std::size_t>& picked, std::size_t read_height = 20,
                              std::size_t read_stride = 10) {
  const std::size_t n = f.dim(0), d = f.dim(1);
  const std::size_t t = picked.size() + 1;
  const std::size_t z_prev = picked.empty() ? 0 : picked.back() + 1;
  const auto& wq = p.get("pfmn/query/weight").value;
  const std::size_t h = wq.dim(0);

  Vec avg(d, 0.0);
  for (auto z : picked)
    for (std::size_t k = 0; k < d; ++k) avg[k] += f(z, k) / double(picked.size());
  const Vec q = oracle_affine(wq, p.get("pfmn/query/bias").value, avg, true);

  std::vector<Vec> fin;
  for (std::size_t j = z_prev; j < n; ++j)
    fin.push_back(oracle_affine(p.get("pfmn/future_in/weight").value, p.get("pfmn/future_in/bias").value, row_of(f, j),
                                true));
  Vec logits;
  for (const auto& row : fin) {
    double acc = 0;
    for (std::size_t k = 0; k < h; ++k) acc += row[k] * q[k];
    logits.push_back(acc);
  }
  const Vec pf = oracle_softmax(logits);
  const std::size_t r = fin.size();
  const std::size_t rows = std::max(r, read_height);
  std::vector<Vec> mfr(rows, Vec(h, 0.0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < h; ++k) mfr[i][k] = pf[i] * fin[i][k];

  // Kernel layout: [dy][x][0][o].
  const auto& kern = p.get("pfmn/read/kernel").value;
  const std::size_t steps = (rows - read_height) / read_stride + 1;
  Vec key(h, 0.0);
  for (std::size_t s = 0; s < steps; ++s)
    for (std::size_t o = 0; o < h; ++o) {
      double acc = 0;
      for (std::size_t dy = 0; dy < read_height; ++dy)
        for (std::size_t x = 0; x < h; ++x) acc += mfr[s * read_stride + dy][x] * kern[(dy * h + x) * h + o];
      key[o] += acc / double(steps);
    }
  for (std::size_t o = 0; o < h; ++o) key[o] += p.get("pfmn/read/bias").value[o];

  Vec mem = key;
  if (!picked.empty()) {
    std::vector<Vec> pin, pout;
    for (auto z : picked) {
      pin.push_back(oracle_affine(p.get("pfmn/past_in/weight").value, p.get("pfmn/past_in/bias").value, row_of(f, z),
                                  true));
      pout.push_back(oracle_affine(p.get("pfmn/past_out/weight").value, p.get("pfmn/past_out/bias").value,
                                   row_of(f, z), true));
    }
    Vec pl;
    for (const auto& row : pin) {
      double acc = 0;
      for (std::size_t k = 0; k < h; ++k) acc += row[k] * key[k];
      pl.push_back(acc);
    }
    const Vec pp = oracle_softmax(pl);
    std::fill(mem.begin(), mem.end(), 0.0);
    for (std::size_t i = 0; i < pout.size(); ++i)
      for (std::size_t k = 0; k < h; ++k) mem[k] += pp[i] * pout[i][k];
  }
  const Vec o = oracle_affine(p.get("pfmn/output/weight").value, p.get("pfmn/output/bias").value, mem, false);
  Vec cl;
  for (std::size_t j = z_prev; j < n; ++j) {
    double acc = 0;
    for (std::size_t k = 0; k < d; ++k) acc += o[k] * f(j, k);
    cl.push_back(acc);
  }
  OracleStep out;
  out.c = oracle_softmax(cl);
  const double ratio = double(m - t + 1) / double(n - t + 1);
  double survive = 1;
  for (std::size_t j = z_prev + 1; j <= n; ++j) {
    const double u = j <= n - m + t ? survive * ratio : 0.0;
    survive *= 1 - u;
    out.u.push_back(u);
  }
  std::size_t best = 0;
  for (std::size_t i = 0; i < out.c.size(); ++i) {
    out.s.push_back(out.c[i] * out.u[i]);
    if (out.s[i] > out.s[best]) best = i;
  }
  out.z = z_prev + best;
  return out;
}

}  // namespace pfmn::testing
