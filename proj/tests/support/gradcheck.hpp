#pragma once

// Central finite-difference oracle, evaluated entirely in double precision.
// Independent of the analytic backward pass: it only calls the forward
// function with perturbed parameter values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "pfmn/ops.hpp"

namespace pfmn::testing {

using LossFn = std::function<Var<double>(Tape<double>&, ParamRegistry<double>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
  std::size_t kink_retries = 0;
};

inline double rel_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double eval_loss(const LossFn& f, ParamRegistry<double>& reg) {
  Tape<double> tape;
  return f(tape, reg).value().item();
}

/// Compares analytic gradients of every trainable parameter against central
/// differences with step h. At most `max_per_param` randomly chosen
/// coordinates are probed per parameter. A coordinate that fails at step h is
/// re-probed once with step h * 1e-3: with many ReLU units a step of h can
/// carry some unit across its kink, which biases the central difference.
inline GradCheckResult gradcheck(const LossFn& f, ParamRegistry<double>& reg, double h = 1e-3,
                                 std::size_t max_per_param = 24, std::uint64_t seed = 1) {
  reg.zero_grad();
  {
    Tape<double> tape;
    auto loss = f(tape, reg);
    tape.backward(loss);
  }
  GradCheckResult res;
  std::mt19937_64 rng(seed);
  for (auto& [name, p] : reg) {
    if (!p.trainable) continue;
    std::vector<std::size_t> coords(p.value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min(coords.size(), max_per_param));
    for (auto i : coords) {
      const double orig = p.value[i];
      auto probe = [&](double step) {
        p.value[i] = orig + step;
        const double up = eval_loss(f, reg);
        p.value[i] = orig - step;
        const double down = eval_loss(f, reg);
        p.value[i] = orig;
        return (up - down) / (2 * step);
      };
      double numeric = probe(h);
      const double analytic = p.grad[i];
      double err = rel_error(analytic, numeric);
      if (err > 1e-3) {
        ++res.kink_retries;
        numeric = probe(h * 1e-3);
        err = rel_error(analytic, numeric);
      }
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace pfmn::testing
