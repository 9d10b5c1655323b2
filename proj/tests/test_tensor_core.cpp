#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "pfmn/binary_io.hpp"
#include "pfmn/checkpoint.hpp"
#include "pfmn/ops.hpp"
#include "pfmn/optim.hpp"
#include "support/gradcheck.hpp"

using namespace pfmn;

namespace {

Tensor64 random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor64 t(shape);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// Quadruple loop reference: out[y][x][o] = sum_{ky,kx,c} in[y*s+ky][x*s+kx][c] * k[ky][kx][c][o].
Tensor64 naive_conv(const Tensor64& in, const Tensor64& k, std::size_t s) {
  const std::size_t H = in.dim(0), W = in.dim(1), C = in.dim(2);
  const std::size_t kh = k.dim(0), kw = k.dim(1), O = k.dim(3);
  const std::size_t Ho = (H - kh) / s + 1, Wo = (W - kw) / s + 1;
  Tensor64 out(Shape{Ho, Wo, O});
  for (std::size_t y = 0; y < Ho; ++y)
    for (std::size_t x = 0; x < Wo; ++x)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = 0;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx)
            for (std::size_t c = 0; c < C; ++c)
              acc += in[((y * s + ky) * W + x * s + kx) * C + c] * k[((ky * kw + kx) * C + c) * O + o];
        out[(y * Wo + x) * O + o] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d of ones sums the receptive field") {
  Tape<float> tape;
  auto x = tape.constant(Tensor(Shape{2, 2, 1}, 1.0f));
  auto k = tape.constant(Tensor(Shape{2, 2, 1, 1}, 1.0f));
  auto y = conv2d(x, k);
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y.value()[0] == doctest::Approx(4.0));
}

TEST_CASE("conv2d valid shape arithmetic") {
  Tape<float> tape;
  auto x = tape.constant(Tensor(Shape{7, 7, 3}));
  auto k = tape.constant(Tensor(Shape{2, 2, 3, 5}));
  CHECK(conv2d(x, k).shape() == Shape{6, 6, 5});
  auto kbad = tape.constant(Tensor(Shape{2, 2, 4, 5}));
  CHECK_THROWS_AS(conv2d(x, kbad), DimensionError);
  auto kbig = tape.constant(Tensor(Shape{8, 2, 3, 5}));
  CHECK_THROWS_AS(conv2d(x, kbig), DimensionError);
  CHECK(conv2d(x, kbig, 1, 1, Padding{0, 1, 0, 0}).shape() == Shape{1, 6, 5});
}

TEST_CASE("conv2d matches the naive loop oracle on random shapes") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    std::uniform_int_distribution<std::size_t> side(2, 9), chan(1, 4), ks(1, 3), st(1, 2);
    const std::size_t H = side(rng), W = side(rng), C = chan(rng), O = chan(rng);
    const std::size_t kh = std::min(ks(rng), H), kw = std::min(ks(rng), W), s = st(rng);
    auto in = random_tensor({H, W, C}, rng);
    auto k = random_tensor({kh, kw, C, O}, rng);
    Tape<double> tape;
    auto y = conv2d(tape.constant(in), tape.constant(k), s, s);
    auto ref = naive_conv(in, k, s);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.value()[i] - ref[i]) < 1e-6);
  }
  // The 5x5x2 example in single precision.
  auto in = random_tensor({5, 5, 2}, rng);
  auto k = random_tensor({5, 5, 2, 1}, rng);
  Tape<float> tape;
  auto y = conv2d(tape.constant(in.cast<float>()), tape.constant(k.cast<float>()));
  CHECK(std::abs(y.value()[0] - naive_conv(in, k, 1)[0]) < 1e-5);
}

TEST_CASE("elementwise primitives") {
  Tape<float> tape;
  auto s = softmax(tape.constant(Tensor::vector({0.f, 0.f})));
  CHECK(s.value()[0] == doctest::Approx(0.5));
  CHECK(s.value()[1] == doctest::Approx(0.5));
  CHECK(sigmoid(tape.constant(Tensor::scalar(0.f))).value().item() == doctest::Approx(0.5));
  auto r = relu(tape.constant(Tensor::vector({-1.f, 2.f})));
  CHECK(r.value()[0] == 0.f);
  CHECK(r.value()[1] == 2.f);
  auto pooled = global_avg_pool(tape.constant(Tensor(Shape{4, 4, 512}, 0.37f)));
  CHECK(pooled.shape() == Shape{512});
  for (float v : pooled.value().data()) CHECK(v == doctest::Approx(0.37f));
  CHECK_THROWS_AS(softmax(tape.constant(Tensor(Shape{0}))), DomainError);
}

TEST_CASE("softmax sums to one with positive entries") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> len(1, 64);
    auto x = random_tensor({len(rng)}, rng, 5.0);
    Tape<float> tape;
    auto y = softmax(tape.constant(x.cast<float>()));
    double total = 0;
    for (float v : y.value().data()) {
      CHECK(v > 0.f);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("batchnorm modes") {
  ParamRegistry<float> reg;
  auto& gamma = reg.add("g", Tensor(Shape{2}, 1.f));
  auto& beta = reg.add("b", Tensor(Shape{2}, 0.f));
  auto& rm = reg.add("rm", Tensor::vector({1.f, -1.f}), false);
  auto& rv = reg.add("rv", Tensor::vector({4.f, 1.f}), false);
  Tape<float> tape;
  auto x = tape.constant(Tensor(Shape{1, 2}, std::vector<float>{3.f, 0.f}));
  auto y = batchnorm(x, tape.parameter(gamma), tape.parameter(beta), rm, rv, {});
  CHECK(y.value()[0] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
  CHECK(y.value()[1] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)));
  BatchNormOptions train{NormMode::kTrain};
  CHECK_THROWS_AS(batchnorm(x, tape.parameter(gamma), tape.parameter(beta), rm, rv, train), DomainError);

  auto xb = tape.constant(Tensor(Shape{2, 2}, std::vector<float>{1.f, 2.f, 3.f, 2.f}));
  auto yb = batchnorm(xb, tape.parameter(gamma), tape.parameter(beta), rm, rv, train);
  CHECK(yb.value()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(yb.value()[2] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(yb.value()[1] == doctest::Approx(0.0));
  // running = 0.9 * old + 0.1 * batch (unbiased variance)
  CHECK(rm.value[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
  CHECK(rv.value[0] == doctest::Approx(0.9 * 4.0 + 0.1 * 2.0));
}

TEST_CASE("sigmoid derivative at zero matches finite differences") {
  ParamRegistry<double> reg;
  reg.add("x", Tensor64::scalar(0.0));
  auto f = [](Tape<double>& t, ParamRegistry<double>& r) { return sigmoid(t.parameter(r.get("x"))); };
  auto res = testing::gradcheck(f, reg);
  CHECK(reg.get("x").grad[0] == doctest::Approx(0.25));
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("unreachable parameters get exactly zero gradient") {
  ParamRegistry<double> reg;
  reg.add("used", Tensor64::vector({1.0, 2.0}));
  reg.add("unused", Tensor64::vector({3.0}));
  reg.get("unused").grad[0] = 5.0;
  reg.zero_grad();
  Tape<double> tape;
  auto u = tape.parameter(reg.get("used"));
  tape.parameter(reg.get("unused"));
  tape.backward(sum_squares(u));
  CHECK(reg.get("unused").grad[0] == 0.0);
  CHECK(reg.get("used").grad[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar losses and visits nodes once") {
  Tape<float> tape;
  auto v = tape.variable(Tensor::vector({1.f, 2.f}));
  CHECK_THROWS_AS(tape.backward(relu(v)), ContractError);
  auto a = relu(v);
  auto b = add(a, a);
  auto loss = sum(b);
  tape.backward(loss);
  CHECK(tape.grad(v.id)[0] == doctest::Approx(2.0));
  CHECK(tape.last_backward_visits() == 3);
}

TEST_CASE("random composite graphs match finite differences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    ParamRegistry<double> reg;
    reg.add("w1", random_tensor({6, 5}, rng, 0.5));
    reg.add("b1", random_tensor({6}, rng, 0.5));
    reg.add("w2", random_tensor({4, 6}, rng, 0.5));
    reg.add("w3", random_tensor({3, 4}, rng, 0.5));
    const auto input = random_tensor({2, 5}, rng);
    auto f = [&input](Tape<double>& t, ParamRegistry<double>& r) {
      auto x = t.constant(input);
      auto h1 = relu(linear(x, t.parameter(r.get("w1")), t.parameter(r.get("b1"))));
      auto h2 = sigmoid(linear(h1, t.parameter(r.get("w2")), Var<double>{}));
      auto h3 = linear(h2, t.parameter(r.get("w3")), Var<double>{});
      auto p = softmax(reshape(h3, {6}));
      return scale(log_floor(pick(p, 2), 1e-12), -1.0);
    };
    auto res = testing::gradcheck(f, reg);
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-3);
  }
}

TEST_CASE("AdaGrad step from the documented constants") {
  ParamRegistry<float> reg;
  auto& p = reg.add("p", Tensor::vector({0.f, 0.5f}));
  p.grad = Tensor::vector({1.f, 0.f});
  optimizer_step(reg, {OptimizerKind::kAdaGrad, 0.001, 0.0, 0.1});
  CHECK(p.value[0] == doctest::Approx(-0.001 / std::sqrt(1.1)));
  CHECK(p.value[0] == doctest::Approx(-9.535e-4).epsilon(1e-3));
  CHECK(p.value[1] == 0.5f);
  CHECK(p.slots.at("accumulator")[1] == doctest::Approx(0.1));
  CHECK(p.slots.at("accumulator")[0] == doctest::Approx(1.1));
  optimizer_step(reg, {OptimizerKind::kAdaGrad, 0.001, 0.0, 0.1});
  CHECK(p.slots.at("accumulator")[0] == doctest::Approx(2.1));
}

TEST_CASE("SGD-Nesterov") {
  ParamRegistry<float> reg;
  auto& p = reg.add("p", Tensor::vector({1.f}));
  p.grad = Tensor::vector({2.f});
  optimizer_step(reg, {OptimizerKind::kSgdNesterov, 0.1, 0.0});
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 2.0));
  // With momentum the buffer persists: buf1 = g, step = lr*(g + mu*buf).
  ParamRegistry<float> reg2;
  auto& q = reg2.add("q", Tensor::vector({0.f}));
  q.grad = Tensor::vector({1.f});
  optimizer_step(reg2, {OptimizerKind::kSgdNesterov, 0.1, 0.5});
  CHECK(q.value[0] == doctest::Approx(-0.1 * 1.5));
  optimizer_step(reg2, {OptimizerKind::kSgdNesterov, 0.1, 0.5});
  CHECK(q.slots.at("momentum")[0] == doctest::Approx(1.5));
  CHECK(q.value[0] == doctest::Approx(-0.15 - 0.1 * (1.0 + 0.75)));
  CHECK_THROWS_AS(optimizer_step(reg2, {OptimizerKind::kSgdNesterov, -0.1, 0.5}), ConfigError);
}

TEST_CASE("He initialization") {
  CHECK(std::sqrt(2.0 / 2048.0) == doctest::Approx(0.03125));
  auto t = he_init({100000}, 512, 9);
  double s = 0, s2 = 0;
  for (float v : t.data()) {
    s += v;
    s2 += double(v) * v;
  }
  const double n = static_cast<double>(t.size());
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(std::abs(sd / std::sqrt(2.0 / 512.0) - 1.0) < 0.02);
  CHECK(he_init({3, 4}, 12, 5) == he_init({3, 4}, 12, 5));
  CHECK_FALSE(he_init({3, 4}, 12, 5) == he_init({3, 4}, 12, 6));
  CHECK_THROWS_AS(he_init({3}, 0, 1), ConfigError);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  ParamRegistry<float> reg;
  reg.add("a/weight", he_init({3, 4}, 4, 1));
  reg.add("a/bias", he_init({3}, 4, 2));
  reg.add("bn/running_var", Tensor(Shape{2}, 1.f), false);
  const auto bytes = serialize_checkpoint(reg);
  auto loaded = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(loaded) == bytes);
  CHECK_FALSE(loaded.get("bn/running_var").trainable);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  auto newer = bytes;
  newer[8] = 2;
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(newer), doctest::Contains("unsupported version"), FormatError);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(cut), doctest::Contains("byte offset"), FormatError);

  ParamRegistry<float> other;
  other.add("a/weight", Tensor(Shape{4, 3}));
  CHECK_THROWS_AS(restore_checkpoint(other, loaded), FormatError);

  const auto dir = std::filesystem::temp_directory_path() / "pfmn_ckpt_test";
  save_checkpoint(reg, dir / "x.ckpt");
  save_checkpoint(load_checkpoint(dir / "x.ckpt"), dir / "y.ckpt");
  CHECK(binary::read_file(dir / "x.ckpt") == binary::read_file(dir / "y.ckpt"));
  std::filesystem::remove_all(dir);
}
