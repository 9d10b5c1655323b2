#include <doctest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <numeric>
#include <random>

#include "pfmn/error.hpp"
#include "pfmn/pfmn.hpp"
#include "support/gradcheck.hpp"
#include "support/pfmn_oracle.hpp"

using namespace pfmn;
using Rational = boost::multiprecision::cpp_rational;

namespace {

PfmnConfig small_config() {
  PfmnConfig c;
  c.feature_dim = 12;
  c.memory_dim = 6;
  return c;
}

Tensor random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng, float scale = 1.f) {
  std::normal_distribution<float> g(0.f, scale);
  Tensor t({n, d});
  for (auto& v : t.data()) v = g(rng);
  return t;
}

std::vector<Rational> exact_prior(std::size_t n, std::size_t m, std::size_t t, std::size_t z) {
  const Rational r(static_cast<long>(m - t + 1), static_cast<long>(n - t + 1));
  std::vector<Rational> u;
  for (std::size_t j = z + 1; j <= n; ++j) {
    if (j > n - m + t) {
      u.emplace_back(0);
      continue;
    }
    Rational prod = 1;
    for (const auto& prev : u) prod *= 1 - prev;
    u.push_back(prod * r);
  }
  return u;
}

void zero_param(ParamRegistry<float>& reg, const std::string& name) { reg.get(name).value.fill(0.f); }

}  // namespace

TEST_CASE("memory embeddings") {
  const PfmnConfig cfg;
  ParamRegistry<float> reg;
  add_pfmn_params(reg, cfg, 1);
  std::mt19937_64 rng(1);
  Tape<float> tape;
  const auto bank = embed_memory(tape, reg, tape.constant(random_rows(3, 2048, rng)), MemoryKind::kPast, cfg);
  CHECK(bank.input.shape() == Shape{3, 1024});
  CHECK(bank.output.shape() == Shape{3, 1024});
  for (float v : bank.input.value().values()) CHECK(v >= 0.f);
  for (float v : bank.output.value().values()) CHECK(v >= 0.f);
  CHECK(bank.slot_to_subshot == std::vector<std::size_t>{0, 1, 2});

  zero_param(reg, "pfmn/future_in/bias");
  const auto zero = embed_memory(tape, reg, tape.constant(Tensor({1, 2048})), MemoryKind::kFuture, cfg);
  for (float v : zero.input.value().values()) CHECK(v == 0.f);
  const auto empty = embed_memory(tape, reg, tape.constant(Tensor({0, 2048})), MemoryKind::kFuture, cfg);
  CHECK(empty.rows() == 0);
  CHECK_THROWS_AS(embed_memory(tape, reg, tape.constant(Tensor({2, 100})), MemoryKind::kPast, cfg), DimensionError);
}

TEST_CASE("query embedding") {
  const auto cfg = small_config();
  ParamRegistry<float> reg;
  add_pfmn_params(reg, cfg, 2);
  zero_param(reg, "pfmn/query/bias");
  Tape<float> tape;
  for (float v : compute_query(tape, reg, Var<float>{}, cfg).value().values()) CHECK(v == 0.f);

  std::mt19937_64 rng(2);
  const auto d = random_rows(1, 12, rng);
  Tensor twice({2, 12});
  for (std::size_t k = 0; k < 12; ++k) twice(0, k) = twice(1, k) = d[k];
  const auto q1 = compute_query(tape, reg, tape.constant(d), cfg).value();
  const auto q2 = compute_query(tape, reg, tape.constant(twice), cfg).value();
  const auto direct = relu(linear(tape.constant(d.reshape({12})), tape.parameter(reg.get("pfmn/query/weight")),
                                  tape.parameter(reg.get("pfmn/query/bias"))))
                          .value();
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(q1[i] == doctest::Approx(q2[i]));
    CHECK(q1[i] == doctest::Approx(direct[i]));
  }
}

TEST_CASE("future attention") {
  std::mt19937_64 rng(3);
  Tape<float> tape;
  const auto mem = tape.constant(random_rows(5, 6, rng));
  const auto uniform = future_attend(mem, mem, tape.constant(Tensor({6})));
  for (float p : uniform.weights.value().values()) CHECK(p == doctest::Approx(0.2f));
  const auto q = tape.constant(random_rows(1, 6, rng).reshape({6}));
  const auto fa = future_attend(mem, mem, q);
  const auto& p = fa.weights.value().values();
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 6; ++k) CHECK(fa.attended.value()(i, k) == doctest::Approx(p[i] * mem.value()(i, k)));
  const auto one = tape.constant(random_rows(1, 6, rng));
  const auto single = future_attend(one, one, q);
  CHECK(single.weights.value()[0] == 1.f);
  CHECK(single.attended.value() == one.value());
  CHECK_THROWS_AS(future_attend(tape.constant(Tensor({0, 6})), tape.constant(Tensor({0, 6})), q), DomainError);
}

TEST_CASE("read key") {
  const auto cfg = small_config();
  ParamRegistry<float> reg;
  add_pfmn_params(reg, cfg, 4);
  std::mt19937_64 rng(4);
  const auto& kern = reg.get("pfmn/read/kernel").value;
  const auto& bias = reg.get("pfmn/read/bias").value;
  for (std::size_t r : {30u, 5u, 20u, 41u}) {
    const auto x = random_rows(r, 6, rng);
    Tape<float> tape;
    const auto k = read_key(tape, reg, tape.constant(x), cfg).value();
    REQUIRE(k.shape() == Shape{6});
    const std::size_t rows = std::max<std::size_t>(r, 20);
    const std::size_t steps = (rows - 20) / 10 + 1;
    if (r == 30) CHECK(steps == 2);
    if (r == 5) CHECK(steps == 1);
    for (std::size_t o = 0; o < 6; ++o) {
      double acc = 0;
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t dy = 0; dy < 20; ++dy)
          if (s * 10 + dy < r)
            for (std::size_t c = 0; c < 6; ++c) acc += double(x(s * 10 + dy, c)) * kern[(dy * 6 + c) * 6 + o];
      CHECK(k[o] == doctest::Approx(acc / steps + bias[o]).epsilon(1e-5));
    }
  }
  zero_param(reg, "pfmn/read/bias");
  Tape<float> tape;
  for (float v : read_key(tape, reg, tape.constant(Tensor({7, 6})), cfg).value().values()) CHECK(v == 0.f);
}

TEST_CASE("past read") {
  std::mt19937_64 rng(5);
  Tape<float> tape;
  MemoryBank<float> bank;
  bank.input = tape.constant(random_rows(4, 6, rng));
  bank.output = tape.constant(random_rows(4, 6, rng));
  bank.slot_to_subshot = {0, 2, 5, 9};
  const auto mean = past_read(bank, tape.constant(Tensor({6}))).value();
  for (std::size_t k = 0; k < 6; ++k) {
    double m = 0;
    for (std::size_t i = 0; i < 4; ++i) m += bank.output.value()(i, k) / 4.0;
    CHECK(mean[k] == doctest::Approx(m));
  }
  const auto key = tape.constant(random_rows(1, 6, rng, 3.f).reshape({6}));
  const auto mt = past_read(bank, key).value();
  for (std::size_t k = 0; k < 6; ++k) {
    float lo = 1e9f, hi = -1e9f;
    for (std::size_t i = 0; i < 4; ++i) {
      lo = std::min(lo, bank.output.value()(i, k));
      hi = std::max(hi, bank.output.value()(i, k));
    }
    CHECK(mt[k] >= lo - 1e-6f);
    CHECK(mt[k] <= hi + 1e-6f);
  }
  MemoryBank<float> single;
  single.input = tape.constant(random_rows(1, 6, rng));
  single.output = tape.constant(random_rows(1, 6, rng));
  single.slot_to_subshot = {3};
  CHECK(past_read(single, key).value() == single.output.value().reshape({6}));
  MemoryBank<float> empty;
  CHECK_THROWS_AS(past_read(empty, key), ContractError);
}

TEST_CASE("compatibility scores") {
  const auto cfg = small_config();
  ParamRegistry<float> reg;
  add_pfmn_params(reg, cfg, 6);
  std::mt19937_64 rng(6);
  Tape<float> tape;
  const auto m = tape.constant(random_rows(1, 6, rng).reshape({6}));
  const auto one = compatibility(tape, reg, m, tape.constant(random_rows(1, 12, rng)));
  CHECK(one.value()[0] == 1.f);
  const auto c = compatibility(tape, reg, m, tape.constant(random_rows(9, 12, rng))).value();
  CHECK(std::accumulate(c.values().begin(), c.values().end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
  zero_param(reg, "pfmn/output/weight");
  zero_param(reg, "pfmn/output/bias");
  for (float v : compatibility(tape, reg, m, tape.constant(random_rows(4, 12, rng))).value().values())
    CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("selection prior matches exact rational evaluation") {
  const auto u = selection_prior(10, 4, 2, 1);
  REQUIRE(u.size() == 9);  // j = 2..10
  CHECK(u[0] == doctest::Approx(1.0 / 3));
  CHECK(u[1] == doctest::Approx(2.0 / 9));
  CHECK(u[2] == doctest::Approx(14.0 / 81));
  CHECK(u[7] == 0.0);  // j = 9
  CHECK(u[8] == 0.0);  // j = 10

  std::size_t instances = 0;
  for (std::size_t n = 1; n <= 12; ++n)
    for (std::size_t m = 1; m <= n; ++m)
      for (std::size_t t = 1; t <= m; ++t)
        for (std::size_t z = t - 1; z < n - m + t; ++z) {
          const auto got = selection_prior(n, m, t, z);
          const auto want = exact_prior(n, m, t, z);
          REQUIRE(got.size() == want.size());
          for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i] == doctest::Approx(static_cast<double>(want[i])).epsilon(1e-12));
            const std::size_t j = z + 1 + i;
            if (j > n - m + t) CHECK(got[i] == 0.0);
            if (i > 0 && j <= n - m + t && m < n) CHECK(got[i] < got[i - 1]);
          }
          ++instances;
        }
  CHECK(instances > 0);

  for (std::size_t t = 1; t <= 6; ++t) {
    const auto forced = selection_prior(6, 6, t, t - 1);
    CHECK(forced[0] == 1.0);
    for (std::size_t i = 1; i < forced.size(); ++i) CHECK(forced[i] == 0.0);
  }
  CHECK_THROWS_AS(selection_prior(10, 4, 2, 8), DomainError);
  CHECK_THROWS_AS(selection_prior(4, 5, 1, 0), ConfigError);
}

TEST_CASE("greedy selection") {
  std::vector<double> c{0.1, 0.5, 0.2, 0.2};
  CHECK(select_next(c, {0, 0, 1, 0}).offset == 2);
  const auto u = selection_prior(10, 3, 1, 0);
  std::vector<double> flat(10, 0.1);
  CHECK(select_next(flat, u).offset == 0);
  std::vector<double> scaled = c;
  for (auto& v : scaled) v *= 7.5;
  CHECK(select_next(c, {0.4, 0.3, 0.2, 0.1}).offset == select_next(scaled, {0.4, 0.3, 0.2, 0.1}).offset);
  CHECK(select_next({0.25, 0.25, 0.25, 0.25}, {0.2, 0.2, 0.2, 0.2}).offset == 0);
  const auto degenerate = select_next({0.0, 0.0, 1.0}, {0.0, 0.5, 0.0});
  CHECK(degenerate.degenerate);
  CHECK(degenerate.offset == 1);
}

TEST_CASE("decode contract") {
  const auto cfg = small_config();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    ParamRegistry<float> reg;
    add_pfmn_params(reg, cfg, 100 + trial);
    const std::size_t n = 1 + rng() % 40;
    const std::size_t m = 1 + rng() % n;
    const auto f = random_rows(n, 12, rng);
    const auto res = decode(f, m, reg, cfg);
    REQUIRE(res.indices.size() == m);
    for (std::size_t t = 0; t < m; ++t) {
      CHECK(res.indices[t] <= n - m + t);  // 0-based form of z_t <= n - m + t
      if (t > 0) CHECK(res.indices[t] > res.indices[t - 1]);
      const auto& step = res.steps[t];
      CHECK(std::accumulate(step.c.begin(), step.c.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(std::accumulate(step.future_attention.begin(), step.future_attention.end(), 0.0) ==
            doctest::Approx(1.0).epsilon(1e-6));
      if (t > 0)
        CHECK(std::accumulate(step.past_attention.begin(), step.past_attention.end(), 0.0) ==
              doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK(decode(f, m, reg, cfg).indices == res.indices);
  }
  ParamRegistry<float> reg;
  add_pfmn_params(reg, cfg, 1);
  const auto five = decode(random_rows(5, 12, rng), 5, reg, cfg);
  CHECK(five.indices == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(decode(random_rows(3, 12, rng), 4, reg, cfg), ConfigError);
  CHECK_THROWS_AS(decode(random_rows(3, 11, rng), 2, reg, cfg), DimensionError);
}

TEST_CASE("decode steps match the straight-line oracle") {
  const auto cfg = small_config();
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    ParamRegistry<float> reg;
    add_pfmn_params(reg, cfg, 200 + trial);
    const std::size_t n = 8 + rng() % 30;
    const auto f = random_rows(n, 12, rng);
    const std::size_t m = 2 + rng() % 4;
    const auto res = decode(f, m, reg, cfg);
    std::vector<std::size_t> picked;
    for (std::size_t t = 0; t < m; ++t) {
      const auto want = testing::oracle_step(reg, f, m, picked);
      REQUIRE(want.c.size() == res.steps[t].c.size());
      for (std::size_t i = 0; i < want.c.size(); ++i) {
        CHECK(res.steps[t].c[i] == doctest::Approx(want.c[i]).epsilon(1e-5));
        CHECK(res.steps[t].u[i] == doctest::Approx(want.u[i]).epsilon(1e-12));
      }
      CHECK(res.indices[t] == want.z);
      picked.push_back(res.indices[t]);
    }
  }
}

TEST_CASE("window policies keep the decode contract") {
  std::mt19937_64 rng(9);
  for (auto policy : {WindowPolicy::kFull, WindowPolicy::kFutureFrame, WindowPolicy::kFutureAll, WindowPolicy::kPastAll}) {
    auto cfg = small_config();
    cfg.window = policy;
    ParamRegistry<float> reg;
    add_pfmn_params(reg, cfg, 9);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 2 + rng() % 50;
      const std::size_t m = 1 + rng() % n;
      const auto res = decode(random_rows(n, 12, rng), m, reg, cfg);
      for (std::size_t t = 0; t < m; ++t) {
        CHECK(res.indices[t] <= n - m + t);
        if (t > 0) CHECK(res.indices[t] > res.indices[t - 1]);
      }
    }
    CHECK(window_policy_from_string(to_string(policy)) == policy);
  }
  CHECK_THROWS_AS(window_policy_from_string("xx"), ConfigError);
}

TEST_CASE("selection loss gradients with fixed targets") {
  std::mt19937_64 rng(10);
  for (auto attended : {AttendedEmbedding::kInput, AttendedEmbedding::kOutput}) {
    for (auto policy : {WindowPolicy::kFull, WindowPolicy::kPastAll}) {
      auto cfg = small_config();
      cfg.attended = attended;
      cfg.window = policy;
      ParamRegistry<float> init;
      add_pfmn_params(init, cfg, 11);
      auto reg = init.cast<double>();
      const auto f = random_rows(6, 12, rng).cast<double>();
      std::vector<std::size_t> targets;
      {
        Tape<double> tape;
        targets = decode_graph(tape, reg, tape.constant(f), 3, cfg).indices;
      }
      auto loss = [&](Tape<double>& t, ParamRegistry<double>& r) {
        return selection_nll(decode_graph(t, r, t.constant(f), 3, cfg, &targets));
      };
      const auto res = testing::gradcheck(loss, reg, 1e-3, 40);
      INFO(res.worst);
      CHECK(res.max_rel_error < 1e-3);
      if (attended == AttendedEmbedding::kInput) {
        for (float g : reg.get("pfmn/future_out/weight").grad.values()) CHECK(g == 0.0);
      }
    }
  }
}

TEST_CASE("summary length from a ratio") {
  CHECK(summary_length(40, 0.15) == 6);
  CHECK(summary_length(3, 0.15) == 1);
  CHECK(summary_length(60, 0.15) == 9);
  CHECK(summary_length(5, 1.0) == 5);
  CHECK_THROWS_AS(summary_length(10, 0.0), ConfigError);
}
