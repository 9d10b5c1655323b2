#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "pfmn/error.hpp"
#include "pfmn/temporal_seg.hpp"
#include "support/kts_oracle.hpp"

using namespace pfmn;
using pfmn::testing::exhaustive;
using pfmn::testing::scatter_oracle;

namespace {

Tensor random_features(std::size_t t, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.f, 1.f);
  Tensor x({t, d});
  for (auto& v : x.data()) v = g(rng);
  return x;
}

}  // namespace

TEST_CASE("dynamic program equals exhaustive enumeration") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 3 + rng() % 10;  // 3..12
    const auto x = random_features(t, 1 + rng() % 5, rng);
    const auto path = kts_path(x, 3);
    for (std::size_t k = 1; k <= 3; ++k) {
      const auto oracle = exhaustive(x, k);
      CHECK(path.objective[k - 1] == doctest::Approx(oracle.cost).epsilon(1e-9));
      // Ties are possible (d = 1 rows normalize to +-1), so compare the cost of the DP's split.
      double dp_cost = 0;
      std::size_t s = 0;
      for (auto e : path.boundaries[k - 1]) {
        dp_cost += scatter_oracle(x, s, e);
        s = e;
      }
      dp_cost += scatter_oracle(x, s, x.dim(0));
      CHECK(path.boundaries[k - 1].size() == k - 1);
      CHECK(dp_cost == doctest::Approx(oracle.cost).epsilon(1e-9));
      if (x.dim(1) > 1) CHECK(path.boundaries[k - 1] == oracle.boundaries);
    }
  }
}

TEST_CASE("two-block sequence splits at the block edge") {
  std::mt19937_64 rng(3);
  const auto ab = random_features(2, 16, rng);
  Tensor x({20, 16});
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t k = 0; k < 16; ++k) x(i, k) = ab(i < 10 ? 0 : 1, k);
  const auto seg = kts_segment(x, 4, 0.1);
  CHECK(seg.boundaries == std::vector<std::size_t>{10});
  CHECK(subshot_middle_frames(seg) == std::vector<std::size_t>{4, 14});
}

TEST_CASE("constant sequence is one segment for any positive penalty") {
  Tensor x({30, 4}, 0.7f);
  for (double p : {1e-9, 1e-3, 1.0, 100.0}) CHECK(kts_segment(x, 10, p).boundaries.empty());
}

TEST_CASE("planted change points are recovered") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto levels = random_features(4, 64, rng);
    const std::vector<std::size_t> planted{47, 101, 163};
    std::normal_distribution<float> noise(0.f, 0.05f);
    Tensor x({200, 64});
    for (std::size_t i = 0; i < 200; ++i) {
      const std::size_t s = (i >= 47) + (i >= 101) + (i >= 163);
      for (std::size_t k = 0; k < 64; ++k) x(i, k) = levels(s, k) / 8.f + noise(rng);
    }
    const auto seg = kts_segment(x, 10, 1.0);
    REQUIRE(seg.boundaries.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(double(seg.boundaries[i]) - double(planted[i])) <= 1.0);
  }
}

TEST_CASE("objective is non-increasing in the segment count") {
  std::mt19937_64 rng(11);
  const auto x = random_features(40, 6, rng);
  const auto path = kts_path(x, 15);
  for (std::size_t k = 1; k < path.objective.size(); ++k) CHECK(path.objective[k] <= path.objective[k - 1] + 1e-12);
  CHECK(kts_path(x, 15).boundaries == path.boundaries);
}

TEST_CASE("segmentations tile the sequence") {
  std::mt19937_64 rng(12);
  const auto x = random_features(60, 3, rng);
  for (double p : {0.0, 0.01, 0.1, 1.0}) {
    const auto seg = kts_segment(x, 20, p);
    CHECK_NOTHROW(seg.validate());
    std::size_t covered = 0, prev = 0;
    for (const auto& [b, e] : seg.segments()) {
      CHECK(b == prev);
      CHECK(e > b);
      covered += e - b;
      prev = e;
    }
    CHECK(covered == 60);
  }
}

TEST_CASE("auto penalty targets the mean subshot length") {
  std::mt19937_64 rng(13);
  // Twelve blocks of 25..35 frames with distinct levels.
  std::vector<float> frames;
  std::size_t t = 0;
  std::normal_distribution<float> g(0.f, 1.f);
  for (int b = 0; b < 12; ++b) {
    const std::size_t len = 25 + rng() % 11;
    std::vector<float> level(8);
    for (auto& v : level) v = g(rng);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t k = 0; k < 8; ++k) frames.push_back(level[k] + 0.1f * g(rng));
    t += len;
  }
  const Tensor x({t, 8}, frames);
  const auto res = kts_segment_auto(x);
  CHECK(res.in_target);
  const double mean = double(t) / res.segmentation.segment_count();
  CHECK(mean >= 25.0);
  CHECK(mean <= 36.0);
}

TEST_CASE("middle frames and errors") {
  Segmentation s;
  s.frame_count = 10;
  CHECK(subshot_middle_frames(s) == std::vector<std::size_t>{4});
  s.frame_count = 4;
  s.boundaries = {3};
  CHECK(subshot_middle_frames(s)[1] == 3);

  Tensor x({5, 2}, 1.f);
  CHECK_THROWS_AS(kts_path(x, 6), ConfigError);
  CHECK_THROWS_AS(kts_path(x, 0), ConfigError);
  CHECK_THROWS_AS(kts_path(Tensor({1, 2}, 1.f), 1), ConfigError);

  Segmentation bad;
  bad.frame_count = 10;
  bad.boundaries = {5, 5};
  CHECK_THROWS_AS(bad.validate(), FormatError);

  Segmentation good;
  good.frame_count = 20;
  good.boundaries = {10};
  const auto back = segmentation_from_json(segmentation_to_json(good));
  CHECK(back.boundaries == good.boundaries);
  CHECK(back.frame_count == 20);
  CHECK(back.fps == 5.0);
  CHECK_THROWS_AS(segmentation_from_json(nlohmann::json{{"fps", 5}}), FormatError);
}
