#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "pfmn/binary_io.hpp"
#include "pfmn/eval.hpp"
#include "pfmn/features.hpp"
#include "pfmn/manifest.hpp"
#include "pfmn/synth.hpp"

using namespace pfmn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("pfmn_test_data_io_" + std::to_string(::getpid())) / name;
  fs::create_directories(dir);
  return dir;
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  for (auto& v : t.data()) v = g(rng);
  return t;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Segmentation equal_segments(std::size_t n, std::size_t len) {
  Segmentation s;
  s.frame_count = n * len;
  for (std::size_t i = 1; i < n; ++i) s.boundaries.push_back(i * len);
  return s;
}

std::vector<bool> marks_for(const Segmentation& seg, const std::vector<std::size_t>& counts) {
  std::vector<bool> marks(seg.frame_count, false);
  const auto segs = seg.segments();
  for (std::size_t i = 0; i < counts.size(); ++i)
    for (std::size_t f = 0; f < counts[i]; ++f) marks[segs[i].first + f] = true;
  return marks;
}

}  // namespace

TEST_CASE("feature file round trip is bit exact") {
  FeatureFile f{FeatureKind::kPoolVectors, 0xfeedbeefULL, random_tensor({10, 2048}, 3)};
  const auto path = scratch("roundtrip") / "a.feat";
  write_features(f, path);
  const auto g = read_features(path);
  CHECK(g.kind == f.kind);
  CHECK(g.provenance == f.provenance);
  CHECK(g.data.shape() == f.data.shape());
  CHECK(std::memcmp(g.data.raw(), f.data.raw(), f.data.size() * 4) == 0);
  CHECK(fs::file_size(path) == kFeatureHeaderBytes + 2 * 4 + 10 * 2048 * 4);

  // Writing what was read reproduces the file byte for byte.
  CHECK(serialize_features(g) == binary::read_file(path));

  FeatureFile maps{FeatureKind::kSpatialMaps, 0, random_tensor({2, 81, 7, 7, 3}, 4)};
  CHECK(deserialize_features(serialize_features(maps)).data == maps.data);
  FeatureFile scores{FeatureKind::kScores, 0, random_tensor({3, 81}, 5)};
  CHECK(deserialize_features(serialize_features(scores)).data == scores.data);
}

TEST_CASE("feature file errors") {
  FeatureFile f{FeatureKind::kPoolVectors, 0, random_tensor({4, 8}, 1)};
  const auto bytes = serialize_features(f);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 6);
  const auto msg = error_of([&] { deserialize_features(truncated); });
  CHECK(msg.find("128") != std::string::npos);  // bytes needed
  CHECK(msg.find("122") != std::string::npos);  // bytes present
  CHECK(msg.find("offset") != std::string::npos);

  auto header_cut = bytes;
  header_cut.resize(10);
  CHECK(error_of([&] { deserialize_features(header_cut); }).find("truncated version") != std::string::npos);

  auto newer = bytes;
  newer[8] = static_cast<std::uint8_t>(kFeatureVersion + 1);
  CHECK(error_of([&] { deserialize_features(newer); }).find("unsupported version 2") != std::string::npos);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(error_of([&] { deserialize_features(magic); }).find("bad magic") != std::string::npos);

  auto kind = bytes;
  kind[12] = 7;
  CHECK(error_of([&] { deserialize_features(kind); }).find("unknown kind 7") != std::string::npos);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(error_of([&] { deserialize_features(trailing); }).find("need 128") != std::string::npos);

  // Extent/kind mismatch: scores must be rank 2.
  FeatureFile bad{FeatureKind::kScores, 0, Tensor({2, 3, 4})};
  CHECK_THROWS_AS(serialize_features(bad), FormatError);
  auto rank = bytes;
  rank[12] = 1;  // maps with rank 2
  CHECK(error_of([&] { deserialize_features(rank); }).find("not valid for feature kind 1") != std::string::npos);

  CHECK_THROWS_AS(read_features(scratch("missing") / "nope.feat"), IoError);
}

TEST_CASE("feature reader slices rows") {
  FeatureFile f{FeatureKind::kPoolVectors, 9, random_tensor({6, 3, 5}, 8)};
  const auto path = scratch("slices") / "c.feat";
  write_features(f, path);
  FeatureReader r(path);
  CHECK(r.rows() == 6);
  CHECK(r.provenance() == 9);
  CHECK(r.shape() == Shape{6, 3, 5});
  CHECK(r.read_rows(2, 5) == f.data.slice(2, 5));
  CHECK(r.read_rows(0, 6) == f.data);
  CHECK(r.read_rows(4, 4).shape() == Shape{0, 3, 5});
  CHECK_THROWS_AS(r.read_rows(5, 7), DimensionError);

  auto bytes = binary::read_file(path);
  bytes.pop_back();
  binary::write_file(path, bytes);
  CHECK_THROWS_AS(FeatureReader{path}, FormatError);
}

TEST_CASE("manifest resolves and validates paths") {
  const auto dir = scratch("manifest");
  FeatureFile f{FeatureKind::kPoolVectors, 0, random_tensor({3, 4}, 2)};
  write_features(f, dir / "feats" / "v1.feat");
  write_json(segmentation_to_json(equal_segments(3, 5)), dir / "v1.seg.json");
  write_json({{"annotator", "a"}, {"indices", {1}}}, dir / "v1.gt.json");
  const nlohmann::json j = {{"version", 1},
                            {"topic", "hiking"},
                            {"videos",
                             {{{"id", "v1"},
                               {"features", "feats/v1.feat"},
                               {"segmentation", "v1.seg.json"},
                               {"gt", {"v1.gt.json"}},
                               {"storyline", {0, 2}}}}}};
  write_json(j, dir / "m.json");
  const auto m = load_manifest(dir / "m.json");
  REQUIRE(m.videos.size() == 1);
  const auto& v = m.find("v1");
  CHECK(v.topic == "hiking");
  CHECK(*v.features == fs::absolute(dir / "feats" / "v1.feat").lexically_normal());
  CHECK(v.gt.size() == 1);
  CHECK(v.storyline == std::vector<std::size_t>{0, 2});
  CHECK_FALSE(v.maps.has_value());

  // Re-serialization keeps paths relative to the manifest directory.
  const auto back = manifest_to_json(m);
  CHECK(back["videos"][0]["features"] == "feats/v1.feat");
  CHECK(manifest_from_json(back, m.root).videos[0].features == v.features);

  auto missing = j;
  missing["videos"][0]["maps"] = "nope.feat";
  write_json(missing, dir / "bad.json");
  const auto msg = error_of([&] { load_manifest(dir / "bad.json"); });
  CHECK(msg.find("nope.feat") != std::string::npos);
  CHECK_THROWS_AS(load_manifest(dir / "bad.json"), IoError);

  auto dup = j;
  dup["videos"].push_back(j["videos"][0]);
  CHECK_THROWS_AS(manifest_from_json(dup, dir), FormatError);
  CHECK_THROWS_AS(manifest_from_json({{"version", 2}, {"videos", nlohmann::json::array()}}, dir), FormatError);
  CHECK_THROWS_AS(manifest_from_json({{"version", 1}}, dir), FormatError);
}

TEST_CASE("build_gt examples") {
  SUBCASE("single fully marked subshot") {
    const auto seg = equal_segments(10, 10);  // budget 15 frames
    const auto gt = build_gt(marks_for(seg, {0, 0, 0, 10}), seg, "a");
    CHECK(gt.indices == std::vector<std::size_t>{3});
    CHECK(gt.budget_frames == 15);
    CHECK(gt.ratios[3] == 1.0);
  }
  SUBCASE("equal ratios fill the budget from the start") {
    const auto seg = equal_segments(20, 10);  // budget 30 frames = 3 subshots
    const auto gt = build_gt(std::vector<bool>(seg.frame_count, true), seg);
    CHECK(gt.indices == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("ratios 0.9, 0.5, 0.8 with room for two") {
    Segmentation seg;
    seg.frame_count = 140;  // budget 21 frames
    seg.boundaries = {10, 20, 30};
    const auto gt = build_gt(marks_for(seg, {9, 5, 8}), seg);
    CHECK(gt.indices == std::vector<std::size_t>{0, 2});
  }
  CHECK_THROWS_AS(build_gt(std::vector<bool>(3), equal_segments(2, 2)), DimensionError);
}

TEST_CASE("build_gt respects the budget and is deterministic") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t frames = 20 + rng() % 300;
    Segmentation seg;
    seg.frame_count = frames;
    std::set<std::size_t> b;
    const std::size_t cuts = rng() % std::min<std::size_t>(frames - 1, 30);
    while (b.size() < cuts) b.insert(1 + rng() % (frames - 1));
    seg.boundaries.assign(b.begin(), b.end());
    std::vector<bool> marks(frames);
    for (std::size_t f = 0; f < frames; ++f) marks[f] = rng() % 3 == 0;
    const auto gt = build_gt(marks, seg);
    CHECK(covered_frames(gt.indices, seg) <= 0.15 * frames);
    CHECK(build_gt(marks, seg).indices == gt.indices);
    CHECK(std::is_sorted(gt.indices.begin(), gt.indices.end()));
  }
}

TEST_CASE("f1_summary") {
  const auto seg = equal_segments(6, 10);
  GtSummary gt;
  gt.indices = {1, 2};
  CHECK(f1_summary({1, 2}, {gt}, seg).f1 == doctest::Approx(1.0));
  CHECK(f1_summary({4, 5}, {gt}, seg).f1 == 0.0);
  const auto half = f1_summary({2, 3}, {gt}, seg);
  CHECK(half.f1 == doctest::Approx(0.5));

  GtSummary other;
  other.indices = {4};
  const auto two = f1_summary({1, 2}, {gt, other}, seg);
  CHECK(two.per_gt == std::vector<double>{1.0, 0.0});
  CHECK(two.f1 == doctest::Approx(0.5));

  const auto empty = f1_summary({}, {gt}, seg);
  CHECK(empty.f1 == 0.0);
  CHECK(empty.empty_prediction);

  CHECK_THROWS(f1_summary({7}, {gt}, seg));
  CHECK_THROWS_AS(f1_summary({1}, {}, seg), ConfigError);

  const auto report = metrics_report("v", two);
  CHECK(report["video_id"] == "v");
  CHECK(report["per_gt"].size() == 2);
}

TEST_CASE("f1_summary is symmetric for a single GT") {
  std::mt19937_64 rng(5);
  Segmentation seg;
  seg.frame_count = 200;
  seg.boundaries = {7, 30, 31, 60, 100, 101, 150, 190};
  const std::size_t n = seg.segment_count();
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng() % 2) a.push_back(i);
      if (rng() % 2) b.push_back(i);
    }
    if (a.empty() || b.empty()) continue;
    GtSummary ga, gb;
    ga.indices = a;
    gb.indices = b;
    CHECK(f1_summary(a, {gb}, seg).f1 == doctest::Approx(f1_summary(b, {ga}, seg).f1).epsilon(1e-12));
  }
}

TEST_CASE("precision_recall") {
  CHECK(precision_recall({1, 2, 3}, {{1, 2}, {3}}) == std::pair<double, double>{1.0, 1.0});
  CHECK(precision_recall({4, 5}, {{1, 2}}) == std::pair<double, double>{0.0, 0.0});
  const auto [p, r] = precision_recall({1, 2, 3, 10, 11}, {{1, 2, 3, 4}, {5, 6, 1}});
  CHECK(p == doctest::Approx(0.6));
  CHECK(r == doctest::Approx(0.5));
}

TEST_CASE("baselines") {
  CHECK(baseline_select(BaselineKind::kUniform, 10, 2, 0) == std::vector<std::size_t>{2, 7});
  // Oracle: middle of each 1-based span computed with real arithmetic.
  for (std::size_t n = 1; n <= 40; ++n)
    for (std::size_t m = 1; m <= n; ++m) {
      const auto u = baseline_select(BaselineKind::kUniform, n, m, 0);
      REQUIRE(u.size() == m);
      for (std::size_t i = 0; i < m; ++i) {
        const double lo = std::floor(double(i) * n / m) + 1, hi = std::floor(double(i + 1) * n / m);
        CHECK(u[i] == static_cast<std::size_t>(std::floor((lo + hi) / 2)) - 1);
      }
      CHECK(std::adjacent_find(u.begin(), u.end(), std::greater_equal<>()) == u.end());
    }

  const auto r1 = baseline_select(BaselineKind::kRandom, 50, 8, 42);
  CHECK(r1 == baseline_select(BaselineKind::kRandom, 50, 8, 42));
  CHECK(r1 != baseline_select(BaselineKind::kRandom, 50, 8, 43));
  CHECK(r1.size() == 8);
  CHECK(std::adjacent_find(r1.begin(), r1.end(), std::greater_equal<>()) == r1.end());
  CHECK(baseline_select(BaselineKind::kRandom, 5, 5, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(baseline_select(BaselineKind::kRandom, 3, 4, 1), ConfigError);
  CHECK(baseline_from_string("uniform") == BaselineKind::kUniform);
  CHECK_THROWS_AS(baseline_from_string("best"), ConfigError);
}

TEST_CASE("GT json") {
  GtSummary gt;
  gt.annotator = "x";
  gt.indices = {1, 4};
  gt.budget_frames = 9;
  const auto back = gt_from_json(gt_to_json(gt));
  CHECK(back.indices == gt.indices);
  CHECK(back.annotator == "x");
  const auto seg = equal_segments(10, 10);
  const nlohmann::json marks = {{"annotator", "m"}, {"marks", std::vector<int>(100, 0)}};
  CHECK(gt_from_json(marks, &seg).indices.empty());
  CHECK_THROWS_AS(gt_from_json(marks), FormatError);
  CHECK_THROWS_AS(gt_from_json({{"indices", {1, 1}}}), FormatError);
  CHECK_THROWS_AS(gt_from_json({{"indices", "x"}}), FormatError);
}

TEST_CASE("synthetic corpus structure") {
  SynthConfig cfg;
  cfg.dim = 64;
  cfg.sequences = 20;
  cfg.heldout = 5;
  cfg.views = 9;
  cfg.map_channels = 4;
  cfg.seed = 3;
  const SynthCorpus corpus(cfg);

  // Orthogonal centroids at norm sqrt(2) are pairwise exactly distance 2 apart.
  const auto& c = corpus.centroids();
  for (std::size_t a = 0; a < cfg.storyline; ++a)
    for (std::size_t b = 0; b < cfg.storyline; ++b) {
      double dot = 0;
      for (std::size_t j = 0; j < cfg.dim; ++j) dot += double(c(a, j)) * c(b, j);
      CHECK(dot == doctest::Approx(a == b ? 2.0 : 0.0).epsilon(1e-5).scale(1));
    }

  for (std::size_t i = 0; i < cfg.sequences; ++i) {
    const auto s = corpus.photostream(i);
    const std::size_t n = s.features.dim(0);
    CHECK(n >= cfg.min_length);
    CHECK(n <= cfg.max_length);
    REQUIRE(s.storyline.size() == cfg.storyline);
    CHECK(std::adjacent_find(s.storyline.begin(), s.storyline.end(), std::greater_equal<>()) == s.storyline.end());
    for (std::size_t k = 0; k < cfg.storyline; ++k) CHECK(s.cluster[s.storyline[k]] == int(k));
    CHECK(s.segmentation.segment_count() == n);
    const auto gt = planted_gt(s);
    CHECK(covered_frames(gt.indices, s.segmentation) <= 0.15 * s.segmentation.frame_count);
    CHECK(f1_summary(s.storyline, {gt}, s.segmentation).f1 == 1.0);
  }

  // Lazy generation is a pure function of (seed, split, index).
  CHECK(corpus.photostream(4).features == SynthCorpus(cfg).photostream(4).features);
  CHECK(corpus.photostream(4).features != corpus.photostream(4, SynthSplit::kHeldOut).features);
  CHECK_THROWS_AS(corpus.photostream(5, SynthSplit::kHeldOut), ConfigError);

  const auto v = corpus.video(2);
  const std::size_t n = v.features.dim(0);
  CHECK(v.candidates.shape() == Shape{n, 9, 64});
  CHECK(v.maps.shape() == Shape{n, 9, 7, 7, 4});
  for (std::size_t i = 0; i < n; ++i)
    CHECK(std::equal(v.features.raw() + i * 64, v.features.raw() + (i + 1) * 64,
                     v.candidates.raw() + (i * 9 + v.key_views[i]) * 64));

  const auto pairs = corpus.rank_pairs(6, "t");
  CHECK(pairs.positives.shape() == Shape{6, 7, 7, 4});
  CHECK(pairs.negatives.shape() == Shape{6, 7, 7, 4});
}

TEST_CASE("synthetic exemplars") {
  SynthConfig cfg;
  cfg.dim = 2048;
  cfg.sigma = 0.0;
  const SynthCorpus exact(cfg);
  for (int k = 0; k < 5; ++k) CHECK(exact.exemplars(k, 3, "a").slice(2, 3).reshape({2048}) ==
                                    exact.centroids().slice(std::size_t(k), std::size_t(k) + 1).reshape({2048}));
  const auto seq = exact.photostream(0);
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(seq.features.slice(seq.storyline[k], seq.storyline[k] + 1).reshape({2048}) ==
          exact.centroids().slice(k, k + 1).reshape({2048}));

  cfg.sigma = 0.1;
  const SynthCorpus noisy(cfg);
  std::size_t correct = 0;
  for (int k = 0; k < 5; ++k) {
    const auto e = noisy.exemplars(k, 200, "nc");
    for (std::size_t i = 0; i < 200; ++i) correct += nearest_centroid(noisy.centroids(), e.raw() + i * 2048) == std::size_t(k);
  }
  CHECK(correct == 1000);

  auto bad = cfg;
  bad.min_length = 33;
  CHECK_THROWS_AS(SynthCorpus{bad}, ConfigError);
  bad = cfg;
  bad.storyline = 1;
  CHECK_THROWS_AS(SynthCorpus{bad}, ConfigError);
  bad = cfg;
  bad.max_length = 20;
  CHECK_THROWS_AS(SynthCorpus{bad}, ConfigError);

  nlohmann::json j = cfg;
  CHECK(j.get<SynthConfig>().dim == 2048);
}
