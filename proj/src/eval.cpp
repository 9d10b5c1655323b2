#include "pfmn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"

namespace pfmn {
namespace {

void check_indices(const std::vector<std::size_t>& indices, std::size_t n, const char* what) {
  for (auto i : indices)
    if (i >= n) throw DomainError(std::string(what) + " index " + std::to_string(i) + " outside " + std::to_string(n) + " subshots");
}

std::vector<bool> frame_mask(const std::vector<std::size_t>& indices, const Segmentation& seg) {
  const auto segs = seg.segments();
  std::vector<bool> mask(seg.frame_count, false);
  for (auto i : indices)
    for (auto f = segs[i].first; f < segs[i].second; ++f) mask[f] = true;
  return mask;
}

}  // namespace

GtSummary build_gt(const std::vector<bool>& marks, const Segmentation& seg, const std::string& annotator,
                   double budget_fraction) {
  if (marks.size() != seg.frame_count) {
    throw DimensionError("marks cover " + std::to_string(marks.size()) + " frames, segmentation has " +
                         std::to_string(seg.frame_count));
  }
  if (!(budget_fraction > 0.0 && budget_fraction <= 1.0)) throw ConfigError("GT budget fraction must be in (0, 1]");
  GtSummary gt;
  gt.annotator = annotator;
  gt.budget_frames = static_cast<std::size_t>(std::floor(budget_fraction * double(seg.frame_count) + 1e-9));
  const auto segs = seg.segments();
  for (const auto& [b, e] : segs) {
    const auto marked = std::count(marks.begin() + std::ptrdiff_t(b), marks.begin() + std::ptrdiff_t(e), true);
    gt.ratios.push_back(double(marked) / double(e - b));
  }
  std::vector<std::size_t> order(segs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return gt.ratios[a] > gt.ratios[b]; });
  std::size_t total = 0;
  for (auto i : order) {
    if (gt.ratios[i] <= 0.0) break;
    const auto len = seg.segment_length(i);
    if (total + len > gt.budget_frames) break;
    total += len;
    gt.indices.push_back(i);
  }
  std::sort(gt.indices.begin(), gt.indices.end());
  return gt;
}

std::size_t covered_frames(const std::vector<std::size_t>& indices, const Segmentation& seg) {
  check_indices(indices, seg.segment_count(), "summary");
  std::set<std::size_t> unique(indices.begin(), indices.end());
  std::size_t total = 0;
  for (auto i : unique) total += seg.segment_length(i);
  return total;
}

F1Report f1_summary(const std::vector<std::size_t>& pred, const std::vector<GtSummary>& gts, const Segmentation& seg) {
  if (gts.empty()) throw ConfigError("f1_summary needs at least one GT summary");
  check_indices(pred, seg.segment_count(), "prediction");
  F1Report report;
  if (pred.empty()) {
    std::cerr << "warning: empty prediction scores F1 = 0\n";
    report.empty_prediction = true;
    report.per_gt.assign(gts.size(), 0.0);
    return report;
  }
  const auto pmask = frame_mask(pred, seg);
  const double pred_frames = double(std::count(pmask.begin(), pmask.end(), true));
  for (const auto& gt : gts) {
    check_indices(gt.indices, seg.segment_count(), "GT");
    const auto gmask = frame_mask(gt.indices, seg);
    double gt_frames = 0, overlap = 0;
    for (std::size_t f = 0; f < gmask.size(); ++f) {
      gt_frames += gmask[f];
      overlap += gmask[f] && pmask[f];
    }
    const double p = overlap / pred_frames;
    const double r = gt_frames > 0 ? overlap / gt_frames : 0.0;
    report.per_gt.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  report.f1 = std::accumulate(report.per_gt.begin(), report.per_gt.end(), 0.0) / double(gts.size());
  return report;
}

std::pair<double, double> precision_recall(const std::vector<std::size_t>& pred,
                                           const std::vector<std::vector<std::size_t>>& gts) {
  std::set<std::size_t> truth;
  for (const auto& g : gts) truth.insert(g.begin(), g.end());
  const std::set<std::size_t> guess(pred.begin(), pred.end());
  std::size_t hit = 0;
  for (auto i : guess) hit += truth.count(i);
  const double p = guess.empty() ? 0.0 : double(hit) / double(guess.size());
  const double r = truth.empty() ? 0.0 : double(hit) / double(truth.size());
  return {p, r};
}

BaselineKind baseline_from_string(const std::string& s) {
  if (s == "random") return BaselineKind::kRandom;
  if (s == "uniform") return BaselineKind::kUniform;
  throw ConfigError("unknown baseline '" + s + "' (expected random or uniform)");
}

std::vector<std::size_t> baseline_select(BaselineKind kind, std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m == 0 || m > n) {
    throw ConfigError("baseline needs 1 <= m <= n, got m=" + std::to_string(m) + " n=" + std::to_string(n));
  }
  std::vector<std::size_t> out;
  if (kind == BaselineKind::kUniform) {
    // Span i covers 1-based [i*n/m + 1, (i+1)*n/m]; its middle is floor((lo+hi)/2).
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t lo = i * n / m + 1, hi = (i + 1) * n / m;
      out.push_back((lo + hi) / 2 - 1);
    }
    return out;
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates keeps the draw independent of the standard library's sample().
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  out.assign(all.begin(), all.begin() + std::ptrdiff_t(m));
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json gt_to_json(const GtSummary& gt) {
  return {{"annotator", gt.annotator}, {"indices", gt.indices}, {"ratios", gt.ratios}, {"budget_frames", gt.budget_frames}};
}

GtSummary gt_from_json(const nlohmann::json& j, const Segmentation* seg) {
  try {
    const std::string annotator = j.value("annotator", std::string{});
    if (j.contains("marks")) {
      if (!seg) throw FormatError("GT marks need a segmentation");
      std::vector<bool> marks;
      for (const auto& v : j.at("marks")) marks.push_back(v.is_boolean() ? v.get<bool>() : v.get<int>() != 0);
      return build_gt(marks, *seg, annotator, j.value("budget_fraction", kGtBudgetFraction));
    }
    GtSummary gt;
    gt.annotator = annotator;
    gt.indices = j.at("indices").get<std::vector<std::size_t>>();
    gt.ratios = j.value("ratios", std::vector<double>{});
    gt.budget_frames = j.value("budget_frames", std::size_t{0});
    std::sort(gt.indices.begin(), gt.indices.end());
    if (std::adjacent_find(gt.indices.begin(), gt.indices.end()) != gt.indices.end())
      throw FormatError("GT indices repeat");
    if (seg) check_indices(gt.indices, seg->segment_count(), "GT");
    return gt;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed GT summary: ") + e.what());
  }
}

nlohmann::json metrics_report(const std::string& video_id, const F1Report& report) {
  return {{"video_id", video_id}, {"f1", report.f1}, {"per_gt", report.per_gt},
          {"empty_prediction", report.empty_prediction}};
}

}  // namespace pfmn
