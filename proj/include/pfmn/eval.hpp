#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pfmn/temporal_seg.hpp"

namespace pfmn {

inline constexpr double kGtBudgetFraction = 0.15;

struct GtSummary {
  std::string annotator;
  std::vector<std::size_t> indices;  // 0-based subshots, ascending
  std::vector<double> ratios;        // marked fraction per subshot
  std::size_t budget_frames = 0;
};

/// Ranks subshots by marked fraction (earlier subshot on ties) and takes
/// them in that order while the running total stays within
/// floor(budget_fraction * frames). Stops at the first subshot that would
/// overflow. Subshots with no marked frame are never taken.
GtSummary build_gt(const std::vector<bool>& marks, const Segmentation& seg, const std::string& annotator = "",
                   double budget_fraction = kGtBudgetFraction);

/// Frames covered by a set of subshots.
std::size_t covered_frames(const std::vector<std::size_t>& indices, const Segmentation& seg);

struct F1Report {
  double f1 = 0.0;               // mean over GTs
  std::vector<double> per_gt;
  bool empty_prediction = false;
};

/// Frame-level F1 of a predicted subshot set against each GT, averaged.
F1Report f1_summary(const std::vector<std::size_t>& pred, const std::vector<GtSummary>& gts, const Segmentation& seg);

/// Set precision/recall against the union of GT item sets.
std::pair<double, double> precision_recall(const std::vector<std::size_t>& pred,
                                           const std::vector<std::vector<std::size_t>>& gts);

enum class BaselineKind { kRandom, kUniform };
BaselineKind baseline_from_string(const std::string& s);

/// random: m distinct sorted indices; uniform: middle of each of m equal spans.
std::vector<std::size_t> baseline_select(BaselineKind kind, std::size_t n, std::size_t m, std::uint64_t seed);

nlohmann::json gt_to_json(const GtSummary& gt);
/// Accepts either {"indices": [...]} or {"marks": [0/1...]} (the latter needs a segmentation).
GtSummary gt_from_json(const nlohmann::json& j, const Segmentation* seg = nullptr);

nlohmann::json metrics_report(const std::string& video_id, const F1Report& report);

}  // namespace pfmn
