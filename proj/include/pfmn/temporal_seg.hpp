#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pfmn/tensor.hpp"

namespace pfmn {

/// Frame partition into subshots. `boundaries` are the first frames of every
/// segment except the first one.
struct Segmentation {
  std::vector<std::size_t> boundaries;
  std::size_t frame_count = 0;
  double fps = 5.0;

  std::size_t segment_count() const { return boundaries.size() + 1; }
  /// Half-open [start, end) frame ranges.
  std::vector<std::pair<std::size_t, std::size_t>> segments() const;
  std::size_t segment_length(std::size_t i) const;
  void validate() const;
};

/// Segmentation with `count` equal-ish segments, useful when no frame features exist.
Segmentation uniform_segmentation(std::size_t frame_count, std::size_t count);

/// Within-segment scatter of the linear kernel on row-normalized features.
class KernelScatter {
 public:
  explicit KernelScatter(const Tensor& frame_features);
  std::size_t frames() const { return frames_; }
  /// Scatter of frames [begin, end); zero for an empty range.
  double cost(std::size_t begin, std::size_t end) const;

 private:
  std::size_t frames_ = 0;
  std::vector<double> diag_prefix_;   // T + 1
  std::vector<double> block_prefix_;  // (T + 1)^2
};

/// Optimal change points for every segment count 1..max_segments.
struct KtsPath {
  std::vector<double> objective;                    // objective[k-1]
  std::vector<std::vector<std::size_t>> boundaries;  // boundaries[k-1]
};

KtsPath kts_path(const Tensor& frame_features, std::size_t max_segments);

/// Penalized model selection g(k) = obj(k) + penalty * k * (log(T/k) + 1);
/// ties go to the smaller k. Returns the selected k.
std::size_t kts_select(const KtsPath& path, std::size_t frame_count, double penalty);

Segmentation kts_segment(const Tensor& frame_features, std::size_t max_segments, double penalty, double fps = 5.0);

struct KtsAutoResult {
  Segmentation segmentation;
  double penalty = 0.0;
  bool in_target = false;
};

/// Bisects the penalty until the mean segment length lands in
/// [min_mean, max_mean] frames. When no penalty achieves that, the segment
/// count closest to the interval midpoint is returned with in_target = false.
KtsAutoResult kts_segment_auto(const Tensor& frame_features, double min_mean = 25.0, double max_mean = 36.0,
                               std::optional<std::size_t> max_segments = std::nullopt, double fps = 5.0);

/// floor((start + end - 1) / 2) per segment.
std::vector<std::size_t> subshot_middle_frames(const Segmentation& seg);

nlohmann::json segmentation_to_json(const Segmentation& seg);
/// `frame_count` is taken from the JSON when present, else from the argument.
Segmentation segmentation_from_json(const nlohmann::json& j, std::optional<std::size_t> frame_count = std::nullopt);

}  // namespace pfmn
