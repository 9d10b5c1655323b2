#include "pfmn/temporal_seg.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"

namespace pfmn {

std::vector<std::pair<std::size_t, std::size_t>> Segmentation::segments() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(segment_count());
  std::size_t start = 0;
  for (auto b : boundaries) {
    out.emplace_back(start, b);
    start = b;
  }
  out.emplace_back(start, frame_count);
  return out;
}

std::size_t Segmentation::segment_length(std::size_t i) const {
  const std::size_t start = i == 0 ? 0 : boundaries.at(i - 1);
  const std::size_t end = i < boundaries.size() ? boundaries[i] : frame_count;
  return end - start;
}

void Segmentation::validate() const {
  if (frame_count == 0) throw FormatError("segmentation covers zero frames");
  std::size_t prev = 0;
  for (auto b : boundaries) {
    if (b <= prev || b >= frame_count) {
      throw FormatError("segmentation boundary " + std::to_string(b) + " is not strictly increasing inside [1, " +
                        std::to_string(frame_count - 1) + "]");
    }
    prev = b;
  }
  if (!(fps > 0)) throw FormatError("segmentation fps must be positive");
}

Segmentation uniform_segmentation(std::size_t frame_count, std::size_t count) {
  if (count == 0 || count > frame_count) throw ConfigError("uniform segmentation needs 1 <= count <= frames");
  Segmentation seg;
  seg.frame_count = frame_count;
  for (std::size_t i = 1; i < count; ++i) seg.boundaries.push_back(i * frame_count / count);
  return seg;
}

KernelScatter::KernelScatter(const Tensor& frame_features) {
  if (frame_features.rank() != 2) throw DimensionError("KTS expects a T x d feature matrix");
  frames_ = frame_features.dim(0);
  const std::size_t d = frame_features.dim(1);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat x = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                 frame_features.raw(), static_cast<Eigen::Index>(frames_), static_cast<Eigen::Index>(d))
                 .cast<double>();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double norm = x.row(r).norm();
    if (norm > 0) x.row(r) /= norm;
  }
  const RowMat gram = x * x.transpose();
  const std::size_t w = frames_ + 1;
  diag_prefix_.assign(w, 0.0);
  block_prefix_.assign(w * w, 0.0);
  for (std::size_t i = 0; i < frames_; ++i) {
    diag_prefix_[i + 1] = diag_prefix_[i] + gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < frames_; ++j) {
      block_prefix_[(i + 1) * w + j + 1] = gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                                           block_prefix_[i * w + j + 1] + block_prefix_[(i + 1) * w + j] -
                                           block_prefix_[i * w + j];
    }
  }
}

double KernelScatter::cost(std::size_t begin, std::size_t end) const {
  if (end <= begin) return 0.0;
  const std::size_t w = frames_ + 1;
  const double block = block_prefix_[end * w + end] - block_prefix_[begin * w + end] -
                       block_prefix_[end * w + begin] + block_prefix_[begin * w + begin];
  return diag_prefix_[end] - diag_prefix_[begin] - block / static_cast<double>(end - begin);
}

KtsPath kts_path(const Tensor& frame_features, std::size_t max_segments) {
  const KernelScatter scatter(frame_features);
  const std::size_t n = scatter.frames();
  if (n < 2) throw ConfigError("KTS needs at least 2 frames");
  if (max_segments == 0 || max_segments > n) {
    throw ConfigError("max_segments must lie in [1, " + std::to_string(n) + "], got " + std::to_string(max_segments));
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // best[k][j]: minimal cost of splitting frames [0, j) into k + 1 segments.
  std::vector<std::vector<double>> best(max_segments, std::vector<double>(n + 1, kInf));
  std::vector<std::vector<std::size_t>> from(max_segments, std::vector<std::size_t>(n + 1, 0));
  for (std::size_t j = 1; j <= n; ++j) best[0][j] = scatter.cost(0, j);
  for (std::size_t k = 1; k < max_segments; ++k) {
    for (std::size_t j = k + 1; j <= n; ++j) {
      double v = kInf;
      std::size_t arg = k;
      for (std::size_t i = k; i < j; ++i) {
        const double c = best[k - 1][i] + scatter.cost(i, j);
        if (c < v) {
          v = c;
          arg = i;
        }
      }
      best[k][j] = v;
      from[k][j] = arg;
    }
  }
  KtsPath path;
  for (std::size_t k = 0; k < max_segments; ++k) {
    path.objective.push_back(std::max(0.0, best[k][n]));
    std::vector<std::size_t> b(k);
    std::size_t j = n;
    for (std::size_t kk = k; kk > 0; --kk) {
      j = from[kk][j];
      b[kk - 1] = j;
    }
    path.boundaries.push_back(std::move(b));
  }
  return path;
}

std::size_t kts_select(const KtsPath& path, std::size_t frame_count, double penalty) {
  if (penalty < 0) throw ConfigError("KTS penalty must be nonnegative");
  std::size_t best_k = 1;
  double best = std::numeric_limits<double>::infinity();
  const double t = static_cast<double>(frame_count);
  for (std::size_t k = 1; k <= path.objective.size(); ++k) {
    const double kk = static_cast<double>(k);
    const double g = path.objective[k - 1] + penalty * kk * (std::log(t / kk) + 1.0);
    if (g < best) {
      best = g;
      best_k = k;
    }
  }
  return best_k;
}

Segmentation kts_segment(const Tensor& frame_features, std::size_t max_segments, double penalty, double fps) {
  const auto path = kts_path(frame_features, max_segments);
  const std::size_t n = frame_features.dim(0);
  Segmentation seg;
  seg.frame_count = n;
  seg.fps = fps;
  seg.boundaries = path.boundaries[kts_select(path, n, penalty) - 1];
  return seg;
}

KtsAutoResult kts_segment_auto(const Tensor& frame_features, double min_mean, double max_mean,
                               std::optional<std::size_t> max_segments, double fps) {
  if (!(min_mean > 0) || max_mean < min_mean) throw ConfigError("invalid target mean segment length");
  if (frame_features.rank() != 2) throw DimensionError("KTS expects a T x d feature matrix");
  const std::size_t n = frame_features.dim(0);
  const double t = static_cast<double>(n);
  const std::size_t cap = std::clamp<std::size_t>(
      max_segments.value_or(static_cast<std::size_t>(std::ceil(t / min_mean)) + 1), 1, n);
  const auto path = kts_path(frame_features, cap);
  const auto mean_len = [&](std::size_t k) { return t / static_cast<double>(k); };
  const auto in_target = [&](std::size_t k) { return mean_len(k) >= min_mean && mean_len(k) <= max_mean; };
  const double mid = 0.5 * (min_mean + max_mean);

  KtsAutoResult result;
  std::size_t chosen = kts_select(path, n, 0.0);
  double chosen_penalty = 0.0;
  const auto consider = [&](double penalty) {
    const std::size_t k = kts_select(path, n, penalty);
    const bool better = (in_target(k) && !in_target(chosen)) ||
                        (in_target(k) == in_target(chosen) &&
                         std::abs(mean_len(k) - mid) < std::abs(mean_len(chosen) - mid));
    if (better) {
      chosen = k;
      chosen_penalty = penalty;
    }
    return k;
  };
  consider(0.0);
  // Larger penalties select fewer segments (longer mean length).
  double lo = 1e-9, hi = 1.0;
  while (mean_len(consider(hi)) < min_mean && hi < 1e12) hi *= 4.0;
  for (int it = 0; it < 80 && !in_target(chosen); ++it) {
    const double p = std::sqrt(lo * hi);
    const double len = mean_len(consider(p));
    if (len < min_mean) {
      lo = p;
    } else if (len > max_mean) {
      hi = p;
    } else {
      break;
    }
  }
  result.segmentation.frame_count = n;
  result.segmentation.fps = fps;
  result.segmentation.boundaries = path.boundaries[chosen - 1];
  result.penalty = chosen_penalty;
  result.in_target = in_target(chosen);
  return result;
}

std::vector<std::size_t> subshot_middle_frames(const Segmentation& seg) {
  std::vector<std::size_t> out;
  for (const auto& [start, end] : seg.segments()) out.push_back((start + end - 1) / 2);
  return out;
}

nlohmann::json segmentation_to_json(const Segmentation& seg) {
  return {{"boundaries", seg.boundaries}, {"fps", seg.fps}, {"frames", seg.frame_count}};
}

Segmentation segmentation_from_json(const nlohmann::json& j, std::optional<std::size_t> frame_count) {
  Segmentation seg;
  try {
    seg.boundaries = j.at("boundaries").get<std::vector<std::size_t>>();
    seg.fps = j.value("fps", 5.0);
    if (j.contains("frames")) {
      seg.frame_count = j.at("frames").get<std::size_t>();
    } else if (frame_count) {
      seg.frame_count = *frame_count;
    } else {
      throw FormatError("segmentation JSON lacks \"frames\" and no frame count was supplied");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed segmentation JSON: ") + e.what());
  }
  seg.validate();
  return seg;
}

}  // namespace pfmn
