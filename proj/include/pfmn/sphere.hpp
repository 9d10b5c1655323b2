#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "pfmn/raster.hpp"

namespace pfmn {

/// Spherical viewing direction in degrees. Longitude arithmetic is modulo 360.
struct Viewpoint {
  double longitude = 0.0;  // [0, 360)
  double latitude = 0.0;   // [-90, 90]

  friend bool operator==(const Viewpoint&, const Viewpoint&) = default;
};

Viewpoint make_viewpoint(double longitude, double latitude);

struct NfovSpec {
  Viewpoint center;
  double h_span = 54.0;
  double v_span = 30.0;
  std::size_t out_width = 256;
  std::size_t out_height = 144;

  void validate() const;
};

/// Equirectangular raster plus its projection parameters (degrees).
struct ErpImage {
  Raster raster;
  double ref_meridian = 0.0;    // phi_0
  double std_parallel = 0.0;    // theta_1
};

struct PlanePoint {
  double x = 0.0;
  double y = 0.0;
};

/// x = (phi - phi0) cos(theta1), y = theta - theta1, all in degrees.
PlanePoint erp_coords(double longitude, double latitude, double ref_meridian, double std_parallel);
Viewpoint erp_inverse(PlanePoint p, double ref_meridian, double std_parallel);

inline constexpr std::size_t kCandidateCount = 81;

/// The 9 x 9 candidate grid: longitude-major, latitude ascending within.
std::array<Viewpoint, kCandidateCount> viewpoint_grid();

/// Tangent-plane coordinates (in units of tan) of `point` seen from `center`;
/// empty when the point lies on the far hemisphere.
std::optional<PlanePoint> gnomonic_forward(const Viewpoint& center, const Viewpoint& point);
Viewpoint gnomonic_inverse(const Viewpoint& center, PlanePoint p);

/// Source-pixel coordinates (column, row; pixel centres at +0.5) of a direction.
PlanePoint erp_pixel(const ErpImage& erp, const Viewpoint& v);

/// Rectilinear crop by inverse gnomonic projection and bilinear sampling
/// (longitude wraps, latitude clamps).
Raster gnomonic_crop(const ErpImage& erp, const NfovSpec& spec);

double frame_cosine_similarity(const Viewpoint& a, const Viewpoint& b);

/// Whether a direction falls inside the NFOV footprint of `spec`.
bool in_footprint(const NfovSpec& spec, const Viewpoint& v);

/// Intersection-over-union of two NFOV solid-angle footprints with identical
/// spans, by Monte Carlo over the cap that contains footprint `a`.
double frame_overlap(const NfovSpec& a, const NfovSpec& b, std::size_t samples = 200000,
                     std::uint64_t seed = 7);

struct TrajectoryScore {
  double mean_cosine = 0.0;
  double mean_overlap = 0.0;
};

/// Per-segment mean cosine similarity and overlap of two equally long trajectories.
TrajectoryScore trajectory_metrics(const std::vector<Viewpoint>& predicted, const std::vector<Viewpoint>& truth,
                                   double h_span = 54.0, double v_span = 30.0);

/// Viterbi over the candidate grid: maximizes summed scores (steps x 81,
/// row-major) subject to |dphi| <= max_dlon and |dtheta| <= max_dlat between
/// consecutive steps. Returns one candidate index per step.
std::vector<std::size_t> smooth_trajectory(const std::vector<double>& scores, std::size_t steps,
                                           double max_dlon = 30.0, double max_dlat = 30.0);

/// ERP sidecar JSON: {"width", "height", "phi0", "theta1"}.
ErpImage load_erp(const std::filesystem::path& image, const std::filesystem::path& sidecar = {});

}  // namespace pfmn
