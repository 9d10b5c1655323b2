#include "pfmn/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"

namespace pfmn {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double wrap360(double lon) {
  double r = std::fmod(lon, 360.0);
  if (r < 0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r;
}

struct Vec3 {
  double x, y, z;
};

Vec3 to_unit(const Viewpoint& v) {
  const double lat = v.latitude * kDeg, lon = v.longitude * kDeg;
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

Viewpoint from_unit(const Vec3& p) {
  const double lat = std::asin(std::clamp(p.z, -1.0, 1.0)) / kDeg;
  const double lon = std::atan2(p.y, p.x) / kDeg;
  return make_viewpoint(lon, lat);
}

}  // namespace

Viewpoint make_viewpoint(double longitude, double latitude) {
  if (!(latitude >= -90.0 && latitude <= 90.0)) throw DomainError("latitude outside [-90, 90]");
  return {wrap360(longitude), latitude};
}

void NfovSpec::validate() const {
  if (!(h_span > 0 && h_span < 180 && v_span > 0 && v_span < 180)) {
    throw DomainError("NFOV spans must lie strictly between 0 and 180 degrees");
  }
  if (out_width == 0 || out_height == 0) throw DomainError("NFOV raster must be non-empty");
  const double ratio = static_cast<double>(out_width) / static_cast<double>(out_height);
  if (std::abs(ratio - 16.0 / 9.0) > 1.0 / static_cast<double>(out_height)) {
    throw DomainError("NFOV raster must be 16:9, got " + std::to_string(out_width) + "x" + std::to_string(out_height));
  }
}

PlanePoint erp_coords(double longitude, double latitude, double ref_meridian, double std_parallel) {
  const double c = std::cos(std_parallel * kDeg);
  if (std::abs(std_parallel) >= 90.0 || std::abs(c) < 1e-12) {
    throw DomainError("degenerate standard parallel: cos(theta1) = 0");
  }
  return {(longitude - ref_meridian) * c, latitude - std_parallel};
}

Viewpoint erp_inverse(PlanePoint p, double ref_meridian, double std_parallel) {
  const double c = std::cos(std_parallel * kDeg);
  if (std::abs(std_parallel) >= 90.0 || std::abs(c) < 1e-12) {
    throw DomainError("degenerate standard parallel: cos(theta1) = 0");
  }
  return {p.x / c + ref_meridian, p.y + std_parallel};
}

std::array<Viewpoint, kCandidateCount> viewpoint_grid() {
  constexpr std::array<double, 9> lats{-75, -55, -35, -15, 0, 15, 35, 55, 75};
  std::array<Viewpoint, kCandidateCount> grid{};
  std::size_t k = 0;
  for (int i = 0; i < 9; ++i)
    for (double lat : lats) grid[k++] = {40.0 * i, lat};
  return grid;
}

std::optional<PlanePoint> gnomonic_forward(const Viewpoint& center, const Viewpoint& point) {
  const double lat0 = center.latitude * kDeg, lat = point.latitude * kDeg;
  const double dlon = (point.longitude - center.longitude) * kDeg;
  const double cos_c = std::sin(lat0) * std::sin(lat) + std::cos(lat0) * std::cos(lat) * std::cos(dlon);
  if (cos_c <= 1e-12) return std::nullopt;
  return PlanePoint{std::cos(lat) * std::sin(dlon) / cos_c,
                    (std::cos(lat0) * std::sin(lat) - std::sin(lat0) * std::cos(lat) * std::cos(dlon)) / cos_c};
}

Viewpoint gnomonic_inverse(const Viewpoint& center, PlanePoint p) {
  const double lat0 = center.latitude * kDeg;
  const double rho = std::hypot(p.x, p.y);
  if (rho < 1e-15) return center;
  const double c = std::atan(rho);
  const double lat = std::asin(std::clamp(std::cos(c) * std::sin(lat0) + p.y * std::sin(c) * std::cos(lat0) / rho,
                                          -1.0, 1.0));
  const double lon = std::atan2(p.x * std::sin(c),
                                rho * std::cos(lat0) * std::cos(c) - p.y * std::sin(lat0) * std::sin(c));
  return make_viewpoint(center.longitude + lon / kDeg, lat / kDeg);
}

PlanePoint erp_pixel(const ErpImage& erp, const Viewpoint& v) {
  const auto plane = erp_coords(v.longitude, v.latitude, erp.ref_meridian, erp.std_parallel);
  const double span_x = 360.0 * std::cos(erp.std_parallel * kDeg);
  double fx = std::fmod(plane.x / span_x, 1.0);
  if (fx < 0) fx += 1.0;
  const double fy = (90.0 - erp.std_parallel - plane.y) / 180.0;
  return {fx * static_cast<double>(erp.raster.width), fy * static_cast<double>(erp.raster.height)};
}

Raster gnomonic_crop(const ErpImage& erp, const NfovSpec& spec) {
  spec.validate();
  const Raster& src = erp.raster;
  if (src.width == 0 || src.height == 0) throw DimensionError("empty ERP raster");
  Raster out(spec.out_width, spec.out_height, src.channels);
  const double tx = std::tan(spec.h_span / 2 * kDeg), ty = std::tan(spec.v_span / 2 * kDeg);
  const auto W = static_cast<std::ptrdiff_t>(src.width), H = static_cast<std::ptrdiff_t>(src.height);
  for (std::size_t v = 0; v < spec.out_height; ++v) {
    for (std::size_t u = 0; u < spec.out_width; ++u) {
      const double x = (2.0 * (static_cast<double>(u) + 0.5) / static_cast<double>(spec.out_width) - 1.0) * tx;
      const double y = (1.0 - 2.0 * (static_cast<double>(v) + 0.5) / static_cast<double>(spec.out_height)) * ty;
      const auto dir = gnomonic_inverse(spec.center, {x, y});
      const auto px = erp_pixel(erp, dir);
      // Continuous index coordinates: pixel centres sit at integer + 0.5.
      const double cx = px.x - 0.5, cy = px.y - 0.5;
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx));
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy));
      const double ax = cx - static_cast<double>(x0), ay = cy - static_cast<double>(y0);
      auto col = [W](std::ptrdiff_t c) { return static_cast<std::size_t>(((c % W) + W) % W); };
      auto row = [H](std::ptrdiff_t r) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r, 0, H - 1)); };
      const std::size_t c0 = col(x0), c1 = col(x0 + 1), r0 = row(y0), r1 = row(y0 + 1);
      for (std::size_t ch = 0; ch < src.channels; ++ch) {
        const double top = (1 - ax) * src.at(c0, r0, ch) + ax * src.at(c1, r0, ch);
        const double bot = (1 - ax) * src.at(c0, r1, ch) + ax * src.at(c1, r1, ch);
        out.at(u, v, ch) = static_cast<float>((1 - ay) * top + ay * bot);
      }
    }
  }
  return out;
}

double frame_cosine_similarity(const Viewpoint& a, const Viewpoint& b) {
  const Vec3 p = to_unit(a), q = to_unit(b);
  return std::clamp(p.x * q.x + p.y * q.y + p.z * q.z, -1.0, 1.0);
}

bool in_footprint(const NfovSpec& spec, const Viewpoint& v) {
  const auto p = gnomonic_forward(spec.center, v);
  if (!p) return false;
  return std::abs(p->x) <= std::tan(spec.h_span / 2 * kDeg) && std::abs(p->y) <= std::tan(spec.v_span / 2 * kDeg);
}

double frame_overlap(const NfovSpec& a, const NfovSpec& b, std::size_t samples, std::uint64_t seed) {
  if (a.h_span != b.h_span || a.v_span != b.v_span) throw DomainError("frame_overlap requires identical spans");
  a.validate();
  if (samples == 0) throw DomainError("frame_overlap needs at least one sample");
  // Angular radius of the cap around a's centre that contains its footprint.
  const double tx = std::tan(a.h_span / 2 * kDeg), ty = std::tan(a.v_span / 2 * kDeg);
  const double radius = std::atan(std::hypot(tx, ty)) + 1e-6;
  const double cos_r = std::cos(radius);

  // Orthonormal frame with e3 at a's centre.
  const Vec3 e3 = to_unit(a.center);
  Vec3 up = std::abs(e3.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  Vec3 e1{up.y * e3.z - up.z * e3.y, up.z * e3.x - up.x * e3.z, up.x * e3.y - up.y * e3.x};
  const double n1 = std::sqrt(e1.x * e1.x + e1.y * e1.y + e1.z * e1.z);
  e1 = {e1.x / n1, e1.y / n1, e1.z / n1};
  const Vec3 e2{e3.y * e1.z - e3.z * e1.y, e3.z * e1.x - e3.x * e1.z, e3.x * e1.y - e3.y * e1.x};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uz(cos_r, 1.0), ua(0.0, 2 * std::numbers::pi);
  std::size_t in_a = 0, in_both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double z = uz(rng), az = ua(rng);
    const double s = std::sqrt(std::max(0.0, 1 - z * z));
    const double lx = s * std::cos(az), ly = s * std::sin(az);
    const Vec3 p{lx * e1.x + ly * e2.x + z * e3.x, lx * e1.y + ly * e2.y + z * e3.y, lx * e1.z + ly * e2.z + z * e3.z};
    const Viewpoint v = from_unit(p);
    if (!in_footprint(a, v)) continue;
    ++in_a;
    if (in_footprint(b, v)) ++in_both;
  }
  if (in_a == 0) return 0.0;
  // Footprints with equal spans have equal area, so |A u B| = 2|A| - |A n B|.
  const double fa = static_cast<double>(in_a), fab = static_cast<double>(in_both);
  return fab / (2 * fa - fab);
}

TrajectoryScore trajectory_metrics(const std::vector<Viewpoint>& predicted, const std::vector<Viewpoint>& truth,
                                   double h_span, double v_span) {
  if (predicted.size() != truth.size()) throw DimensionError("trajectories differ in length");
  if (predicted.empty()) return {};
  TrajectoryScore s;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    s.mean_cosine += frame_cosine_similarity(predicted[i], truth[i]);
    NfovSpec a{predicted[i], h_span, v_span}, b{truth[i], h_span, v_span};
    s.mean_overlap += frame_overlap(a, b, 20000, 7 + i);
  }
  s.mean_cosine /= static_cast<double>(predicted.size());
  s.mean_overlap /= static_cast<double>(predicted.size());
  return s;
}

std::vector<std::size_t> smooth_trajectory(const std::vector<double>& scores, std::size_t steps, double max_dlon,
                                           double max_dlat) {
  constexpr std::size_t K = kCandidateCount;
  if (scores.size() != steps * K) throw DimensionError("smooth_trajectory expects steps x 81 scores");
  if (steps == 0) return {};
  const auto grid = viewpoint_grid();
  auto allowed = [&](std::size_t i, std::size_t j) {
    double d = std::abs(grid[i].longitude - grid[j].longitude);
    d = std::min(d, 360.0 - d);
    return d <= max_dlon + 1e-9 && std::abs(grid[i].latitude - grid[j].latitude) <= max_dlat + 1e-9;
  };
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> best(scores.begin(), scores.begin() + K);
  std::vector<std::size_t> back(steps * K, 0);
  for (std::size_t t = 1; t < steps; ++t) {
    std::vector<double> next(K, ninf);
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < K; ++i) {
        if (!allowed(i, j) || best[i] == ninf) continue;
        if (best[i] > next[j]) {
          next[j] = best[i];
          back[t * K + j] = i;
        }
      }
      if (next[j] != ninf) next[j] += scores[t * K + j];
    }
    best = std::move(next);
  }
  std::size_t arg = 0;
  for (std::size_t j = 1; j < K; ++j)
    if (best[j] > best[arg]) arg = j;
  std::vector<std::size_t> path(steps);
  path[steps - 1] = arg;
  for (std::size_t t = steps - 1; t > 0; --t) path[t - 1] = back[t * K + path[t]];
  return path;
}

ErpImage load_erp(const std::filesystem::path& image, const std::filesystem::path& sidecar) {
  ErpImage erp;
  erp.raster = read_png(image);
  if (!sidecar.empty()) {
    std::ifstream in(sidecar);
    if (!in) throw IoError("cannot open " + sidecar.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(sidecar.string() + ": " + e.what());
    }
    erp.ref_meridian = j.value("phi0", 0.0);
    erp.std_parallel = j.value("theta1", 0.0);
    if (j.contains("width") && j["width"].get<std::size_t>() != erp.raster.width) {
      throw FormatError(sidecar.string() + ": width does not match the image");
    }
    if (j.contains("height") && j["height"].get<std::size_t>() != erp.raster.height) {
      throw FormatError(sidecar.string() + ": height does not match the image");
    }
  }
  return erp;
}

}  // namespace pfmn
