#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace pfmn {

/// Interleaved float raster, values nominally in [0, 1].
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<float> pixels;  // row-major, channels interleaved

  Raster() = default;
  Raster(std::size_t w, std::size_t h, std::size_t c, float fill = 0.f)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  float& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

Raster read_png(const std::filesystem::path& path);
/// Writes 8-bit PNG (1, 3 or 4 channels); values are clamped to [0, 1].
void write_png(const Raster& raster, const std::filesystem::path& path);

/// Raw planar f32: channel-major planes of height x width little-endian floats.
Raster read_raw_planar(const std::filesystem::path& path, std::size_t width, std::size_t height,
                       std::size_t channels);
void write_raw_planar(const Raster& raster, const std::filesystem::path& path);

}  // namespace pfmn
