#include "pfmn/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "pfmn/binary_io.hpp"
#include "pfmn/error.hpp"

namespace pfmn {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Raster read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) {
    throw FormatError(path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialisation failed");
  Raster out;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_packing(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  out.pixels.resize(out.width * out.height * out.channels);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = static_cast<float>(buffer[i]) / 255.f;
  return out;
}

void write_png(const Raster& raster, const std::filesystem::path& path) {
  const int color = [&] {
    switch (raster.channels) {
      case 1: return PNG_COLOR_TYPE_GRAY;
      case 3: return PNG_COLOR_TYPE_RGB;
      case 4: return PNG_COLOR_TYPE_RGBA;
      default: throw DimensionError("PNG output needs 1, 3 or 4 channels");
    }
  }();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialisation failed");
  std::vector<std::uint8_t> buffer(raster.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<std::uint8_t>(std::lround(std::clamp(raster.pixels[i], 0.f, 1.f) * 255.f));
  }
  std::vector<png_bytep> rows(raster.height);
  for (std::size_t y = 0; y < raster.height; ++y) rows[y] = buffer.data() + y * raster.width * raster.channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height), 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Raster read_raw_planar(const std::filesystem::path& path, std::size_t width, std::size_t height,
                       std::size_t channels) {
  const auto bytes = binary::read_file(path);
  const std::size_t expected = width * height * channels * sizeof(float);
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes of planar f32, found " +
                      std::to_string(bytes.size()));
  }
  Raster out(width, height, channels);
  const auto* planes = reinterpret_cast<const float*>(bytes.data());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < width * height; ++i) out.pixels[i * channels + c] = planes[c * width * height + i];
  return out;
}

void write_raw_planar(const Raster& raster, const std::filesystem::path& path) {
  const std::size_t plane = raster.width * raster.height;
  std::vector<float> planar(raster.pixels.size());
  for (std::size_t c = 0; c < raster.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) planar[c * plane + i] = raster.pixels[i * raster.channels + c];
  std::vector<std::uint8_t> bytes(planar.size() * sizeof(float));
  std::memcpy(bytes.data(), planar.data(), bytes.size());
  binary::write_file(path, bytes);
}

}  // namespace pfmn
