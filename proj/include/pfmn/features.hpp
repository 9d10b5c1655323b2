#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "pfmn/tensor.hpp"

namespace pfmn {

// Layout (little-endian): magic "PFMNFEAT", version u32, kind u8, rank u8,
// reserved u16 (zero), provenance u64 (encoder/config hash, 0 if unknown),
// extents u32 x rank, payload f32 row-major.
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 8 + 4 + 1 + 1 + 2 + 8;

enum class FeatureKind : std::uint8_t {
  kPoolVectors = 0,  // [n, D] descriptors or [n, 81, D] per-candidate vectors
  kSpatialMaps = 1,  // [n, 81, H, W, C] per-candidate maps or [n, H, W, C]
  kScores = 2,       // [n, 81] candidate scores
};

struct FeatureFile {
  FeatureKind kind = FeatureKind::kPoolVectors;
  std::uint64_t provenance = 0;
  Tensor data;
};

/// Checks that the extents are legal for the kind; throws FormatError.
void validate_feature_shape(FeatureKind kind, const Shape& shape);

std::vector<std::uint8_t> serialize_features(const FeatureFile& file);
FeatureFile deserialize_features(const std::vector<std::uint8_t>& bytes, const std::string& what = "feature file");

void write_features(const FeatureFile& file, const std::filesystem::path& path);
FeatureFile read_features(const std::filesystem::path& path);

/// Random access to leading-axis rows without loading the whole payload.
class FeatureReader {
 public:
  explicit FeatureReader(const std::filesystem::path& path);

  FeatureKind kind() const { return kind_; }
  std::uint64_t provenance() const { return provenance_; }
  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Rows [begin, end) as a tensor with the leading extent end - begin.
  Tensor read_rows(std::size_t begin, std::size_t end);

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  FeatureKind kind_ = FeatureKind::kPoolVectors;
  std::uint64_t provenance_ = 0;
  Shape shape_;
  std::size_t payload_offset_ = 0;
  std::size_t row_floats_ = 0;
};

}  // namespace pfmn
