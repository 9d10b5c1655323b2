#include "pfmn/features.hpp"

#include <cstring>

#include "pfmn/binary_io.hpp"
#include "pfmn/error.hpp"

namespace pfmn {
namespace {

constexpr char kMagic[8] = {'P', 'F', 'M', 'N', 'F', 'E', 'A', 'T'};

struct Header {
  FeatureKind kind;
  std::uint64_t provenance;
  Shape shape;
};

Header parse_header(binary::Reader& r, const std::string& what) {
  char magic[8];
  r.get_bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(what + ": bad magic at byte offset 0");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFeatureVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kFeatureVersion) + ")");
  }
  const auto kind = r.get<std::uint8_t>("kind");
  if (kind > 2) throw FormatError(what + ": unknown kind " + std::to_string(kind) + " at byte offset 12");
  const auto rank = r.get<std::uint8_t>("rank");
  const auto reserved = r.get<std::uint16_t>("reserved");
  if (reserved != 0) throw FormatError(what + ": nonzero reserved field at byte offset 14");
  Header h{static_cast<FeatureKind>(kind), r.get<std::uint64_t>("provenance"), Shape(rank)};
  for (auto& e : h.shape) e = r.get<std::uint32_t>("extent");
  try {
    validate_feature_shape(h.kind, h.shape);
  } catch (const FormatError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return h;
}

}  // namespace

void validate_feature_shape(FeatureKind kind, const Shape& shape) {
  bool ok = false;
  switch (kind) {
    case FeatureKind::kPoolVectors: ok = shape.size() == 2 || shape.size() == 3; break;
    case FeatureKind::kSpatialMaps: ok = shape.size() == 4 || shape.size() == 5; break;
    case FeatureKind::kScores: ok = shape.size() == 2; break;
  }
  if (!ok) {
    throw FormatError("extents " + shape_string(shape) + " are not valid for feature kind " +
                      std::to_string(static_cast<int>(kind)));
  }
  for (std::size_t i = 1; i < shape.size(); ++i)
    if (shape[i] == 0) throw FormatError("zero inner extent in " + shape_string(shape));
}

std::vector<std::uint8_t> serialize_features(const FeatureFile& file) {
  validate_feature_shape(file.kind, file.data.shape());
  binary::Writer w;
  w.put_bytes(kMagic, 8);
  w.put<std::uint32_t>(kFeatureVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(file.kind));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(file.data.rank()));
  w.put<std::uint16_t>(0);
  w.put<std::uint64_t>(file.provenance);
  for (auto e : file.data.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
  w.put_bytes(file.data.raw(), file.data.size() * sizeof(float));
  return std::move(w.bytes());
}

FeatureFile deserialize_features(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  binary::Reader r(bytes.data(), bytes.size(), what);
  auto h = parse_header(r, what);
  const std::size_t expected = shape_size(h.shape) * sizeof(float);
  if (r.remaining() != expected) {
    throw FormatError(what + ": payload at byte offset " + std::to_string(r.offset()) + " has " +
                      std::to_string(r.remaining()) + " bytes, extents " + shape_string(h.shape) + " need " +
                      std::to_string(expected));
  }
  FeatureFile f{h.kind, h.provenance, Tensor(h.shape)};
  r.get_bytes(f.data.raw(), expected, "payload");
  return f;
}

void write_features(const FeatureFile& file, const std::filesystem::path& path) {
  binary::write_file(path, serialize_features(file));
}

FeatureFile read_features(const std::filesystem::path& path) {
  return deserialize_features(binary::read_file(path), path.string());
}

FeatureReader::FeatureReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> head(kFeatureHeaderBytes + 255 * 4);
  in_.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in_.gcount()));
  in_.clear();
  binary::Reader r(head.data(), head.size(), path.string());
  auto h = parse_header(r, path.string());
  kind_ = h.kind;
  provenance_ = h.provenance;
  shape_ = std::move(h.shape);
  payload_offset_ = r.offset();
  row_floats_ = shape_size(shape_) / std::max<std::size_t>(1, shape_[0]);
  in_.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in_.tellg());
  const std::size_t expected = payload_offset_ + shape_size(shape_) * sizeof(float);
  if (size != expected) {
    throw FormatError(path.string() + ": file has " + std::to_string(size) + " bytes, header at byte offset 0 needs " +
                      std::to_string(expected));
  }
}

Tensor FeatureReader::read_rows(std::size_t begin, std::size_t end) {
  if (begin > end || end > rows()) {
    throw DimensionError("rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                         shape_string(shape_));
  }
  Shape s = shape_;
  s[0] = end - begin;
  Tensor out(s);
  in_.seekg(static_cast<std::streamoff>(payload_offset_ + begin * row_floats_ * sizeof(float)));
  in_.read(reinterpret_cast<char*>(out.raw()), static_cast<std::streamsize>(out.size() * sizeof(float)));
  if (!in_) throw IoError("short read from " + path_.string());
  return out;
}

}  // namespace pfmn
