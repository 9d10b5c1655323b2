#include "pfmn/checkpoint.hpp"

#include <fstream>
#include <limits>

#include "pfmn/binary_io.hpp"

namespace pfmn {
namespace binary {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace binary

namespace {
constexpr char kMagic[8] = {'P', 'F', 'M', 'N', 'C', 'K', 'P', 'T'};
}

std::vector<std::uint8_t> serialize_checkpoint(const ParamRegistry<float>& registry) {
  binary::Writer w;
  w.put_bytes(kMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(registry.size()));
  for (const auto& [name, p] : registry) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("parameter name too long: " + name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (auto e : p.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    w.put_bytes(p.value.raw(), p.value.size() * sizeof(float));
  }
  return std::move(w.bytes());
}

ParamRegistry<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  binary::Reader r(bytes.data(), bytes.size(), "checkpoint");
  char magic[8];
  r.get_bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError("checkpoint: bad magic at byte offset 0");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("entry count");
  ParamRegistry<float> reg;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(len, '\0');
    r.get_bytes(name.data(), len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint32_t>("extent");
    Tensor t(shape);
    r.get_bytes(t.raw(), t.size() * sizeof(float), "payload");
    const bool trainable = !(name.ends_with("running_mean") || name.ends_with("running_var"));
    reg.add(name, std::move(t), trainable);
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes at byte offset " +
                      std::to_string(r.offset()));
  }
  return reg;
}

void save_checkpoint(const ParamRegistry<float>& registry, const std::filesystem::path& path) {
  binary::write_file(path, serialize_checkpoint(registry));
}

ParamRegistry<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(binary::read_file(path));
}

void restore_checkpoint(ParamRegistry<float>& target, const ParamRegistry<float>& loaded, bool require_complete) {
  for (const auto& [name, p] : loaded) {
    if (!target.contains(name)) throw FormatError("incompatible checkpoint: unexpected parameter " + name);
    auto& dst = target.get(name);
    if (dst.value.shape() != p.value.shape()) {
      throw FormatError("incompatible checkpoint: " + name + " has shape " + shape_string(p.value.shape()) +
                        ", model expects " + shape_string(dst.value.shape()));
    }
    dst.value = p.value;
  }
  if (!require_complete) return;
  for (const auto& [name, _] : target) {
    if (!loaded.contains(name)) throw FormatError("incompatible checkpoint: missing parameter " + name);
  }
}

}  // namespace pfmn
