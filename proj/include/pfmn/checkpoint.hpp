#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pfmn/params.hpp"

namespace pfmn {

// Layout: magic "PFMNCKPT", version u32, count u32, then per entry
// name length u16, UTF-8 name, rank u8, extents u32 each, payload f32.
// All integers and floats little-endian; entries in name order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ParamRegistry<float>& registry);
ParamRegistry<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParamRegistry<float>& registry, const std::filesystem::path& path);
ParamRegistry<float> load_checkpoint(const std::filesystem::path& path);

/// Copies every entry of `loaded` into `target`. Unknown names and shape
/// mismatches are incompatible-checkpoint FormatErrors; with `require_complete`
/// every target parameter must also be present in `loaded`.
void restore_checkpoint(ParamRegistry<float>& target, const ParamRegistry<float>& loaded,
                        bool require_complete = true);

}  // namespace pfmn
