#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace pfmn {

inline constexpr int kManifestVersion = 1;

/// One video (or photostream) entry. Paths are absolute after loading.
struct VideoEntry {
  std::string id;
  std::string topic;
  std::optional<std::filesystem::path> features;      // [n, D] descriptors
  std::optional<std::filesystem::path> candidates;    // [n, 81, D] per-view vectors
  std::optional<std::filesystem::path> maps;          // [n, 81, H, W, C] per-view maps
  std::optional<std::filesystem::path> scores;        // [n, 81] precomputed view scores
  std::optional<std::filesystem::path> frames;        // [T, d] frame features for segmentation
  std::optional<std::filesystem::path> segmentation;  // segmentation JSON
  std::vector<std::filesystem::path> gt;              // GT summary JSON files
  std::vector<std::size_t> storyline;                 // planted positions (synthetic data)
};

struct Manifest {
  int version = kManifestVersion;
  std::string topic;
  std::filesystem::path root;  // directory the relative paths resolve against
  std::vector<VideoEntry> videos;

  const VideoEntry& find(const std::string& id) const;
};

/// Parses and validates a manifest; every referenced file must exist.
/// Missing files raise IoError, malformed content FormatError.
Manifest load_manifest(const std::filesystem::path& path);
Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root, bool check_files = true);

/// Paths under `root` are written relative to it.
nlohmann::json manifest_to_json(const Manifest& m);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace pfmn
