#include "pfmn/manifest.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "pfmn/binary_io.hpp"
#include "pfmn/error.hpp"

namespace pfmn {
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& root, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (root / path).lexically_normal();
}

std::string relative_to(const fs::path& root, const fs::path& p) {
  if (root.empty()) return p.string();
  auto rel = p.lexically_relative(root);
  if (rel.empty() || *rel.begin() == "..") return p.string();
  return rel.generic_string();
}

void require_file(const fs::path& p, const std::string& id, const char* field) {
  if (!fs::is_regular_file(p)) {
    throw IoError("manifest entry '" + id + "' field " + field + ": no such file " + p.string());
  }
}

}  // namespace

const VideoEntry& Manifest::find(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return v;
  throw ConfigError("manifest has no video '" + id + "'");
}

Manifest manifest_from_json(const nlohmann::json& j, const fs::path& root, bool check_files) {
  Manifest m;
  m.root = root;
  try {
    m.version = j.value("version", kManifestVersion);
    if (m.version != kManifestVersion) {
      throw FormatError("unsupported manifest version " + std::to_string(m.version));
    }
    m.topic = j.value("topic", std::string{});
    std::set<std::string> seen;
    for (const auto& v : j.at("videos")) {
      VideoEntry e;
      e.id = v.at("id").get<std::string>();
      if (!seen.insert(e.id).second) throw FormatError("duplicate video id '" + e.id + "'");
      e.topic = v.value("topic", m.topic);
      auto opt = [&](const char* field, std::optional<fs::path>& out) {
        if (!v.contains(field) || v.at(field).is_null()) return;
        out = resolve(root, v.at(field).get<std::string>());
        if (check_files) require_file(*out, e.id, field);
      };
      opt("features", e.features);
      opt("candidates", e.candidates);
      opt("maps", e.maps);
      opt("scores", e.scores);
      opt("frames", e.frames);
      opt("segmentation", e.segmentation);
      if (v.contains("gt")) {
        const auto& g = v.at("gt");
        const auto list = g.is_array() ? g.get<std::vector<std::string>>() : std::vector<std::string>{g.get<std::string>()};
        for (const auto& p : list) {
          e.gt.push_back(resolve(root, p));
          if (check_files) require_file(e.gt.back(), e.id, "gt");
        }
      }
      e.storyline = v.value("storyline", std::vector<std::size_t>{});
      m.videos.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json(path), fs::absolute(path).parent_path());
}

nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& e : m.videos) {
    nlohmann::json v{{"id", e.id}};
    if (!e.topic.empty() && e.topic != m.topic) v["topic"] = e.topic;
    auto put = [&](const char* field, const std::optional<fs::path>& p) {
      if (p) v[field] = relative_to(m.root, *p);
    };
    put("features", e.features);
    put("candidates", e.candidates);
    put("maps", e.maps);
    put("scores", e.scores);
    put("frames", e.frames);
    put("segmentation", e.segmentation);
    if (!e.gt.empty()) {
      nlohmann::json g = nlohmann::json::array();
      for (const auto& p : e.gt) g.push_back(relative_to(m.root, p));
      v["gt"] = g;
    }
    if (!e.storyline.empty()) v["storyline"] = e.storyline;
    videos.push_back(std::move(v));
  }
  return {{"version", m.version}, {"topic", m.topic}, {"videos", videos}};
}

void save_manifest(const Manifest& m, const fs::path& path) { write_json(manifest_to_json(m), path); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON at byte " + std::to_string(e.byte));
  }
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  const std::string text = j.dump(2) + "\n";
  binary::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace pfmn
