#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfvpo/error.hpp"
#include "dfvpo/media.hpp"

namespace dfvpo {

inline constexpr int kManifestVersion = 1;

struct DatasetEntry {
  std::string id;
  std::string video_path;  // relative to the manifest's directory
  int condition_label = 0;
  std::uint64_t seed = 0;
  std::string generator_config_hash;
};

/// JSON-lines dataset listing; one entry per line.
struct DatasetManifest {
  std::vector<DatasetEntry> entries;
  int format_version = kManifestVersion;
};

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::IoError, "cannot open " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::InvalidConfig, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

inline void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_file(path, text);
}

}  // namespace detail

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::vector<nlohmann::json> rows;
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    require(seen.insert(e.id).second, Errc::InvalidConfig, "duplicate video id " + e.id);
    rows.push_back({{"format_version", m.format_version},
                    {"id", e.id},
                    {"video_path", e.video_path},
                    {"condition_label", e.condition_label},
                    {"seed", e.seed},
                    {"generator_config_hash", e.generator_config_hash}});
  }
  detail::write_jsonl(path, rows);
}

inline DatasetManifest read_manifest(const fs::path& path) {
  DatasetManifest m;
  std::set<std::string> seen;
  try {
    for (const auto& r : detail::read_jsonl(path)) {
      DatasetEntry e;
      e.video_path = r.at("video_path").get<std::string>();
      e.id = r.contains("id") ? r["id"].get<std::string>() : fs::path(e.video_path).stem().string();
      e.condition_label = r.at("condition_label").get<int>();
      e.seed = r.value("seed", std::uint64_t{0});
      e.generator_config_hash = r.value("generator_config_hash", std::string{});
      m.format_version = r.value("format_version", kManifestVersion);
      require(seen.insert(e.id).second, Errc::InvalidConfig, "duplicate video id " + e.id);
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace dfvpo
