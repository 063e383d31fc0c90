#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace msf::cli {

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct OutputFile {
  std::string name;  // relative to the output directory
  bool deterministic = true;
};

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;
  std::vector<OutputFile> outputs;
};

/// Writes manifest.json into `dir`, hashing every listed output.
void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir);

const char* library_version();

}  // namespace msf::cli
