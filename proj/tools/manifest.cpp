#include "manifest.hpp"

#include <array>
#include <fstream>
#include <memory>

#include <json.hpp>
#include <openssl/evp.h>

#include "msf/errors.hpp"

namespace msf::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 initialisation failed");
  }
  std::array<char, 1 << 16> buffer;
  while (in) {
    in.read(buffer.data(), buffer.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest;
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &length);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 15];
  }
  return hex;
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir) {
  nlohmann::ordered_json j;
  j["command"] = manifest.command;
  j["version"] = library_version();
  j["seed"] = manifest.seed;
  j["config"] = manifest.config;
  j["wall_time_s"] = manifest.wall_time_s;
  j["outputs"] = nlohmann::json::array();
  for (const auto& out : manifest.outputs) {
    j["outputs"].push_back({{"file", out.name},
                            {"sha256", sha256_file(dir / out.name)},
                            {"deterministic", out.deterministic}});
  }
  const auto path = dir / "manifest.json";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

const char* library_version() { return MSF_VERSION; }

}  // namespace msf::cli
