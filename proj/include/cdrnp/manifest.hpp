#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cdrnp {

inline constexpr const char* kVersion = "0.1.0";

// Provenance record for one CLI run, written atomically at run end.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> input_digests;  // path -> digest
  std::vector<std::string> outputs;
  std::string started_at;
  std::string finished_at;
  std::string status = "ok";
  std::string error;
  std::string version = kVersion;
};

std::string file_digest_hex(const std::string& path);
std::string utc_timestamp_now();
void write_manifest_atomic(const std::string& path, const RunManifest& manifest);

}  // namespace cdrnp
