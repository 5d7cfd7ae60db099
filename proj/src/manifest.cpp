#include "cdrnp/manifest.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cdrnp/config.hpp"
#include "cdrnp/errors.hpp"

namespace cdrnp {

std::string file_digest_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for digesting");
  std::ostringstream buf;
  buf << in.rdbuf();
  return hash_bytes_hex(buf.str());
}

std::string utc_timestamp_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest_atomic(const std::string& path, const RunManifest& manifest) {
  nlohmann::json j;
  j["command"] = manifest.command;
  j["config_path"] = manifest.config_path;
  j["config_hash"] = manifest.config_hash;
  j["seed"] = manifest.seed;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& [file, digest] : manifest.input_digests) inputs[file] = digest;
  j["input_digests"] = inputs;
  j["outputs"] = manifest.outputs;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["status"] = manifest.status;
  if (!manifest.error.empty()) j["error"] = manifest.error;
  j["version"] = manifest.version;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace cdrnp
