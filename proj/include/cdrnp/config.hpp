#pragma once

#include <string>

#include "cdrnp/synth.hpp"
#include "cdrnp/training.hpp"

namespace cdrnp {

struct DataConfig {
  std::string kind = "files";  // "files" or "synth"
  std::string source_path;
  std::string target_path;
  int min_count = 5;
  double alpha = 0.2;
};

// Everything a run needs, loaded from one JSON config file. The config
// file is the single source of truth; command-line flags only pick the
// subcommand, paths and a seed override.
struct RunConfig {
  int workers = 1;
  DataConfig data;
  SynthConfig synth;
  TrainingConfig training;
  int eval_repeats = 1;
  std::string config_hash;  // digest of the file bytes
  std::string path;

  void validate() const;
};

// Strict parse: unknown keys anywhere are rejected.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text, const std::string& name = "<inline>");

std::string hash_bytes_hex(std::string_view bytes);

}  // namespace cdrnp
