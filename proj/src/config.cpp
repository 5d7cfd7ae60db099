#include "cdrnp/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace cdrnp {

using nlohmann::json;

namespace {

void expect_keys(const json& obj, const std::string& section,
                 std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("config: unknown key '" + key + "' in " + section);
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& section) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + section + "." + key + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (data.kind != "files" && data.kind != "synth") {
    throw ConfigError("config: data.kind must be 'files' or 'synth'");
  }
  if (data.kind == "files" && (data.source_path.empty() || data.target_path.empty())) {
    throw ConfigError("config: data.kind 'files' needs source_path and target_path");
  }
  if (data.min_count < 1) throw ConfigError("config: data.min_count must be >= 1");
  if (!(data.alpha > 0.0 && data.alpha < 1.0)) {
    throw ConfigError("config: data.alpha must be in (0,1)");
  }
  if (eval_repeats < 1) throw ConfigError("config: evaluate.repeats must be >= 1");
  synth.validate();
  training.validate();
}

RunConfig parse_config(const std::string& text, const std::string& name) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + name + "': " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config '" + name + "': top level must be an object");

  RunConfig cfg;
  cfg.path = name;
  cfg.config_hash = hash_bytes_hex(text);

  expect_keys(root, "top level", {"workers", "data", "synth", "model", "training", "evaluate"});
  read_field(root, "workers", cfg.workers, "top level");

  if (root.contains("data")) {
    const json& d = root["data"];
    expect_keys(d, "data", {"kind", "source_path", "target_path", "min_count", "alpha"});
    read_field(d, "kind", cfg.data.kind, "data");
    read_field(d, "source_path", cfg.data.source_path, "data");
    read_field(d, "target_path", cfg.data.target_path, "data");
    read_field(d, "min_count", cfg.data.min_count, "data");
    read_field(d, "alpha", cfg.data.alpha, "data");
  }

  if (root.contains("synth")) {
    const json& s = root["synth"];
    expect_keys(s, "synth",
                {"n_users", "n_src_items", "n_tgt_items", "latent_dim", "ratings_per_user",
                 "noise_std", "overlap_fraction", "clip_lo", "clip_hi", "seed"});
    read_field(s, "n_users", cfg.synth.n_users, "synth");
    read_field(s, "n_src_items", cfg.synth.n_src_items, "synth");
    read_field(s, "n_tgt_items", cfg.synth.n_tgt_items, "synth");
    read_field(s, "latent_dim", cfg.synth.latent_dim, "synth");
    read_field(s, "ratings_per_user", cfg.synth.ratings_per_user, "synth");
    read_field(s, "noise_std", cfg.synth.noise_std, "synth");
    read_field(s, "overlap_fraction", cfg.synth.overlap_fraction, "synth");
    read_field(s, "clip_lo", cfg.synth.clip_lo, "synth");
    read_field(s, "clip_hi", cfg.synth.clip_hi, "synth");
    read_field(s, "seed", cfg.synth.seed, "synth");
  }

  if (root.contains("model")) {
    const json& m = root["model"];
    expect_keys(m, "model", {"d", "hidden", "decoder_depth"});
    read_field(m, "d", cfg.training.d, "model");
    read_field(m, "hidden", cfg.training.hidden, "model");
    read_field(m, "decoder_depth", cfg.training.decoder_depth, "model");
  }

  if (root.contains("training")) {
    const json& t = root["training"];
    expect_keys(t, "training",
                {"lambda", "learning_rate", "epochs", "tasks_per_epoch", "support_size",
                 "query_size", "history_len", "aux_weight", "ablate_prm", "ablate_acp", "seed",
                 "test_latent_mode"});
    read_field(t, "lambda", cfg.training.lambda, "training");
    read_field(t, "learning_rate", cfg.training.learning_rate, "training");
    read_field(t, "epochs", cfg.training.epochs, "training");
    read_field(t, "tasks_per_epoch", cfg.training.tasks_per_epoch, "training");
    read_field(t, "support_size", cfg.training.support_size, "training");
    read_field(t, "query_size", cfg.training.query_size, "training");
    read_field(t, "history_len", cfg.training.history_len, "training");
    read_field(t, "aux_weight", cfg.training.aux_weight, "training");
    read_field(t, "ablate_prm", cfg.training.ablate_prm, "training");
    read_field(t, "ablate_acp", cfg.training.ablate_acp, "training");
    read_field(t, "seed", cfg.training.seed, "training");
    if (t.contains("test_latent_mode")) {
      const std::string mode = t["test_latent_mode"].get<std::string>();
      if (mode == "mean") {
        cfg.training.test_latent_mode = LatentMode::kMean;
      } else if (mode == "sample") {
        cfg.training.test_latent_mode = LatentMode::kSample;
      } else {
        throw ConfigError("config: training.test_latent_mode must be 'mean' or 'sample'");
      }
    }
  }

  if (root.contains("evaluate")) {
    const json& e = root["evaluate"];
    expect_keys(e, "evaluate", {"repeats"});
    read_field(e, "repeats", cfg.eval_repeats, "evaluate");
  }

  cfg.training.workers = cfg.workers;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::string hash_bytes_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cdrnp
