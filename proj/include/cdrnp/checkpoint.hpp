#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cdrnp/model.hpp"

namespace cdrnp {

// Self-describing binary container: every parameter by name with shape and
// raw little-endian doubles, preceded by the config hash. Round trips are
// bit exact. Files are written to a temp path and renamed into place.
void save_checkpoint(const std::string& path, ModelParams& params, std::uint64_t config_hash);

// Loads into an existing ModelParams; every stored name must match an
// existing parameter with the same shape. Returns the stored config hash.
std::uint64_t load_checkpoint(const std::string& path, ModelParams& params);

// Raw view for tools/tests.
std::map<std::string, Tensor> read_checkpoint_tensors(const std::string& path,
                                                      std::uint64_t* config_hash = nullptr);

}  // namespace cdrnp
