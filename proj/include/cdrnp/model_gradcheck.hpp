#pragma once

#include <cstdint>

#include "cdrnp/gradcheck.hpp"

namespace cdrnp {

// End-to-end gradient check of the full episode loss (rec + lambda*KL +
// aux_weight*aux) on a tiny synthetic dataset with one frozen task, frozen
// reparameterization noise and a frozen aux batch.
struct ModelGradCheckConfig {
  int d = 4;
  int hidden = 8;
  int decoder_depth = 3;
  int support_size = 3;
  int query_size = 2;
  int history_len = 5;
  double lambda = 0.1;
  double aux_weight = 0.1;
  std::uint64_t seed = 0;
  double eps = 1e-5;
  bool inject_fault = false;  // corrupt one analytic gradient (test fixture)
};

// Enforces d <= 8 and task sizes <= 8; the check is quadratic in the
// parameter count and meant for desk-scale dimensions only.
GradCheckReport run_model_gradcheck(const ModelGradCheckConfig& cfg);

}  // namespace cdrnp
