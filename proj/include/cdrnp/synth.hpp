#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdrnp/data.hpp"

namespace cdrnp {

struct SynthConfig {
  int n_users = 500;
  int n_src_items = 200;
  int n_tgt_items = 200;
  int latent_dim = 4;
  int ratings_per_user = 40;  // per domain
  double noise_std = 0.5;
  double overlap_fraction = 1.0;
  double clip_lo = 0.0;
  double clip_hi = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Cross-domain ratings with known latent structure: one user latent drives
// both domains, so source behavior is informative about target ratings and
// cross-domain transfer is the only way to beat the mean baseline for
// cold-start users. rating = clip(3 + theta.phi/sqrt(k) + noise).
// Users pick items with a mild preference bias (likelier to rate items
// they score highly), which keeps the history itself informative.
struct SynthData {
  std::vector<Interaction> source_records;
  std::vector<Interaction> target_records;
  std::vector<std::string> user_ids;
  std::vector<std::vector<double>> user_latents;      // n_users x k
  std::vector<std::vector<double>> src_item_latents;  // n_src_items x k
  std::vector<std::vector<double>> tgt_item_latents;  // n_tgt_items x k
};

SynthData generate_synthetic(const SynthConfig& cfg);

// Diagnostic sidecar, never read by the model.
void write_user_latents(const std::string& path, const SynthData& data);

struct NoiseOracle {
  double unclipped = 0.0;   // sigma * sqrt(2/pi)
  double clipped_mc = 0.0;  // Monte Carlo estimate at the generator's operating point
  double mc_stderr = 0.0;
};

// Lower-bound MAE from the irreducible rating noise: the analytic value
// ignores clipping; the Monte Carlo value reproduces the generator's item
// selection and clipping.
NoiseOracle oracle_noise_mae(const SynthConfig& cfg, std::size_t mc_draws = 1000000);

}  // namespace cdrnp
