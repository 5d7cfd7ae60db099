#include "cdrnp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cdrnp/rng.hpp"
#include "cdrnp/task.hpp"

namespace cdrnp {

namespace {

constexpr double kRatingCenter = 3.0;
// Noise added to item scores when users choose what to rate; large enough
// that selection is only mildly preference-correlated and the empirical
// rating mean stays near the center.
constexpr double kChoiceNoiseStd = 3.0;
constexpr std::uint64_t kLatentTag = 0x1a7e;
constexpr std::uint64_t kChoiceTag = 0xc401;
constexpr std::uint64_t kOracleTag = 0x04ac;

std::vector<double> draw_latent(Rng& rng, int k) {
  std::vector<double> v(static_cast<std::size_t>(k));
  for (double& x : v) x = rng.normal();
  return v;
}

double dot_scaled(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / std::sqrt(static_cast<double>(a.size()));
}

// Pool of 2*m uniform candidates, keep the top m by noisy preference score.
std::vector<std::size_t> choose_items(Rng& rng, const std::vector<double>& theta,
                                      const std::vector<std::vector<double>>& items, int m) {
  const std::size_t n = items.size();
  const std::size_t pool_size = std::min<std::size_t>(n, 2 * static_cast<std::size_t>(m));
  auto pool = sample_without_replacement(rng, n, pool_size);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(pool.size());
  for (std::size_t idx : pool) {
    const double s = dot_scaled(theta, items[idx]) + kChoiceNoiseStd * rng.normal();
    scored.emplace_back(s, idx);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) chosen.push_back(scored[static_cast<std::size_t>(i)].second);
  return chosen;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_users <= 0 || n_src_items <= 0 || n_tgt_items <= 0 || latent_dim <= 0 ||
      ratings_per_user <= 0) {
    throw ConfigError("synth: all counts must be positive");
  }
  if (ratings_per_user > n_src_items || ratings_per_user > n_tgt_items) {
    throw ConfigError("synth: ratings_per_user exceeds the item count");
  }
  if (noise_std < 0.0) throw ConfigError("synth: noise_std must be >= 0");
  if (!(overlap_fraction > 0.0 && overlap_fraction <= 1.0)) {
    throw ConfigError("synth: overlap_fraction must be in (0,1]");
  }
  if (!(clip_lo < clip_hi)) throw ConfigError("synth: clip range is empty");
}

SynthData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SynthData data;
  const int k = cfg.latent_dim;

  Rng latent_rng(derive_seed(cfg.seed, kLatentTag));
  data.user_ids.reserve(static_cast<std::size_t>(cfg.n_users));
  data.user_latents.reserve(static_cast<std::size_t>(cfg.n_users));
  char buf[32];
  for (int u = 0; u < cfg.n_users; ++u) {
    std::snprintf(buf, sizeof(buf), "u%05d", u);
    data.user_ids.emplace_back(buf);
    data.user_latents.push_back(draw_latent(latent_rng, k));
  }
  std::vector<std::string> src_item_ids, tgt_item_ids;
  for (int i = 0; i < cfg.n_src_items; ++i) {
    std::snprintf(buf, sizeof(buf), "s%05d", i);
    src_item_ids.emplace_back(buf);
    data.src_item_latents.push_back(draw_latent(latent_rng, k));
  }
  for (int i = 0; i < cfg.n_tgt_items; ++i) {
    std::snprintf(buf, sizeof(buf), "t%05d", i);
    tgt_item_ids.emplace_back(buf);
    data.tgt_item_latents.push_back(draw_latent(latent_rng, k));
  }

  const int n_overlap = std::max(
      1, static_cast<int>(std::lround(cfg.overlap_fraction * cfg.n_users)));

  std::int64_t src_clock = 0, tgt_clock = 0;
  Rng choice_rng(derive_seed(cfg.seed, kChoiceTag));
  for (int u = 0; u < cfg.n_users; ++u) {
    const auto& theta = data.user_latents[static_cast<std::size_t>(u)];
    const bool in_target = u < n_overlap;

    auto emit = [&](const std::vector<std::vector<double>>& item_latents,
                    const std::vector<std::string>& item_ids,
                    std::vector<Interaction>& records, std::int64_t& clock) {
      const auto chosen = choose_items(choice_rng, theta, item_latents, cfg.ratings_per_user);
      for (std::size_t idx : chosen) {
        const double signal = dot_scaled(theta, item_latents[idx]);
        const double noise = cfg.noise_std * choice_rng.normal();
        const double rating =
            std::clamp(kRatingCenter + signal + noise, cfg.clip_lo, cfg.clip_hi);
        records.push_back({data.user_ids[static_cast<std::size_t>(u)], item_ids[idx], rating,
                           clock++});
      }
    };
    emit(data.src_item_latents, src_item_ids, data.source_records, src_clock);
    if (in_target) emit(data.tgt_item_latents, tgt_item_ids, data.target_records, tgt_clock);
  }
  return data;
}

void write_user_latents(const std::string& path, const SynthData& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char buf[64];
  for (std::size_t u = 0; u < data.user_ids.size(); ++u) {
    out << data.user_ids[u];
    for (double v : data.user_latents[u]) {
      std::snprintf(buf, sizeof(buf), "\t%.17g", v);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

NoiseOracle oracle_noise_mae(const SynthConfig& cfg, std::size_t mc_draws) {
  cfg.validate();
  NoiseOracle oracle;
  oracle.unclipped = cfg.noise_std * std::sqrt(2.0 / M_PI);
  if (cfg.noise_std == 0.0) return oracle;

  // Monte Carlo over virtual users, mirroring the generator's preference-
  // biased item choice so the signal marginal matches the operating point.
  Rng rng(derive_seed(cfg.seed, kOracleTag));
  const int k = cfg.latent_dim;
  double sum = 0.0, sq_sum = 0.0;
  std::size_t n = 0;
  while (n < mc_draws) {
    const auto theta = draw_latent(rng, k);
    const int pool_size = 2 * cfg.ratings_per_user;
    std::vector<std::pair<double, double>> pool;  // (noisy choice score, signal)
    pool.reserve(static_cast<std::size_t>(pool_size));
    for (int i = 0; i < pool_size; ++i) {
      const double signal = dot_scaled(theta, draw_latent(rng, k));
      pool.emplace_back(signal + kChoiceNoiseStd * rng.normal(), signal);
    }
    std::nth_element(pool.begin(), pool.begin() + cfg.ratings_per_user, pool.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < cfg.ratings_per_user && n < mc_draws; ++i, ++n) {
      const double signal = pool[static_cast<std::size_t>(i)].second;
      const double noise = cfg.noise_std * rng.normal();
      const double clean = std::clamp(kRatingCenter + signal, cfg.clip_lo, cfg.clip_hi);
      const double noisy = std::clamp(kRatingCenter + signal + noise, cfg.clip_lo, cfg.clip_hi);
      const double err = std::abs(noisy - clean);
      sum += err;
      sq_sum += err * err;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sq_sum / static_cast<double>(n) - mean * mean;
  oracle.clipped_mc = mean;
  oracle.mc_stderr = std::sqrt(std::max(0.0, var) / static_cast<double>(n));
  return oracle;
}

}  // namespace cdrnp
