#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdrnp/model.hpp"
#include "cdrnp/task.hpp"

namespace cdrnp {

struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  double macro_mae = 0.0;   // mean of per-user MAE, emitted for transparency
  double macro_rmse = 0.0;  // mean of per-user RMSE
  std::int64_t n_examples = 0;
  std::int32_t n_users = 0;
  std::int32_t n_skipped_users = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

// (mae, rmse) over aligned prediction/target lists.
std::pair<double, double> compute_metrics(std::span<const double> predictions,
                                          std::span<const double> targets);

struct EvalConfig {
  TaskConfig task;
  AblationFlags ablations;
  LatentMode latent_mode = LatentMode::kMean;
  int workers = 1;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Cold-start evaluation: one testing task per test user, metrics
// micro-averaged over every query example. Users without target ratings
// are counted as skipped. Never mutates params.
MetricsReport evaluate(ModelParams& params, const UnionUserIndex& users,
                       const CrossDomainSplit& split, const DomainDataset& source,
                       const DomainDataset& target, const EvalConfig& cfg);

// Mean of the train-visible target ratings (the constant the baseline
// predicts everywhere).
double baseline_mean_rating(const CrossDomainSplit& split, const DomainDataset& target);

// Scores the constant mean predictor with the same task loop and skip
// logic as evaluate().
MetricsReport baseline_mean(const CrossDomainSplit& split, const DomainDataset& source,
                            const DomainDataset& target, const EvalConfig& cfg);

struct RankedItem {
  std::string item;
  double score = 0.0;
};

// Deterministic ratings for one user over candidate target items, sorted
// descending; ties broken by dense item index ascending. Duplicate
// candidate ids are deduplicated keeping the first occurrence.
std::vector<RankedItem> predict_user(ModelParams& params, const UnionUserIndex& users,
                                     const DomainDataset& source, const DomainDataset& target,
                                     const std::string& user_id,
                                     std::span<const std::string> candidate_items,
                                     const Task& support_task, const EvalConfig& cfg);

void write_metrics_report(const std::string& path, const MetricsReport& report);
std::string format_metrics_table(const MetricsReport& report);

}  // namespace cdrnp
