#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cdrnp/data.hpp"
#include "cdrnp/model.hpp"
#include "cdrnp/task.hpp"

namespace cdrnp {

// Closed-form KL(q || p) between diagonal Gaussians, differentiable w.r.t.
// both arguments. The value overload is the same formula off-tape.
ad::NodeId kl_diag_gaussian(ad::Tape& tape, const LatentNodes& q, const LatentNodes& p);
double kl_diag_gaussian(const GaussianLatent& q, const GaussianLatent& p);

struct TaskLossNodes {
  ad::NodeId total = -1;  // rec + lambda * kl
  ad::NodeId rec = -1;    // query MSE
  ad::NodeId kl = -1;
};

// Composite episode loss. Requires a training-phase forward (posterior
// present) and a rating on every query example.
TaskLossNodes task_loss(ad::Tape& tape, const ForwardResult& forward, const Task& task,
                        double lambda);

// MSE of the auxiliary regression head on source-domain interactions given
// by row indices into source.interactions. Trains the user embeddings of
// every source user, cold-start ones included.
ad::NodeId auxiliary_source_loss(ad::Tape& tape, ModelParams& params,
                                 const UnionUserIndex& users, const DomainDataset& source,
                                 std::span<const std::size_t> batch_rows);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Parameter*> params, double learning_rate,
                         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update from the accumulated gradients, then zeroes them.
  void step();
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct TrainingConfig {
  double lambda = 0.1;
  double learning_rate = 0.01;
  int epochs = 10;
  int tasks_per_epoch = 0;  // 0 = one pass over the train pool per epoch
  int support_size = 40;
  int query_size = 40;
  int history_len = 20;
  int d = 8;
  int hidden = 64;
  int decoder_depth = 3;
  double aux_weight = 0.1;
  bool ablate_prm = false;
  bool ablate_acp = false;
  std::uint64_t seed = 0;
  LatentMode test_latent_mode = LatentMode::kMean;
  int workers = 1;

  AblationFlags ablations() const { return {ablate_prm, ablate_acp}; }
  TaskConfig task_config() const { return {support_size, query_size, history_len}; }
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_rec = 0.0;
  double mean_kl = 0.0;
  double mean_aux = 0.0;
  double wall_seconds = 0.0;
  int task_count = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  std::unique_ptr<ModelParams> params;
  UnionUserIndex users;
  TrainLog log;
};

// Meta-training over sampled episodes: one optimizer step per task (or per
// group of `workers` tasks). Deterministic for a given config and seed.
// When out_dir is non-empty, a checkpoint is written after every epoch
// (latest wins) plus a final one, and the log is written as JSON lines.
TrainResult train(const TrainingConfig& cfg, const CrossDomainSplit& split,
                  const DomainDataset& source, const DomainDataset& target,
                  const std::string& out_dir = "", std::uint64_t config_hash = 0);

void write_train_log(const std::string& path, const TrainLog& log);

}  // namespace cdrnp
