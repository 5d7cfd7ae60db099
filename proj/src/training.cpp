#include "cdrnp/training.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "cdrnp/checkpoint.hpp"

namespace cdrnp {

ad::NodeId kl_diag_gaussian(ad::Tape& tape, const LatentNodes& q, const LatentNodes& p) {
  const auto& mq = tape.value(q.mu);
  const auto& mp = tape.value(p.mu);
  if (!mq.same_shape(mp) || !tape.value(q.log_sigma).same_shape(tape.value(p.log_sigma))) {
    throw ShapeError("kl_diag_gaussian: dimension mismatch " + mq.shape_str() + " vs " +
                     mp.shape_str());
  }
  // sum_j [ log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2 ]
  const ad::NodeId log_ratio = tape.sub(p.log_sigma, q.log_sigma);
  const ad::NodeId var_q = tape.exp_(tape.scale(q.log_sigma, 2.0));
  const ad::NodeId var_p = tape.exp_(tape.scale(p.log_sigma, 2.0));
  const ad::NodeId dmu = tape.sub(q.mu, p.mu);
  const ad::NodeId num = tape.add(var_q, tape.mul(dmu, dmu));
  const ad::NodeId frac = tape.div(num, tape.scale(var_p, 2.0));
  const ad::NodeId per_dim = tape.add_scalar(tape.add(log_ratio, frac), -0.5);
  return tape.sum(per_dim);
}

double kl_diag_gaussian(const GaussianLatent& q, const GaussianLatent& p) {
  if (!q.mu.same_shape(p.mu) || !q.log_sigma.same_shape(p.log_sigma)) {
    throw ShapeError("kl_diag_gaussian: dimension mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.mu.data.size(); ++i) {
    const double lsq = q.log_sigma.data[i];
    const double lsp = p.log_sigma.data[i];
    const double dmu = q.mu.data[i] - p.mu.data[i];
    kl += (lsp - lsq) + (std::exp(2.0 * lsq) + dmu * dmu) / (2.0 * std::exp(2.0 * lsp)) - 0.5;
  }
  return kl;
}

TaskLossNodes task_loss(ad::Tape& tape, const ForwardResult& forward, const Task& task,
                        double lambda) {
  if (!forward.posterior.has_value()) {
    throw ContractError("task_loss: training-phase latents required (posterior missing)");
  }
  if (forward.predictions.empty() || forward.predictions.size() != task.query.size()) {
    throw ContractError("task_loss: predictions and targets must align and be non-empty");
  }
  std::vector<ad::NodeId> squared;
  squared.reserve(forward.predictions.size());
  for (std::size_t i = 0; i < forward.predictions.size(); ++i) {
    if (!task.query[i].rating.has_value()) {
      throw ContractError("task_loss: query example without a rating");
    }
    const ad::NodeId diff = tape.add_scalar(forward.predictions[i], -*task.query[i].rating);
    squared.push_back(tape.mul(diff, diff));
  }
  TaskLossNodes loss;
  loss.rec = tape.mean(squared);
  loss.kl = kl_diag_gaussian(tape, *forward.posterior, forward.prior);
  loss.total = tape.add(loss.rec, tape.scale(loss.kl, lambda));
  return loss;
}

ad::NodeId auxiliary_source_loss(ad::Tape& tape, ModelParams& params,
                                 const UnionUserIndex& users, const DomainDataset& source,
                                 std::span<const std::size_t> batch_rows) {
  if (batch_rows.empty()) throw ContractError("auxiliary_source_loss: empty batch");
  const ad::NodeId wa = tape.param(params.attn_w);
  std::vector<ad::NodeId> squared;
  squared.reserve(batch_rows.size());
  for (std::size_t row_idx : batch_rows) {
    const auto& row = source.interactions[row_idx];
    const ad::NodeId u =
        tape.row(params.user_emb, users.src_to_union[static_cast<std::size_t>(row.user)]);
    const ad::NodeId item_proj = tape.linear(wa, tape.row(params.src_item_emb, row.item));
    const std::array<ad::NodeId, 2> parts = {u, item_proj};
    const ad::NodeId in = tape.concat(parts);
    const ad::NodeId hid =
        tape.relu(tape.affine(tape.param(params.aux_w1), in, tape.param(params.aux_b1)));
    const ad::NodeId pred =
        tape.affine(tape.param(params.aux_w2), hid, tape.param(params.aux_b2));
    const ad::NodeId diff = tape.add_scalar(pred, -row.rating);
    squared.push_back(tape.mul(diff, diff));
  }
  return tape.mean(squared);
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double learning_rate, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape));
    v_.push_back(Tensor::zeros(p->value.shape));
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    auto& m = m_[pi].data;
    auto& v = v_[pi].data;
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const double g = p.grad.data[i];
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in '" + p.name + "'");
      }
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p.value.data[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
    p.zero_grad();
  }
}

void TrainingConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("training.lambda must be in [0,1]");
  }
  if (epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("training.learning_rate must be positive");
  if (support_size <= 0 || query_size <= 0 || history_len <= 0) {
    throw ConfigError("training sizes must be positive");
  }
  if (tasks_per_epoch < 0) throw ConfigError("training.tasks_per_epoch must be >= 0");
  if (d <= 0 || hidden <= 0 || decoder_depth <= 0) {
    throw ConfigError("model dims must be positive");
  }
  if (aux_weight < 0.0) throw ConfigError("training.aux_weight must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

namespace {

constexpr std::uint64_t kInitTag = 0x1a11;
constexpr std::uint64_t kTaskTag = 0x7a51;
constexpr std::uint64_t kAuxTag = 0xa0b1;
constexpr std::uint64_t kEpsTag = 0xe651;

struct TaskOutcome {
  double rec = 0.0;
  double kl = 0.0;
  double aux = 0.0;
  ad::ParamGrads grads;  // used by multi-worker mode only
};

// Builds one task's tape end to end and runs backward. Gradients go to
// the parameters directly, or into the returned local map when
// local_grads is set (multi-worker mode).
TaskOutcome run_task(const TrainingConfig& cfg, const TaskBuilder& builder,
                     ModelParams& params, const UnionUserIndex& users,
                     const DomainDataset& source, std::uint64_t task_seed,
                     bool local_grads) {
  Rng task_rng(derive_seed(task_seed, kTaskTag));
  const Task task = builder.training_task(task_rng, cfg.task_config());

  ad::Tape tape;
  Rng eps_rng(derive_seed(task_seed, kEpsTag));
  const ForwardResult fwd = forward_task(tape, params, users, task, Phase::kTraining, &eps_rng,
                                         cfg.ablations(), cfg.test_latent_mode);
  const TaskLossNodes loss = task_loss(tape, fwd, task, cfg.lambda);

  ad::NodeId total = loss.total;
  TaskOutcome out;
  out.rec = tape.value(loss.rec).data[0];
  out.kl = tape.value(loss.kl).data[0];
  if (cfg.aux_weight > 0.0) {
    Rng aux_rng(derive_seed(task_seed, kAuxTag));
    const auto n_rows = static_cast<std::size_t>(source.n_interactions());
    const std::size_t batch = std::min<std::size_t>(
        static_cast<std::size_t>(cfg.support_size), n_rows);
    auto rows = sample_without_replacement(aux_rng, n_rows, batch);
    const ad::NodeId aux = auxiliary_source_loss(tape, params, users, source, rows);
    out.aux = tape.value(aux).data[0];
    total = tape.add(total, tape.scale(aux, cfg.aux_weight));
  }

  const double total_value = tape.value(total).data[0];
  if (!std::isfinite(total_value)) {
    throw NumericError("non-finite loss (rec=" + std::to_string(out.rec) +
                       ", kl=" + std::to_string(out.kl) + ", aux=" + std::to_string(out.aux) +
                       ")");
  }
  if (local_grads) {
    tape.backward(total, &out.grads);
  } else {
    tape.backward(total);
  }
  return out;
}

}  // namespace

TrainResult train(const TrainingConfig& cfg, const CrossDomainSplit& split,
                  const DomainDataset& source, const DomainDataset& target,
                  const std::string& out_dir, std::uint64_t config_hash) {
  cfg.validate();

  TrainResult result;
  result.users = UnionUserIndex::build(source, target);

  TaskBuilder builder(split, source, target);
  if (builder.train_pool_size() == 0) {
    throw TaskError("train: empty training pool (no train-user target ratings)");
  }

  ModelDims dims;
  dims.n_union_users = result.users.size();
  dims.n_src_items = source.n_items();
  dims.n_tgt_items = target.n_items();
  dims.d = cfg.d;
  dims.hidden = cfg.hidden;
  dims.depth = cfg.decoder_depth;
  result.params = std::make_unique<ModelParams>(dims, derive_seed(cfg.seed, kInitTag));
  ModelParams& params = *result.params;

  const int tasks_per_epoch =
      cfg.tasks_per_epoch > 0
          ? cfg.tasks_per_epoch
          : static_cast<int>((builder.train_pool_size() + cfg.query_size - 1) /
                             static_cast<std::size_t>(cfg.query_size));

  AdamOptimizer opt(params.all(), cfg.learning_rate);

  const bool write_outputs = !out_dir.empty();
  if (write_outputs) std::filesystem::create_directories(out_dir);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double sum_rec = 0.0, sum_kl = 0.0, sum_aux = 0.0;

    int task_idx = 0;
    while (task_idx < tasks_per_epoch) {
      const int group = std::min(cfg.workers, tasks_per_epoch - task_idx);
      auto seed_for = [&](int offset) {
        return derive_seed(cfg.seed, 0x5eed,
                           (static_cast<std::uint64_t>(epoch) << 32) |
                               static_cast<std::uint64_t>(task_idx + offset));
      };
      try {
        if (group == 1) {
          const TaskOutcome out =
              run_task(cfg, builder, params, result.users, source, seed_for(0), false);
          sum_rec += out.rec;
          sum_kl += out.kl;
          sum_aux += out.aux;
        } else {
          // Disjoint tasks against a read-only parameter snapshot; local
          // gradients are summed in worker order, then one step.
          std::vector<TaskOutcome> outcomes(static_cast<std::size_t>(group));
          std::vector<std::thread> threads;
          std::vector<std::exception_ptr> errors(static_cast<std::size_t>(group));
          threads.reserve(static_cast<std::size_t>(group));
          for (int w = 0; w < group; ++w) {
            threads.emplace_back([&, w]() {
              try {
                outcomes[static_cast<std::size_t>(w)] =
                    run_task(cfg, builder, params, result.users, source, seed_for(w), true);
              } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
              }
            });
          }
          for (auto& th : threads) th.join();
          for (auto& err : errors) {
            if (err) std::rethrow_exception(err);
          }
          for (const auto& out : outcomes) {
            sum_rec += out.rec;
            sum_kl += out.kl;
            sum_aux += out.aux;
            for (const auto& [param, grad] : out.grads) {
              for (std::size_t i = 0; i < grad.data.size(); ++i) {
                param->grad.data[i] += grad.data[i];
              }
            }
          }
        }
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + " task " +
                           std::to_string(task_idx) + ": " + e.what());
      }
      opt.step();
      task_idx += group;
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.task_count = tasks_per_epoch;
    rec.mean_rec = sum_rec / tasks_per_epoch;
    rec.mean_kl = sum_kl / tasks_per_epoch;
    rec.mean_aux = sum_aux / tasks_per_epoch;
    rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    if (!std::isfinite(rec.mean_rec) || !std::isfinite(rec.mean_kl) ||
        !std::isfinite(rec.mean_aux)) {
      throw NumericError("epoch " + std::to_string(rec.epoch) + ": non-finite loss means");
    }
    result.log.epochs.push_back(rec);

    if (write_outputs) {
      save_checkpoint(out_dir + "/checkpoint_latest.bin", params, config_hash);
      write_train_log(out_dir + "/trainlog.jsonl", result.log);
    }
  }

  if (write_outputs) {
    save_checkpoint(out_dir + "/checkpoint_final.bin", params, config_hash);
  }
  return result;
}

void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char buf[256];
  for (const auto& e : log.epochs) {
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%d,\"mean_rec\":%.17g,\"mean_kl\":%.17g,\"mean_aux\":%.17g,"
                  "\"wall_seconds\":%.6f,\"task_count\":%d}\n",
                  e.epoch, e.mean_rec, e.mean_kl, e.mean_aux, e.wall_seconds, e.task_count);
    out << buf;
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace cdrnp
