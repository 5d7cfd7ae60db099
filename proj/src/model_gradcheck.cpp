#include "cdrnp/model_gradcheck.hpp"

#include "cdrnp/synth.hpp"
#include "cdrnp/training.hpp"

namespace cdrnp {

GradCheckReport run_model_gradcheck(const ModelGradCheckConfig& cfg) {
  if (cfg.d > 8) throw ContractError("gradcheck: d must be <= 8");
  if (cfg.support_size > 8 || cfg.query_size > 8) {
    throw ContractError("gradcheck: task sizes must be <= 8");
  }
  if (cfg.support_size < 1 || cfg.query_size < 1) {
    throw ContractError("gradcheck: task sizes must be >= 1");
  }

  SynthConfig synth;
  synth.n_users = 12;
  synth.n_src_items = 10;
  synth.n_tgt_items = 10;
  synth.latent_dim = 2;
  synth.ratings_per_user = 5;
  synth.noise_std = 0.25;
  synth.overlap_fraction = 1.0;
  synth.seed = cfg.seed;
  const SynthData data = generate_synthetic(synth);
  const DomainDataset source =
      dataset_from_interactions(data.source_records, DomainTag::kSource, 1);
  const DomainDataset target =
      dataset_from_interactions(data.target_records, DomainTag::kTarget, 1);
  const auto overlap = compute_overlap(source, target);
  const CrossDomainSplit split = split_cold_start(overlap.overlap, 0.25, cfg.seed);
  const UnionUserIndex users = UnionUserIndex::build(source, target);

  TaskBuilder builder(split, source, target);
  const TaskConfig task_cfg{cfg.support_size, cfg.query_size, cfg.history_len};
  Rng task_rng(derive_seed(cfg.seed, 0x6c7a));
  const Task task = builder.training_task(task_rng, task_cfg);

  ModelDims dims;
  dims.n_union_users = users.size();
  dims.n_src_items = source.n_items();
  dims.n_tgt_items = target.n_items();
  dims.d = cfg.d;
  dims.hidden = cfg.hidden;
  dims.depth = cfg.decoder_depth;
  ModelParams params(dims, derive_seed(cfg.seed, 0x6c7b));

  Tensor frozen_eps = Tensor::zeros({cfg.d});
  Rng eps_rng(derive_seed(cfg.seed, 0x6c7c));
  for (double& v : frozen_eps.data) v = eps_rng.normal();

  Rng aux_rng(derive_seed(cfg.seed, 0x6c7d));
  const std::size_t aux_batch = std::min<std::size_t>(
      static_cast<std::size_t>(cfg.support_size), static_cast<std::size_t>(source.n_interactions()));
  const auto aux_rows =
      sample_without_replacement(aux_rng, static_cast<std::size_t>(source.n_interactions()),
                                 aux_batch);

  auto build_loss = [&](ad::Tape& tape) {
    const ForwardResult fwd = forward_task(tape, params, users, task, Phase::kTraining,
                                           nullptr, {}, LatentMode::kMean, &frozen_eps);
    const TaskLossNodes loss = task_loss(tape, fwd, task, cfg.lambda);
    ad::NodeId total = loss.total;
    if (cfg.aux_weight > 0.0) {
      const ad::NodeId aux = auxiliary_source_loss(tape, params, users, source, aux_rows);
      total = tape.add(total, tape.scale(aux, cfg.aux_weight));
    }
    return total;
  };

  auto value_fn = [&]() {
    ad::Tape tape;
    const ad::NodeId total = build_loss(tape);
    return EvalOut{tape.value(total).data[0], tape.relu_kink()};
  };
  auto grad_fn = [&]() {
    ad::Tape tape;
    const ad::NodeId total = build_loss(tape);
    EvalOut out{tape.value(total).data[0], tape.relu_kink()};
    tape.backward(total);
    if (cfg.inject_fault) {
      params.decoder.front().w.grad.data[0] += 0.5;
    }
    return out;
  };

  return gradient_check(params.all(), value_fn, grad_fn, cfg.eps);
}

}  // namespace cdrnp
