// cdrnp: cross-domain cold-start recommender. Subcommands cover data
// ingestion, synthetic data generation, training, evaluation, per-user
// prediction and a full-model gradient check. The config file is the single
// source of truth; flags only pick paths, the subcommand and a seed.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdrnp/checkpoint.hpp"
#include "cdrnp/config.hpp"
#include "cdrnp/evaluate.hpp"
#include "cdrnp/manifest.hpp"
#include "cdrnp/model_gradcheck.hpp"
#include "cdrnp/synth.hpp"
#include "cdrnp/training.hpp"

namespace {

using namespace cdrnp;

struct LoadedData {
  DomainDataset source;
  DomainDataset target;
  CrossDomainSplit split;
  std::vector<std::pair<std::string, std::string>> input_digests;
};

constexpr std::uint64_t kSplitTag = 0x5017;
constexpr std::uint64_t kRepeatTag = 0x4e9e;

LoadedData load_data(const RunConfig& cfg) {
  LoadedData out;
  if (cfg.data.kind == "synth") {
    const SynthData data = generate_synthetic(cfg.synth);
    out.source = dataset_from_interactions(data.source_records, DomainTag::kSource,
                                           cfg.data.min_count);
    out.target = dataset_from_interactions(data.target_records, DomainTag::kTarget,
                                           cfg.data.min_count);
  } else {
    out.source = load_ratings(cfg.data.source_path, DomainTag::kSource, cfg.data.min_count);
    out.target = load_ratings(cfg.data.target_path, DomainTag::kTarget, cfg.data.min_count);
    out.input_digests.emplace_back(cfg.data.source_path, file_digest_hex(cfg.data.source_path));
    out.input_digests.emplace_back(cfg.data.target_path, file_digest_hex(cfg.data.target_path));
  }
  const auto overlap = compute_overlap(out.source, out.target);
  if (overlap.overlap.empty()) {
    throw SplitError("no overlapping users between source and target");
  }
  out.split = split_cold_start(overlap.overlap, cfg.data.alpha,
                               derive_seed(cfg.training.seed, kSplitTag));
  return out;
}

ModelDims dims_for(const RunConfig& cfg, const DomainDataset& source,
                   const DomainDataset& target, const UnionUserIndex& users) {
  ModelDims dims;
  dims.n_union_users = users.size();
  dims.n_src_items = source.n_items();
  dims.n_tgt_items = target.n_items();
  dims.d = cfg.training.d;
  dims.hidden = cfg.training.hidden;
  dims.depth = cfg.training.decoder_depth;
  return dims;
}

EvalConfig eval_config(const RunConfig& cfg) {
  EvalConfig ec;
  ec.task = cfg.training.task_config();
  ec.ablations = cfg.training.ablations();
  ec.latent_mode = cfg.training.test_latent_mode;
  ec.workers = cfg.workers;
  ec.seed = cfg.training.seed;
  ec.config_hash = cfg.config_hash;
  return ec;
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;
};

RunConfig load_run_config(const CommonArgs& args) {
  RunConfig cfg = load_config(args.config_path);
  if (args.seed_override) {
    cfg.training.seed = *args.seed_override;
    cfg.synth.seed = *args.seed_override;
  }
  return cfg;
}

RunManifest start_manifest(const std::string& command, const CommonArgs& args,
                           const RunConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.config_path = args.config_path;
  m.config_hash = cfg.config_hash;
  m.seed = cfg.training.seed;
  m.started_at = utc_timestamp_now();
  m.input_digests.emplace_back(args.config_path, file_digest_hex(args.config_path));
  return m;
}

void finish_manifest(RunManifest& m, const CommonArgs& args) {
  std::filesystem::create_directories(args.out_dir);
  m.finished_at = utc_timestamp_now();
  write_manifest_atomic(args.out_dir + "/manifest.json", m);
}

// Writes a best-effort manifest for failed (exit 1) runs too.
template <typename Body>
int with_manifest(RunManifest& manifest, const CommonArgs& args, Body&& body) {
  try {
    return body();
  } catch (const Error& e) {
    manifest.status = "error";
    manifest.error = e.what();
    try {
      finish_manifest(manifest, args);
    } catch (...) {
      // the original error matters more
    }
    throw;
  }
}

int run_ingest(const CommonArgs& args) {
  const RunConfig cfg = load_run_config(args);
  RunManifest manifest = start_manifest("ingest", args, cfg);
  return with_manifest(manifest, args, [&]() {
    LoadedData data = load_data(cfg);
    manifest.input_digests.insert(manifest.input_digests.end(), data.input_digests.begin(),
                                  data.input_digests.end());
    std::printf("source: %d users, %d items, %lld ratings\n", data.source.n_users(),
                data.source.n_items(), static_cast<long long>(data.source.n_interactions()));
    std::printf("target: %d users, %d items, %lld ratings\n", data.target.n_users(),
                data.target.n_items(), static_cast<long long>(data.target.n_interactions()));
    std::printf("overlap users: %zu\n", data.split.overlap_users.size());
    std::printf("split (alpha=%.2f): %zu train / %zu test\n", data.split.alpha,
                data.split.train_users.size(), data.split.test_users.size());
    std::filesystem::create_directories(args.out_dir);
    const std::string split_path = args.out_dir + "/split_manifest.txt";
    write_split_manifest(split_path, data.split);
    manifest.outputs.push_back(split_path);
    finish_manifest(manifest, args);
    return 0;
  });
}

int run_synth(const CommonArgs& args) {
  const RunConfig cfg = load_run_config(args);
  RunManifest manifest = start_manifest("synth", args, cfg);
  return with_manifest(manifest, args, [&]() {
    const SynthData data = generate_synthetic(cfg.synth);
    std::filesystem::create_directories(args.out_dir);
    const std::string src_path = args.out_dir + "/source.csv";
    const std::string tgt_path = args.out_dir + "/target.csv";
    const std::string latents_path = args.out_dir + "/user_latents.tsv";
    write_ratings_csv(src_path, data.source_records);
    write_ratings_csv(tgt_path, data.target_records);
    write_user_latents(latents_path, data);
    manifest.outputs = {src_path, tgt_path, latents_path};
    std::printf("wrote %zu source and %zu target ratings for %d users\n",
                data.source_records.size(), data.target_records.size(), cfg.synth.n_users);
    finish_manifest(manifest, args);
    return 0;
  });
}

int run_train(const CommonArgs& args) {
  const RunConfig cfg = load_run_config(args);
  RunManifest manifest = start_manifest("train", args, cfg);
  return with_manifest(manifest, args, [&]() {
    LoadedData data = load_data(cfg);
    manifest.input_digests.insert(manifest.input_digests.end(), data.input_digests.begin(),
                                  data.input_digests.end());
    unsigned long long hash_num = 0;
    std::sscanf(cfg.config_hash.c_str(), "%llx", &hash_num);
    const TrainResult result =
        train(cfg.training, data.split, data.source, data.target, args.out_dir, hash_num);
    for (const auto& e : result.log.epochs) {
      std::printf("epoch %2d  rec %.4f  kl %.4f  aux %.4f  (%.1fs, %d tasks)\n", e.epoch,
                  e.mean_rec, e.mean_kl, e.mean_aux, e.wall_seconds, e.task_count);
    }
    manifest.outputs = {args.out_dir + "/checkpoint_latest.bin",
                        args.out_dir + "/checkpoint_final.bin",
                        args.out_dir + "/trainlog.jsonl"};
    finish_manifest(manifest, args);
    return 0;
  });
}

int run_evaluate(const CommonArgs& args, const std::string& checkpoint_path, int repeats_flag) {
  RunConfig cfg = load_run_config(args);
  const int repeats = repeats_flag > 0 ? repeats_flag : cfg.eval_repeats;
  RunManifest manifest = start_manifest("evaluate", args, cfg);
  return with_manifest(manifest, args, [&]() {
    LoadedData data = load_data(cfg);
    manifest.input_digests.insert(manifest.input_digests.end(), data.input_digests.begin(),
                                  data.input_digests.end());
    manifest.input_digests.emplace_back(checkpoint_path, file_digest_hex(checkpoint_path));

    const UnionUserIndex users = UnionUserIndex::build(data.source, data.target);
    ModelParams params(dims_for(cfg, data.source, data.target, users), /*init_seed=*/0);
    load_checkpoint(checkpoint_path, params);

    EvalConfig ec = eval_config(cfg);
    std::vector<MetricsReport> reports;
    reports.reserve(static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
      ec.seed = r == 0 ? cfg.training.seed
                       : derive_seed(cfg.training.seed, kRepeatTag,
                                     static_cast<std::uint64_t>(r));
      reports.push_back(evaluate(params, users, data.split, data.source, data.target, ec));
    }

    std::filesystem::create_directories(args.out_dir);
    const std::string report_path = args.out_dir + "/report.json";
    if (repeats == 1) {
      std::fputs(format_metrics_table(reports[0]).c_str(), stdout);
      write_metrics_report(report_path, reports[0]);
    } else {
      double mae_sum = 0, mae_sq = 0, rmse_sum = 0, rmse_sq = 0;
      for (const auto& r : reports) {
        mae_sum += r.mae;
        mae_sq += r.mae * r.mae;
        rmse_sum += r.rmse;
        rmse_sq += r.rmse * r.rmse;
      }
      const double n = repeats;
      const double mae_mean = mae_sum / n;
      const double rmse_mean = rmse_sum / n;
      const double mae_std = std::sqrt(std::max(0.0, mae_sq / n - mae_mean * mae_mean));
      const double rmse_std = std::sqrt(std::max(0.0, rmse_sq / n - rmse_mean * rmse_mean));
      std::printf("MAE  %.4f +- %.4f\nRMSE %.4f +- %.4f  (%d repeats)\n", mae_mean, mae_std,
                  rmse_mean, rmse_std, repeats);
      std::ofstream out(report_path);
      if (!out) throw IoError("cannot open '" + report_path + "' for writing");
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "{\n  \"repeats\": %d,\n  \"mae_mean\": %.17g,\n  \"mae_std\": %.17g,\n"
                    "  \"rmse_mean\": %.17g,\n  \"rmse_std\": %.17g\n}\n",
                    repeats, mae_mean, mae_std, rmse_mean, rmse_std);
      out << buf;
    }
    manifest.outputs.push_back(report_path);
    finish_manifest(manifest, args);
    return 0;
  });
}

int run_predict(const CommonArgs& args, const std::string& checkpoint_path,
                const std::string& user_id, const std::string& items_csv) {
  RunConfig cfg = load_run_config(args);
  RunManifest manifest = start_manifest("predict", args, cfg);
  return with_manifest(manifest, args, [&]() {
    LoadedData data = load_data(cfg);
    manifest.input_digests.emplace_back(checkpoint_path, file_digest_hex(checkpoint_path));

    const UnionUserIndex users = UnionUserIndex::build(data.source, data.target);
    ModelParams params(dims_for(cfg, data.source, data.target, users), /*init_seed=*/0);
    load_checkpoint(checkpoint_path, params);

    std::vector<std::string> items;
    std::size_t start = 0;
    while (start <= items_csv.size()) {
      const std::size_t comma = items_csv.find(',', start);
      const std::string token = items_csv.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!token.empty()) items.push_back(token);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (items.empty()) throw ContractError("predict: no candidate items given");

    TaskBuilder builder(data.split, data.source, data.target);
    Rng rng(derive_seed(cfg.training.seed, 0x9ced));
    Task support_task;
    support_task.phase = Phase::kTesting;
    {
      TaskConfig tc = cfg.training.task_config();
      tc.query_size = 1;  // only the support half is kept
      Task t = builder.training_task(rng, tc);
      support_task.support = std::move(t.support);
    }

    const auto ranked = predict_user(params, users, data.source, data.target, user_id, items,
                                     support_task, eval_config(cfg));
    std::filesystem::create_directories(args.out_dir);
    const std::string pred_path = args.out_dir + "/predictions.tsv";
    std::ofstream out(pred_path);
    if (!out) throw IoError("cannot open '" + pred_path + "' for writing");
    for (const auto& r : ranked) {
      std::printf("%s\t%.4f\n", r.item.c_str(), r.score);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "\t%.17g\n", r.score);
      out << r.item << buf;
    }
    manifest.outputs.push_back(pred_path);
    finish_manifest(manifest, args);
    return 0;
  });
}

int run_gradcheck(const CommonArgs& args, double eps, bool inject_fault) {
  RunConfig cfg = load_run_config(args);
  RunManifest manifest = start_manifest("gradcheck", args, cfg);
  return with_manifest(manifest, args, [&]() {
    ModelGradCheckConfig gc;
    gc.d = cfg.training.d;
    gc.hidden = cfg.training.hidden;
    gc.decoder_depth = cfg.training.decoder_depth;
    gc.support_size = cfg.training.support_size;
    gc.query_size = cfg.training.query_size;
    gc.history_len = cfg.training.history_len;
    gc.lambda = cfg.training.lambda;
    gc.aux_weight = cfg.training.aux_weight;
    gc.seed = cfg.training.seed;
    gc.eps = eps;
    gc.inject_fault = inject_fault;

    const GradCheckReport report = run_model_gradcheck(gc);
    for (const auto& [name, err] : report.per_param) {
      std::printf("%-16s max rel error %.3e\n", name.c_str(), err);
    }
    std::printf("checked %zu coordinates, skipped %zu\n", report.coords_checked,
                report.coords_skipped);
    finish_manifest(manifest, args);
    if (!report.passed(1e-4)) {
      std::fprintf(stderr, "gradcheck FAILED: parameter '%s' coord %lld rel error %.3e\n",
                   report.worst_param.c_str(), static_cast<long long>(report.worst_coord),
                   report.max_rel_error);
      return 1;
    }
    std::printf("gradcheck OK: max rel error %.3e\n", report.max_rel_error);
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cdrnp: cross-domain cold-start rating prediction"};
  app.require_subcommand(1);

  CommonArgs ingest_args, synth_args, train_args, eval_args, predict_args, gradcheck_args;
  std::string eval_checkpoint, predict_checkpoint, predict_user_id, predict_items;
  int eval_repeats = 0;
  double gradcheck_eps = 1e-5;
  bool gradcheck_fault = false;

  auto add_common = [](CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (JSON)")->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&args](const std::uint64_t& s) { args.seed_override = s; },
        "seed override");
  };

  CLI::App* ingest = app.add_subcommand("ingest", "load ratings, report overlap and split");
  add_common(ingest, ingest_args);
  CLI::App* synth = app.add_subcommand("synth", "generate synthetic cross-domain ratings");
  add_common(synth, synth_args);
  CLI::App* train_cmd = app.add_subcommand("train", "train on meta-learning tasks");
  add_common(train_cmd, train_args);
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "cold-start evaluation of a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--repeats", eval_repeats, "evaluation repeats with re-seeded support");
  CLI::App* predict_cmd = app.add_subcommand("predict", "rank candidate items for one user");
  add_common(predict_cmd, predict_args);
  predict_cmd->add_option("--checkpoint", predict_checkpoint, "checkpoint file")->required();
  predict_cmd->add_option("--user", predict_user_id, "external user id")->required();
  predict_cmd->add_option("--items", predict_items, "comma-separated candidate item ids")
      ->required();
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of the full model loss");
  add_common(gradcheck_cmd, gradcheck_args);
  gradcheck_cmd->add_option("--eps", gradcheck_eps, "finite-difference step");
  gradcheck_cmd->add_flag("--inject-fault", gradcheck_fault,
                          "corrupt one gradient (test fixture)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*ingest) return run_ingest(ingest_args);
    if (*synth) return run_synth(synth_args);
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_evaluate(eval_args, eval_checkpoint, eval_repeats);
    if (*predict_cmd) {
      return run_predict(predict_args, predict_checkpoint, predict_user_id, predict_items);
    }
    if (*gradcheck_cmd) {
      if (!(gradcheck_eps >= 1e-6 && gradcheck_eps <= 1e-4)) {
        std::fprintf(stderr, "gradcheck: --eps must lie in [1e-6, 1e-4]\n");
        return 2;
      }
      return run_gradcheck(gradcheck_args, gradcheck_eps, gradcheck_fault);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 2;
}
