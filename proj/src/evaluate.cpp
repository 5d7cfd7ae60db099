#include "cdrnp/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>
#include <unordered_set>

namespace cdrnp {

std::pair<double, double> compute_metrics(std::span<const double> predictions,
                                          std::span<const double> targets) {
  if (predictions.empty() || predictions.size() != targets.size()) {
    throw ContractError("compute_metrics: need equal non-zero lengths, got " +
                        std::to_string(predictions.size()) + " vs " +
                        std::to_string(targets.size()));
  }
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - targets[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(predictions.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

namespace {

constexpr std::uint64_t kEvalTaskTag = 0xe7a1;

struct UserPartial {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  std::int64_t n = 0;
  bool skipped = false;
};

// Shared loop for the model and the constant baseline: per test user,
// build a testing task and score its query set. Partials are aggregated
// in user order, so the result is independent of worker count.
template <typename Predict>
MetricsReport run_eval_loop(const CrossDomainSplit& split, const DomainDataset& source,
                            const DomainDataset& target, const EvalConfig& cfg,
                            Predict&& predict) {
  if (split.test_users.empty()) throw EvalError("evaluate: no test users in the split");
  TaskBuilder builder(split, source, target);

  std::vector<UserPartial> partials(split.test_users.size());
  auto eval_user = [&](std::size_t ui) {
    Rng rng(derive_seed(cfg.seed, kEvalTaskTag, ui));
    auto task = builder.testing_task(split.test_users[ui], rng, cfg.task);
    auto& partial = partials[ui];
    if (!task.has_value()) {
      partial.skipped = true;
      return;
    }
    const std::vector<double> preds = predict(*task);
    for (std::size_t i = 0; i < task->query.size(); ++i) {
      const double truth = task->query[i].rating.value();
      const double e = preds[i] - truth;
      partial.abs_sum += std::abs(e);
      partial.sq_sum += e * e;
      ++partial.n;
    }
  };

  if (cfg.workers <= 1) {
    for (std::size_t ui = 0; ui < partials.size(); ++ui) eval_user(ui);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.workers));
    for (int w = 0; w < cfg.workers; ++w) {
      threads.emplace_back([&, w]() {
        try {
          for (std::size_t ui = static_cast<std::size_t>(w); ui < partials.size();
               ui += static_cast<std::size_t>(cfg.workers)) {
            eval_user(ui);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  MetricsReport report;
  report.seed = cfg.seed;
  report.config_hash = cfg.config_hash;
  double abs_sum = 0.0, sq_sum = 0.0, macro_mae_sum = 0.0, macro_rmse_sum = 0.0;
  for (const auto& partial : partials) {
    if (partial.skipped) {
      ++report.n_skipped_users;
      continue;
    }
    ++report.n_users;
    report.n_examples += partial.n;
    abs_sum += partial.abs_sum;
    sq_sum += partial.sq_sum;
    const double n = static_cast<double>(partial.n);
    macro_mae_sum += partial.abs_sum / n;
    macro_rmse_sum += std::sqrt(partial.sq_sum / n);
  }
  if (report.n_examples == 0) {
    throw EvalError("evaluate: every test user was skipped");
  }
  const double n = static_cast<double>(report.n_examples);
  report.mae = abs_sum / n;
  report.rmse = std::sqrt(sq_sum / n);
  report.macro_mae = macro_mae_sum / report.n_users;
  report.macro_rmse = macro_rmse_sum / report.n_users;
  return report;
}

}  // namespace

MetricsReport evaluate(ModelParams& params, const UnionUserIndex& users,
                       const CrossDomainSplit& split, const DomainDataset& source,
                       const DomainDataset& target, const EvalConfig& cfg) {
  return run_eval_loop(split, source, target, cfg, [&](const Task& task) {
    ad::Tape tape;
    Rng sample_rng(derive_seed(cfg.seed, 0x5a3e, static_cast<std::uint64_t>(task.query[0].user)));
    const ForwardResult fwd =
        forward_task(tape, params, users, task, Phase::kTesting,
                     cfg.latent_mode == LatentMode::kSample ? &sample_rng : nullptr,
                     cfg.ablations, cfg.latent_mode);
    std::vector<double> preds;
    preds.reserve(fwd.predictions.size());
    for (ad::NodeId id : fwd.predictions) preds.push_back(tape.value(id).data[0]);
    return preds;
  });
}

double baseline_mean_rating(const CrossDomainSplit& split, const DomainDataset& target) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (const auto& id : split.train_users) {
    auto it = target.user_index.find(id);
    if (it == target.user_index.end()) continue;
    for (const auto& row : target.user_rows(it->second)) {
      sum += row.rating;
      ++n;
    }
  }
  if (n == 0) throw EvalError("baseline_mean: no visible target ratings");
  return sum / static_cast<double>(n);
}

MetricsReport baseline_mean(const CrossDomainSplit& split, const DomainDataset& source,
                            const DomainDataset& target, const EvalConfig& cfg) {
  const double mean = baseline_mean_rating(split, target);
  return run_eval_loop(split, source, target, cfg, [&](const Task& task) {
    return std::vector<double>(task.query.size(), mean);
  });
}

std::vector<RankedItem> predict_user(ModelParams& params, const UnionUserIndex& users,
                                     const DomainDataset& source, const DomainDataset& target,
                                     const std::string& user_id,
                                     std::span<const std::string> candidate_items,
                                     const Task& support_task, const EvalConfig& cfg) {
  auto uit = source.user_index.find(user_id);
  if (uit == source.user_index.end()) {
    throw LookupError("predict_user: user '" + user_id + "' has no source history");
  }
  if (candidate_items.empty()) throw ContractError("predict_user: no candidate items");

  // Dedup keeping first occurrence.
  std::vector<std::int32_t> items;
  std::unordered_set<std::int32_t> seen;
  for (const auto& id : candidate_items) {
    const std::int32_t dense = target.item_dense(id);
    if (seen.insert(dense).second) items.push_back(dense);
  }

  Task task;
  task.phase = Phase::kTesting;
  task.support = support_task.support;
  const auto history = build_history(source, uit->second, cfg.task.history_len);
  RatingExample proto;
  proto.user = uit->second;
  proto.history.reserve(history.size());
  for (const auto& h : history) proto.history.push_back(h.item);
  for (std::int32_t item : items) {
    RatingExample ex = proto;
    ex.candidate_item = item;
    task.query.push_back(std::move(ex));
  }

  ad::Tape tape;
  const ForwardResult fwd = forward_task(tape, params, users, task, Phase::kTesting,
                                         nullptr, cfg.ablations, LatentMode::kMean);

  std::vector<std::pair<std::int32_t, double>> scored;
  scored.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    scored.emplace_back(items[i], tape.value(fwd.predictions[i]).data[0]);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<RankedItem> ranked;
  ranked.reserve(scored.size());
  for (const auto& [dense, score] : scored) {
    ranked.push_back({target.item_ids[static_cast<std::size_t>(dense)], score});
  }
  return ranked;
}

void write_metrics_report(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\n"
                "  \"mae\": %.17g,\n"
                "  \"rmse\": %.17g,\n"
                "  \"macro_mae\": %.17g,\n"
                "  \"macro_rmse\": %.17g,\n"
                "  \"n_examples\": %lld,\n"
                "  \"n_users\": %d,\n"
                "  \"n_skipped_users\": %d,\n"
                "  \"config_hash\": \"%s\",\n"
                "  \"seed\": %llu\n"
                "}\n",
                report.mae, report.rmse, report.macro_mae, report.macro_rmse,
                static_cast<long long>(report.n_examples), report.n_users,
                report.n_skipped_users, report.config_hash.c_str(),
                static_cast<unsigned long long>(report.seed));
  out << buf;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::string format_metrics_table(const MetricsReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "metric        value\n"
                "------------  ----------\n"
                "MAE           %10.4f\n"
                "RMSE          %10.4f\n"
                "macro MAE     %10.4f\n"
                "macro RMSE    %10.4f\n"
                "examples      %10lld\n"
                "users         %10d\n"
                "skipped       %10d\n",
                report.mae, report.rmse, report.macro_mae, report.macro_rmse,
                static_cast<long long>(report.n_examples), report.n_users,
                report.n_skipped_users);
  return buf;
}

}  // namespace cdrnp
