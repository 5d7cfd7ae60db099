#include "cdrnp/task.hpp"

#include <algorithm>
#include <unordered_set>

namespace cdrnp {

std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  if (k > n) throw ContractError("sample_without_replacement: k > n");
  if (k == 0) return {};
  // Partial Fisher-Yates for dense draws, rejection when the pool is large.
  if (n < 4 * k || n < 1024) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }
  std::vector<std::size_t> out;
  out.reserve(k);
  std::unordered_set<std::size_t> seen;
  while (out.size() < k) {
    const auto j = static_cast<std::size_t>(rng.below(n));
    if (seen.insert(j).second) out.push_back(j);
  }
  return out;
}

namespace {

// Latest rating wins for duplicate (user, item) pairs, so every pool entry
// is a distinct pair and support/query disjointness follows from distinct
// draws.
template <typename Push>
void for_each_deduped(const DomainDataset& ds, std::int32_t user, Push&& push) {
  const auto rows = ds.user_rows(user);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    bool last = true;
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      if (rows[j].item == rows[i].item) {
        last = false;
        break;
      }
    }
    if (last) push(rows[i]);
  }
}

}  // namespace

TaskBuilder::TaskBuilder(const CrossDomainSplit& split, const DomainDataset& source,
                         const DomainDataset& target)
    : source_(source), target_(target) {
  for (const auto& id : split.train_users) {
    auto su = source.user_index.find(id);
    auto tu = target.user_index.find(id);
    if (su == source.user_index.end() || tu == target.user_index.end()) continue;
    const std::int32_t src_user = su->second;
    for_each_deduped(target, tu->second, [&](const DomainDataset::Row& row) {
      train_pool_.push_back({src_user, row.item, row.rating});
    });
  }
  for (const auto& id : split.test_users) {
    auto su = source.user_index.find(id);
    auto tu = target.user_index.find(id);
    if (su == source.user_index.end()) continue;
    auto& pool = test_pools_[id];
    if (tu == target.user_index.end()) continue;  // no target ratings: empty pool
    const std::int32_t src_user = su->second;
    for_each_deduped(target, tu->second, [&](const DomainDataset::Row& row) {
      pool.push_back({src_user, row.item, row.rating});
    });
  }
}

RatingExample TaskBuilder::make_example(const Triple& t, int history_len) const {
  RatingExample ex;
  ex.user = t.src_user;
  const auto history = build_history(source_, t.src_user, history_len);
  ex.history.reserve(history.size());
  for (const auto& h : history) ex.history.push_back(h.item);
  ex.candidate_item = t.tgt_item;
  ex.rating = t.rating;
  return ex;
}

std::vector<RatingExample> TaskBuilder::sample_support(Rng& rng, const TaskConfig& cfg) const {
  const auto need = static_cast<std::size_t>(cfg.support_size);
  if (train_pool_.size() < need) {
    throw TaskError("support set needs " + std::to_string(need) + " triples, pool has " +
                    std::to_string(train_pool_.size()));
  }
  auto idx = sample_without_replacement(rng, train_pool_.size(), need);
  std::vector<RatingExample> support;
  support.reserve(need);
  for (std::size_t i : idx) support.push_back(make_example(train_pool_[i], cfg.history_len));
  return support;
}

Task TaskBuilder::training_task(Rng& rng, const TaskConfig& cfg) const {
  const auto need = static_cast<std::size_t>(cfg.support_size) +
                    static_cast<std::size_t>(cfg.query_size);
  if (cfg.support_size <= 0 || cfg.query_size <= 0) {
    throw ContractError("training_task: support/query sizes must be positive");
  }
  if (train_pool_.size() < need) {
    throw TaskError("task needs " + std::to_string(need) + " triples, pool has " +
                    std::to_string(train_pool_.size()));
  }
  auto idx = sample_without_replacement(rng, train_pool_.size(), need);
  Task task;
  task.phase = Phase::kTraining;
  task.support.reserve(static_cast<std::size_t>(cfg.support_size));
  task.query.reserve(static_cast<std::size_t>(cfg.query_size));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto ex = make_example(train_pool_[idx[i]], cfg.history_len);
    if (i < static_cast<std::size_t>(cfg.support_size)) {
      task.support.push_back(std::move(ex));
    } else {
      task.query.push_back(std::move(ex));
    }
  }
  return task;
}

std::optional<Task> TaskBuilder::testing_task(const std::string& cold_user, Rng& rng,
                                              const TaskConfig& cfg) const {
  auto it = test_pools_.find(cold_user);
  if (it == test_pools_.end()) {
    throw ContractError("testing_task: '" + cold_user + "' is not a designated test user");
  }
  if (it->second.empty()) return std::nullopt;  // skip signal

  Task task;
  task.phase = Phase::kTesting;
  task.support = sample_support(rng, cfg);
  task.query.reserve(it->second.size());
  for (const auto& t : it->second) task.query.push_back(make_example(t, cfg.history_len));
  return task;
}

}  // namespace cdrnp
