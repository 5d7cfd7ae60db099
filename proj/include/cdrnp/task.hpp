#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdrnp/data.hpp"
#include "cdrnp/rng.hpp"

namespace cdrnp {

// One rating-prediction instance: a user with their source-domain history
// and a candidate target-domain item. The rating is absent for pure
// prediction requests; in testing-phase query sets it is carried only so
// the evaluator can score predictions, never shown to the model.
struct RatingExample {
  std::int32_t user = -1;                // dense source-domain user index
  std::vector<std::int32_t> history;     // source items, chronological, never empty
  std::int32_t candidate_item = -1;      // dense target-domain item index
  std::optional<double> rating;
};

enum class Phase { kTraining, kTesting };

// One meta-learning episode: a support set conditioned on and a query set
// predicted. Training tasks draw both sides from train users; testing
// tasks pair a train-user support set with one cold-start user's queries.
struct Task {
  std::vector<RatingExample> support;
  std::vector<RatingExample> query;
  Phase phase = Phase::kTraining;
};

struct TaskConfig {
  int support_size = 40;
  int query_size = 40;
  int history_len = 20;
};

// Draw k distinct indices from [0, n). Deterministic given the rng.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k);

class TaskBuilder {
 public:
  TaskBuilder(const CrossDomainSplit& split, const DomainDataset& source,
              const DomainDataset& target);

  std::size_t train_pool_size() const { return train_pool_.size(); }

  // Sample support_size + query_size distinct (user, item, rating) triples
  // from the train-user pool, histories attached.
  Task training_task(Rng& rng, const TaskConfig& cfg) const;

  // Support from train users, query = every hidden target rating of the
  // cold-start user. Returns nullopt (skip signal) when the user has no
  // target interactions.
  std::optional<Task> testing_task(const std::string& cold_user, Rng& rng,
                                   const TaskConfig& cfg) const;

 private:
  struct Triple {
    std::int32_t src_user;
    std::int32_t tgt_item;
    double rating;
  };

  RatingExample make_example(const Triple& t, int history_len) const;
  std::vector<RatingExample> sample_support(Rng& rng, const TaskConfig& cfg) const;

  const DomainDataset& source_;
  const DomainDataset& target_;
  std::vector<Triple> train_pool_;
  // test user external id -> that user's deduplicated target pairs
  std::unordered_map<std::string, std::vector<Triple>> test_pools_;
};

}  // namespace cdrnp
