#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cdrnp/errors.hpp"

namespace cdrnp {

enum class DomainTag { kSource, kTarget };

// One raw rating record as it appears in the input file.
struct Interaction {
  std::string user;
  std::string item;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

// One domain's users, items and ratings with dense contiguous indices.
// Dense ids are assigned in first-appearance order over the records that
// survive min-count filtering; interactions are sorted by (user, timestamp).
class DomainDataset {
 public:
  DomainTag tag = DomainTag::kSource;

  struct Row {
    std::int32_t user = 0;
    std::int32_t item = 0;
    double rating = 0.0;
    std::int64_t timestamp = 0;
  };

  std::vector<std::string> user_ids;  // dense -> external
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, std::int32_t> user_index;  // external -> dense
  std::unordered_map<std::string, std::int32_t> item_index;
  std::vector<Row> interactions;
  std::vector<std::pair<std::int32_t, std::int32_t>> user_ranges;  // [begin, end) per user

  std::int32_t n_users() const { return static_cast<std::int32_t>(user_ids.size()); }
  std::int32_t n_items() const { return static_cast<std::int32_t>(item_ids.size()); }
  std::int64_t n_interactions() const { return static_cast<std::int64_t>(interactions.size()); }

  std::span<const Row> user_rows(std::int32_t user) const {
    const auto& [b, e] = user_ranges[static_cast<std::size_t>(user)];
    return {interactions.data() + b, static_cast<std::size_t>(e - b)};
  }

  std::int32_t user_dense(const std::string& external) const;
  std::int32_t item_dense(const std::string& external) const;
};

// Headerless CSV `user_id,item_id,rating,timestamp`. Users/items with fewer
// than min_count interactions are removed iteratively until a fixpoint.
DomainDataset load_ratings(const std::string& path, DomainTag tag, int min_count = 5);

// Same pipeline for in-memory records (synthetic data shares it with files).
DomainDataset dataset_from_interactions(std::vector<Interaction> records, DomainTag tag,
                                        int min_count = 5);

// CSV writer matching load_ratings; ratings are printed round-trip exact.
void write_ratings_csv(const std::string& path, const std::vector<Interaction>& records);

struct OverlapResult {
  std::vector<std::string> overlap;      // U^o, sorted external ids
  std::vector<std::string> source_only;  // source users absent from target, sorted
};

OverlapResult compute_overlap(const DomainDataset& source, const DomainDataset& target);

// Overlap users partitioned into meta-training users and users whose
// target-domain ratings are hidden to simulate cold start.
struct CrossDomainSplit {
  std::vector<std::string> overlap_users;  // sorted
  std::vector<std::string> train_users;    // sorted
  std::vector<std::string> test_users;     // sorted
  std::unordered_set<std::string> train_set;
  std::unordered_set<std::string> test_set;
  double alpha = 0.0;
  std::uint64_t seed = 0;
};

// Deterministic seeded shuffle; the first floor(alpha*N) users become test
// users, the rest train users.
CrossDomainSplit split_cold_start(const std::vector<std::string>& overlap, double alpha,
                                  std::uint64_t seed);

void write_split_manifest(const std::string& path, const CrossDomainSplit& split);

struct HistoryEntry {
  std::int32_t item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

// The user's source interactions in chronological order, truncated to the
// most recent max_len when longer.
std::vector<HistoryEntry> build_history(const DomainDataset& source, std::int32_t user,
                                        int max_len);
std::vector<HistoryEntry> build_history(const DomainDataset& source, const std::string& user,
                                        int max_len);

// Users of both domains in one stable index space: source users first in
// dense order, then target-only users. The user embedding table is keyed
// by this index so a shared user has a single embedding.
struct UnionUserIndex {
  std::vector<std::string> ids;            // union row -> external id
  std::unordered_map<std::string, std::int32_t> by_id;
  std::vector<std::int32_t> src_to_union;  // source dense -> union row
  std::vector<std::int32_t> tgt_to_union;  // target dense -> union row

  std::int32_t size() const { return static_cast<std::int32_t>(ids.size()); }

  static UnionUserIndex build(const DomainDataset& source, const DomainDataset& target);
};

}  // namespace cdrnp
