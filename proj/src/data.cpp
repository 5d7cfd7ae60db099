#include "cdrnp/data.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cdrnp/rng.hpp"

namespace cdrnp {

std::int32_t DomainDataset::user_dense(const std::string& external) const {
  auto it = user_index.find(external);
  if (it == user_index.end()) throw LookupError("unknown user id '" + external + "'");
  return it->second;
}

std::int32_t DomainDataset::item_dense(const std::string& external) const {
  auto it = item_index.find(external);
  if (it == item_index.end()) throw LookupError("unknown item id '" + external + "'");
  return it->second;
}

namespace {

double parse_rating(const std::string& field, std::size_t line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE) {
    throw ParseError("line " + std::to_string(line_no) + ": bad rating '" + field + "'");
  }
  if (!std::isfinite(v) || v < 0.0 || v > 5.0) {
    throw ValidationError("line " + std::to_string(line_no) + ": rating " + field +
                          " outside [0,5]");
  }
  return v;
}

std::int64_t parse_timestamp(const std::string& field, std::size_t line_no) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v, 10);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad timestamp '" + field + "'");
  }
  if (v < 0) {
    throw ValidationError("line " + std::to_string(line_no) + ": negative timestamp");
  }
  return v;
}

std::vector<Interaction> parse_csv(std::istream& in) {
  std::vector<Interaction> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 4> fields;
    std::size_t field = 0, start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (field >= 4) {
          throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields");
        }
        fields[field++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (field != 4) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                       std::to_string(field));
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty user or item id");
    }
    Interaction rec;
    rec.user = std::move(fields[0]);
    rec.item = std::move(fields[1]);
    rec.rating = parse_rating(fields[2], line_no);
    rec.timestamp = parse_timestamp(fields[3], line_no);
    records.push_back(std::move(rec));
  }
  return records;
}

// Drop users/items under min_count, repeating until stable (removing an
// item can push a user below the threshold and vice versa).
std::vector<char> min_count_mask(const std::vector<Interaction>& records, int min_count) {
  std::vector<char> keep(records.size(), 1);
  if (min_count <= 1) return keep;
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, int> user_count, item_count;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!keep[i]) continue;
      ++user_count[records[i].user];
      ++item_count[records[i].item];
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!keep[i]) continue;
      if (user_count[records[i].user] < min_count || item_count[records[i].item] < min_count) {
        keep[i] = 0;
        changed = true;
      }
    }
  }
  return keep;
}

}  // namespace

DomainDataset dataset_from_interactions(std::vector<Interaction> records, DomainTag tag,
                                        int min_count) {
  const auto keep = min_count_mask(records, min_count);

  DomainDataset ds;
  ds.tag = tag;
  std::vector<DomainDataset::Row> rows;
  rows.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!keep[i]) continue;
    const auto& rec = records[i];
    auto [uit, unew] = ds.user_index.try_emplace(
        rec.user, static_cast<std::int32_t>(ds.user_ids.size()));
    if (unew) ds.user_ids.push_back(rec.user);
    auto [iit, inew] = ds.item_index.try_emplace(
        rec.item, static_cast<std::int32_t>(ds.item_ids.size()));
    if (inew) ds.item_ids.push_back(rec.item);
    rows.push_back({uit->second, iit->second, rec.rating, rec.timestamp});
  }

  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });
  ds.interactions = std::move(rows);

  ds.user_ranges.assign(ds.user_ids.size(), {0, 0});
  for (std::size_t i = 0; i < ds.interactions.size();) {
    const std::int32_t u = ds.interactions[i].user;
    std::size_t j = i;
    while (j < ds.interactions.size() && ds.interactions[j].user == u) ++j;
    ds.user_ranges[static_cast<std::size_t>(u)] = {static_cast<std::int32_t>(i),
                                                   static_cast<std::int32_t>(j)};
    i = j;
  }
  return ds;
}

DomainDataset load_ratings(const std::string& path, DomainTag tag, int min_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ratings file '" + path + "'");
  auto records = parse_csv(in);
  return dataset_from_interactions(std::move(records), tag, min_count);
}

void write_ratings_csv(const std::string& path, const std::vector<Interaction>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char buf[64];
  for (const auto& rec : records) {
    // %.17g keeps doubles bit-exact across the write/load round trip
    std::snprintf(buf, sizeof(buf), "%.17g", rec.rating);
    out << rec.user << ',' << rec.item << ',' << buf << ',' << rec.timestamp << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

OverlapResult compute_overlap(const DomainDataset& source, const DomainDataset& target) {
  OverlapResult result;
  for (const auto& id : source.user_ids) {
    if (target.user_index.count(id)) {
      result.overlap.push_back(id);
    } else {
      result.source_only.push_back(id);
    }
  }
  std::sort(result.overlap.begin(), result.overlap.end());
  std::sort(result.source_only.begin(), result.source_only.end());
  return result;
}

CrossDomainSplit split_cold_start(const std::vector<std::string>& overlap, double alpha,
                                  std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ContractError("split_cold_start: alpha must be in (0,1), got " +
                        std::to_string(alpha));
  }
  if (overlap.size() < 2) {
    throw SplitError("split_cold_start: need at least 2 overlap users, have " +
                     std::to_string(overlap.size()));
  }

  CrossDomainSplit split;
  split.overlap_users = overlap;
  std::sort(split.overlap_users.begin(), split.overlap_users.end());
  split.alpha = alpha;
  split.seed = seed;

  std::vector<std::string> shuffled = split.overlap_users;
  Rng rng(derive_seed(seed, /*tag=*/0x5bb17));
  rng.shuffle(shuffled);

  const auto n_test = static_cast<std::size_t>(
      std::floor(alpha * static_cast<double>(shuffled.size())));
  split.test_users.assign(shuffled.begin(), shuffled.begin() + n_test);
  split.train_users.assign(shuffled.begin() + n_test, shuffled.end());
  std::sort(split.test_users.begin(), split.test_users.end());
  std::sort(split.train_users.begin(), split.train_users.end());
  split.test_set.insert(split.test_users.begin(), split.test_users.end());
  split.train_set.insert(split.train_users.begin(), split.train_users.end());
  return split;
}

void write_split_manifest(const std::string& path, const CrossDomainSplit& split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& id : split.test_users) out << id << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<HistoryEntry> build_history(const DomainDataset& source, std::int32_t user,
                                        int max_len) {
  if (max_len <= 0) throw ContractError("build_history: max_len must be positive");
  if (user < 0 || user >= source.n_users()) {
    throw LookupError("build_history: user index " + std::to_string(user) + " out of range");
  }
  const auto rows = source.user_rows(user);
  const std::size_t n = rows.size();
  const std::size_t take = std::min<std::size_t>(n, static_cast<std::size_t>(max_len));
  std::vector<HistoryEntry> history;
  history.reserve(take);
  for (std::size_t i = n - take; i < n; ++i) {
    history.push_back({rows[i].item, rows[i].rating, rows[i].timestamp});
  }
  return history;
}

std::vector<HistoryEntry> build_history(const DomainDataset& source, const std::string& user,
                                        int max_len) {
  return build_history(source, source.user_dense(user), max_len);
}

UnionUserIndex UnionUserIndex::build(const DomainDataset& source, const DomainDataset& target) {
  UnionUserIndex u;
  u.ids = source.user_ids;
  for (std::size_t i = 0; i < u.ids.size(); ++i) {
    u.by_id.emplace(u.ids[i], static_cast<std::int32_t>(i));
  }
  u.src_to_union.resize(source.user_ids.size());
  for (std::size_t i = 0; i < u.src_to_union.size(); ++i) {
    u.src_to_union[i] = static_cast<std::int32_t>(i);
  }
  u.tgt_to_union.resize(target.user_ids.size());
  for (std::size_t i = 0; i < target.user_ids.size(); ++i) {
    auto [it, inserted] = u.by_id.try_emplace(target.user_ids[i],
                                              static_cast<std::int32_t>(u.ids.size()));
    if (inserted) u.ids.push_back(target.user_ids[i]);
    u.tgt_to_union[i] = it->second;
  }
  return u;
}

}  // namespace cdrnp
