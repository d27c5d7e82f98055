#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cigar/error.hpp"

namespace cigar {

// One implicit-feedback event. Ids are the raw ids from the log until
// leave_one_out_split remaps them to dense ranges. Ratings are discarded at
// parse time (every action counts as positive feedback); the timestamp is
// kept for provenance only, -1 when the log has none.
struct Interaction {
  int64_t user = 0;
  int64_t item = 0;
  int64_t timestamp = -1;

  bool operator==(const Interaction&) const = default;
};

enum class LogFormat {
  Csv,        // user,item[,rating][,timestamp]
  Tsv,        // same columns, tab-separated
  MovieLens,  // user::item::rating::timestamp
};

std::optional<LogFormat> parse_log_format(const std::string& name);

// Parses a feedback log. Duplicate (user,item) pairs collapse to the first
// occurrence. A malformed line raises a parse error carrying the line number;
// a file with no interactions raises an empty-dataset error.
std::vector<Interaction> load_interactions(const std::string& path, LogFormat format);

// Iteratively removes users and items with fewer than k interactions until a
// fixed point. The result is the maximal k-core (independent of removal
// order). Raises an empty error naming k when nothing survives.
std::vector<Interaction> kcore_filter(std::vector<Interaction> interactions, uint32_t k);

// Drops the top_percent% most-interacted items (popularity outliers) before
// filtering. top_percent is in percent, e.g. 0.1 drops the top 0.1%.
std::vector<Interaction> drop_most_popular(std::vector<Interaction> interactions,
                                           double top_percent);

// Train/valid/test partition with dense ids. For every user, one event is
// held out for validation and one for test; the remainder trains.
struct InteractionDataset {
  uint32_t num_users = 0;
  uint32_t num_items = 0;
  std::vector<std::vector<uint32_t>> train;  // per user, sorted ascending
  std::vector<uint32_t> valid;               // one item per user
  std::vector<uint32_t> test;                // one item per user
  std::vector<int64_t> user_ids;             // dense id -> original id
  std::vector<int64_t> item_ids;

  bool in_train(uint32_t user, uint32_t item) const;
  size_t train_size() const;  // total training interactions

  // Items interacted with in train, per item. Used by the POP baseline and
  // candidate padding.
  std::vector<uint32_t> train_counts() const;
  // All items ordered by descending train popularity, ties by ascending id.
  std::vector<uint32_t> popularity_ranking() const;

  std::optional<uint32_t> lookup_user(int64_t original_id) const;
  std::optional<uint32_t> lookup_item(int64_t original_id) const;

  void save(const std::string& path) const;
  static InteractionDataset load(const std::string& path);

 private:
  mutable std::unordered_map<int64_t, uint32_t> user_index_;  // built lazily
  mutable std::unordered_map<int64_t, uint32_t> item_index_;
};

// Remaps ids densely by first appearance and holds out one validation and one
// test action per user, both chosen uniformly at random. Every user must have
// at least 3 interactions.
InteractionDataset leave_one_out_split(const std::vector<Interaction>& interactions,
                                       uint64_t seed);

}  // namespace cigar
