#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cigar/embedding.hpp"

namespace cigar {

// Padded entries carry this distance (their true distance was never
// computed; they were appended by popularity).
inline constexpr uint32_t kPaddedDistance = UINT32_MAX;

// Items ordered by non-decreasing Hamming distance to the query, ties by
// ascending id.
struct CandidateList {
  std::vector<uint32_t> items;
  std::vector<uint32_t> distances;

  size_t size() const { return items.size(); }
};

// Item codes split into m substrings, each indexed by its own table; probing
// every bucket within a small radius per table reaches all items within the
// corresponding full-code radius without scanning the corpus.
class MultiIndexHashTable {
 public:
  MultiIndexHashTable() = default;

  uint32_t num_tables() const { return m_; }
  uint32_t bits() const { return bits_; }
  uint32_t substring_bits() const { return substring_bits_; }
  uint32_t num_items() const { return codes_.rows(); }
  const BinaryCodeMatrix& item_codes() const { return codes_; }

  std::span<const uint32_t> bucket(uint32_t table, uint32_t key) const;
  uint32_t substring(std::span<const uint64_t> code, uint32_t table) const;

  void save(const std::string& path) const;
  static MultiIndexHashTable load(const std::string& path);

  friend MultiIndexHashTable build_index(const BinaryCodeMatrix& item_codes, uint32_t m);

 private:
  struct Table {
    bool dense = false;
    std::vector<uint32_t> offsets;  // dense: 2^substring_bits + 1 entries
    std::unordered_map<uint32_t, std::pair<uint32_t, uint32_t>> ranges;  // sparse
    std::vector<uint32_t> items;
  };

  uint32_t m_ = 0;
  uint32_t bits_ = 0;
  uint32_t substring_bits_ = 0;
  BinaryCodeMatrix codes_;
  std::vector<Table> tables_;
};

// Default substring count by catalogue size.
uint32_t default_num_tables(uint32_t num_items);

// Inserts every item into one bucket per table, keyed by the item's j-th
// substring. Requires bits % m == 0 and bits/m <= 32.
MultiIndexHashTable build_index(const BinaryCodeMatrix& item_codes, uint32_t m);

// Reusable per-thread query workspace (dedup stamps + gathered ids). Queries
// never mutate the index, so one scratch per thread makes concurrent reads
// safe.
struct QueryScratch {
  std::vector<uint32_t> stamp;
  uint32_t version = 0;
  std::vector<uint32_t> gathered;
};

struct QueryResult {
  CandidateList candidates;
  // Largest probe radius fully applied to every table before the search
  // stopped; items within full-code distance m*(completed_radius+1)-1 are all
  // present in the probed union.
  uint32_t completed_radius = 0;
};

// Adaptive-radius lookup: probe buckets at substring distance l = 0,1,...
// across all tables, growing l until at least c distinct items are gathered
// or l_max is exhausted, then keep the c nearest by full-code distance. May
// return fewer than c items.
QueryResult query_with_info(const MultiIndexHashTable& index, std::span<const uint64_t> code,
                            uint32_t c, uint32_t l_max, QueryScratch& scratch);

CandidateList query(const MultiIndexHashTable& index, std::span<const uint64_t> code, uint32_t c,
                    uint32_t l_max, QueryScratch& scratch);
CandidateList query(const MultiIndexHashTable& index, std::span<const uint64_t> code, uint32_t c,
                    uint32_t l_max);

// Exact c nearest items by Hamming distance over the whole catalogue, ties by
// ascending id. Oracle for the index and the exhaustive-search baseline.
CandidateList linear_scan_topc(const BinaryCodeMatrix& item_codes,
                               std::span<const uint64_t> code, uint32_t c);

// Fills a short candidate list up to c items with the most popular items not
// already present and not excluded. exclude must be sorted ascending.
CandidateList pad_candidates(CandidateList candidates, uint32_t c,
                             const std::vector<uint32_t>& popularity_ranking,
                             std::span<const uint32_t> exclude);

// Candidate pipeline for one user: query, drop excluded (training) items,
// pad back to c by popularity.
CandidateList retrieve_candidates(const MultiIndexHashTable& index,
                                  std::span<const uint64_t> user_code, uint32_t c, uint32_t l_max,
                                  std::span<const uint32_t> exclude,
                                  const std::vector<uint32_t>& popularity_ranking,
                                  QueryScratch& scratch);

}  // namespace cigar
