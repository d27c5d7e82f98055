#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cigar/dataset.hpp"
#include "cigar/mih.hpp"
#include "cigar/ranker.hpp"

namespace cigar {

enum class Split { Valid, Test };

const char* split_name(Split split);

// Leave-one-out metrics. per_user_ranks holds the 1-based rank of each user's
// held-out item (0 when it missed the cutoff); populated on request.
struct EvalReport {
  double hr = 0.0;
  double mrr = 0.0;
  uint32_t n = 0;
  uint32_t num_users = 0;
  std::vector<uint32_t> per_user_ranks;

  std::string to_json() const;
  std::string to_table() const;
};

// Ranks every item except the user's training items and checks where the
// held-out item lands. Ties break by ascending item id.
EvalReport evaluate_full(const RankerModel& model, const InteractionDataset& dataset, uint32_t n,
                         Split split, bool keep_ranks = false);

// Candidate pipeline: hash-table lookup, popularity padding, re-ranking. A
// held-out item outside the candidate set counts as a miss regardless of the
// re-ranker.
EvalReport evaluate_cigar(const BinaryCodeMatrix& user_codes, const MultiIndexHashTable& index,
                          const RankerModel& model, const InteractionDataset& dataset, uint32_t n,
                          uint32_t c, uint32_t l_max, Split split, bool keep_ranks = false);

// HR@c of the candidate stage alone: is the held-out item among the c
// candidates at all.
EvalReport evaluate_candidates(const BinaryCodeMatrix& user_codes,
                               const MultiIndexHashTable& index,
                               const InteractionDataset& dataset, uint32_t c, uint32_t l_max,
                               Split split, bool keep_ranks = false);

enum class BenchMethod {
  LinearReal,     // score all items with the ranker, bounded top-N heap
  LinearHamming,  // exhaustive Hamming scan over item codes
  Mih,            // multi-index lookup only
  CigarPipeline,  // multi-index lookup + re-rank the candidates
};

const char* bench_method_name(BenchMethod method);

struct BenchConfig {
  uint32_t num_queries = 1000;
  uint32_t repeats = 3;
  uint32_t warmup = 100;
  uint32_t top_n = 10;
  uint32_t c = 200;
  uint32_t l_max = 1;
  uint64_t seed = 42;
};

struct BenchResult {
  std::string method;
  uint32_t run = 0;  // 0 marks the aggregate row over all repeats
  uint32_t queries = 0;
  double total_ms = 0.0;        // aggregate row: mean over repeats
  double total_stddev_ms = 0.0; // aggregate row only
  double mean_us = 0.0;
  double p50_us = 0.0;
  double p90_us = 0.0;
  double p99_us = 0.0;
};

// Sequential per-query wall-clock timing on a single thread, one row per
// (method, repeat) plus an aggregate row with mean and stddev of total time.
std::vector<BenchResult> bench_retrieval(const std::vector<BenchMethod>& methods,
                                         const InteractionDataset& dataset,
                                         const BinaryCodeMatrix& user_codes,
                                         const MultiIndexHashTable& index,
                                         const RankerModel* model, const BenchConfig& config);

std::string bench_to_csv(const std::vector<BenchResult>& results);

}  // namespace cigar
