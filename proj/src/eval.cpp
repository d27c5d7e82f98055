#include "cigar/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "cigar/parallel.hpp"

namespace cigar {

namespace {

// 1-based rank of `target` when every item except `exclude` items is ordered
// by descending score, ties by ascending id. Returns 0 once the rank exceeds
// cutoff.
uint32_t full_rank_of(const RankerModel& model, const InteractionDataset& dataset, uint32_t user,
                      uint32_t target, uint32_t cutoff) {
  double target_score = model.score(user, target);
  uint32_t rank = 1;
  for (uint32_t i = 0; i < dataset.num_items; ++i) {
    if (i == target || dataset.in_train(user, i)) continue;
    double s = model.score(user, i);
    if (s > target_score || (s == target_score && i < target)) {
      if (++rank > cutoff) return 0;
    }
  }
  return rank;
}

EvalReport reduce_ranks(std::vector<uint32_t> ranks, uint32_t n, bool keep_ranks) {
  EvalReport report;
  report.n = n;
  report.num_users = static_cast<uint32_t>(ranks.size());
  uint64_t hits = 0;
  double mrr = 0.0;
  for (uint32_t rank : ranks) {
    if (rank >= 1 && rank <= n) {
      ++hits;
      mrr += 1.0 / rank;
    }
  }
  if (report.num_users > 0) {
    report.hr = static_cast<double>(hits) / report.num_users;
    report.mrr = mrr / report.num_users;
  }
  if (keep_ranks) report.per_user_ranks = std::move(ranks);
  return report;
}

const std::vector<uint32_t>& held_out(const InteractionDataset& dataset, Split split) {
  return split == Split::Valid ? dataset.valid : dataset.test;
}

}  // namespace

const char* split_name(Split split) { return split == Split::Valid ? "valid" : "test"; }

std::string EvalReport::to_json() const {
  std::ostringstream out;
  out.precision(10);
  out << "{\"n\":" << n << ",\"num_users\":" << num_users << ",\"hr\":" << hr
      << ",\"mrr\":" << mrr << "}";
  return out.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-12s %12s %12s %12s\n", "metric", "N", "users", "value");
  out << line;
  std::snprintf(line, sizeof(line), "%-12s %12u %12u %12.6f\n", "HR", n, num_users, hr);
  out << line;
  std::snprintf(line, sizeof(line), "%-12s %12u %12u %12.6f\n", "MRR", n, num_users, mrr);
  out << line;
  return out.str();
}

EvalReport evaluate_full(const RankerModel& model, const InteractionDataset& dataset, uint32_t n,
                         Split split, bool keep_ranks) {
  const auto& targets = held_out(dataset, split);
  std::vector<uint32_t> ranks(dataset.num_users, 0);
  parallel_for(dataset.num_users, [&](size_t begin, size_t end) {
    for (size_t u = begin; u < end; ++u)
      ranks[u] = full_rank_of(model, dataset, static_cast<uint32_t>(u), targets[u], n);
  });
  return reduce_ranks(std::move(ranks), n, keep_ranks);
}

EvalReport evaluate_cigar(const BinaryCodeMatrix& user_codes, const MultiIndexHashTable& index,
                          const RankerModel& model, const InteractionDataset& dataset, uint32_t n,
                          uint32_t c, uint32_t l_max, Split split, bool keep_ranks) {
  const auto& targets = held_out(dataset, split);
  auto popularity = dataset.popularity_ranking();
  std::vector<uint32_t> ranks(dataset.num_users, 0);
  parallel_for(dataset.num_users, [&](size_t begin, size_t end) {
    QueryScratch scratch;
    for (size_t uu = begin; uu < end; ++uu) {
      uint32_t u = static_cast<uint32_t>(uu);
      auto candidates = retrieve_candidates(index, user_codes.row(u), c, l_max,
                                            dataset.train[u], popularity, scratch);
      auto top = rerank(model, u, candidates, n, dataset.train[u]);
      for (size_t pos = 0; pos < top.size(); ++pos) {
        if (top[pos] == targets[u]) {
          ranks[u] = static_cast<uint32_t>(pos) + 1;
          break;
        }
      }
    }
  });
  return reduce_ranks(std::move(ranks), n, keep_ranks);
}

EvalReport evaluate_candidates(const BinaryCodeMatrix& user_codes,
                               const MultiIndexHashTable& index,
                               const InteractionDataset& dataset, uint32_t c, uint32_t l_max,
                               Split split, bool keep_ranks) {
  const auto& targets = held_out(dataset, split);
  auto popularity = dataset.popularity_ranking();
  std::vector<uint32_t> ranks(dataset.num_users, 0);
  parallel_for(dataset.num_users, [&](size_t begin, size_t end) {
    QueryScratch scratch;
    for (size_t uu = begin; uu < end; ++uu) {
      uint32_t u = static_cast<uint32_t>(uu);
      auto candidates = retrieve_candidates(index, user_codes.row(u), c, l_max,
                                            dataset.train[u], popularity, scratch);
      for (size_t pos = 0; pos < candidates.items.size(); ++pos) {
        if (candidates.items[pos] == targets[u]) {
          ranks[u] = static_cast<uint32_t>(pos) + 1;
          break;
        }
      }
    }
  });
  return reduce_ranks(std::move(ranks), c, keep_ranks);
}

const char* bench_method_name(BenchMethod method) {
  switch (method) {
    case BenchMethod::LinearReal: return "linear-real";
    case BenchMethod::LinearHamming: return "linear-hamming";
    case BenchMethod::Mih: return "mih";
    case BenchMethod::CigarPipeline: return "cigar-pipeline";
  }
  return "?";
}

namespace {

// Top-N by model score over the whole catalogue with a bounded heap.
void linear_real_topn(const RankerModel& model, uint32_t user, uint32_t n,
                      std::vector<std::pair<double, uint32_t>>& heap) {
  heap.clear();
  // ordering "better" as less makes heap.front() the worst kept entry
  auto better = [](const std::pair<double, uint32_t>& a, const std::pair<double, uint32_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  for (uint32_t i = 0; i < model.num_items(); ++i) {
    double s = model.score(user, i);
    if (heap.size() < n) {
      heap.emplace_back(s, i);
      std::push_heap(heap.begin(), heap.end(), better);
    } else if (!heap.empty() && better(std::make_pair(s, i), heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), better);
      heap.back() = {s, i};
      std::push_heap(heap.begin(), heap.end(), better);
    }
  }
}

}  // namespace

std::vector<BenchResult> bench_retrieval(const std::vector<BenchMethod>& methods,
                                         const InteractionDataset& dataset,
                                         const BinaryCodeMatrix& user_codes,
                                         const MultiIndexHashTable& index,
                                         const RankerModel* model, const BenchConfig& config) {
  using clock = std::chrono::steady_clock;

  for (BenchMethod method : methods)
    if ((method == BenchMethod::LinearReal || method == BenchMethod::CigarPipeline) && !model)
      throw Error(ErrorCode::InvalidArgument,
                  std::string(bench_method_name(method)) + " benchmark needs a ranking model");

  std::vector<BenchResult> results;
  if (config.num_queries == 0) return results;

  std::vector<uint32_t> queries(config.num_queries);
  Rng rng(config.seed);
  for (auto& q : queries) q = rng.uniform_u32(std::max(1u, dataset.num_users));

  QueryScratch scratch;
  std::vector<std::pair<double, uint32_t>> heap;

  for (BenchMethod method : methods) {
    auto run_query = [&](uint32_t user) {
      switch (method) {
        case BenchMethod::LinearReal:
          linear_real_topn(*model, user, config.top_n, heap);
          break;
        case BenchMethod::LinearHamming:
          linear_scan_topc(index.item_codes(), user_codes.row(user), config.c);
          break;
        case BenchMethod::Mih:
          query(index, user_codes.row(user), config.c, config.l_max, scratch);
          break;
        case BenchMethod::CigarPipeline: {
          auto candidates = query(index, user_codes.row(user), config.c, config.l_max, scratch);
          rerank(*model, user, candidates, config.top_n, {});
          break;
        }
      }
    };

    for (uint32_t w = 0; w < config.warmup && !queries.empty(); ++w)
      run_query(queries[w % queries.size()]);

    std::vector<double> mean_totals;
    for (uint32_t run = 0; run < config.repeats; ++run) {
      std::vector<double> lat_us;
      lat_us.reserve(queries.size());
      for (uint32_t user : queries) {
        auto t0 = clock::now();
        run_query(user);
        auto t1 = clock::now();
        lat_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
      }

      BenchResult r;
      r.method = bench_method_name(method);
      r.run = run + 1;
      r.queries = static_cast<uint32_t>(lat_us.size());
      for (double us : lat_us) r.total_ms += us / 1000.0;
      if (!lat_us.empty()) {
        r.mean_us = r.total_ms * 1000.0 / static_cast<double>(lat_us.size());
        std::sort(lat_us.begin(), lat_us.end());
        auto pct = [&](double p) {
          size_t idx = static_cast<size_t>(p * static_cast<double>(lat_us.size() - 1));
          return lat_us[idx];
        };
        r.p50_us = pct(0.50);
        r.p90_us = pct(0.90);
        r.p99_us = pct(0.99);
      }
      mean_totals.push_back(r.total_ms);
      results.push_back(r);
    }

    if (!mean_totals.empty()) {
      BenchResult agg;
      agg.method = std::string(bench_method_name(method)) + "/aggregate";
      agg.run = 0;
      agg.queries = static_cast<uint32_t>(queries.size());
      double mean = 0.0;
      for (double t : mean_totals) mean += t;
      mean /= static_cast<double>(mean_totals.size());
      double var = 0.0;
      for (double t : mean_totals) var += (t - mean) * (t - mean);
      var = mean_totals.size() > 1 ? var / static_cast<double>(mean_totals.size() - 1) : 0.0;
      agg.total_ms = mean;
      agg.total_stddev_ms = std::sqrt(var);
      agg.mean_us = queries.empty() ? 0.0 : mean * 1000.0 / static_cast<double>(queries.size());
      results.push_back(agg);
    }
  }
  return results;
}

std::string bench_to_csv(const std::vector<BenchResult>& results) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "method,run,queries,total_ms,total_stddev_ms,mean_us,p50_us,p90_us,p99_us\n";
  for (const auto& r : results)
    out << r.method << ',' << r.run << ',' << r.queries << ',' << r.total_ms << ','
        << r.total_stddev_ms << ',' << r.mean_us << ',' << r.p50_us << ',' << r.p90_us << ','
        << r.p99_us << '\n';
  return out.str();
}

}  // namespace cigar
