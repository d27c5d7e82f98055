#include <algorithm>
#include <cmath>

#include "cigar/eval.hpp"
#include "common.hpp"
#include "doctest.h"

using namespace cigar;

namespace {

// Dataset where every user's interactions are explicit so score tables can be
// crafted around them.
InteractionDataset grid_dataset(uint32_t users, uint32_t items, uint64_t seed) {
  return testutil::make_clustered_dataset(users, items, 4, 5, seed);
}

}  // namespace

TEST_CASE("a perfect model scores HR = MRR = 1") {
  auto ds = grid_dataset(12, 24, 3);
  std::vector<std::vector<double>> scores(ds.num_users, std::vector<double>(ds.num_items, 0.0));
  for (uint32_t u = 0; u < ds.num_users; ++u) scores[u][ds.test[u]] = 1.0;
  auto model = testutil::make_score_model(scores);
  auto report = evaluate_full(model, ds, 10, Split::Test);
  CHECK(report.hr == doctest::Approx(1.0));
  CHECK(report.mrr == doctest::Approx(1.0));
  CHECK(report.num_users == ds.num_users);
}

TEST_CASE("a rank-three model scores HR 1 and MRR 1/3") {
  auto ds = grid_dataset(10, 30, 5);
  std::vector<std::vector<double>> scores(ds.num_users, std::vector<double>(ds.num_items, 0.0));
  for (uint32_t u = 0; u < ds.num_users; ++u) {
    // two non-train, non-held items outrank the held-out one
    scores[u][ds.test[u]] = 5.0;
    uint32_t placed = 0;
    for (uint32_t i = 0; i < ds.num_items && placed < 2; ++i) {
      if (i == ds.test[u] || ds.in_train(u, i)) continue;
      scores[u][i] = 10.0 - placed;
      ++placed;
    }
  }
  auto model = testutil::make_score_model(scores);
  auto report = evaluate_full(model, ds, 10, Split::Test, /*keep_ranks=*/true);
  CHECK(report.hr == doctest::Approx(1.0));
  CHECK(report.mrr == doctest::Approx(1.0 / 3.0));
  for (uint32_t rank : report.per_user_ranks) CHECK(rank == 3);
}

TEST_CASE("random scores hit at roughly the uniform rate") {
  auto ds = grid_dataset(2000, 100, 7);
  Rng rng(99);
  std::vector<std::vector<double>> scores(ds.num_users, std::vector<double>(ds.num_items));
  for (auto& row : scores)
    for (auto& s : row) s = rng.uniform_double();
  auto model = testutil::make_score_model(scores);
  auto report = evaluate_full(model, ds, 10, Split::Test);
  // rank is uniform over the non-train pool (~95 items): expect ~10/95
  CHECK(report.hr > 0.07);
  CHECK(report.hr < 0.14);
}

TEST_CASE("metric bounds and monotonicity in N") {
  auto ds = grid_dataset(50, 40, 11);
  Rng rng(1);
  std::vector<std::vector<double>> scores(ds.num_users, std::vector<double>(ds.num_items));
  for (auto& row : scores)
    for (auto& s : row) s = rng.uniform_double();
  auto model = testutil::make_score_model(scores);

  double prev_hr = 0.0, prev_mrr = 0.0;
  for (uint32_t n : {1, 2, 5, 10, 20, 40}) {
    auto report = evaluate_full(model, ds, n, Split::Valid);
    CHECK(report.mrr <= report.hr + 1e-12);
    CHECK(report.hr <= 1.0);
    CHECK(report.mrr >= 0.0);
    CHECK(report.hr >= prev_hr - 1e-12);
    CHECK(report.mrr >= prev_mrr - 1e-12);
    prev_hr = report.hr;
    prev_mrr = report.mrr;
  }
}

TEST_CASE("exhaustive candidates make the pipeline equal full evaluation") {
  auto ds = grid_dataset(40, 60, 13);
  auto hash = train_hashrec(ds, [] {
    HashRecConfig c;
    c.bits = 16;
    c.num_epochs = 5;
    c.iters_per_epoch = 5;
    c.batch_size = 128;
    c.eval_every = 0;
    return c;
  }());
  auto index = build_index(hash.model.item_codes, 4);

  RerankConfig rc;
  rc.kind = RankerKind::BprMf;
  rc.k = 6;
  rc.num_epochs = 5;
  rc.iters_per_epoch = 5;
  rc.batch_size = 128;
  rc.eval_every = 0;
  auto ranker = train_ranker(ds, rc).model;

  for (auto split : {Split::Valid, Split::Test}) {
    auto full = evaluate_full(ranker, ds, 10, split);
    auto piped = evaluate_cigar(hash.model.user_codes, index, ranker, ds, 10, ds.num_items,
                                /*l_max=*/1, split);
    CHECK(piped.hr == full.hr);
    CHECK(piped.mrr == full.mrr);
  }
}

TEST_CASE("the pipeline cannot beat its candidate stage") {
  auto ds = grid_dataset(60, 80, 17);
  auto hash = train_hashrec(ds, [] {
    HashRecConfig c;
    c.bits = 16;
    c.num_epochs = 8;
    c.iters_per_epoch = 5;
    c.batch_size = 128;
    c.eval_every = 0;
    return c;
  }());
  auto index = build_index(hash.model.item_codes, 4);

  RerankConfig rc;
  rc.kind = RankerKind::BprMf;
  rc.k = 6;
  rc.num_epochs = 5;
  rc.iters_per_epoch = 5;
  rc.batch_size = 128;
  rc.eval_every = 0;
  auto ranker = train_ranker(ds, rc).model;

  const uint32_t c = 15;
  auto stage = evaluate_candidates(hash.model.user_codes, index, ds, c, 1, Split::Test);
  auto piped = evaluate_cigar(hash.model.user_codes, index, ranker, ds, 10, c, 1, Split::Test);
  CHECK(piped.hr <= stage.hr + 1e-12);
  CHECK(stage.n == c);
}

TEST_CASE("reports render as json and aligned text") {
  EvalReport report;
  report.hr = 0.25;
  report.mrr = 0.125;
  report.n = 10;
  report.num_users = 8;
  auto json = report.to_json();
  CHECK(json.find("\"hr\":0.25") != std::string::npos);
  CHECK(json.find("\"n\":10") != std::string::npos);
  auto table = report.to_table();
  CHECK(table.find("HR") != std::string::npos);
  CHECK(table.find("MRR") != std::string::npos);
}

TEST_CASE("bench produces per-run rows plus aggregates, and none for zero queries") {
  auto ds = grid_dataset(30, 40, 19);
  auto user_codes = testutil::random_codes(ds.num_users, 32, 2);
  auto item_codes = testutil::random_codes(ds.num_items, 32, 3);
  auto index = build_index(item_codes, 4);

  RankerModel model;
  model.kind = RankerKind::BprMf;
  Rng rng(4);
  model.user_emb = DenseEmbeddingMatrix::random_uniform(ds.num_users, 4, -0.5, 0.5, rng);
  model.item_emb = DenseEmbeddingMatrix::random_uniform(ds.num_items, 4, -0.5, 0.5, rng);

  BenchConfig config;
  config.num_queries = 20;
  config.repeats = 3;
  config.warmup = 5;
  config.c = 10;

  auto methods = {BenchMethod::LinearReal, BenchMethod::LinearHamming, BenchMethod::Mih,
                  BenchMethod::CigarPipeline};
  auto results = bench_retrieval(methods, ds, user_codes, index, &model, config);
  CHECK(results.size() == 4 * (3 + 1));
  uint32_t aggregates = 0;
  for (const auto& r : results) {
    if (r.run == 0) {
      ++aggregates;
      CHECK(r.total_stddev_ms >= 0.0);
    } else {
      CHECK(r.queries == 20);
      CHECK(r.total_ms >= 0.0);
      CHECK(r.p50_us <= r.p99_us + 1e-9);
    }
  }
  CHECK(aggregates == 4);

  auto csv = bench_to_csv(results);
  CHECK(csv.find("method,run,queries") != std::string::npos);
  CHECK(csv.find("linear-hamming") != std::string::npos);

  config.num_queries = 0;
  auto empty = bench_retrieval({BenchMethod::Mih}, ds, user_codes, index, nullptr, config);
  CHECK(empty.empty());

  CHECK_THROWS_AS(bench_retrieval({BenchMethod::LinearReal}, ds, user_codes, index, nullptr, config),
                  Error);
}
