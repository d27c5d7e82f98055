#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "cigar/ranker.hpp"
#include "common.hpp"
#include "doctest.h"

using namespace cigar;

namespace {

RankerModel tiny_neumf(uint32_t users, uint32_t items, uint32_t k,
                       const std::vector<uint32_t>& arch, uint64_t seed, double scale = 0.4) {
  RankerModel model;
  model.kind = RankerKind::NeuMf;
  Rng rng(seed);
  model.user_emb = DenseEmbeddingMatrix::random_uniform(users, k, -scale, scale, rng);
  model.item_emb = DenseEmbeddingMatrix::random_uniform(items, k, -scale, scale, rng);
  model.user_emb_mlp = DenseEmbeddingMatrix::random_uniform(users, k, -scale, scale, rng);
  model.item_emb_mlp = DenseEmbeddingMatrix::random_uniform(items, k, -scale, scale, rng);
  uint32_t in_dim = 2 * k;
  for (uint32_t width : arch) {
    MlpLayer layer;
    layer.out_dim = width;
    layer.in_dim = in_dim;
    layer.weights.resize(static_cast<size_t>(width) * in_dim);
    for (double& w : layer.weights) w = rng.uniform_range(-scale, scale);
    layer.bias.resize(width);
    for (double& b : layer.bias) b = rng.uniform_range(-scale, scale);
    model.mlp.push_back(std::move(layer));
    in_dim = width;
  }
  model.output_w.resize(k + in_dim);
  for (double& w : model.output_w) w = rng.uniform_range(-scale, scale);
  return model;
}

InteractionDataset two_user_dataset() {
  InteractionDataset ds;
  ds.num_users = 2;
  ds.num_items = 2;
  ds.train = {{0}, {1}};
  ds.valid = {0, 1};
  ds.test = {0, 1};
  return ds;
}

}  // namespace

TEST_CASE("scores dispatch by model kind") {
  RankerModel mf;
  mf.kind = RankerKind::BprMf;
  mf.user_emb = DenseEmbeddingMatrix(1, 3);
  mf.item_emb = DenseEmbeddingMatrix(1, 3);
  mf.user_emb.row(0)[0] = 1.0;  // unit basis vector
  mf.item_emb.row(0)[0] = 1.0;
  CHECK(mf.score(0, 0) == doctest::Approx(1.0));

  RankerModel cml;
  cml.kind = RankerKind::Cml;
  cml.user_emb = DenseEmbeddingMatrix(1, 3);
  cml.item_emb = DenseEmbeddingMatrix(1, 3);
  for (uint32_t z = 0; z < 3; ++z) {
    cml.user_emb.row(0)[z] = 0.4;
    cml.item_emb.row(0)[z] = 0.4;
  }
  CHECK(cml.score(0, 0) == doctest::Approx(0.0));  // coincident points: maximal score

  RankerModel pop;
  pop.kind = RankerKind::Pop;
  pop.popularity = {5, 9, 2};
  CHECK(pop.score(123456, 1) == doctest::Approx(9.0));  // user-independent

  CHECK_THROWS_AS(mf.score(1, 0), Error);
  CHECK_THROWS_AS(mf.score(0, 7), Error);
}

TEST_CASE("neumf with a silent MLP path reduces to the GMF inner product") {
  auto model = tiny_neumf(2, 3, 4, {6, 3}, 123);
  for (auto& layer : model.mlp) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  for (size_t z = 0; z < model.output_w.size(); ++z)
    model.output_w[z] = z < 4 ? 1.0 : 0.0;  // select only the GMF slots

  for (uint32_t u = 0; u < 2; ++u)
    for (uint32_t i = 0; i < 3; ++i) {
      double direct = 0.0;
      for (uint32_t z = 0; z < 4; ++z) direct += model.user_emb.row(u)[z] * model.item_emb.row(i)[z];
      CHECK(model.score(u, i) == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("candidate-oriented sampling at h=0 equals plain sampling") {
  auto ds = testutil::make_clustered_dataset(30, 50, 5, 6, 19);
  CandidateCache cache;
  cache.c = 10;
  cache.per_user.assign(ds.num_users, {0, 1, 2, 3});

  Rng a(5), b(5);
  auto plain = sample_triplets(ds, 400, a);
  auto mixed = sample_candidate_oriented(ds, cache, 0.0, 400, b);
  REQUIRE(plain.size() == mixed.size());
  for (size_t i = 0; i < plain.size(); ++i) {
    CHECK(plain.triples[i].user == mixed.triples[i].user);
    CHECK(plain.triples[i].pos == mixed.triples[i].pos);
    CHECK(plain.triples[i].neg == mixed.triples[i].neg);
  }
}

TEST_CASE("candidate-oriented sampling at h=1 draws negatives from the candidates") {
  auto ds = testutil::make_clustered_dataset(30, 50, 5, 6, 19);
  auto codes = testutil::random_codes(ds.num_items, 32, 3);
  auto user_codes = testutil::random_codes(ds.num_users, 32, 4);
  auto index = build_index(codes, 4);
  auto cache = generate_candidates(ds, user_codes, index, 12, 1);

  Rng rng(9);
  SampleStats stats;
  auto batch = sample_candidate_oriented(ds, cache, 1.0, 2000, rng, &stats);
  for (const auto& t : batch.triples) {
    const auto& cand = cache.per_user[t.user];
    CHECK(std::find(cand.begin(), cand.end(), t.neg) != cand.end());
    CHECK_FALSE(ds.in_train(t.user, t.neg));
  }
  CHECK(stats.candidate_branch == 2000);
  CHECK(stats.global_branch == 0);
}

TEST_CASE("the mixing ratio concentrates around h") {
  auto ds = testutil::make_clustered_dataset(40, 80, 4, 6, 23);
  auto codes = testutil::random_codes(ds.num_items, 32, 5);
  auto user_codes = testutil::random_codes(ds.num_users, 32, 6);
  auto index = build_index(codes, 4);
  auto cache = generate_candidates(ds, user_codes, index, 15, 1);

  Rng rng(9);
  SampleStats stats;
  const uint32_t n = 100000;
  sample_candidate_oriented(ds, cache, 0.5, n, rng, &stats);
  double fraction = stats.candidate_fraction();
  double sigma = std::sqrt(0.25 / n);
  CHECK(std::abs(fraction - 0.5) < 3.0 * sigma);
}

TEST_CASE("bpr-mf training separates a two-user toy world") {
  auto ds = two_user_dataset();
  RerankConfig config;
  config.kind = RankerKind::BprMf;
  config.k = 4;
  config.lambda = 0.0;
  config.num_epochs = 40;
  config.iters_per_epoch = 10;
  config.batch_size = 32;
  config.learning_rate = 0.01;
  config.eval_every = 0;
  auto result = train_ranker(ds, config);
  CHECK(result.model.score(0, 0) > result.model.score(0, 1));
  CHECK(result.model.score(1, 1) > result.model.score(1, 0));
}

TEST_CASE("cml rows stay inside the unit ball") {
  auto ds = testutil::make_clustered_dataset(30, 40, 4, 6, 29);
  RerankConfig config;
  config.kind = RankerKind::Cml;
  config.k = 8;
  config.lambda = 0.0;
  config.margin = 0.5;
  config.num_epochs = 10;
  config.iters_per_epoch = 10;
  config.batch_size = 128;
  config.learning_rate = 0.01;
  config.eval_every = 0;
  auto result = train_ranker(ds, config);
  double max_norm = 0.0;
  for (const auto* mat : {&result.model.user_emb, &result.model.item_emb})
    for (uint32_t r = 0; r < mat->rows(); ++r) {
      double n2 = 0.0;
      for (double v : mat->row(r)) n2 += v * v;
      max_norm = std::max(max_norm, std::sqrt(n2));
    }
  CHECK(max_norm <= 1.0 + 1e-6);
}

TEST_CASE("rerank picks the max-scoring candidate and honours exclusions") {
  std::vector<std::vector<double>> scores = {{0.1, 0.9, 0.5, 0.3}};
  auto model = testutil::make_score_model(scores);
  CandidateList cands;
  cands.items = {0, 1, 2, 3};
  cands.distances = {0, 0, 0, 0};

  auto top1 = rerank(model, 0, cands, 1, {});
  REQUIRE(top1.size() == 1);
  CHECK(top1[0] == 1);

  std::vector<uint32_t> all = {0, 1, 2, 3};
  CHECK(rerank(model, 0, cands, 2, all).empty());

  auto top4 = rerank(model, 0, cands, 4, {});
  CHECK(top4 == std::vector<uint32_t>{1, 2, 3, 0});  // recomputed ordering
}

TEST_CASE("rerank output does not depend on candidate order") {
  Rng rng(61);
  std::vector<std::vector<double>> scores(1, std::vector<double>(30));
  for (auto& s : scores[0]) s = rng.uniform_double();
  scores[0][4] = scores[0][9];  // force a tie
  auto model = testutil::make_score_model(scores);

  CandidateList forward, backward;
  for (uint32_t i = 0; i < 30; ++i) forward.items.push_back(i);
  backward.items.assign(forward.items.rbegin(), forward.items.rend());
  forward.distances.assign(30, 0);
  backward.distances.assign(30, 0);

  CHECK(rerank(model, 0, forward, 10, {}) == rerank(model, 0, backward, 10, {}));
}

TEST_CASE("quantization keeps scores of sign-valued factors and handles sgn(0)") {
  Rng rng(71);
  RankerModel mf;
  mf.kind = RankerKind::BprMf;
  mf.user_emb = DenseEmbeddingMatrix(4, 16);
  mf.item_emb = DenseEmbeddingMatrix(6, 16);
  for (auto* mat : {&mf.user_emb, &mf.item_emb})
    for (double& v : mat->values()) v = rng.next_u64() & 1 ? 1.0 : -1.0;

  auto bprb = quantize_to_bprb(mf);
  CHECK(bprb.kind == RankerKind::BprB);
  for (uint32_t u = 0; u < 4; ++u)
    for (uint32_t i = 0; i < 6; ++i)
      CHECK(bprb.score(u, i) == doctest::Approx(mf.score(u, i)).epsilon(1e-12));

  RankerModel zeros;
  zeros.kind = RankerKind::BprMf;
  zeros.user_emb = DenseEmbeddingMatrix(1, 8);
  zeros.item_emb = DenseEmbeddingMatrix(1, 8);
  auto quantized = quantize_to_bprb(zeros);
  for (uint32_t b = 0; b < 8; ++b) CHECK(quantized.user_codes.sign(0, b) == 1);
  CHECK(quantized.score(0, 0) == doctest::Approx(8.0));  // identical all-ones codes

  RankerModel cml;
  cml.kind = RankerKind::Cml;
  CHECK_THROWS_AS(quantize_to_bprb(cml), Error);
}

TEST_CASE("pairwise losses ignore a constant shift of all item scores") {
  Rng rng(81);
  TripletBatch batch;
  for (int t = 0; t < 10; ++t)
    batch.triples.push_back({rng.uniform_u32(3), rng.uniform_u32(5), rng.uniform_u32(5)});

  // bpr-mf: augment one dimension so every item score gains exactly +shift
  RankerModel base;
  base.kind = RankerKind::BprMf;
  base.user_emb = DenseEmbeddingMatrix::random_uniform(3, 4, -0.5, 0.5, rng);
  base.item_emb = DenseEmbeddingMatrix::random_uniform(5, 4, -0.5, 0.5, rng);

  const double shift = 7.5;
  RankerModel shifted;
  shifted.kind = RankerKind::BprMf;
  shifted.user_emb = DenseEmbeddingMatrix(3, 5);
  shifted.item_emb = DenseEmbeddingMatrix(5, 5);
  for (uint32_t u = 0; u < 3; ++u) {
    for (uint32_t z = 0; z < 4; ++z) shifted.user_emb.row(u)[z] = base.user_emb.row(u)[z];
    shifted.user_emb.row(u)[4] = 1.0;
  }
  for (uint32_t i = 0; i < 5; ++i) {
    for (uint32_t z = 0; z < 4; ++z) shifted.item_emb.row(i)[z] = base.item_emb.row(i)[z];
    shifted.item_emb.row(i)[4] = shift;
  }
  CHECK(ranker_loss(shifted, batch, 0.0).loss ==
        doctest::Approx(ranker_loss(base, batch, 0.0).loss).epsilon(1e-9));

  // hinge loss recomputed from shifted score tables
  auto hinge_from_scores = [&](double offset) {
    double loss = 0.0;
    for (const auto& [u, i, j] : batch.triples) {
      double si = -0.1 * ((u * 31 + i * 17) % 23) + offset;
      double sj = -0.1 * ((u * 31 + j * 17) % 23) + offset;
      loss += std::max(0.0, 0.5 + sj - si);
    }
    return loss;
  };
  CHECK(hinge_from_scores(0.0) == doctest::Approx(hinge_from_scores(9.25)).epsilon(1e-12));
}

TEST_CASE("analytic gradients of all three losses match finite differences") {
  Rng rng(4321);
  int done_mf = 0, done_cml = 0, done_neumf = 0;
  while (done_mf < 5 || done_cml < 5 || done_neumf < 5) {
    TripletBatch batch;
    for (int t = 0; t < 3; ++t)
      batch.triples.push_back({rng.uniform_u32(2), rng.uniform_u32(4), rng.uniform_u32(4)});

    if (done_mf < 5) {
      RankerModel model;
      model.kind = RankerKind::BprMf;
      model.user_emb = DenseEmbeddingMatrix::random_uniform(2, 3, -0.8, 0.8, rng);
      model.item_emb = DenseEmbeddingMatrix::random_uniform(4, 3, -0.8, 0.8, rng);
      auto report = testutil::ranker_fd_check(model, batch, 0.01);
      CHECK(report.max_rel_err < 1e-4);
      ++done_mf;
    }
    if (done_cml < 5) {
      RankerModel model;
      model.kind = RankerKind::Cml;
      model.margin = 0.5;
      model.user_emb = DenseEmbeddingMatrix::random_uniform(2, 3, -0.6, 0.6, rng);
      model.item_emb = DenseEmbeddingMatrix::random_uniform(4, 3, -0.6, 0.6, rng);
      if (testutil::ranker_instance_is_smooth(model, batch)) {
        auto report = testutil::ranker_fd_check(model, batch, 0.0);
        CHECK(report.max_rel_err < 1e-4);
        ++done_cml;
      }
    }
    if (done_neumf < 5) {
      auto model = tiny_neumf(2, 4, 3, {5, 2}, rng.next_u64());
      if (testutil::ranker_instance_is_smooth(model, batch)) {
        auto report = testutil::ranker_fd_check(model, batch, 0.001);
        CHECK(report.max_rel_err < 1e-4);
        ++done_neumf;
      }
    }
  }
}

TEST_CASE("pop training counts only the train split") {
  auto ds = testutil::make_clustered_dataset(20, 30, 3, 5, 37);
  RerankConfig config;
  config.kind = RankerKind::Pop;
  auto result = train_ranker(ds, config);
  auto expected = ds.train_counts();
  REQUIRE(result.model.popularity.size() == expected.size());
  CHECK(result.model.popularity == expected);

  config.kind = RankerKind::BprB;
  CHECK_THROWS_AS(train_ranker(ds, config), Error);
}

TEST_CASE("ranker containers round-trip for every kind") {
  auto dir = std::filesystem::temp_directory_path();
  Rng rng(91);

  auto neumf = tiny_neumf(3, 4, 2, {4, 2}, 7);
  auto path = (dir / "cigar_neumf.cgrk").string();
  neumf.save(path);
  auto loaded = RankerModel::load(path);
  CHECK(loaded.kind == RankerKind::NeuMf);
  for (uint32_t u = 0; u < 3; ++u)
    for (uint32_t i = 0; i < 4; ++i)
      CHECK(loaded.score(u, i) == doctest::Approx(neumf.score(u, i)).epsilon(1e-15));

  RankerModel cml;
  cml.kind = RankerKind::Cml;
  cml.margin = 1.5;
  cml.user_emb = DenseEmbeddingMatrix::random_uniform(2, 3, -0.5, 0.5, rng);
  cml.item_emb = DenseEmbeddingMatrix::random_uniform(2, 3, -0.5, 0.5, rng);
  auto cml_path = (dir / "cigar_cml.cgrk").string();
  cml.save(cml_path);
  auto cml_loaded = RankerModel::load(cml_path);
  CHECK(cml_loaded.margin == 1.5);
  CHECK(cml_loaded.score(1, 1) == doctest::Approx(cml.score(1, 1)).epsilon(1e-15));

  RankerModel pop;
  pop.kind = RankerKind::Pop;
  pop.popularity = {4, 2, 9};
  auto pop_path = (dir / "cigar_pop.cgrk").string();
  pop.save(pop_path);
  CHECK(RankerModel::load(pop_path).popularity == pop.popularity);

  auto codes = testutil::random_codes(3, 16, 1);
  auto bprb = make_code_ranker(codes, testutil::random_codes(4, 16, 2));
  auto bprb_path = (dir / "cigar_bprb.cgrk").string();
  bprb.save(bprb_path);
  auto bprb_loaded = RankerModel::load(bprb_path);
  CHECK(bprb_loaded.score(2, 3) == doctest::Approx(bprb.score(2, 3)));
}

TEST_CASE("corrupt or foreign ranker containers are rejected") {
  auto dir = std::filesystem::temp_directory_path();

  // a valid file truncated mid-array
  RankerModel mf;
  mf.kind = RankerKind::BprMf;
  Rng rng(3);
  mf.user_emb = DenseEmbeddingMatrix::random_uniform(4, 6, -1, 1, rng);
  mf.item_emb = DenseEmbeddingMatrix::random_uniform(5, 6, -1, 1, rng);
  auto path = (dir / "cigar_trunc.cgrk").string();
  mf.save(path);
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  try {
    RankerModel::load(path);
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
  }

  // a different container type under the wrong loader
  CandidateCache cache;
  cache.c = 2;
  cache.per_user = {{0, 1}};
  auto cand_path = (dir / "cigar_wrongkind.cgcd").string();
  cache.save(cand_path);
  CHECK_THROWS_AS(RankerModel::load(cand_path), Error);
}

TEST_CASE("candidate caches round-trip") {
  CandidateCache cache;
  cache.c = 4;
  cache.per_user = {{1, 2, 3, 4}, {5, 6}, {}};
  auto path = (std::filesystem::temp_directory_path() / "cigar_cands.cgcd").string();
  cache.save(path);
  auto loaded = CandidateCache::load(path);
  CHECK(loaded.c == 4);
  CHECK(loaded.per_user == cache.per_user);
}

TEST_CASE("numeric divergence is reported with the failing epoch") {
  auto ds = testutil::make_clustered_dataset(20, 30, 3, 5, 47);
  RerankConfig config;
  config.kind = RankerKind::BprMf;
  config.k = 4;
  config.learning_rate = 1e200;  // guaranteed blow-up
  config.num_epochs = 5;
  config.iters_per_epoch = 5;
  config.batch_size = 64;
  config.eval_every = 0;
  try {
    train_ranker(ds, config);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Numeric);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("ranker training is deterministic given the seed") {
  auto ds = testutil::make_clustered_dataset(25, 40, 4, 5, 43);
  RerankConfig config;
  config.kind = RankerKind::BprMf;
  config.k = 6;
  config.num_epochs = 4;
  config.iters_per_epoch = 5;
  config.batch_size = 64;
  config.eval_every = 2;
  config.seed = 11;
  auto a = train_ranker(ds, config);
  auto b = train_ranker(ds, config);
  config.async_sampler = false;
  auto c = train_ranker(ds, config);
  CHECK(a.model.user_emb.values() == b.model.user_emb.values());
  CHECK(a.model.user_emb.values() == c.model.user_emb.values());
  CHECK(a.model.item_emb.values() == c.model.item_emb.values());
}
