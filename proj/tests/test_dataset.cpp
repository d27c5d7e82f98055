#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cigar/dataset.hpp"
#include "cigar/rng.hpp"
#include "doctest.h"

using namespace cigar;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

std::set<std::pair<int64_t, int64_t>> edge_set(const std::vector<Interaction>& xs) {
  std::set<std::pair<int64_t, int64_t>> edges;
  for (const auto& x : xs) edges.insert({x.user, x.item});
  return edges;
}

// Reference k-core: removes one offending vertex at a time, scanning items
// before users, until stable. Exercises a different removal order than the
// production filter.
std::vector<Interaction> kcore_reference(std::vector<Interaction> xs, uint32_t k) {
  for (;;) {
    std::map<int64_t, uint32_t> user_deg, item_deg;
    for (const auto& x : xs) {
      ++user_deg[x.user];
      ++item_deg[x.item];
    }
    int64_t drop_item = INT64_MIN, drop_user = INT64_MIN;
    for (const auto& [item, deg] : item_deg)
      if (deg < k) {
        drop_item = item;
        break;
      }
    if (drop_item == INT64_MIN)
      for (const auto& [user, deg] : user_deg)
        if (deg < k) {
          drop_user = user;
          break;
        }
    if (drop_item == INT64_MIN && drop_user == INT64_MIN) return xs;
    std::erase_if(xs, [&](const Interaction& x) {
      return x.item == drop_item || x.user == drop_user;
    });
  }
}

}  // namespace

TEST_CASE("load collapses duplicate pairs") {
  auto path = write_temp("cigar_dup.csv", "1,10\n1,10\n2,11\n");
  auto xs = load_interactions(path, LogFormat::Csv);
  CHECK(xs.size() == 2);
  CHECK(xs[0].user == 1);
  CHECK(xs[0].item == 10);
  CHECK(xs[1].user == 2);
}

TEST_CASE("load reports the offending line") {
  auto path = write_temp("cigar_bad.csv", "1,abc\n");
  try {
    load_interactions(path, LogFormat::Csv);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("load rejects an empty file") {
  auto path = write_temp("cigar_empty.csv", "");
  CHECK_THROWS_AS(load_interactions(path, LogFormat::Csv), Error);
  try {
    load_interactions(path, LogFormat::Csv);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Empty);
  }
}

TEST_CASE("load accepts ratings, timestamps, headers and other formats") {
  auto csv = write_temp("cigar_full.csv", "userId,movieId,rating,timestamp\n1,10,5.0,99\n2,11,3.5,100\n");
  auto xs = load_interactions(csv, LogFormat::Csv);
  CHECK(xs.size() == 2);
  CHECK(xs[0].timestamp == 99);

  auto dat = write_temp("cigar_ml.dat", "1::10::5::978300760\n2::11::3::978302109\n");
  auto ml = load_interactions(dat, LogFormat::MovieLens);
  CHECK(ml.size() == 2);
  CHECK(ml[1].user == 2);
  CHECK(ml[1].item == 11);

  auto missing = load_interactions(write_temp("cigar_nr.csv", "1,10\n2,11\n"), LogFormat::Csv);
  CHECK(missing[0].timestamp == -1);
}

TEST_CASE("kcore cascade removes everything") {
  std::vector<Interaction> xs;
  for (int64_t i = 0; i < 5; ++i) xs.push_back({1, 10 + i, -1});
  try {
    kcore_filter(xs, 5);
    FAIL("expected an empty-after-filter error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Empty);
    CHECK(std::string(e.what()).find('5') != std::string::npos);
  }
}

TEST_CASE("kcore keeps a complete bipartite graph") {
  std::vector<Interaction> xs;
  for (int64_t u = 0; u < 5; ++u)
    for (int64_t i = 0; i < 5; ++i) xs.push_back({u, 100 + i, -1});
  auto filtered = kcore_filter(xs, 5);
  CHECK(edge_set(filtered) == edge_set(xs));
}

TEST_CASE("kcore matches the one-at-a-time reference on random graphs") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Interaction> xs;
    std::set<std::pair<int64_t, int64_t>> seen;
    for (int e = 0; e < 400; ++e) {
      int64_t u = static_cast<int64_t>(rng.uniform_below(50));
      int64_t i = static_cast<int64_t>(rng.uniform_below(50)) + 1000;
      if (seen.insert({u, i}).second) xs.push_back({u, i, -1});
    }
    auto got = kcore_filter(xs, 3);
    auto expected = kcore_reference(xs, 3);
    CHECK(edge_set(got) == edge_set(expected));
  }
}

TEST_CASE("kcore is idempotent") {
  Rng rng(11);
  std::vector<Interaction> xs;
  std::set<std::pair<int64_t, int64_t>> seen;
  for (int e = 0; e < 300; ++e) {
    int64_t u = static_cast<int64_t>(rng.uniform_below(40));
    int64_t i = static_cast<int64_t>(rng.uniform_below(40)) + 1000;
    if (seen.insert({u, i}).second) xs.push_back({u, i, -1});
  }
  auto once = kcore_filter(xs, 3);
  auto twice = kcore_filter(once, 3);
  CHECK(edge_set(once) == edge_set(twice));
}

TEST_CASE("minimal split holds out exactly two actions") {
  std::vector<Interaction> xs = {{7, 100, -1}, {7, 101, -1}, {7, 102, -1}};
  for (uint64_t seed : {1ull, 2ull, 99ull}) {
    auto ds = leave_one_out_split(xs, seed);
    REQUIRE(ds.num_users == 1);
    REQUIRE(ds.train[0].size() == 1);
    std::set<uint32_t> all = {ds.train[0][0], ds.valid[0], ds.test[0]};
    CHECK(all.size() == 3);  // train, valid, test all distinct
  }
}

TEST_CASE("split is deterministic and partitions each user's actions") {
  Rng rng(13);
  std::vector<Interaction> xs;
  std::set<std::pair<int64_t, int64_t>> seen;
  std::map<int64_t, uint32_t> degree;
  for (int64_t u = 0; u < 30; ++u) {
    uint32_t deg = 3 + rng.uniform_u32(10);
    while (degree[u] < deg) {
      int64_t i = static_cast<int64_t>(rng.uniform_below(200));
      if (seen.insert({u, i}).second) {
        xs.push_back({u, i, -1});
        ++degree[u];
      }
    }
  }
  auto a = leave_one_out_split(xs, 42);
  auto b = leave_one_out_split(xs, 42);
  CHECK(a.valid == b.valid);
  CHECK(a.test == b.test);
  CHECK(a.train == b.train);

  for (uint32_t u = 0; u < a.num_users; ++u) {
    CHECK(a.train[u].size() + 2 == degree[a.user_ids[u]]);
    CHECK_FALSE(a.in_train(u, a.valid[u]));
    CHECK_FALSE(a.in_train(u, a.test[u]));
    CHECK(a.valid[u] != a.test[u]);
    CHECK(std::is_sorted(a.train[u].begin(), a.train[u].end()));
  }
}

TEST_CASE("split remaps ids bijectively") {
  std::vector<Interaction> xs;
  for (int64_t u : {900, 5, 42})
    for (int64_t i : {7000, 7001, 7002, 7003}) xs.push_back({u, i, -1});
  auto ds = leave_one_out_split(xs, 3);
  CHECK(ds.num_users == 3);
  CHECK(ds.num_items == 4);
  CHECK(ds.user_ids[0] == 900);  // first-appearance order
  std::set<int64_t> unique_users(ds.user_ids.begin(), ds.user_ids.end());
  std::set<int64_t> unique_items(ds.item_ids.begin(), ds.item_ids.end());
  CHECK(unique_users.size() == ds.num_users);
  CHECK(unique_items.size() == ds.num_items);
  for (uint32_t u = 0; u < ds.num_users; ++u) CHECK(ds.lookup_user(ds.user_ids[u]) == u);
  for (uint32_t i = 0; i < ds.num_items; ++i) CHECK(ds.lookup_item(ds.item_ids[i]) == i);
  CHECK_FALSE(ds.lookup_user(123456).has_value());
}

TEST_CASE("split rejects users with fewer than three actions") {
  std::vector<Interaction> xs = {{1, 10, -1}, {1, 11, -1}, {2, 10, -1}, {2, 11, -1}, {2, 12, -1}};
  CHECK_THROWS_AS(leave_one_out_split(xs, 1), Error);
}

TEST_CASE("popularity truncation drops the head of the distribution") {
  std::vector<Interaction> xs;
  // item 0 is interacted with by everyone, the rest once each
  for (int64_t u = 0; u < 100; ++u) xs.push_back({u, 0, -1});
  for (int64_t u = 0; u < 100; ++u) xs.push_back({u, 1 + u, -1});
  auto kept = drop_most_popular(xs, 1.0);  // 1% of 101 items -> top 1 item
  for (const auto& x : kept) CHECK(x.item != 0);
  CHECK(kept.size() == 100);
}

TEST_CASE("dataset container round-trips and rejects foreign files") {
  Rng rng(17);
  std::vector<Interaction> xs;
  std::set<std::pair<int64_t, int64_t>> seen;
  for (int e = 0; e < 200; ++e) {
    int64_t u = static_cast<int64_t>(rng.uniform_below(20));
    int64_t i = static_cast<int64_t>(rng.uniform_below(50));
    if (seen.insert({u, i}).second) xs.push_back({u, i, -1});
  }
  auto ds = leave_one_out_split(kcore_filter(xs, 3), 5);
  auto path = (std::filesystem::temp_directory_path() / "cigar_ds.cgds").string();
  ds.save(path);
  auto loaded = InteractionDataset::load(path);
  CHECK(loaded.num_users == ds.num_users);
  CHECK(loaded.train == ds.train);
  CHECK(loaded.valid == ds.valid);
  CHECK(loaded.user_ids == ds.user_ids);

  auto junk = write_temp("cigar_junk.bin", "NOTAMAGICFILE-------");
  try {
    InteractionDataset::load(junk);
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
  }
}
