#include "cigar/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <queue>
#include <unordered_map>
#include <unordered_set>

#include "cigar/io.hpp"
#include "cigar/rng.hpp"

namespace cigar {

namespace {

constexpr char kDatasetMagic[4] = {'C', 'G', 'D', 'S'};
constexpr uint32_t kDatasetVersion = 1;

struct PairHash {
  size_t operator()(const std::pair<int64_t, int64_t>& p) const {
    uint64_t h = static_cast<uint64_t>(p.first) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<uint64_t>(p.second) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return static_cast<size_t>(h);
  }
};

bool parse_int(std::string_view field, int64_t& out) {
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_number(std::string_view field, double& out) {
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_fields(std::string_view line, LogFormat format) {
  std::vector<std::string_view> fields;
  if (format == LogFormat::MovieLens) {
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t next = line.find("::", pos);
      if (next == std::string_view::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, next - pos));
      pos = next + 2;
    }
    return fields;
  }
  char sep = format == LogFormat::Tsv ? '\t' : ',';
  size_t pos = 0;
  while (true) {
    size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return fields;
}

}  // namespace

std::optional<LogFormat> parse_log_format(const std::string& name) {
  if (name == "csv") return LogFormat::Csv;
  if (name == "tsv") return LogFormat::Tsv;
  if (name == "movielens" || name == "dat") return LogFormat::MovieLens;
  return std::nullopt;
}

std::vector<Interaction> load_interactions(const std::string& path, LogFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open input file: " + path);

  std::vector<Interaction> result;
  std::unordered_set<std::pair<int64_t, int64_t>, PairHash> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    auto fields = split_fields(line, format);
    if (fields.size() < 2)
      throw Error(ErrorCode::Parse,
                  path + ": line " + std::to_string(line_no) + ": expected at least user,item");

    Interaction rec;
    if (!parse_int(fields[0], rec.user)) {
      // Tolerate a single header row (e.g. "userId,movieId,...").
      if (line_no == 1) continue;
      throw Error(ErrorCode::Parse,
                  path + ": line " + std::to_string(line_no) + ": bad user id");
    }
    if (!parse_int(fields[1], rec.item))
      throw Error(ErrorCode::Parse, path + ": line " + std::to_string(line_no) + ": bad item id");

    // Optional rating (ignored; presence counts as positive feedback) and
    // optional timestamp.
    if (fields.size() >= 3 && !fields[2].empty()) {
      double rating;
      if (!parse_number(fields[2], rating))
        throw Error(ErrorCode::Parse,
                    path + ": line " + std::to_string(line_no) + ": bad rating field");
    }
    if (fields.size() >= 4 && !fields[3].empty()) {
      if (!parse_int(fields[3], rec.timestamp))
        throw Error(ErrorCode::Parse,
                    path + ": line " + std::to_string(line_no) + ": bad timestamp field");
    }

    if (seen.insert({rec.user, rec.item}).second) result.push_back(rec);
  }

  if (result.empty()) throw Error(ErrorCode::Empty, "no interactions in " + path);
  return result;
}

std::vector<Interaction> drop_most_popular(std::vector<Interaction> interactions,
                                           double top_percent) {
  if (top_percent <= 0.0) return interactions;

  std::unordered_map<int64_t, uint64_t> counts;
  for (const auto& x : interactions) ++counts[x.item];

  std::vector<std::pair<uint64_t, int64_t>> by_count;
  by_count.reserve(counts.size());
  for (const auto& [item, count] : counts) by_count.emplace_back(count, item);
  std::sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  size_t drop = static_cast<size_t>(static_cast<double>(counts.size()) * top_percent / 100.0);
  std::unordered_set<int64_t> dropped;
  for (size_t i = 0; i < drop && i < by_count.size(); ++i) dropped.insert(by_count[i].second);

  std::erase_if(interactions, [&](const Interaction& x) { return dropped.contains(x.item); });
  if (interactions.empty())
    throw Error(ErrorCode::Empty, "no interactions left after popularity truncation");
  return interactions;
}

std::vector<Interaction> kcore_filter(std::vector<Interaction> interactions, uint32_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "kcore_filter: k must be >= 1");

  // Peel users and items below degree k until stable; the fixed point is the
  // maximal k-core whatever the removal order.
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<int64_t, uint32_t> user_deg, item_deg;
    for (const auto& x : interactions) {
      ++user_deg[x.user];
      ++item_deg[x.item];
    }
    auto before = interactions.size();
    std::erase_if(interactions, [&](const Interaction& x) {
      return user_deg[x.user] < k || item_deg[x.item] < k;
    });
    changed = interactions.size() != before;
  }

  if (interactions.empty())
    throw Error(ErrorCode::Empty, "k-core filter with k=" + std::to_string(k) + " removed everything");
  return interactions;
}

InteractionDataset leave_one_out_split(const std::vector<Interaction>& interactions,
                                       uint64_t seed) {
  if (interactions.empty()) throw Error(ErrorCode::Empty, "cannot split an empty dataset");

  InteractionDataset ds;
  std::unordered_map<int64_t, uint32_t> user_map, item_map;
  std::vector<std::vector<uint32_t>> items_of;  // per user, in appearance order

  for (const auto& x : interactions) {
    auto [uit, user_new] = user_map.try_emplace(x.user, static_cast<uint32_t>(ds.user_ids.size()));
    if (user_new) {
      ds.user_ids.push_back(x.user);
      items_of.emplace_back();
    }
    auto [iit, item_new] = item_map.try_emplace(x.item, static_cast<uint32_t>(ds.item_ids.size()));
    if (item_new) ds.item_ids.push_back(x.item);
    items_of[uit->second].push_back(iit->second);
  }

  ds.num_users = static_cast<uint32_t>(ds.user_ids.size());
  ds.num_items = static_cast<uint32_t>(ds.item_ids.size());
  ds.train.resize(ds.num_users);
  ds.valid.resize(ds.num_users);
  ds.test.resize(ds.num_users);

  Rng rng(seed);
  for (uint32_t u = 0; u < ds.num_users; ++u) {
    auto& items = items_of[u];
    if (items.size() < 3)
      throw Error(ErrorCode::InvalidArgument,
                  "leave_one_out_split: user " + std::to_string(ds.user_ids[u]) + " has only " +
                      std::to_string(items.size()) + " interactions (need >= 3)");
    uint32_t deg = static_cast<uint32_t>(items.size());
    uint32_t vi = rng.uniform_u32(deg);
    uint32_t ti = rng.uniform_u32(deg - 1);
    if (ti >= vi) ++ti;
    ds.valid[u] = items[vi];
    ds.test[u] = items[ti];
    auto& train = ds.train[u];
    train.reserve(deg - 2);
    for (uint32_t idx = 0; idx < deg; ++idx)
      if (idx != vi && idx != ti) train.push_back(items[idx]);
    std::sort(train.begin(), train.end());
  }
  return ds;
}

bool InteractionDataset::in_train(uint32_t user, uint32_t item) const {
  const auto& t = train[user];
  return std::binary_search(t.begin(), t.end(), item);
}

size_t InteractionDataset::train_size() const {
  size_t n = 0;
  for (const auto& t : train) n += t.size();
  return n;
}

std::vector<uint32_t> InteractionDataset::train_counts() const {
  std::vector<uint32_t> counts(num_items, 0);
  for (const auto& t : train)
    for (uint32_t item : t) ++counts[item];
  return counts;
}

std::vector<uint32_t> InteractionDataset::popularity_ranking() const {
  auto counts = train_counts();
  std::vector<uint32_t> order(num_items);
  for (uint32_t i = 0; i < num_items; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return a < b;
  });
  return order;
}

std::optional<uint32_t> InteractionDataset::lookup_user(int64_t original_id) const {
  if (user_index_.empty())
    for (uint32_t u = 0; u < num_users; ++u) user_index_.emplace(user_ids[u], u);
  auto it = user_index_.find(original_id);
  if (it == user_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<uint32_t> InteractionDataset::lookup_item(int64_t original_id) const {
  if (item_index_.empty())
    for (uint32_t i = 0; i < num_items; ++i) item_index_.emplace(item_ids[i], i);
  auto it = item_index_.find(original_id);
  if (it == item_index_.end()) return std::nullopt;
  return it->second;
}

void InteractionDataset::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kDatasetMagic, kDatasetVersion);
  w.u32(num_users);
  w.u32(num_items);
  w.i64_array(user_ids);
  w.i64_array(item_ids);
  w.u32_array(valid);
  w.u32_array(test);
  for (const auto& t : train) w.u32_array(t);
  w.finish();
}

InteractionDataset InteractionDataset::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kDatasetMagic, kDatasetVersion);
  InteractionDataset ds;
  ds.num_users = r.u32();
  ds.num_items = r.u32();
  ds.user_ids = r.i64_array();
  ds.item_ids = r.i64_array();
  ds.valid = r.u32_array();
  ds.test = r.u32_array();
  ds.train.resize(ds.num_users);
  for (auto& t : ds.train) t = r.u32_array();
  if (ds.user_ids.size() != ds.num_users || ds.item_ids.size() != ds.num_items ||
      ds.valid.size() != ds.num_users || ds.test.size() != ds.num_users)
    throw Error(ErrorCode::Format, "inconsistent dataset container: " + path);
  return ds;
}

}  // namespace cigar
