#include "cigar/mih.hpp"

#include <algorithm>
#include <queue>

#include "cigar/io.hpp"

namespace cigar {

namespace {

constexpr char kIndexMagic[4] = {'C', 'G', 'I', 'X'};
constexpr uint32_t kIndexVersion = 1;

// Dense bucket directories are worthwhile up to 2^16 keys.
constexpr uint32_t kMaxDenseBits = 16;

uint32_t extract_substring(std::span<const uint64_t> code, uint32_t table, uint32_t bits) {
  uint32_t start = table * bits;
  uint32_t word = start / 64;
  uint32_t offset = start % 64;
  uint64_t value = code[word] >> offset;
  if (offset + bits > 64) value |= code[word + 1] << (64 - offset);
  uint64_t mask = bits == 64 ? ~uint64_t{0} : ((uint64_t{1} << bits) - 1);
  return static_cast<uint32_t>(value & mask);
}

// Calls visit(key) for every key at Hamming distance exactly l from base
// within a bits-wide keyspace.
template <typename Visit>
void for_keys_at_distance(uint32_t base, uint32_t bits, uint32_t l, Visit&& visit) {
  if (l == 0) {
    visit(base);
    return;
  }
  if (l > bits) return;
  std::vector<uint32_t> pos(l);
  for (uint32_t i = 0; i < l; ++i) pos[i] = i;
  for (;;) {
    uint32_t key = base;
    for (uint32_t p : pos) key ^= uint32_t{1} << p;
    visit(key);
    // next combination of l positions out of bits
    uint32_t i = l;
    while (i > 0) {
      --i;
      if (pos[i] != bits - l + i) {
        ++pos[i];
        for (uint32_t j = i + 1; j < l; ++j) pos[j] = pos[j - 1] + 1;
        break;
      }
      if (i == 0) return;
    }
  }
}

}  // namespace

uint32_t default_num_tables(uint32_t num_items) {
  if (num_items < 50'000) return 16;
  if (num_items < 200'000) return 8;
  return 4;
}

std::span<const uint32_t> MultiIndexHashTable::bucket(uint32_t table, uint32_t key) const {
  const Table& t = tables_[table];
  if (t.dense) {
    uint32_t begin = t.offsets[key];
    uint32_t end = t.offsets[key + 1];
    return {t.items.data() + begin, end - begin};
  }
  auto it = t.ranges.find(key);
  if (it == t.ranges.end()) return {};
  return {t.items.data() + it->second.first, it->second.second - it->second.first};
}

uint32_t MultiIndexHashTable::substring(std::span<const uint64_t> code, uint32_t table) const {
  return extract_substring(code, table, substring_bits_);
}

MultiIndexHashTable build_index(const BinaryCodeMatrix& item_codes, uint32_t m) {
  if (m == 0 || item_codes.bits() % m != 0)
    throw Error(ErrorCode::InvalidArgument,
                "build_index: code length " + std::to_string(item_codes.bits()) +
                    " is not divisible into " + std::to_string(m) + " substrings");
  uint32_t sub_bits = item_codes.bits() / m;
  if (sub_bits > 32)
    throw Error(ErrorCode::InvalidArgument,
                "build_index: substring of " + std::to_string(sub_bits) +
                    " bits exceeds the 32-bit bucket key limit");

  MultiIndexHashTable index;
  index.m_ = m;
  index.bits_ = item_codes.bits();
  index.substring_bits_ = sub_bits;
  index.codes_ = item_codes;
  index.tables_.resize(m);

  const uint32_t n = item_codes.rows();
  for (uint32_t j = 0; j < m; ++j) {
    auto& table = index.tables_[j];
    table.dense = sub_bits <= kMaxDenseBits;
    table.items.resize(n);
    if (table.dense) {
      // counting sort into a CSR layout
      uint32_t buckets = uint32_t{1} << sub_bits;
      table.offsets.assign(buckets + 1, 0);
      for (uint32_t i = 0; i < n; ++i)
        ++table.offsets[extract_substring(item_codes.row(i), j, sub_bits) + 1];
      for (uint32_t b = 0; b < buckets; ++b) table.offsets[b + 1] += table.offsets[b];
      std::vector<uint32_t> cursor(table.offsets.begin(), table.offsets.end() - 1);
      for (uint32_t i = 0; i < n; ++i) {
        uint32_t key = extract_substring(item_codes.row(i), j, sub_bits);
        table.items[cursor[key]++] = i;
      }
    } else {
      std::unordered_map<uint32_t, uint32_t> counts;
      for (uint32_t i = 0; i < n; ++i)
        ++counts[extract_substring(item_codes.row(i), j, sub_bits)];
      uint32_t offset = 0;
      table.ranges.reserve(counts.size());
      for (const auto& [key, count] : counts) {
        table.ranges.emplace(key, std::make_pair(offset, offset));
        offset += count;
      }
      for (uint32_t i = 0; i < n; ++i) {
        uint32_t key = extract_substring(item_codes.row(i), j, sub_bits);
        auto& range = table.ranges[key];
        table.items[range.second++] = i;
      }
    }
  }
  return index;
}

QueryResult query_with_info(const MultiIndexHashTable& index, std::span<const uint64_t> code,
                            uint32_t c, uint32_t l_max, QueryScratch& scratch) {
  if (code.size() != index.item_codes().words_per_row())
    throw Error(ErrorCode::InvalidArgument, "query: code length does not match the index");

  const uint32_t m = index.num_tables();
  if (scratch.stamp.size() < index.num_items()) scratch.stamp.assign(index.num_items(), 0);
  if (++scratch.version == 0) {  // stamp wrap-around
    std::fill(scratch.stamp.begin(), scratch.stamp.end(), 0);
    scratch.version = 1;
  }
  scratch.gathered.clear();

  std::vector<uint32_t> substrings(m);
  for (uint32_t j = 0; j < m; ++j) substrings[j] = index.substring(code, j);

  uint32_t completed = 0;
  for (uint32_t l = 0; l <= l_max; ++l) {
    for (uint32_t j = 0; j < m; ++j) {
      for_keys_at_distance(substrings[j], index.substring_bits(), l, [&](uint32_t key) {
        for (uint32_t item : index.bucket(j, key)) {
          if (scratch.stamp[item] == scratch.version) continue;
          scratch.stamp[item] = scratch.version;
          scratch.gathered.push_back(item);
        }
      });
    }
    completed = l;
    if (scratch.gathered.size() >= c) break;
  }

  // rank the union by full-code distance, ties by ascending id
  std::vector<std::pair<uint32_t, uint32_t>> ranked;
  ranked.reserve(scratch.gathered.size());
  for (uint32_t item : scratch.gathered)
    ranked.emplace_back(hamming_distance_unchecked(code, index.item_codes().row(item)), item);
  if (ranked.size() > c) {
    std::nth_element(ranked.begin(), ranked.begin() + c, ranked.end());
    ranked.resize(c);
  }
  std::sort(ranked.begin(), ranked.end());

  QueryResult result;
  result.completed_radius = completed;
  result.candidates.items.reserve(ranked.size());
  result.candidates.distances.reserve(ranked.size());
  for (const auto& [dist, item] : ranked) {
    result.candidates.items.push_back(item);
    result.candidates.distances.push_back(dist);
  }
  return result;
}

CandidateList query(const MultiIndexHashTable& index, std::span<const uint64_t> code, uint32_t c,
                    uint32_t l_max, QueryScratch& scratch) {
  return query_with_info(index, code, c, l_max, scratch).candidates;
}

CandidateList query(const MultiIndexHashTable& index, std::span<const uint64_t> code, uint32_t c,
                    uint32_t l_max) {
  QueryScratch scratch;
  return query(index, code, c, l_max, scratch);
}

CandidateList linear_scan_topc(const BinaryCodeMatrix& item_codes, std::span<const uint64_t> code,
                               uint32_t c) {
  // bounded max-heap on (distance, id); the root is the current worst keeper
  std::priority_queue<std::pair<uint32_t, uint32_t>> heap;
  for (uint32_t i = 0; i < item_codes.rows(); ++i) {
    uint32_t d = hamming_distance_unchecked(code, item_codes.row(i));
    if (heap.size() < c) {
      heap.emplace(d, i);
    } else if (!heap.empty() && std::make_pair(d, i) < heap.top()) {
      heap.pop();
      heap.emplace(d, i);
    }
  }

  CandidateList out;
  out.items.resize(heap.size());
  out.distances.resize(heap.size());
  for (size_t idx = heap.size(); idx-- > 0;) {
    out.distances[idx] = heap.top().first;
    out.items[idx] = heap.top().second;
    heap.pop();
  }
  return out;
}

CandidateList pad_candidates(CandidateList candidates, uint32_t c,
                             const std::vector<uint32_t>& popularity_ranking,
                             std::span<const uint32_t> exclude) {
  if (candidates.size() >= c) return candidates;

  std::vector<uint8_t> present;
  present.assign(popularity_ranking.size(), 0);
  for (uint32_t item : candidates.items)
    if (item < present.size()) present[item] = 1;

  for (uint32_t item : popularity_ranking) {
    if (candidates.size() >= c) break;
    if (present[item]) continue;
    if (std::binary_search(exclude.begin(), exclude.end(), item)) continue;
    candidates.items.push_back(item);
    candidates.distances.push_back(kPaddedDistance);
  }
  return candidates;
}

CandidateList retrieve_candidates(const MultiIndexHashTable& index,
                                  std::span<const uint64_t> user_code, uint32_t c, uint32_t l_max,
                                  std::span<const uint32_t> exclude,
                                  const std::vector<uint32_t>& popularity_ranking,
                                  QueryScratch& scratch) {
  CandidateList raw = query(index, user_code, c, l_max, scratch);
  CandidateList kept;
  kept.items.reserve(raw.size());
  kept.distances.reserve(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    if (std::binary_search(exclude.begin(), exclude.end(), raw.items[i])) continue;
    kept.items.push_back(raw.items[i]);
    kept.distances.push_back(raw.distances[i]);
  }
  return pad_candidates(std::move(kept), c, popularity_ranking, exclude);
}

void MultiIndexHashTable::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kIndexMagic, kIndexVersion);
  w.u32(m_);
  w.u32(bits_);
  w.u32(codes_.rows());
  w.u64_array(codes_.words());
  for (const auto& table : tables_) {
    w.u8(table.dense ? 1 : 0);
    if (table.dense) {
      w.u32_array(table.offsets);
    } else {
      w.u64(table.ranges.size());
      // deterministic order on disk
      std::vector<std::pair<uint32_t, std::pair<uint32_t, uint32_t>>> sorted(
          table.ranges.begin(), table.ranges.end());
      std::sort(sorted.begin(), sorted.end());
      for (const auto& [key, range] : sorted) {
        w.u32(key);
        w.u32(range.first);
        w.u32(range.second);
      }
    }
    w.u32_array(table.items);
  }
  w.finish();
}

MultiIndexHashTable MultiIndexHashTable::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kIndexMagic, kIndexVersion);
  auto corrupt = [&path]() -> Error {
    return Error(ErrorCode::Format, "inconsistent index container: " + path);
  };
  MultiIndexHashTable index;
  index.m_ = r.u32();
  index.bits_ = r.u32();
  uint32_t items = r.u32();
  if (index.m_ == 0 || index.bits_ == 0 || index.bits_ % 8 != 0 ||
      index.bits_ % index.m_ != 0 || index.bits_ / index.m_ > 32)
    throw corrupt();
  index.substring_bits_ = index.bits_ / index.m_;
  index.codes_ = BinaryCodeMatrix(items, index.bits_);
  index.codes_.words() = r.u64_array();
  if (index.codes_.words().size() !=
      static_cast<size_t>(items) * index.codes_.words_per_row())
    throw corrupt();
  index.tables_.resize(index.m_);
  for (auto& table : index.tables_) {
    table.dense = r.u8() != 0;
    if (table.dense) {
      table.offsets = r.u32_array();
      if (index.substring_bits_ > kMaxDenseBits ||
          table.offsets.size() != (size_t{1} << index.substring_bits_) + 1)
        throw corrupt();
    } else {
      uint64_t nkeys = r.u64();
      table.ranges.reserve(nkeys);
      for (uint64_t i = 0; i < nkeys; ++i) {
        uint32_t key = r.u32();
        uint32_t begin = r.u32();
        uint32_t end = r.u32();
        table.ranges.emplace(key, std::make_pair(begin, end));
      }
    }
    table.items = r.u32_array();
    if (table.items.size() != items) throw corrupt();
    if (table.dense) {
      uint32_t prev = 0;
      for (uint32_t off : table.offsets) {
        if (off < prev || off > table.items.size()) throw corrupt();
        prev = off;
      }
      if (table.offsets.back() != table.items.size()) throw corrupt();
    } else {
      for (const auto& [key, range] : table.ranges)
        if (range.first > range.second || range.second > table.items.size()) throw corrupt();
    }
  }
  return index;
}

}  // namespace cigar
