#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "cigar/error.hpp"
#include "cigar/rng.hpp"

namespace cigar {

// Row-major matrix of real-valued embeddings (auxiliary hashing embeddings or
// ranker factors).
class DenseEmbeddingMatrix {
 public:
  DenseEmbeddingMatrix() = default;
  DenseEmbeddingMatrix(uint32_t rows, uint32_t dim)
      : rows_(rows), dim_(dim), values_(static_cast<size_t>(rows) * dim, 0.0) {}

  static DenseEmbeddingMatrix random_uniform(uint32_t rows, uint32_t dim, double lo, double hi,
                                             Rng& rng) {
    DenseEmbeddingMatrix m(rows, dim);
    for (double& v : m.values_) v = rng.uniform_range(lo, hi);
    return m;
  }

  uint32_t rows() const { return rows_; }
  uint32_t dim() const { return dim_; }

  std::span<double> row(uint32_t i) { return {values_.data() + static_cast<size_t>(i) * dim_, dim_}; }
  std::span<const double> row(uint32_t i) const {
    return {values_.data() + static_cast<size_t>(i) * dim_, dim_};
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool all_finite() const;

 private:
  uint32_t rows_ = 0;
  uint32_t dim_ = 0;
  std::vector<double> values_;
};

// Packed {-1,+1} codes, one row per user or item. A set bit means +1. Rows
// are padded to whole 64-bit words with zero bits so word-wise operations
// never see garbage.
class BinaryCodeMatrix {
 public:
  BinaryCodeMatrix() = default;
  BinaryCodeMatrix(uint32_t rows, uint32_t bits);

  uint32_t rows() const { return rows_; }
  uint32_t bits() const { return bits_; }
  uint32_t words_per_row() const { return words_per_row_; }

  std::span<uint64_t> row(uint32_t i) {
    return {words_.data() + static_cast<size_t>(i) * words_per_row_, words_per_row_};
  }
  std::span<const uint64_t> row(uint32_t i) const {
    return {words_.data() + static_cast<size_t>(i) * words_per_row_, words_per_row_};
  }

  void set_bit(uint32_t row, uint32_t bit, bool on);
  bool bit(uint32_t row, uint32_t bit) const;
  // The {-1,+1} value of one coordinate.
  int sign(uint32_t row, uint32_t bit) const { return bit_value(row, bit); }

  const std::vector<uint64_t>& words() const { return words_; }
  std::vector<uint64_t>& words() { return words_; }

  bool operator==(const BinaryCodeMatrix&) const = default;

 private:
  int bit_value(uint32_t row, uint32_t b) const { return bit(row, b) ? 1 : -1; }

  uint32_t rows_ = 0;
  uint32_t bits_ = 0;
  uint32_t words_per_row_ = 0;
  std::vector<uint64_t> words_;
};

// Number of differing bits; XOR + popcount per word.
inline uint32_t hamming_distance_unchecked(std::span<const uint64_t> a,
                                           std::span<const uint64_t> b) {
  uint32_t d = 0;
  for (size_t w = 0; w < a.size(); ++w) d += static_cast<uint32_t>(std::popcount(a[w] ^ b[w]));
  return d;
}

inline uint32_t hamming_distance(std::span<const uint64_t> a, std::span<const uint64_t> b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::InvalidArgument, "hamming_distance: code length mismatch");
  return hamming_distance_unchecked(a, b);
}

// <a,b> over {-1,+1} coordinates: r - 2 * d_H(a,b).
inline int64_t code_inner_product(std::span<const uint64_t> a, std::span<const uint64_t> b,
                                  uint32_t bits) {
  return static_cast<int64_t>(bits) - 2 * static_cast<int64_t>(hamming_distance(a, b));
}

// Elementwise sign with sgn(0) = +1.
BinaryCodeMatrix binarize(const DenseEmbeddingMatrix& emb);

}  // namespace cigar
