#include "cigar/embedding.hpp"

#include <cmath>

namespace cigar {

bool DenseEmbeddingMatrix::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

BinaryCodeMatrix::BinaryCodeMatrix(uint32_t rows, uint32_t bits) : rows_(rows), bits_(bits) {
  if (bits == 0 || bits % 8 != 0)
    throw Error(ErrorCode::InvalidArgument,
                "code length must be a positive multiple of 8, got " + std::to_string(bits));
  words_per_row_ = (bits + 63) / 64;
  words_.assign(static_cast<size_t>(rows) * words_per_row_, 0);
}

void BinaryCodeMatrix::set_bit(uint32_t row, uint32_t bit, bool on) {
  uint64_t& word = words_[static_cast<size_t>(row) * words_per_row_ + bit / 64];
  uint64_t mask = uint64_t{1} << (bit % 64);
  if (on)
    word |= mask;
  else
    word &= ~mask;
}

bool BinaryCodeMatrix::bit(uint32_t row, uint32_t bit) const {
  uint64_t word = words_[static_cast<size_t>(row) * words_per_row_ + bit / 64];
  return (word >> (bit % 64)) & 1;
}

BinaryCodeMatrix binarize(const DenseEmbeddingMatrix& emb) {
  BinaryCodeMatrix codes(emb.rows(), emb.dim());
  for (uint32_t i = 0; i < emb.rows(); ++i) {
    auto row = emb.row(i);
    for (uint32_t b = 0; b < emb.dim(); ++b)
      if (row[b] >= 0.0) codes.set_bit(i, b, true);
  }
  return codes;
}

}  // namespace cigar
