#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cigar/dataset.hpp"
#include "cigar/embedding.hpp"
#include "cigar/rng.hpp"

namespace cigar {

struct Triplet {
  uint32_t user;
  uint32_t pos;
  uint32_t neg;
};

// A batch of (u, i, j) with i from the user's training items and j sampled
// from the unobserved items.
struct TripletBatch {
  std::vector<Triplet> triples;

  size_t size() const { return triples.size(); }
};

struct HashRecConfig {
  uint32_t bits = 64;
  double lambda = 0.001;
  double alpha = 0.0;  // 0 means 10.0 / bits
  uint32_t num_epochs = 100;
  uint32_t iters_per_epoch = 0;  // 0 means ceil(train_size / batch_size)
  uint32_t batch_size = 10000;
  double learning_rate = 0.001;
  uint64_t seed = 42;

  // Sharpness schedule for the tanh relaxation, recomputed at epoch start.
  // The default sqrt(10*(epoch-1)) would be zero at epoch 1, which kills all
  // activations, so it is floored.
  double beta_floor = 1e-3;
  std::function<double(uint32_t)> beta_schedule;  // epoch (1-based) -> beta

  // Validation cadence: HR@eval_hr_cutoff on the validation split by linear
  // Hamming scan, every eval_every epochs; stop after patience epochs without
  // improvement.
  uint32_t eval_every = 10;
  uint32_t patience = 20;
  uint32_t eval_hr_cutoff = 200;

  bool async_sampler = true;

  double resolved_alpha() const { return alpha > 0.0 ? alpha : 10.0 / bits; }
  double beta_for_epoch(uint32_t epoch) const {
    double beta = beta_schedule ? beta_schedule(epoch) : std::sqrt(10.0 * (epoch - 1));
    return beta < beta_floor ? beta_floor : beta;
  }
};

// u uniform over users, i uniform over train[u], j uniform over items with
// rejection until j is unobserved for u.
TripletBatch sample_triplets(const InteractionDataset& dataset, uint32_t batch_size, Rng& rng);

// Gradient rows for the subset of embedding rows a batch touches. Rows are
// unique; values holds rows.size() * dim doubles, row-major.
struct SparseGradient {
  uint32_t dim = 0;
  std::vector<uint32_t> rows;
  std::vector<double> values;

  std::span<double> grad_row(size_t idx) {
    return {values.data() + idx * dim, dim};
  }
  std::span<const double> grad_row(size_t idx) const {
    return {values.data() + idx * dim, dim};
  }
};

struct SurrogateLoss {
  double loss = 0.0;
  SparseGradient user_grad;
  SparseGradient item_grad;
};

// Relaxed ranking loss over a batch:
//   -sum ln sigmoid(alpha * (<tanh(beta*bu), tanh(beta*di)> - <tanh(beta*bu), tanh(beta*dj)>))
//   + lambda * sum of squared norms of the distinct touched rows,
// together with its exact gradients.
SurrogateLoss surrogate_loss(const TripletBatch& batch, const DenseEmbeddingMatrix& user_emb,
                             const DenseEmbeddingMatrix& item_emb, double alpha, double beta,
                             double lambda);

// The quantized objective the relaxation approximates: embeddings are passed
// through sign (sgn(0) = +1) before scoring. Diagnostic only. Returned as the
// batch sum, no regularization.
double desired_loss(const TripletBatch& batch, const DenseEmbeddingMatrix& user_emb,
                    const DenseEmbeddingMatrix& item_emb, double alpha);

// First/second moment state for Adam over one embedding matrix.
struct AdamState {
  DenseEmbeddingMatrix m;
  DenseEmbeddingMatrix v;

  static AdamState for_params(const DenseEmbeddingMatrix& params) {
    return {DenseEmbeddingMatrix(params.rows(), params.dim()),
            DenseEmbeddingMatrix(params.rows(), params.dim())};
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Adam with bias correction at global step `step` (1-based). Only the rows
// present in grads move; everything else keeps its stale moments.
void adam_update(DenseEmbeddingMatrix& params, const SparseGradient& grads, AdamState& moments,
                 uint64_t step, double lr);

struct EpochStats {
  uint32_t epoch = 0;
  double beta = 0.0;
  double surrogate_loss = 0.0;      // per-triple mean, regularizer included
  double desired_loss = 0.0;        // per-triple mean of the quantized loss
  double quantization_error = 0.0;  // mean (tanh(beta*x) - sgn(x))^2 over all entries
  double valid_hr = -1.0;           // set on evaluation epochs
};

// Codes plus the final auxiliary embeddings (kept for warm restarts).
struct HashModel {
  BinaryCodeMatrix user_codes;
  BinaryCodeMatrix item_codes;
  DenseEmbeddingMatrix user_aux;
  DenseEmbeddingMatrix item_aux;

  void save(const std::string& path) const;
  static HashModel load(const std::string& path);
};

struct HashRecResult {
  HashModel model;
  std::vector<EpochStats> curve;
  uint32_t best_epoch = 0;
  double best_valid_hr = -1.0;
};

std::string curve_to_csv(const std::vector<EpochStats>& curve);

// The HashRec training loop: per epoch, recompute beta, run iters_per_epoch
// Adam steps on freshly sampled batches, and periodically early-stop on
// validation HR. Codes come from the best validation snapshot.
HashRecResult train_hashrec(const InteractionDataset& dataset, const HashRecConfig& config,
                            const DenseEmbeddingMatrix* warm_user = nullptr,
                            const DenseEmbeddingMatrix* warm_item = nullptr);

// HR@cutoff of ranking items by Hamming distance of codes, excluding each
// user's training items. Used for validation during training and for scoring
// hashing baselines.
double hamming_hit_rate(const BinaryCodeMatrix& user_codes, const BinaryCodeMatrix& item_codes,
                        const InteractionDataset& dataset, uint32_t cutoff,
                        const std::vector<uint32_t>& held_out);

}  // namespace cigar
