#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cigar/dataset.hpp"
#include "cigar/embedding.hpp"
#include "cigar/hashrec.hpp"
#include "cigar/mih.hpp"

namespace cigar {

enum class RankerKind : uint8_t {
  BprMf = 0,  // inner product factors, logistic pairwise loss
  Cml = 1,    // metric embeddings, hinge loss, unit-ball projection
  NeuMf = 2,  // GMF + MLP, pointwise cross-entropy
  Pop = 3,    // global popularity
  BprB = 4,   // sign-quantized factors scored in Hamming space
};

const char* ranker_kind_name(RankerKind kind);
std::optional<RankerKind> parse_ranker_kind(const std::string& name);

struct MlpLayer {
  uint32_t out_dim = 0;
  uint32_t in_dim = 0;
  std::vector<double> weights;  // out_dim x in_dim, row-major
  std::vector<double> bias;     // out_dim
};

struct RankerModel {
  RankerKind kind = RankerKind::BprMf;

  DenseEmbeddingMatrix user_emb;  // p (GMF pair for NeuMF)
  DenseEmbeddingMatrix item_emb;  // q

  // NeuMF only: second embedding pair feeding the MLP, the pyramid itself and
  // the output projection over [gmf | mlp].
  DenseEmbeddingMatrix user_emb_mlp;
  DenseEmbeddingMatrix item_emb_mlp;
  std::vector<MlpLayer> mlp;
  std::vector<double> output_w;

  double margin = 0.0;                // CML
  std::vector<uint32_t> popularity;   // POP: per-item train counts
  BinaryCodeMatrix user_codes;        // BPR-B
  BinaryCodeMatrix item_codes;

  uint32_t num_users() const;
  uint32_t num_items() const;
  double score(uint32_t user, uint32_t item) const;

  void save(const std::string& path) const;
  static RankerModel load(const std::string& path);
};

struct RerankConfig {
  RankerKind kind = RankerKind::BprMf;
  uint32_t k = 50;
  double lambda = 0.0001;
  double h = 0.5;   // candidate sampling ratio
  uint32_t c = 200;
  double margin = 0.5;                              // CML
  std::vector<uint32_t> mlp_arch = {200, 100, 50, 25};  // NeuMF hidden widths

  uint32_t num_epochs = 100;
  uint32_t iters_per_epoch = 0;  // 0 means ceil(train_size / batch_size)
  uint32_t batch_size = 10000;
  double learning_rate = 0.001;
  uint64_t seed = 42;
  uint32_t eval_every = 10;
  uint32_t patience = 20;
  uint32_t eval_hr_cutoff = 10;
  bool async_sampler = true;
};

// Precomputed per-user candidate lists (the item sets the re-ranker is
// trained to order).
struct CandidateCache {
  uint32_t c = 0;
  std::vector<std::vector<uint32_t>> per_user;

  void save(const std::string& path) const;
  static CandidateCache load(const std::string& path);
};

CandidateCache generate_candidates(const InteractionDataset& dataset,
                                   const BinaryCodeMatrix& user_codes,
                                   const MultiIndexHashTable& index, uint32_t c, uint32_t l_max);

struct SampleStats {
  uint64_t candidate_branch = 0;
  uint64_t global_branch = 0;
  uint64_t fallback = 0;  // candidate branch drawn but no usable candidate negative

  double candidate_fraction() const {
    uint64_t total = candidate_branch + global_branch + fallback;
    return total == 0 ? 0.0 : static_cast<double>(candidate_branch) / static_cast<double>(total);
  }
};

// Mixed negative sampling: with probability h the negative comes uniformly
// from the user's candidate set minus training items, otherwise from the
// global unobserved distribution. Falls back to global when a user has no
// usable candidate negatives.
TripletBatch sample_candidate_oriented(const InteractionDataset& dataset,
                                       const CandidateCache& candidates, double h,
                                       uint32_t batch_size, Rng& rng,
                                       SampleStats* stats = nullptr);

// Batch loss and exact gradients for the trainable kinds. Embedding gradients
// come back sparse; MLP parameter gradients are dense and ordered layer by
// layer (weights then bias), followed by the output projection.
struct RankerLoss {
  double loss = 0.0;
  SparseGradient user_grad;
  SparseGradient item_grad;
  SparseGradient user_mlp_grad;
  SparseGradient item_mlp_grad;
  std::vector<std::vector<double>> mlp_weight_grads;
  std::vector<std::vector<double>> mlp_bias_grads;
  std::vector<double> output_w_grad;
};

RankerLoss ranker_loss(const RankerModel& model, const TripletBatch& batch, double lambda);

struct RankerTrainResult {
  RankerModel model;
  uint32_t best_epoch = 0;
  double best_valid_hr = -1.0;
  SampleStats sampling;
  std::vector<std::pair<uint32_t, double>> loss_curve;  // (epoch, per-triple mean loss)
};

// SGD/Adam training with early stopping on validation HR@10. When candidates
// are given the model trains with candidate-oriented sampling and validates
// by re-ranking its candidate lists; otherwise sampling and validation are
// global.
RankerTrainResult train_ranker(const InteractionDataset& dataset, const RerankConfig& config,
                               const CandidateCache* candidates = nullptr);

// Scores each candidate once and returns the top n by score (ties by
// ascending item id), skipping excluded items. exclude must be sorted.
std::vector<uint32_t> rerank(const RankerModel& model, uint32_t user,
                             const CandidateList& candidates, uint32_t n,
                             std::span<const uint32_t> exclude);

// sgn-quantizes a trained BPR-MF model into a Hamming-space ranker.
RankerModel quantize_to_bprb(const RankerModel& model);

RankerModel make_pop_model(const InteractionDataset& dataset);

// Wraps learned binary codes as a Hamming-space ranker so code quality can be
// evaluated with the standard ranking metrics.
RankerModel make_code_ranker(BinaryCodeMatrix user_codes, BinaryCodeMatrix item_codes);

}  // namespace cigar
