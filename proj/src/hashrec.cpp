#include "cigar/hashrec.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "batch_pipeline.hpp"
#include "cigar/io.hpp"
#include "cigar/parallel.hpp"

namespace cigar {

namespace {

constexpr char kHashModelMagic[4] = {'C', 'G', 'H', 'R'};
constexpr uint32_t kHashModelVersion = 1;

double stable_softplus(double z) {
  // ln(1 + e^z) without overflow; equals -ln sigmoid(-z).
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double sign_value(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// Accumulates gradients per distinct row.
class GradAccumulator {
 public:
  explicit GradAccumulator(uint32_t dim) : dim_(dim) {}

  std::span<double> slot(uint32_t row) {
    auto [it, inserted] = index_.try_emplace(row, grad_.rows.size());
    if (inserted) {
      grad_.rows.push_back(row);
      grad_.values.resize(grad_.values.size() + dim_, 0.0);
    }
    return {grad_.values.data() + it->second * dim_, dim_};
  }

  bool contains(uint32_t row) const { return index_.contains(row); }

  SparseGradient take() {
    grad_.dim = dim_;
    index_.clear();
    return std::move(grad_);
  }

  const SparseGradient& peek() const { return grad_; }

 private:
  uint32_t dim_;
  SparseGradient grad_;
  std::unordered_map<uint32_t, size_t> index_;
};

}  // namespace

TripletBatch sample_triplets(const InteractionDataset& dataset, uint32_t batch_size, Rng& rng) {
  if (dataset.num_users == 0 || dataset.num_items == 0)
    throw Error(ErrorCode::Empty, "sample_triplets: empty dataset");

  TripletBatch batch;
  batch.triples.reserve(batch_size);
  for (uint32_t t = 0; t < batch_size; ++t) {
    uint32_t u = rng.uniform_u32(dataset.num_users);
    const auto& items = dataset.train[u];
    if (items.empty())
      throw Error(ErrorCode::InvalidArgument,
                  "sample_triplets: user " + std::to_string(u) + " has no training items");
    if (items.size() >= dataset.num_items)
      throw Error(ErrorCode::InvalidArgument,
                  "sample_triplets: user " + std::to_string(u) +
                      " interacted with every item; no negative exists");
    uint32_t i = items[rng.uniform_u32(static_cast<uint32_t>(items.size()))];
    uint32_t j;
    do {
      j = rng.uniform_u32(dataset.num_items);
    } while (dataset.in_train(u, j));
    batch.triples.push_back({u, i, j});
  }
  return batch;
}

SurrogateLoss surrogate_loss(const TripletBatch& batch, const DenseEmbeddingMatrix& user_emb,
                             const DenseEmbeddingMatrix& item_emb, double alpha, double beta,
                             double lambda) {
  if (beta <= 0.0) throw Error(ErrorCode::InvalidArgument, "surrogate_loss: beta must be > 0");
  const uint32_t dim = user_emb.dim();
  if (item_emb.dim() != dim)
    throw Error(ErrorCode::InvalidArgument, "surrogate_loss: embedding dims differ");

  GradAccumulator user_acc(dim), item_acc(dim);
  double loss = 0.0;

  std::vector<double> tu(dim), ti(dim), tj(dim);
  for (const auto& [u, i, j] : batch.triples) {
    auto bu = user_emb.row(u);
    auto di = item_emb.row(i);
    auto dj = item_emb.row(j);

    double margin = 0.0;
    for (uint32_t z = 0; z < dim; ++z) {
      tu[z] = std::tanh(beta * bu[z]);
      ti[z] = std::tanh(beta * di[z]);
      tj[z] = std::tanh(beta * dj[z]);
      margin += tu[z] * (ti[z] - tj[z]);
    }
    if (!std::isfinite(margin))
      throw Error(ErrorCode::Numeric, "surrogate_loss: non-finite embedding values");

    loss += stable_softplus(-alpha * margin);
    // d/dmargin of -ln sigmoid(alpha * margin)
    double g = -alpha * sigmoid(-alpha * margin);

    item_acc.slot(i);  // materialize both rows before taking spans; a later
    item_acc.slot(j);  // insertion would invalidate earlier ones
    auto gu = user_acc.slot(u);
    auto gi = item_acc.slot(i);
    auto gj = item_acc.slot(j);
    for (uint32_t z = 0; z < dim; ++z) {
      gu[z] += g * (ti[z] - tj[z]) * beta * (1.0 - tu[z] * tu[z]);
      gi[z] += g * tu[z] * beta * (1.0 - ti[z] * ti[z]);
      gj[z] -= g * tu[z] * beta * (1.0 - tj[z] * tj[z]);
    }
  }

  // l2 on each distinct touched row.
  if (lambda != 0.0) {
    const DenseEmbeddingMatrix* mats[2] = {&user_emb, &item_emb};
    GradAccumulator* accs[2] = {&user_acc, &item_acc};
    for (int side = 0; side < 2; ++side) {
      const auto touched = accs[side]->peek().rows;  // copy: slot() appends nothing for these
      for (uint32_t r : touched) {
        auto row = mats[side]->row(r);
        auto slot = accs[side]->slot(r);
        for (uint32_t z = 0; z < dim; ++z) {
          loss += lambda * row[z] * row[z];
          slot[z] += 2.0 * lambda * row[z];
        }
      }
    }
  }

  SurrogateLoss out;
  out.loss = loss;
  out.user_grad = user_acc.take();
  out.item_grad = item_acc.take();
  return out;
}

double desired_loss(const TripletBatch& batch, const DenseEmbeddingMatrix& user_emb,
                    const DenseEmbeddingMatrix& item_emb, double alpha) {
  const uint32_t dim = user_emb.dim();
  double loss = 0.0;
  for (const auto& [u, i, j] : batch.triples) {
    auto bu = user_emb.row(u);
    auto di = item_emb.row(i);
    auto dj = item_emb.row(j);
    double margin = 0.0;
    for (uint32_t z = 0; z < dim; ++z)
      margin += sign_value(bu[z]) * (sign_value(di[z]) - sign_value(dj[z]));
    loss += stable_softplus(-alpha * margin);
  }
  return loss;
}

void adam_update(DenseEmbeddingMatrix& params, const SparseGradient& grads, AdamState& moments,
                 uint64_t step, double lr) {
  const uint32_t dim = params.dim();
  if (grads.dim != dim)
    throw Error(ErrorCode::InvalidArgument, "adam_update: gradient dim mismatch");
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  for (size_t idx = 0; idx < grads.rows.size(); ++idx) {
    uint32_t row = grads.rows[idx];
    auto g = grads.grad_row(idx);
    auto p = params.row(row);
    auto m = moments.m.row(row);
    auto v = moments.v.row(row);
    for (uint32_t z = 0; z < dim; ++z) {
      m[z] = kAdamBeta1 * m[z] + (1.0 - kAdamBeta1) * g[z];
      v[z] = kAdamBeta2 * v[z] + (1.0 - kAdamBeta2) * g[z] * g[z];
      double m_hat = m[z] / c1;
      double v_hat = v[z] / c2;
      p[z] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
    }
  }
}

double hamming_hit_rate(const BinaryCodeMatrix& user_codes, const BinaryCodeMatrix& item_codes,
                        const InteractionDataset& dataset, uint32_t cutoff,
                        const std::vector<uint32_t>& held_out) {
  std::vector<uint8_t> hits(dataset.num_users, 0);
  parallel_for(dataset.num_users, [&](size_t begin, size_t end) {
    for (size_t u = begin; u < end; ++u) {
      auto code = user_codes.row(static_cast<uint32_t>(u));
      uint32_t target = held_out[u];
      uint32_t target_dist = hamming_distance_unchecked(code, item_codes.row(target));
      uint32_t rank = 1;
      for (uint32_t i = 0; i < dataset.num_items && rank <= cutoff; ++i) {
        if (i == target || dataset.in_train(static_cast<uint32_t>(u), i)) continue;
        uint32_t d = hamming_distance_unchecked(code, item_codes.row(i));
        if (d < target_dist || (d == target_dist && i < target)) ++rank;
      }
      hits[u] = rank <= cutoff ? 1 : 0;
    }
  });
  uint64_t total = 0;
  for (uint8_t h : hits) total += h;
  return dataset.num_users == 0 ? 0.0 : static_cast<double>(total) / dataset.num_users;
}

namespace {

double quantization_error(const DenseEmbeddingMatrix& user_emb,
                          const DenseEmbeddingMatrix& item_emb, double beta) {
  const DenseEmbeddingMatrix* mats[2] = {&user_emb, &item_emb};
  double total = 0.0;
  size_t count = 0;
  for (const auto* mat : mats) {
    for (double x : mat->values()) {
      double d = std::tanh(beta * x) - sign_value(x);
      total += d * d;
    }
    count += mat->values().size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace

std::string curve_to_csv(const std::vector<EpochStats>& curve) {
  std::ostringstream out;
  out << "epoch,beta,surrogate_loss,desired_loss,quantization_error,valid_hr\n";
  out.precision(10);
  for (const auto& row : curve) {
    out << row.epoch << ',' << row.beta << ',' << row.surrogate_loss << ',' << row.desired_loss
        << ',' << row.quantization_error << ',';
    if (row.valid_hr >= 0.0) out << row.valid_hr;
    out << '\n';
  }
  return out.str();
}

HashRecResult train_hashrec(const InteractionDataset& dataset, const HashRecConfig& config,
                            const DenseEmbeddingMatrix* warm_user,
                            const DenseEmbeddingMatrix* warm_item) {
  if (dataset.num_users == 0 || dataset.num_items == 0)
    throw Error(ErrorCode::Empty, "train_hashrec: empty dataset");
  if (config.bits == 0 || config.bits % 8 != 0)
    throw Error(ErrorCode::InvalidArgument, "train_hashrec: bits must be a multiple of 8");

  const uint32_t dim = config.bits;
  const double alpha = config.resolved_alpha();
  const size_t train_size = dataset.train_size();
  const uint32_t iters =
      config.iters_per_epoch > 0
          ? config.iters_per_epoch
          : static_cast<uint32_t>((train_size + config.batch_size - 1) / config.batch_size);

  Rng rng(config.seed);
  double init_scale = 0.5 / dim;
  DenseEmbeddingMatrix user_emb =
      warm_user ? *warm_user
                : DenseEmbeddingMatrix::random_uniform(dataset.num_users, dim, -init_scale,
                                                       init_scale, rng);
  DenseEmbeddingMatrix item_emb =
      warm_item ? *warm_item
                : DenseEmbeddingMatrix::random_uniform(dataset.num_items, dim, -init_scale,
                                                       init_scale, rng);
  if (user_emb.rows() != dataset.num_users || item_emb.rows() != dataset.num_items ||
      user_emb.dim() != dim || item_emb.dim() != dim)
    throw Error(ErrorCode::InvalidArgument, "train_hashrec: warm-start shape mismatch");

  AdamState user_moments = AdamState::for_params(user_emb);
  AdamState item_moments = AdamState::for_params(item_emb);

  HashRecResult result;
  DenseEmbeddingMatrix best_user = user_emb, best_item = item_emb;
  double best_hr = -1.0;
  uint32_t best_epoch = 0;
  uint64_t step = 0;

  Rng sampler_rng = rng.fork(1);
  detail::BatchPipeline pipeline(
      [&dataset, &config, sampler_rng]() mutable {
        return sample_triplets(dataset, config.batch_size, sampler_rng);
      },
      static_cast<uint64_t>(iters) * config.num_epochs, config.async_sampler);

  uint32_t last_epoch = 0;
  for (uint32_t epoch = 1; epoch <= config.num_epochs; ++epoch) {
    last_epoch = epoch;
    const double beta = config.beta_for_epoch(epoch);
    double epoch_surrogate = 0.0, epoch_desired = 0.0;
    uint64_t epoch_triples = 0;

    for (uint32_t it = 0; it < iters; ++it) {
      TripletBatch batch = pipeline.next();
      auto [loss, user_grad, item_grad] =
          surrogate_loss(batch, user_emb, item_emb, alpha, beta, config.lambda);
      if (!std::isfinite(loss))
        throw Error(ErrorCode::Numeric,
                    "train_hashrec: non-finite loss at epoch " + std::to_string(epoch));
      epoch_surrogate += loss;
      epoch_desired += desired_loss(batch, user_emb, item_emb, alpha);
      epoch_triples += batch.size();

      ++step;
      adam_update(user_emb, user_grad, user_moments, step, config.learning_rate);
      adam_update(item_emb, item_grad, item_moments, step, config.learning_rate);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.beta = beta;
    stats.surrogate_loss = epoch_triples ? epoch_surrogate / epoch_triples : 0.0;
    stats.desired_loss = epoch_triples ? epoch_desired / epoch_triples : 0.0;
    stats.quantization_error = quantization_error(user_emb, item_emb, beta);

    bool stop = false;
    if (config.eval_every > 0 && epoch % config.eval_every == 0) {
      auto user_codes = binarize(user_emb);
      auto item_codes = binarize(item_emb);
      stats.valid_hr =
          hamming_hit_rate(user_codes, item_codes, dataset, config.eval_hr_cutoff, dataset.valid);
      if (stats.valid_hr > best_hr) {
        best_hr = stats.valid_hr;
        best_epoch = epoch;
        best_user = user_emb;
        best_item = item_emb;
      } else if (epoch - best_epoch >= config.patience) {
        stop = true;
      }
    }
    result.curve.push_back(stats);
    if (stop) break;
  }

  if (best_hr < 0.0) {  // never evaluated: keep the final state
    best_user = std::move(user_emb);
    best_item = std::move(item_emb);
    best_epoch = last_epoch;
  }

  result.model.user_codes = binarize(best_user);
  result.model.item_codes = binarize(best_item);
  result.model.user_aux = std::move(best_user);
  result.model.item_aux = std::move(best_item);
  result.best_epoch = best_epoch;
  result.best_valid_hr = best_hr;
  return result;
}

void HashModel::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kHashModelMagic, kHashModelVersion);
  w.u32(user_codes.bits());
  w.u32(user_codes.rows());
  w.u32(item_codes.rows());
  w.u64_array(user_codes.words());
  w.u64_array(item_codes.words());
  w.f64_array(user_aux.values());
  w.f64_array(item_aux.values());
  w.finish();
}

HashModel HashModel::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kHashModelMagic, kHashModelVersion);
  uint32_t bits = r.u32();
  uint32_t users = r.u32();
  uint32_t items = r.u32();
  if (bits == 0 || bits % 8 != 0)
    throw Error(ErrorCode::Format, "inconsistent hash model container: " + path);
  HashModel model;
  model.user_codes = BinaryCodeMatrix(users, bits);
  model.item_codes = BinaryCodeMatrix(items, bits);
  model.user_codes.words() = r.u64_array();
  model.item_codes.words() = r.u64_array();
  model.user_aux = DenseEmbeddingMatrix(users, bits);
  model.user_aux.values() = r.f64_array();
  model.item_aux = DenseEmbeddingMatrix(items, bits);
  model.item_aux.values() = r.f64_array();
  size_t wpr = (bits + 63) / 64;
  if (model.user_codes.words().size() != static_cast<size_t>(users) * wpr ||
      model.item_codes.words().size() != static_cast<size_t>(items) * wpr ||
      model.user_aux.values().size() != static_cast<size_t>(users) * bits ||
      model.item_aux.values().size() != static_cast<size_t>(items) * bits)
    throw Error(ErrorCode::Format, "inconsistent hash model container: " + path);
  return model;
}

}  // namespace cigar
