#include "cigar/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "batch_pipeline.hpp"
#include "cigar/io.hpp"
#include "cigar/parallel.hpp"

namespace cigar {

namespace {

constexpr char kRankerMagic[4] = {'C', 'G', 'R', 'K'};
constexpr uint32_t kRankerVersion = 1;
constexpr char kCandidatesMagic[4] = {'C', 'G', 'C', 'D'};
constexpr uint32_t kCandidatesVersion = 1;

double stable_softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t z = 0; z < a.size(); ++z) s += a[z] * b[z];
  return s;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t z = 0; z < a.size(); ++z) {
    double d = a[z] - b[z];
    s += d * d;
  }
  return std::sqrt(s);
}

// Same sparse accumulation idiom as the hashing trainer.
class GradAccumulator {
 public:
  explicit GradAccumulator(uint32_t dim) : dim_(dim) { grad_.dim = dim; }

  std::span<double> slot(uint32_t row) {
    auto [it, inserted] = index_.try_emplace(row, grad_.rows.size());
    if (inserted) {
      grad_.rows.push_back(row);
      grad_.values.resize(grad_.values.size() + dim_, 0.0);
    }
    return {grad_.values.data() + it->second * dim_, dim_};
  }

  const SparseGradient& peek() const { return grad_; }
  SparseGradient take() {
    index_.clear();
    return std::move(grad_);
  }

 private:
  uint32_t dim_;
  SparseGradient grad_;
  std::unordered_map<uint32_t, size_t> index_;
};

void add_row_l2(double lambda, const DenseEmbeddingMatrix& mat, GradAccumulator& acc,
                double& loss) {
  if (lambda == 0.0) return;
  const auto touched = acc.peek().rows;
  for (uint32_t r : touched) {
    auto row = mat.row(r);
    auto slot = acc.slot(r);
    for (size_t z = 0; z < row.size(); ++z) {
      loss += lambda * row[z] * row[z];
      slot[z] += 2.0 * lambda * row[z];
    }
  }
}

// Forward state of one NeuMF evaluation, kept for backprop.
struct NeuMfTrace {
  std::vector<double> gmf;                          // p1 (.) q1
  std::vector<std::vector<double>> pre;             // per layer, pre-activation
  std::vector<std::vector<double>> act;             // per layer, post-ReLU
  double score = 0.0;
};

NeuMfTrace neumf_forward(const RankerModel& model, uint32_t user, uint32_t item) {
  NeuMfTrace trace;
  auto p1 = model.user_emb.row(user);
  auto q1 = model.item_emb.row(item);
  auto p2 = model.user_emb_mlp.row(user);
  auto q2 = model.item_emb_mlp.row(item);
  const uint32_t k = model.user_emb.dim();

  trace.gmf.resize(k);
  for (uint32_t z = 0; z < k; ++z) trace.gmf[z] = p1[z] * q1[z];

  std::vector<double> input(p2.begin(), p2.end());
  input.insert(input.end(), q2.begin(), q2.end());

  const std::vector<double>* prev = &input;
  trace.pre.resize(model.mlp.size());
  trace.act.resize(model.mlp.size());
  for (size_t t = 0; t < model.mlp.size(); ++t) {
    const MlpLayer& layer = model.mlp[t];
    auto& pre = trace.pre[t];
    auto& act = trace.act[t];
    pre.resize(layer.out_dim);
    act.resize(layer.out_dim);
    for (uint32_t o = 0; o < layer.out_dim; ++o) {
      double s = layer.bias[o];
      const double* w = layer.weights.data() + static_cast<size_t>(o) * layer.in_dim;
      for (uint32_t z = 0; z < layer.in_dim; ++z) s += w[z] * (*prev)[z];
      pre[o] = s;
      act[o] = s > 0.0 ? s : 0.0;
    }
    prev = &act;
  }

  double score = 0.0;
  for (uint32_t z = 0; z < k; ++z) score += model.output_w[z] * trace.gmf[z];
  const std::vector<double>& mlp_out = model.mlp.empty() ? input : trace.act.back();
  for (size_t z = 0; z < mlp_out.size(); ++z) score += model.output_w[k + z] * mlp_out[z];
  trace.score = score;
  return trace;
}

// Backprop d(loss)/d(score) = dscore through one NeuMF evaluation.
void neumf_backward(const RankerModel& model, uint32_t user, uint32_t item,
                    const NeuMfTrace& trace, double dscore, RankerLoss& out,
                    GradAccumulator& user_acc, GradAccumulator& item_acc,
                    GradAccumulator& user_mlp_acc, GradAccumulator& item_mlp_acc) {
  const uint32_t k = model.user_emb.dim();
  auto p1 = model.user_emb.row(user);
  auto q1 = model.item_emb.row(item);
  auto p2 = model.user_emb_mlp.row(user);
  auto q2 = model.item_emb_mlp.row(item);

  std::vector<double> input(p2.begin(), p2.end());
  input.insert(input.end(), q2.begin(), q2.end());
  const std::vector<double>& mlp_out = model.mlp.empty() ? input : trace.act.back();

  // output projection
  for (uint32_t z = 0; z < k; ++z) out.output_w_grad[z] += dscore * trace.gmf[z];
  for (size_t z = 0; z < mlp_out.size(); ++z)
    out.output_w_grad[k + z] += dscore * mlp_out[z];

  // GMF path
  auto gp1 = user_acc.slot(user);
  auto gq1 = item_acc.slot(item);
  for (uint32_t z = 0; z < k; ++z) {
    gp1[z] += dscore * model.output_w[z] * q1[z];
    gq1[z] += dscore * model.output_w[z] * p1[z];
  }

  // MLP path
  std::vector<double> gz(mlp_out.size());
  for (size_t z = 0; z < gz.size(); ++z) gz[z] = dscore * model.output_w[k + z];
  for (size_t t = model.mlp.size(); t-- > 0;) {
    const MlpLayer& layer = model.mlp[t];
    const std::vector<double>& layer_input = t == 0 ? input : trace.act[t - 1];
    std::vector<double> gin(layer.in_dim, 0.0);
    auto& gw = out.mlp_weight_grads[t];
    auto& gb = out.mlp_bias_grads[t];
    for (uint32_t o = 0; o < layer.out_dim; ++o) {
      if (trace.pre[t][o] <= 0.0) continue;  // ReLU gate
      double ga = gz[o];
      gb[o] += ga;
      const double* w = layer.weights.data() + static_cast<size_t>(o) * layer.in_dim;
      double* gwo = gw.data() + static_cast<size_t>(o) * layer.in_dim;
      for (uint32_t z = 0; z < layer.in_dim; ++z) {
        gwo[z] += ga * layer_input[z];
        gin[z] += ga * w[z];
      }
    }
    gz = std::move(gin);
  }

  const uint32_t k2 = model.user_emb_mlp.dim();
  auto gp2 = user_mlp_acc.slot(user);
  auto gq2 = item_mlp_acc.slot(item);
  for (uint32_t z = 0; z < k2; ++z) {
    gp2[z] += gz[z];
    gq2[z] += gz[k2 + z];
  }
}

// Adam for flat parameter vectors (MLP weights, output projection).
struct VecAdam {
  std::vector<double> m, v;

  explicit VecAdam(size_t n) : m(n, 0.0), v(n, 0.0) {}

  void update(std::vector<double>& p, const std::vector<double>& g, uint64_t step, double lr) {
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
    for (size_t z = 0; z < p.size(); ++z) {
      m[z] = kAdamBeta1 * m[z] + (1.0 - kAdamBeta1) * g[z];
      v[z] = kAdamBeta2 * v[z] + (1.0 - kAdamBeta2) * g[z] * g[z];
      p[z] -= lr * (m[z] / c1) / (std::sqrt(v[z] / c2) + kAdamEps);
    }
  }
};

void project_unit_ball(DenseEmbeddingMatrix& emb, const SparseGradient& touched) {
  for (uint32_t r : touched.rows) {
    auto row = emb.row(r);
    double norm2 = 0.0;
    for (double v : row) norm2 += v * v;
    if (norm2 > 1.0) {
      double scale = 1.0 / std::sqrt(norm2);
      for (double& v : row) v *= scale;
    }
  }
}

}  // namespace

const char* ranker_kind_name(RankerKind kind) {
  switch (kind) {
    case RankerKind::BprMf: return "bpr-mf";
    case RankerKind::Cml: return "cml";
    case RankerKind::NeuMf: return "neumf";
    case RankerKind::Pop: return "pop";
    case RankerKind::BprB: return "bpr-b";
  }
  return "?";
}

std::optional<RankerKind> parse_ranker_kind(const std::string& name) {
  if (name == "bpr-mf" || name == "bprmf") return RankerKind::BprMf;
  if (name == "cml") return RankerKind::Cml;
  if (name == "neumf") return RankerKind::NeuMf;
  if (name == "pop") return RankerKind::Pop;
  if (name == "bpr-b" || name == "bprb") return RankerKind::BprB;
  return std::nullopt;
}

uint32_t RankerModel::num_users() const {
  switch (kind) {
    case RankerKind::Pop: return 0;
    case RankerKind::BprB: return user_codes.rows();
    default: return user_emb.rows();
  }
}

uint32_t RankerModel::num_items() const {
  switch (kind) {
    case RankerKind::Pop: return static_cast<uint32_t>(popularity.size());
    case RankerKind::BprB: return item_codes.rows();
    default: return item_emb.rows();
  }
}

double RankerModel::score(uint32_t user, uint32_t item) const {
  if (item >= num_items() || (kind != RankerKind::Pop && user >= num_users()))
    throw Error(ErrorCode::InvalidArgument, "score: id out of range");
  switch (kind) {
    case RankerKind::BprMf:
      return dot(user_emb.row(user), item_emb.row(item));
    case RankerKind::Cml:
      return -euclidean_distance(user_emb.row(user), item_emb.row(item));
    case RankerKind::NeuMf:
      return neumf_forward(*this, user, item).score;
    case RankerKind::Pop:
      return static_cast<double>(popularity[item]);
    case RankerKind::BprB:
      return static_cast<double>(
          code_inner_product(user_codes.row(user), item_codes.row(item), user_codes.bits()));
  }
  return 0.0;
}

RankerLoss ranker_loss(const RankerModel& model, const TripletBatch& batch, double lambda) {
  RankerLoss out;
  const uint32_t k = model.user_emb.dim();
  GradAccumulator user_acc(k), item_acc(k);

  switch (model.kind) {
    case RankerKind::BprMf: {
      for (const auto& [u, i, j] : batch.triples) {
        auto pu = model.user_emb.row(u);
        auto qi = model.item_emb.row(i);
        auto qj = model.item_emb.row(j);
        double x = dot(pu, qi) - dot(pu, qj);
        out.loss += stable_softplus(-x);
        double g = -sigmoid(-x);
        item_acc.slot(i);  // materialize before taking spans
        item_acc.slot(j);
        auto gu = user_acc.slot(u);
        auto gi = item_acc.slot(i);
        auto gj = item_acc.slot(j);
        for (uint32_t z = 0; z < k; ++z) {
          gu[z] += g * (qi[z] - qj[z]);
          gi[z] += g * pu[z];
          gj[z] -= g * pu[z];
        }
      }
      break;
    }
    case RankerKind::Cml: {
      for (const auto& [u, i, j] : batch.triples) {
        auto pu = model.user_emb.row(u);
        auto qi = model.item_emb.row(i);
        auto qj = model.item_emb.row(j);
        double di = euclidean_distance(pu, qi);
        double dj = euclidean_distance(pu, qj);
        double hinge = model.margin + di - dj;
        if (hinge <= 0.0) continue;
        out.loss += hinge;
        item_acc.slot(i);  // materialize before taking spans
        item_acc.slot(j);
        auto gu = user_acc.slot(u);
        auto gi = item_acc.slot(i);
        auto gj = item_acc.slot(j);
        for (uint32_t z = 0; z < k; ++z) {
          // subgradient 0 at coincident points
          double gdi = di > 0.0 ? (pu[z] - qi[z]) / di : 0.0;
          double gdj = dj > 0.0 ? (pu[z] - qj[z]) / dj : 0.0;
          gu[z] += gdi - gdj;
          gi[z] -= gdi;
          gj[z] += gdj;
        }
      }
      break;
    }
    case RankerKind::NeuMf: {
      const uint32_t k2 = model.user_emb_mlp.dim();
      GradAccumulator user_mlp_acc(k2), item_mlp_acc(k2);
      out.mlp_weight_grads.resize(model.mlp.size());
      out.mlp_bias_grads.resize(model.mlp.size());
      for (size_t t = 0; t < model.mlp.size(); ++t) {
        out.mlp_weight_grads[t].assign(model.mlp[t].weights.size(), 0.0);
        out.mlp_bias_grads[t].assign(model.mlp[t].bias.size(), 0.0);
      }
      out.output_w_grad.assign(model.output_w.size(), 0.0);

      for (const auto& [u, i, j] : batch.triples) {
        // pointwise cross-entropy: target 1 for the observed item, 0 for the
        // sampled negative
        NeuMfTrace pos = neumf_forward(model, u, i);
        out.loss += stable_softplus(-pos.score);
        neumf_backward(model, u, i, pos, -sigmoid(-pos.score), out, user_acc, item_acc,
                       user_mlp_acc, item_mlp_acc);

        NeuMfTrace neg = neumf_forward(model, u, j);
        out.loss += stable_softplus(neg.score);
        neumf_backward(model, u, j, neg, sigmoid(neg.score), out, user_acc, item_acc,
                       user_mlp_acc, item_mlp_acc);
      }
      add_row_l2(lambda, model.user_emb_mlp, user_mlp_acc, out.loss);
      add_row_l2(lambda, model.item_emb_mlp, item_mlp_acc, out.loss);
      out.user_mlp_grad = user_mlp_acc.take();
      out.item_mlp_grad = item_mlp_acc.take();
      break;
    }
    default:
      throw Error(ErrorCode::InvalidArgument,
                  std::string("ranker_loss: ") + ranker_kind_name(model.kind) +
                      " has no trainable loss");
  }

  add_row_l2(lambda, model.user_emb, user_acc, out.loss);
  add_row_l2(lambda, model.item_emb, item_acc, out.loss);
  out.user_grad = user_acc.take();
  out.item_grad = item_acc.take();
  return out;
}

CandidateCache generate_candidates(const InteractionDataset& dataset,
                                   const BinaryCodeMatrix& user_codes,
                                   const MultiIndexHashTable& index, uint32_t c, uint32_t l_max) {
  CandidateCache cache;
  cache.c = c;
  cache.per_user.resize(dataset.num_users);
  auto popularity = dataset.popularity_ranking();
  parallel_for(dataset.num_users, [&](size_t begin, size_t end) {
    QueryScratch scratch;
    for (size_t u = begin; u < end; ++u) {
      auto list = retrieve_candidates(index, user_codes.row(static_cast<uint32_t>(u)), c, l_max,
                                      dataset.train[u], popularity, scratch);
      cache.per_user[u] = std::move(list.items);
    }
  });
  return cache;
}

TripletBatch sample_candidate_oriented(const InteractionDataset& dataset,
                                       const CandidateCache& candidates, double h,
                                       uint32_t batch_size, Rng& rng, SampleStats* stats) {
  if (h < 0.0 || h > 1.0)
    throw Error(ErrorCode::InvalidArgument, "sample_candidate_oriented: h must be in [0,1]");
  if (candidates.per_user.size() < dataset.num_users)
    throw Error(ErrorCode::InvalidArgument,
                "sample_candidate_oriented: candidate cache does not cover every user");

  TripletBatch batch;
  batch.triples.reserve(batch_size);
  for (uint32_t t = 0; t < batch_size; ++t) {
    uint32_t u = rng.uniform_u32(dataset.num_users);
    const auto& items = dataset.train[u];
    if (items.empty())
      throw Error(ErrorCode::InvalidArgument,
                  "sample_candidate_oriented: user " + std::to_string(u) +
                      " has no training items");
    uint32_t i = items[rng.uniform_u32(static_cast<uint32_t>(items.size()))];

    bool use_candidates = h > 0.0 && (h >= 1.0 || rng.uniform_double() < h);
    uint32_t j = 0;
    bool sampled = false;
    if (use_candidates) {
      const auto& cand = candidates.per_user[u];
      if (!cand.empty()) {
        // uniform over the candidate set minus training items; ids outside
        // the catalogue (stale cache) are unusable
        auto usable_item = [&](uint32_t item) {
          return item < dataset.num_items && !dataset.in_train(u, item);
        };
        for (uint32_t attempt = 0; attempt < 64 && !sampled; ++attempt) {
          uint32_t pick = cand[rng.uniform_u32(static_cast<uint32_t>(cand.size()))];
          if (usable_item(pick)) {
            j = pick;
            sampled = true;
          }
        }
        if (!sampled) {
          std::vector<uint32_t> usable;
          usable.reserve(cand.size());
          for (uint32_t item : cand)
            if (usable_item(item)) usable.push_back(item);
          if (!usable.empty()) {
            j = usable[rng.uniform_u32(static_cast<uint32_t>(usable.size()))];
            sampled = true;
          }
        }
      }
      if (stats) ++(sampled ? stats->candidate_branch : stats->fallback);
    } else if (stats) {
      ++stats->global_branch;
    }

    if (!sampled) {
      if (items.size() >= dataset.num_items)
        throw Error(ErrorCode::InvalidArgument,
                    "sample_candidate_oriented: user " + std::to_string(u) +
                        " interacted with every item; no negative exists");
      do {
        j = rng.uniform_u32(dataset.num_items);
      } while (dataset.in_train(u, j));
    }
    batch.triples.push_back({u, i, j});
  }
  return batch;
}

std::vector<uint32_t> rerank(const RankerModel& model, uint32_t user,
                             const CandidateList& candidates, uint32_t n,
                             std::span<const uint32_t> exclude) {
  std::vector<std::pair<double, uint32_t>> scored;
  scored.reserve(candidates.size());
  for (uint32_t item : candidates.items) {
    if (std::binary_search(exclude.begin(), exclude.end(), item)) continue;
    scored.emplace_back(model.score(user, item), item);
  }
  auto better = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  size_t keep = std::min<size_t>(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(), better);

  std::vector<uint32_t> out;
  out.reserve(keep);
  for (size_t idx = 0; idx < keep; ++idx) out.push_back(scored[idx].second);
  return out;
}

RankerModel quantize_to_bprb(const RankerModel& model) {
  if (model.kind != RankerKind::BprMf)
    throw Error(ErrorCode::InvalidArgument,
                std::string("quantize_to_bprb: expected a bpr-mf model, got ") +
                    ranker_kind_name(model.kind));
  RankerModel out;
  out.kind = RankerKind::BprB;
  out.user_codes = binarize(model.user_emb);
  out.item_codes = binarize(model.item_emb);
  return out;
}

RankerModel make_pop_model(const InteractionDataset& dataset) {
  RankerModel model;
  model.kind = RankerKind::Pop;
  model.popularity = dataset.train_counts();
  return model;
}

RankerModel make_code_ranker(BinaryCodeMatrix user_codes, BinaryCodeMatrix item_codes) {
  RankerModel model;
  model.kind = RankerKind::BprB;
  model.user_codes = std::move(user_codes);
  model.item_codes = std::move(item_codes);
  return model;
}

namespace {

// HR@cutoff on the validation split: full ranking for plain models,
// candidate re-ranking when the model is trained against candidate lists.
double validation_hr(const RankerModel& model, const InteractionDataset& dataset,
                     const CandidateCache* candidates, uint32_t cutoff) {
  std::vector<uint8_t> hits(dataset.num_users, 0);
  parallel_for(dataset.num_users, [&](size_t begin, size_t end) {
    for (size_t uu = begin; uu < end; ++uu) {
      uint32_t u = static_cast<uint32_t>(uu);
      uint32_t target = dataset.valid[u];
      if (candidates) {
        CandidateList list;
        list.items = candidates->per_user[u];
        list.distances.assign(list.items.size(), 0);
        auto top = rerank(model, u, list, cutoff, dataset.train[u]);
        hits[u] = std::find(top.begin(), top.end(), target) != top.end() ? 1 : 0;
      } else {
        double target_score = model.score(u, target);
        uint32_t rank = 1;
        for (uint32_t i = 0; i < dataset.num_items && rank <= cutoff; ++i) {
          if (i == target || dataset.in_train(u, i)) continue;
          double s = model.score(u, i);
          if (s > target_score || (s == target_score && i < target)) ++rank;
        }
        hits[u] = rank <= cutoff ? 1 : 0;
      }
    }
  });
  uint64_t total = 0;
  for (uint8_t h : hits) total += h;
  return dataset.num_users == 0 ? 0.0 : static_cast<double>(total) / dataset.num_users;
}

RankerModel init_model(const InteractionDataset& dataset, const RerankConfig& config, Rng& rng) {
  RankerModel model;
  model.kind = config.kind;
  if (config.k == 0)
    throw Error(ErrorCode::InvalidArgument, "train_ranker: embedding size must be positive");

  double scale = 0.05;
  if (config.kind == RankerKind::Cml) scale = 0.5 / std::sqrt(static_cast<double>(config.k));
  model.user_emb =
      DenseEmbeddingMatrix::random_uniform(dataset.num_users, config.k, -scale, scale, rng);
  model.item_emb =
      DenseEmbeddingMatrix::random_uniform(dataset.num_items, config.k, -scale, scale, rng);
  model.margin = config.margin;

  if (config.kind == RankerKind::NeuMf) {
    model.user_emb_mlp =
        DenseEmbeddingMatrix::random_uniform(dataset.num_users, config.k, -scale, scale, rng);
    model.item_emb_mlp =
        DenseEmbeddingMatrix::random_uniform(dataset.num_items, config.k, -scale, scale, rng);
    uint32_t in_dim = 2 * config.k;
    for (uint32_t width : config.mlp_arch) {
      MlpLayer layer;
      layer.out_dim = width;
      layer.in_dim = in_dim;
      double glorot = std::sqrt(6.0 / (in_dim + width));
      layer.weights.resize(static_cast<size_t>(width) * in_dim);
      for (double& w : layer.weights) w = rng.uniform_range(-glorot, glorot);
      layer.bias.assign(width, 0.0);
      model.mlp.push_back(std::move(layer));
      in_dim = width;
    }
    model.output_w.resize(config.k + in_dim);
    for (double& w : model.output_w) w = rng.uniform_range(-scale, scale);
  }
  return model;
}

}  // namespace

RankerTrainResult train_ranker(const InteractionDataset& dataset, const RerankConfig& config,
                               const CandidateCache* candidates) {
  if (dataset.num_users == 0 || dataset.num_items == 0)
    throw Error(ErrorCode::Empty, "train_ranker: empty dataset");

  RankerTrainResult result;
  if (config.kind == RankerKind::Pop) {
    result.model = make_pop_model(dataset);
    return result;
  }
  if (config.kind == RankerKind::BprB)
    throw Error(ErrorCode::InvalidArgument,
                "train_ranker: bpr-b is obtained by quantizing a trained bpr-mf model");

  Rng rng(config.seed);
  RankerModel model = init_model(dataset, config, rng);

  const size_t train_size = dataset.train_size();
  const uint32_t iters =
      config.iters_per_epoch > 0
          ? config.iters_per_epoch
          : static_cast<uint32_t>((train_size + config.batch_size - 1) / config.batch_size);

  AdamState user_moments = AdamState::for_params(model.user_emb);
  AdamState item_moments = AdamState::for_params(model.item_emb);
  AdamState user_mlp_moments, item_mlp_moments;
  std::vector<VecAdam> weight_adam, bias_adam;
  VecAdam output_w_adam(model.output_w.size());
  if (config.kind == RankerKind::NeuMf) {
    user_mlp_moments = AdamState::for_params(model.user_emb_mlp);
    item_mlp_moments = AdamState::for_params(model.item_emb_mlp);
    for (const auto& layer : model.mlp) {
      weight_adam.emplace_back(layer.weights.size());
      bias_adam.emplace_back(layer.bias.size());
    }
  }

  SampleStats stats;
  RankerModel best_model = model;
  double best_hr = -1.0;
  uint32_t best_epoch = 0;
  uint64_t step = 0;
  uint32_t last_epoch = 0;

  {
    // The pipeline must be destroyed (sampler thread joined) before the
    // sampling stats are read.
    Rng sampler_rng = rng.fork(1);
    auto sampler = [&dataset, &config, candidates, &stats, sampler_rng]() mutable {
      if (candidates)
        return sample_candidate_oriented(dataset, *candidates, config.h, config.batch_size,
                                         sampler_rng, &stats);
      return sample_triplets(dataset, config.batch_size, sampler_rng);
    };
    detail::BatchPipeline pipeline(sampler, static_cast<uint64_t>(iters) * config.num_epochs,
                                   config.async_sampler);

    for (uint32_t epoch = 1; epoch <= config.num_epochs; ++epoch) {
      last_epoch = epoch;
      double epoch_loss = 0.0;
      uint64_t epoch_triples = 0;
      for (uint32_t it = 0; it < iters; ++it) {
        TripletBatch batch = pipeline.next();
        RankerLoss grads = ranker_loss(model, batch, config.lambda);
        if (!std::isfinite(grads.loss))
          throw Error(ErrorCode::Numeric,
                      "train_ranker: non-finite loss at epoch " + std::to_string(epoch));
        epoch_loss += grads.loss;
        epoch_triples += batch.size();

        ++step;
        adam_update(model.user_emb, grads.user_grad, user_moments, step, config.learning_rate);
        adam_update(model.item_emb, grads.item_grad, item_moments, step, config.learning_rate);
        if (config.kind == RankerKind::Cml) {
          project_unit_ball(model.user_emb, grads.user_grad);
          project_unit_ball(model.item_emb, grads.item_grad);
        } else if (config.kind == RankerKind::NeuMf) {
          adam_update(model.user_emb_mlp, grads.user_mlp_grad, user_mlp_moments, step,
                      config.learning_rate);
          adam_update(model.item_emb_mlp, grads.item_mlp_grad, item_mlp_moments, step,
                      config.learning_rate);
          for (size_t t = 0; t < model.mlp.size(); ++t) {
            weight_adam[t].update(model.mlp[t].weights, grads.mlp_weight_grads[t], step,
                                  config.learning_rate);
            bias_adam[t].update(model.mlp[t].bias, grads.mlp_bias_grads[t], step,
                                config.learning_rate);
          }
          output_w_adam.update(model.output_w, grads.output_w_grad, step, config.learning_rate);
        }
      }
      result.loss_curve.emplace_back(epoch,
                                     epoch_triples ? epoch_loss / epoch_triples : 0.0);

      if (config.eval_every > 0 && epoch % config.eval_every == 0) {
        double hr = validation_hr(model, dataset, candidates, config.eval_hr_cutoff);
        if (hr > best_hr) {
          best_hr = hr;
          best_epoch = epoch;
          best_model = model;
        } else if (epoch - best_epoch >= config.patience) {
          break;
        }
      }
    }
  }

  if (best_hr < 0.0) {
    best_model = std::move(model);
    best_epoch = last_epoch;
  }
  result.model = std::move(best_model);
  result.best_epoch = best_epoch;
  result.best_valid_hr = best_hr;
  result.sampling = stats;
  return result;
}

void CandidateCache::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kCandidatesMagic, kCandidatesVersion);
  w.u32(static_cast<uint32_t>(per_user.size()));
  w.u32(c);
  for (const auto& items : per_user) w.u32_array(items);
  w.finish();
}

CandidateCache CandidateCache::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kCandidatesMagic, kCandidatesVersion);
  CandidateCache cache;
  uint32_t users = r.u32();
  cache.c = r.u32();
  cache.per_user.resize(users);
  for (auto& items : cache.per_user) items = r.u32_array();
  return cache;
}

void RankerModel::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kRankerMagic, kRankerVersion);
  w.u8(static_cast<uint8_t>(kind));
  switch (kind) {
    case RankerKind::BprMf:
    case RankerKind::Cml:
      w.u32(user_emb.rows());
      w.u32(item_emb.rows());
      w.u32(user_emb.dim());
      w.f64(margin);
      w.f64_array(user_emb.values());
      w.f64_array(item_emb.values());
      break;
    case RankerKind::NeuMf: {
      w.u32(user_emb.rows());
      w.u32(item_emb.rows());
      w.u32(user_emb.dim());
      w.f64_array(user_emb.values());
      w.f64_array(item_emb.values());
      w.f64_array(user_emb_mlp.values());
      w.f64_array(item_emb_mlp.values());
      w.u32(static_cast<uint32_t>(mlp.size()));
      for (const auto& layer : mlp) {
        w.u32(layer.out_dim);
        w.u32(layer.in_dim);
        w.f64_array(layer.weights);
        w.f64_array(layer.bias);
      }
      w.f64_array(output_w);
      break;
    }
    case RankerKind::Pop:
      w.u32_array(popularity);
      break;
    case RankerKind::BprB:
      w.u32(user_codes.rows());
      w.u32(item_codes.rows());
      w.u32(user_codes.bits());
      w.u64_array(user_codes.words());
      w.u64_array(item_codes.words());
      break;
  }
  w.finish();
}

RankerModel RankerModel::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kRankerMagic, kRankerVersion);
  RankerModel model;
  uint8_t kind_tag = r.u8();
  if (kind_tag > static_cast<uint8_t>(RankerKind::BprB))
    throw Error(ErrorCode::Format, "unknown ranker kind in " + path);
  model.kind = static_cast<RankerKind>(kind_tag);

  auto corrupt = [&path]() -> Error {
    return Error(ErrorCode::Format, "inconsistent ranker container: " + path);
  };
  auto read_matrix = [&](uint32_t rows, uint32_t dim) {
    DenseEmbeddingMatrix mat(rows, dim);
    mat.values() = r.f64_array();
    if (mat.values().size() != static_cast<size_t>(rows) * dim) throw corrupt();
    return mat;
  };

  switch (model.kind) {
    case RankerKind::BprMf:
    case RankerKind::Cml: {
      uint32_t users = r.u32();
      uint32_t items = r.u32();
      uint32_t k = r.u32();
      model.margin = r.f64();
      model.user_emb = read_matrix(users, k);
      model.item_emb = read_matrix(items, k);
      break;
    }
    case RankerKind::NeuMf: {
      uint32_t users = r.u32();
      uint32_t items = r.u32();
      uint32_t k = r.u32();
      model.user_emb = read_matrix(users, k);
      model.item_emb = read_matrix(items, k);
      model.user_emb_mlp = read_matrix(users, k);
      model.item_emb_mlp = read_matrix(items, k);
      uint32_t layers = r.u32();
      uint32_t expect_in = 2 * k;
      for (uint32_t t = 0; t < layers; ++t) {
        MlpLayer layer;
        layer.out_dim = r.u32();
        layer.in_dim = r.u32();
        layer.weights = r.f64_array();
        layer.bias = r.f64_array();
        if (layer.in_dim != expect_in ||
            layer.weights.size() != static_cast<size_t>(layer.out_dim) * layer.in_dim ||
            layer.bias.size() != layer.out_dim)
          throw corrupt();
        expect_in = layer.out_dim;
        model.mlp.push_back(std::move(layer));
      }
      model.output_w = r.f64_array();
      if (model.output_w.size() != static_cast<size_t>(k) + expect_in) throw corrupt();
      break;
    }
    case RankerKind::Pop:
      model.popularity = r.u32_array();
      break;
    case RankerKind::BprB: {
      uint32_t users = r.u32();
      uint32_t items = r.u32();
      uint32_t bits = r.u32();
      if (bits == 0 || bits % 8 != 0) throw corrupt();
      model.user_codes = BinaryCodeMatrix(users, bits);
      model.user_codes.words() = r.u64_array();
      model.item_codes = BinaryCodeMatrix(items, bits);
      model.item_codes.words() = r.u64_array();
      size_t wpr = (bits + 63) / 64;
      if (model.user_codes.words().size() != static_cast<size_t>(users) * wpr ||
          model.item_codes.words().size() != static_cast<size_t>(items) * wpr)
        throw corrupt();
      break;
    }
  }
  return model;
}

}  // namespace cigar
