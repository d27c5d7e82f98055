#pragma once

// Shared fixtures and independent oracles for the test suites. Oracles here
// deliberately recompute results with the most direct method available so
// they stay independent of the code paths they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cigar/dataset.hpp"
#include "cigar/embedding.hpp"
#include "cigar/hashrec.hpp"
#include "cigar/mih.hpp"
#include "cigar/ranker.hpp"
#include "cigar/rng.hpp"

namespace testutil {

// A dataset with planted group structure: users in group g interact mostly
// with items in group g, so preference-preserving codes are learnable.
inline cigar::InteractionDataset make_clustered_dataset(uint32_t num_users, uint32_t num_items,
                                                        uint32_t groups, uint32_t train_per_user,
                                                        uint64_t seed) {
  cigar::InteractionDataset ds;
  ds.num_users = num_users;
  ds.num_items = num_items;
  ds.train.resize(num_users);
  ds.valid.resize(num_users);
  ds.test.resize(num_users);
  for (uint32_t u = 0; u < num_users; ++u) ds.user_ids.push_back(u);
  for (uint32_t i = 0; i < num_items; ++i) ds.item_ids.push_back(i);

  cigar::Rng rng(seed);
  uint32_t per_group = num_items / groups;
  for (uint32_t u = 0; u < num_users; ++u) {
    uint32_t g = u % groups;
    std::set<uint32_t> chosen;
    while (chosen.size() < train_per_user + 2) {
      uint32_t item;
      if (rng.uniform_double() < 0.9) {
        item = g * per_group + rng.uniform_u32(per_group);
      } else {
        item = rng.uniform_u32(num_items);
      }
      chosen.insert(item);
    }
    std::vector<uint32_t> items(chosen.begin(), chosen.end());
    // held-out picks are rotated deterministically
    ds.valid[u] = items[u % items.size()];
    ds.test[u] = items[(u + 1) % items.size()];
    for (uint32_t item : items)
      if (item != ds.valid[u] && item != ds.test[u]) ds.train[u].push_back(item);
  }
  return ds;
}

inline cigar::BinaryCodeMatrix random_codes(uint32_t rows, uint32_t bits, uint64_t seed) {
  cigar::BinaryCodeMatrix codes(rows, bits);
  cigar::Rng rng(seed);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t b = 0; b < bits; ++b)
      if (rng.next_u64() & 1) codes.set_bit(r, b, true);
  return codes;
}

// A ranker whose score(u, i) equals scores[u][i] exactly: item embeddings are
// one-hot, user embeddings carry the score rows.
inline cigar::RankerModel make_score_model(const std::vector<std::vector<double>>& scores) {
  cigar::RankerModel model;
  model.kind = cigar::RankerKind::BprMf;
  uint32_t num_users = static_cast<uint32_t>(scores.size());
  uint32_t num_items = static_cast<uint32_t>(scores.empty() ? 0 : scores[0].size());
  model.user_emb = cigar::DenseEmbeddingMatrix(num_users, num_items);
  model.item_emb = cigar::DenseEmbeddingMatrix(num_items, num_items);
  for (uint32_t u = 0; u < num_users; ++u) {
    auto row = model.user_emb.row(u);
    for (uint32_t i = 0; i < num_items; ++i) row[i] = scores[u][i];
  }
  for (uint32_t i = 0; i < num_items; ++i) model.item_emb.row(i)[i] = 1.0;
  return model;
}

// Brute-force distance histogram of every item to the query.
inline std::map<uint32_t, std::set<uint32_t>> oracle_items_by_distance(
    const cigar::BinaryCodeMatrix& item_codes, std::span<const uint64_t> query) {
  std::map<uint32_t, std::set<uint32_t>> by_distance;
  for (uint32_t i = 0; i < item_codes.rows(); ++i) {
    auto row = item_codes.row(i);
    uint32_t d = 0;
    for (size_t w = 0; w < row.size(); ++w) {
      uint64_t x = row[w] ^ query[w];
      while (x) {  // independent bit-count
        x &= x - 1;
        ++d;
      }
    }
    by_distance[d].insert(i);
  }
  return by_distance;
}

// Checks one query against the exhaustive oracle: at every distance class
// that is (a) fully reachable at the probed radius and (b) not cut by the
// top-c truncation, the returned items must equal the oracle's class.
// Returns an empty string on success, a diagnostic otherwise.
inline std::string check_query_vs_oracle(const cigar::MultiIndexHashTable& index,
                                         std::span<const uint64_t> query, uint32_t c,
                                         uint32_t l_max, cigar::QueryScratch& scratch) {
  auto result = cigar::query_with_info(index, query, c, l_max, scratch);
  const auto& cand = result.candidates;
  const uint32_t m = index.num_tables();

  // all items with distance <= guaranteed_bound are in the probed union
  uint32_t guaranteed_bound = m * (result.completed_radius + 1) - 1;

  // distances strictly below the last returned distance are untruncated
  uint32_t truncation_bound = UINT32_MAX;
  if (cand.size() == c && !cand.distances.empty()) truncation_bound = cand.distances.back();

  std::map<uint32_t, std::set<uint32_t>> returned_by_distance;
  for (size_t idx = 0; idx < cand.size(); ++idx)
    returned_by_distance[cand.distances[idx]].insert(cand.items[idx]);

  auto oracle = oracle_items_by_distance(index.item_codes(), query);
  for (const auto& [d, expected] : oracle) {
    if (d > guaranteed_bound || d >= truncation_bound) break;
    auto it = returned_by_distance.find(d);
    const std::set<uint32_t> got = it == returned_by_distance.end() ? std::set<uint32_t>{}
                                                                    : it->second;
    if (got != expected)
      return "distance " + std::to_string(d) + ": got " + std::to_string(got.size()) +
             " items, oracle has " + std::to_string(expected.size());
  }
  // nothing may be returned that the oracle does not know at that distance
  for (const auto& [d, got] : returned_by_distance) {
    auto it = oracle.find(d);
    if (it == oracle.end())
      return "returned distance " + std::to_string(d) + " has no oracle items";
    for (uint32_t item : got)
      if (!it->second.contains(item))
        return "item " + std::to_string(item) + " returned with wrong distance " +
               std::to_string(d);
  }
  return {};
}

// ------------------------------------------------------------------
// finite-difference oracles

// Full dense view of a sparse gradient.
inline std::vector<double> densify(const cigar::SparseGradient& grad, uint32_t rows,
                                   uint32_t dim) {
  std::vector<double> out(static_cast<size_t>(rows) * dim, 0.0);
  for (size_t idx = 0; idx < grad.rows.size(); ++idx) {
    auto row = grad.grad_row(idx);
    for (uint32_t z = 0; z < dim; ++z) out[static_cast<size_t>(grad.rows[idx]) * dim + z] = row[z];
  }
  return out;
}

struct FdReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

inline double rel_err(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
  return std::abs(analytic - numeric) / denom;
}

// Central finite differences of the tanh-relaxed loss against its analytic
// gradients, sweeping every embedding entry.
inline FdReport surrogate_fd_check(cigar::DenseEmbeddingMatrix user_emb,
                                   cigar::DenseEmbeddingMatrix item_emb,
                                   const cigar::TripletBatch& batch, double alpha, double beta,
                                   double lambda, double h = 1e-5) {
  auto analytic = cigar::surrogate_loss(batch, user_emb, item_emb, alpha, beta, lambda);
  auto user_dense = densify(analytic.user_grad, user_emb.rows(), user_emb.dim());
  auto item_dense = densify(analytic.item_grad, item_emb.rows(), item_emb.dim());

  FdReport report;
  auto sweep = [&](cigar::DenseEmbeddingMatrix& emb, const std::vector<double>& dense) {
    for (size_t p = 0; p < emb.values().size(); ++p) {
      double saved = emb.values()[p];
      emb.values()[p] = saved + h;
      double up = cigar::surrogate_loss(batch, user_emb, item_emb, alpha, beta, lambda).loss;
      emb.values()[p] = saved - h;
      double down = cigar::surrogate_loss(batch, user_emb, item_emb, alpha, beta, lambda).loss;
      emb.values()[p] = saved;
      double fd = (up - down) / (2.0 * h);
      report.max_rel_err = std::max(report.max_rel_err, rel_err(dense[p], fd));
      ++report.checked;
    }
  };
  sweep(user_emb, user_dense);
  sweep(item_emb, item_dense);
  return report;
}

// Every trainable parameter of a ranker model, as (pointer, analytic slot).
inline FdReport ranker_fd_check(cigar::RankerModel model, const cigar::TripletBatch& batch,
                                double lambda, double h = 1e-5) {
  auto analytic = cigar::ranker_loss(model, batch, lambda);

  std::vector<std::pair<double*, double>> params;
  auto add_matrix = [&](cigar::DenseEmbeddingMatrix& emb, const cigar::SparseGradient& grad) {
    auto dense = densify(grad, emb.rows(), emb.dim());
    for (size_t p = 0; p < emb.values().size(); ++p)
      params.emplace_back(&emb.values()[p], dense[p]);
  };
  add_matrix(model.user_emb, analytic.user_grad);
  add_matrix(model.item_emb, analytic.item_grad);
  if (model.kind == cigar::RankerKind::NeuMf) {
    add_matrix(model.user_emb_mlp, analytic.user_mlp_grad);
    add_matrix(model.item_emb_mlp, analytic.item_mlp_grad);
    for (size_t t = 0; t < model.mlp.size(); ++t) {
      for (size_t p = 0; p < model.mlp[t].weights.size(); ++p)
        params.emplace_back(&model.mlp[t].weights[p], analytic.mlp_weight_grads[t][p]);
      for (size_t p = 0; p < model.mlp[t].bias.size(); ++p)
        params.emplace_back(&model.mlp[t].bias[p], analytic.mlp_bias_grads[t][p]);
    }
    for (size_t p = 0; p < model.output_w.size(); ++p)
      params.emplace_back(&model.output_w[p], analytic.output_w_grad[p]);
  }

  FdReport report;
  for (auto& [ptr, grad] : params) {
    double saved = *ptr;
    *ptr = saved + h;
    double up = cigar::ranker_loss(model, batch, lambda).loss;
    *ptr = saved - h;
    double down = cigar::ranker_loss(model, batch, lambda).loss;
    *ptr = saved;
    double fd = (up - down) / (2.0 * h);
    report.max_rel_err = std::max(report.max_rel_err, rel_err(grad, fd));
    ++report.checked;
  }
  return report;
}

// Rejects instances whose loss surface has a kink within reach of the FD
// step: near-zero ReLU pre-activations, hinge boundaries, or coincident CML
// points.
inline bool ranker_instance_is_smooth(const cigar::RankerModel& model,
                                      const cigar::TripletBatch& batch, double safety = 1e-3) {
  for (const auto& [u, i, j] : batch.triples) {
    if (model.kind == cigar::RankerKind::Cml) {
      double di = -model.score(u, i);
      double dj = -model.score(u, j);
      if (di < safety || dj < safety) return false;
      if (std::abs(model.margin + di - dj) < safety) return false;
    } else if (model.kind == cigar::RankerKind::NeuMf) {
      for (uint32_t item : {i, j}) {
        // replay the forward pass and inspect pre-activations
        auto p2 = model.user_emb_mlp.row(u);
        auto q2 = model.item_emb_mlp.row(item);
        std::vector<double> act(p2.begin(), p2.end());
        act.insert(act.end(), q2.begin(), q2.end());
        for (const auto& layer : model.mlp) {
          std::vector<double> next(layer.out_dim);
          for (uint32_t o = 0; o < layer.out_dim; ++o) {
            double s = layer.bias[o];
            for (uint32_t z = 0; z < layer.in_dim; ++z)
              s += layer.weights[static_cast<size_t>(o) * layer.in_dim + z] * act[z];
            if (std::abs(s) < safety) return false;
            next[o] = s > 0.0 ? s : 0.0;
          }
          act = std::move(next);
        }
      }
    }
  }
  return true;
}

}  // namespace testutil
