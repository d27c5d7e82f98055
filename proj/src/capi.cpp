#include "cigar.h"

#include <cstring>
#include <sstream>
#include <string>

#include "cigar/dataset.hpp"
#include "cigar/eval.hpp"
#include "cigar/hashrec.hpp"
#include "cigar/mih.hpp"
#include "cigar/ranker.hpp"

struct cigar_dataset {
  cigar::InteractionDataset impl;
};
struct cigar_hash_model {
  cigar::HashModel impl;
};
struct cigar_index {
  cigar::MultiIndexHashTable impl;
};
struct cigar_candidates {
  cigar::CandidateCache impl;
};
struct cigar_ranker {
  cigar::RankerModel impl;
};

namespace {

thread_local std::string g_last_error;

cigar_status status_from(const cigar::Error& e) {
  switch (e.code()) {
    case cigar::ErrorCode::InvalidArgument: return CIGAR_E_INVALID_ARGUMENT;
    case cigar::ErrorCode::Io: return CIGAR_E_IO;
    case cigar::ErrorCode::Parse: return CIGAR_E_PARSE;
    case cigar::ErrorCode::Format: return CIGAR_E_FORMAT;
    case cigar::ErrorCode::Empty: return CIGAR_E_EMPTY;
    case cigar::ErrorCode::Numeric: return CIGAR_E_NUMERIC;
  }
  return CIGAR_E_INTERNAL;
}

template <typename Fn>
cigar_status guarded(Fn&& fn) {
  try {
    fn();
    return CIGAR_OK;
  } catch (const cigar::Error& e) {
    g_last_error = e.what();
    return status_from(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CIGAR_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return CIGAR_E_INTERNAL;
  }
}

cigar_status invalid(const char* message) {
  g_last_error = message;
  return CIGAR_E_INVALID_ARGUMENT;
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

cigar::Split to_split(cigar_split split) {
  return split == CIGAR_SPLIT_VALID ? cigar::Split::Valid : cigar::Split::Test;
}

cigar_eval_report to_c_report(const cigar::EvalReport& report) {
  return {report.hr, report.mrr, report.n, report.num_users};
}

}  // namespace

extern "C" {

uint32_t cigar_abi_version(void) { return 1; }
const char* cigar_version_string(void) { return "cigar 1.0.0"; }
const char* cigar_last_error(void) { return g_last_error.c_str(); }
void cigar_string_free(char* s) { delete[] s; }

/* dataset ----------------------------------------------------------- */

void cigar_ingest_params_init(cigar_ingest_params* params) {
  params->path = nullptr;
  params->format = "csv";
  params->kcore = 5;
  params->seed = 42;
  params->drop_top_percent = 0.0;
}

cigar_status cigar_ingest(const cigar_ingest_params* params, cigar_dataset** out) {
  if (!params || !params->path || !out) return invalid("cigar_ingest: null argument");
  auto format = cigar::parse_log_format(params->format ? params->format : "csv");
  if (!format) return invalid("cigar_ingest: unknown format tag");
  return guarded([&] {
    auto interactions = cigar::load_interactions(params->path, *format);
    if (params->drop_top_percent > 0.0)
      interactions = cigar::drop_most_popular(std::move(interactions), params->drop_top_percent);
    interactions = cigar::kcore_filter(std::move(interactions), params->kcore);
    *out = new cigar_dataset{cigar::leave_one_out_split(interactions, params->seed)};
  });
}

cigar_status cigar_dataset_save(const cigar_dataset* dataset, const char* path) {
  if (!dataset || !path) return invalid("cigar_dataset_save: null argument");
  return guarded([&] { dataset->impl.save(path); });
}

cigar_status cigar_dataset_load(const char* path, cigar_dataset** out) {
  if (!path || !out) return invalid("cigar_dataset_load: null argument");
  return guarded([&] { *out = new cigar_dataset{cigar::InteractionDataset::load(path)}; });
}

void cigar_dataset_free(cigar_dataset* dataset) { delete dataset; }

uint32_t cigar_dataset_num_users(const cigar_dataset* dataset) {
  return dataset ? dataset->impl.num_users : 0;
}
uint32_t cigar_dataset_num_items(const cigar_dataset* dataset) {
  return dataset ? dataset->impl.num_items : 0;
}
uint64_t cigar_dataset_train_size(const cigar_dataset* dataset) {
  return dataset ? dataset->impl.train_size() : 0;
}

cigar_status cigar_dataset_user_id(const cigar_dataset* dataset, int64_t original,
                                   uint32_t* dense) {
  if (!dataset || !dense) return invalid("cigar_dataset_user_id: null argument");
  auto id = dataset->impl.lookup_user(original);
  if (!id) return invalid("unknown user id");
  *dense = *id;
  return CIGAR_OK;
}

cigar_status cigar_dataset_item_id(const cigar_dataset* dataset, int64_t original,
                                   uint32_t* dense) {
  if (!dataset || !dense) return invalid("cigar_dataset_item_id: null argument");
  auto id = dataset->impl.lookup_item(original);
  if (!id) return invalid("unknown item id");
  *dense = *id;
  return CIGAR_OK;
}

cigar_status cigar_dataset_item_original(const cigar_dataset* dataset, uint32_t dense,
                                         int64_t* original) {
  if (!dataset || !original) return invalid("cigar_dataset_item_original: null argument");
  if (dense >= dataset->impl.num_items) return invalid("item id out of range");
  *original = dataset->impl.item_ids[dense];
  return CIGAR_OK;
}

/* hashrec ------------------------------------------------------------ */

void cigar_hashrec_params_init(cigar_hashrec_params* params) {
  params->bits = 64;
  params->lambda = 0.001;
  params->alpha = 0.0;
  params->num_epochs = 100;
  params->iters_per_epoch = 0;
  params->batch_size = 10000;
  params->learning_rate = 0.001;
  params->seed = 42;
  params->eval_every = 10;
  params->patience = 20;
  params->async_sampler = 1;
}

cigar_status cigar_hashrec_train(const cigar_dataset* dataset,
                                 const cigar_hashrec_params* params, const cigar_hash_model* warm,
                                 cigar_hash_model** out, char** curve_csv) {
  if (!dataset || !params || !out) return invalid("cigar_hashrec_train: null argument");
  return guarded([&] {
    cigar::HashRecConfig config;
    config.bits = params->bits;
    config.lambda = params->lambda;
    config.alpha = params->alpha;
    config.num_epochs = params->num_epochs;
    config.iters_per_epoch = params->iters_per_epoch;
    config.batch_size = params->batch_size;
    config.learning_rate = params->learning_rate;
    config.seed = params->seed;
    config.eval_every = params->eval_every;
    config.patience = params->patience;
    config.async_sampler = params->async_sampler != 0;

    auto result = cigar::train_hashrec(dataset->impl, config,
                                       warm ? &warm->impl.user_aux : nullptr,
                                       warm ? &warm->impl.item_aux : nullptr);
    if (curve_csv) *curve_csv = dup_string(cigar::curve_to_csv(result.curve));
    *out = new cigar_hash_model{std::move(result.model)};
  });
}

cigar_status cigar_hash_model_save(const cigar_hash_model* model, const char* path) {
  if (!model || !path) return invalid("cigar_hash_model_save: null argument");
  return guarded([&] { model->impl.save(path); });
}

cigar_status cigar_hash_model_load(const char* path, cigar_hash_model** out) {
  if (!path || !out) return invalid("cigar_hash_model_load: null argument");
  return guarded([&] { *out = new cigar_hash_model{cigar::HashModel::load(path)}; });
}

void cigar_hash_model_free(cigar_hash_model* model) { delete model; }

uint32_t cigar_hash_model_bits(const cigar_hash_model* model) {
  return model ? model->impl.user_codes.bits() : 0;
}
uint32_t cigar_hash_model_num_users(const cigar_hash_model* model) {
  return model ? model->impl.user_codes.rows() : 0;
}
uint32_t cigar_hash_model_num_items(const cigar_hash_model* model) {
  return model ? model->impl.item_codes.rows() : 0;
}

/* index --------------------------------------------------------------- */

cigar_status cigar_index_build(const cigar_hash_model* model, uint32_t m, cigar_index** out) {
  if (!model || !out) return invalid("cigar_index_build: null argument");
  return guarded([&] {
    uint32_t tables = m > 0 ? m : cigar::default_num_tables(model->impl.item_codes.rows());
    *out = new cigar_index{cigar::build_index(model->impl.item_codes, tables)};
  });
}

cigar_status cigar_index_save(const cigar_index* index, const char* path) {
  if (!index || !path) return invalid("cigar_index_save: null argument");
  return guarded([&] { index->impl.save(path); });
}

cigar_status cigar_index_load(const char* path, cigar_index** out) {
  if (!path || !out) return invalid("cigar_index_load: null argument");
  return guarded([&] { *out = new cigar_index{cigar::MultiIndexHashTable::load(path)}; });
}

void cigar_index_free(cigar_index* index) { delete index; }

uint32_t cigar_index_num_tables(const cigar_index* index) {
  return index ? index->impl.num_tables() : 0;
}
uint32_t cigar_index_num_items(const cigar_index* index) {
  return index ? index->impl.num_items() : 0;
}

/* candidates ----------------------------------------------------------- */

cigar_status cigar_candidates_generate(const cigar_dataset* dataset,
                                       const cigar_hash_model* model, const cigar_index* index,
                                       uint32_t c, uint32_t l_max, cigar_candidates** out) {
  if (!dataset || !model || !index || !out)
    return invalid("cigar_candidates_generate: null argument");
  return guarded([&] {
    *out = new cigar_candidates{cigar::generate_candidates(
        dataset->impl, model->impl.user_codes, index->impl, c, l_max)};
  });
}

cigar_status cigar_candidates_save(const cigar_candidates* candidates, const char* path) {
  if (!candidates || !path) return invalid("cigar_candidates_save: null argument");
  return guarded([&] { candidates->impl.save(path); });
}

cigar_status cigar_candidates_load(const char* path, cigar_candidates** out) {
  if (!path || !out) return invalid("cigar_candidates_load: null argument");
  return guarded([&] { *out = new cigar_candidates{cigar::CandidateCache::load(path)}; });
}

void cigar_candidates_free(cigar_candidates* candidates) { delete candidates; }

uint32_t cigar_candidates_c(const cigar_candidates* candidates) {
  return candidates ? candidates->impl.c : 0;
}
uint32_t cigar_candidates_num_users(const cigar_candidates* candidates) {
  return candidates ? static_cast<uint32_t>(candidates->impl.per_user.size()) : 0;
}

cigar_status cigar_candidates_get(const cigar_candidates* candidates, uint32_t user,
                                  const uint32_t** items, uint32_t* count) {
  if (!candidates || !items || !count) return invalid("cigar_candidates_get: null argument");
  if (user >= candidates->impl.per_user.size()) return invalid("user id out of range");
  const auto& list = candidates->impl.per_user[user];
  *items = list.data();
  *count = static_cast<uint32_t>(list.size());
  return CIGAR_OK;
}

/* ranker ----------------------------------------------------------------- */

void cigar_ranker_params_init(cigar_ranker_params* params) {
  params->kind = CIGAR_RANKER_BPRMF;
  params->k = 50;
  params->lambda = 0.0001;
  params->h = 0.5;
  params->margin = 0.5;
  params->mlp_arch = nullptr;
  params->mlp_arch_len = 0;
  params->num_epochs = 100;
  params->iters_per_epoch = 0;
  params->batch_size = 10000;
  params->learning_rate = 0.001;
  params->seed = 42;
  params->eval_every = 10;
  params->patience = 20;
  params->async_sampler = 1;
}

cigar_status cigar_ranker_train(const cigar_dataset* dataset, const cigar_ranker_params* params,
                                const cigar_candidates* candidates, cigar_ranker** out,
                                char** train_log) {
  if (!dataset || !params || !out) return invalid("cigar_ranker_train: null argument");
  if (params->kind < CIGAR_RANKER_BPRMF || params->kind > CIGAR_RANKER_BPRB)
    return invalid("cigar_ranker_train: unknown model kind");
  return guarded([&] {
    cigar::RerankConfig config;
    config.kind = static_cast<cigar::RankerKind>(params->kind);
    config.k = params->k;
    config.lambda = params->lambda;
    config.h = params->h;
    config.margin = params->margin;
    if (params->mlp_arch && params->mlp_arch_len > 0)
      config.mlp_arch.assign(params->mlp_arch, params->mlp_arch + params->mlp_arch_len);
    config.num_epochs = params->num_epochs;
    config.iters_per_epoch = params->iters_per_epoch;
    config.batch_size = params->batch_size;
    config.learning_rate = params->learning_rate;
    config.seed = params->seed;
    config.eval_every = params->eval_every;
    config.patience = params->patience;
    config.async_sampler = params->async_sampler != 0;
    if (candidates) config.c = candidates->impl.c;

    auto result = cigar::train_ranker(dataset->impl, config,
                                      candidates ? &candidates->impl : nullptr);
    if (train_log) {
      std::ostringstream log;
      log.precision(8);
      log << "kind=" << cigar::ranker_kind_name(result.model.kind) << "\n"
          << "best_epoch=" << result.best_epoch << "\n"
          << "best_valid_hr=" << result.best_valid_hr << "\n"
          << "candidate_fraction=" << result.sampling.candidate_fraction() << "\n"
          << "candidate_branch=" << result.sampling.candidate_branch << "\n"
          << "global_branch=" << result.sampling.global_branch << "\n"
          << "fallback=" << result.sampling.fallback << "\n";
      for (const auto& [epoch, loss] : result.loss_curve)
        log << "epoch_loss_" << epoch << "=" << loss << "\n";
      *train_log = dup_string(log.str());
    }
    *out = new cigar_ranker{std::move(result.model)};
  });
}

cigar_status cigar_ranker_quantize(const cigar_ranker* bprmf, cigar_ranker** out) {
  if (!bprmf || !out) return invalid("cigar_ranker_quantize: null argument");
  return guarded([&] { *out = new cigar_ranker{cigar::quantize_to_bprb(bprmf->impl)}; });
}

cigar_status cigar_ranker_save(const cigar_ranker* ranker, const char* path) {
  if (!ranker || !path) return invalid("cigar_ranker_save: null argument");
  return guarded([&] { ranker->impl.save(path); });
}

cigar_status cigar_ranker_load(const char* path, cigar_ranker** out) {
  if (!path || !out) return invalid("cigar_ranker_load: null argument");
  return guarded([&] { *out = new cigar_ranker{cigar::RankerModel::load(path)}; });
}

void cigar_ranker_free(cigar_ranker* ranker) { delete ranker; }

int cigar_ranker_get_kind(const cigar_ranker* ranker) {
  return ranker ? static_cast<int>(ranker->impl.kind) : -1;
}

cigar_status cigar_ranker_score(const cigar_ranker* ranker, uint32_t user, uint32_t item,
                                double* score) {
  if (!ranker || !score) return invalid("cigar_ranker_score: null argument");
  return guarded([&] { *score = ranker->impl.score(user, item); });
}

/* recommend / evaluate ------------------------------------------------- */

cigar_status cigar_recommend(const cigar_dataset* dataset, const cigar_hash_model* model,
                             const cigar_index* index, const cigar_ranker* ranker, uint32_t user,
                             uint32_t n, uint32_t c, uint32_t l_max, uint32_t* items,
                             double* scores, uint32_t* count) {
  if (!dataset || !model || !index || !ranker || !items || !count)
    return invalid("cigar_recommend: null argument");
  if (user >= dataset->impl.num_users) return invalid("cigar_recommend: user id out of range");
  return guarded([&] {
    cigar::QueryScratch scratch;
    auto popularity = dataset->impl.popularity_ranking();
    auto candidates =
        cigar::retrieve_candidates(index->impl, model->impl.user_codes.row(user), c, l_max,
                                   dataset->impl.train[user], popularity, scratch);
    auto top = cigar::rerank(ranker->impl, user, candidates, n, dataset->impl.train[user]);
    *count = static_cast<uint32_t>(top.size());
    for (size_t i = 0; i < top.size(); ++i) {
      items[i] = top[i];
      if (scores) scores[i] = ranker->impl.score(user, top[i]);
    }
  });
}

cigar_status cigar_evaluate_full(const cigar_dataset* dataset, const cigar_ranker* ranker,
                                 uint32_t n, cigar_split split, cigar_eval_report* report) {
  if (!dataset || !ranker || !report) return invalid("cigar_evaluate_full: null argument");
  return guarded([&] {
    *report = to_c_report(cigar::evaluate_full(ranker->impl, dataset->impl, n, to_split(split)));
  });
}

cigar_status cigar_evaluate_pipeline(const cigar_dataset* dataset, const cigar_hash_model* model,
                                     const cigar_index* index, const cigar_ranker* ranker,
                                     uint32_t n, uint32_t c, uint32_t l_max, cigar_split split,
                                     cigar_eval_report* report) {
  if (!dataset || !model || !index || !ranker || !report)
    return invalid("cigar_evaluate_pipeline: null argument");
  return guarded([&] {
    *report = to_c_report(cigar::evaluate_cigar(model->impl.user_codes, index->impl, ranker->impl,
                                                dataset->impl, n, c, l_max, to_split(split)));
  });
}

cigar_status cigar_evaluate_candidates(const cigar_dataset* dataset,
                                       const cigar_hash_model* model, const cigar_index* index,
                                       uint32_t c, uint32_t l_max, cigar_split split,
                                       cigar_eval_report* report) {
  if (!dataset || !model || !index || !report)
    return invalid("cigar_evaluate_candidates: null argument");
  return guarded([&] {
    *report = to_c_report(cigar::evaluate_candidates(model->impl.user_codes, index->impl,
                                                     dataset->impl, c, l_max, to_split(split)));
  });
}

/* bench ------------------------------------------------------------------ */

void cigar_bench_params_init(cigar_bench_params* params) {
  params->methods = "linear-real,linear-hamming,mih,cigar-pipeline";
  params->num_queries = 1000;
  params->repeats = 3;
  params->warmup = 100;
  params->top_n = 10;
  params->c = 200;
  params->l_max = 1;
  params->seed = 42;
}

cigar_status cigar_bench_retrieval(const cigar_dataset* dataset, const cigar_hash_model* model,
                                   const cigar_index* index, const cigar_ranker* ranker,
                                   const cigar_bench_params* params, char** csv_out) {
  if (!dataset || !model || !index || !params || !csv_out)
    return invalid("cigar_bench_retrieval: null argument");
  std::vector<cigar::BenchMethod> methods;
  {
    std::string list = params->methods ? params->methods : "";
    size_t pos = 0;
    while (pos <= list.size() && !list.empty()) {
      size_t next = list.find(',', pos);
      std::string name = list.substr(pos, next == std::string::npos ? next : next - pos);
      if (name == "linear-real")
        methods.push_back(cigar::BenchMethod::LinearReal);
      else if (name == "linear-hamming")
        methods.push_back(cigar::BenchMethod::LinearHamming);
      else if (name == "mih")
        methods.push_back(cigar::BenchMethod::Mih);
      else if (name == "cigar-pipeline")
        methods.push_back(cigar::BenchMethod::CigarPipeline);
      else if (!name.empty())
        return invalid("cigar_bench_retrieval: unknown method name");
      if (next == std::string::npos) break;
      pos = next + 1;
    }
  }
  if (methods.empty()) return invalid("cigar_bench_retrieval: no methods selected");
  return guarded([&] {
    cigar::BenchConfig config;
    config.num_queries = params->num_queries;
    config.repeats = params->repeats;
    config.warmup = params->warmup;
    config.top_n = params->top_n;
    config.c = params->c;
    config.l_max = params->l_max;
    config.seed = params->seed;
    auto results =
        cigar::bench_retrieval(methods, dataset->impl, model->impl.user_codes, index->impl,
                               ranker ? &ranker->impl : nullptr, config);
    *csv_out = dup_string(cigar::bench_to_csv(results));
  });
}

} /* extern "C" */
