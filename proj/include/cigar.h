/*
 * C API for the cigar recommendation engine.
 *
 * The engine learns binary user/item codes from implicit feedback, indexes
 * item codes in a multi-index hash table for sub-linear candidate retrieval,
 * and re-ranks candidates with real-valued models trained with a
 * candidate-oriented sampling scheme.
 *
 * All objects are opaque handles created by the library and released with
 * their *_free function. Every fallible call returns a cigar_status; on
 * failure cigar_last_error() describes what went wrong (thread-local).
 */
#ifndef CIGAR_H
#define CIGAR_H

#include <stdint.h>

#ifdef _WIN32
#define CIGAR_API __declspec(dllexport)
#else
#define CIGAR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cigar_status {
  CIGAR_OK = 0,
  CIGAR_E_INVALID_ARGUMENT = 1,
  CIGAR_E_IO = 2,
  CIGAR_E_PARSE = 3,
  CIGAR_E_FORMAT = 4, /* container magic/version mismatch */
  CIGAR_E_EMPTY = 5,  /* empty input or empty filter result */
  CIGAR_E_NUMERIC = 6,
  CIGAR_E_INTERNAL = 7,
} cigar_status;

typedef enum cigar_ranker_kind {
  CIGAR_RANKER_BPRMF = 0,
  CIGAR_RANKER_CML = 1,
  CIGAR_RANKER_NEUMF = 2,
  CIGAR_RANKER_POP = 3,
  CIGAR_RANKER_BPRB = 4,
} cigar_ranker_kind;

typedef enum cigar_split {
  CIGAR_SPLIT_VALID = 0,
  CIGAR_SPLIT_TEST = 1,
} cigar_split;

typedef struct cigar_dataset cigar_dataset;
typedef struct cigar_hash_model cigar_hash_model;
typedef struct cigar_index cigar_index;
typedef struct cigar_candidates cigar_candidates;
typedef struct cigar_ranker cigar_ranker;

/* Library version. */
CIGAR_API uint32_t cigar_abi_version(void);
CIGAR_API const char* cigar_version_string(void);

/* Message for the most recent failure on this thread. */
CIGAR_API const char* cigar_last_error(void);

/* Frees strings returned through char** out-parameters. */
CIGAR_API void cigar_string_free(char* s);

/* ------------------------------------------------------------------ */
/* dataset                                                             */

typedef struct cigar_ingest_params {
  const char* path;
  const char* format; /* "csv", "tsv" or "movielens" */
  uint32_t kcore;
  uint64_t seed;
  double drop_top_percent; /* popularity truncation, 0 disables */
} cigar_ingest_params;

CIGAR_API void cigar_ingest_params_init(cigar_ingest_params* params);

CIGAR_API cigar_status cigar_ingest(const cigar_ingest_params* params, cigar_dataset** out);
CIGAR_API cigar_status cigar_dataset_save(const cigar_dataset* dataset, const char* path);
CIGAR_API cigar_status cigar_dataset_load(const char* path, cigar_dataset** out);
CIGAR_API void cigar_dataset_free(cigar_dataset* dataset);

CIGAR_API uint32_t cigar_dataset_num_users(const cigar_dataset* dataset);
CIGAR_API uint32_t cigar_dataset_num_items(const cigar_dataset* dataset);
CIGAR_API uint64_t cigar_dataset_train_size(const cigar_dataset* dataset);
/* Dense id for an original log id; fails with CIGAR_E_INVALID_ARGUMENT when
 * the id was filtered out or never seen. */
CIGAR_API cigar_status cigar_dataset_user_id(const cigar_dataset* dataset, int64_t original,
                                             uint32_t* dense);
CIGAR_API cigar_status cigar_dataset_item_id(const cigar_dataset* dataset, int64_t original,
                                             uint32_t* dense);
CIGAR_API cigar_status cigar_dataset_item_original(const cigar_dataset* dataset, uint32_t dense,
                                                   int64_t* original);

/* ------------------------------------------------------------------ */
/* binary-code model                                                   */

typedef struct cigar_hashrec_params {
  uint32_t bits;
  double lambda;
  double alpha; /* 0 selects 10/bits */
  uint32_t num_epochs;
  uint32_t iters_per_epoch; /* 0 selects ceil(train/batch) */
  uint32_t batch_size;
  double learning_rate;
  uint64_t seed;
  uint32_t eval_every;
  uint32_t patience;
  int async_sampler;
} cigar_hashrec_params;

CIGAR_API void cigar_hashrec_params_init(cigar_hashrec_params* params);

/* Trains binary codes. warm (nullable) seeds the optimizer with a previous
 * model's auxiliary embeddings. curve_csv (nullable) receives the per-epoch
 * training curve; free with cigar_string_free. */
CIGAR_API cigar_status cigar_hashrec_train(const cigar_dataset* dataset,
                                           const cigar_hashrec_params* params,
                                           const cigar_hash_model* warm, cigar_hash_model** out,
                                           char** curve_csv);
CIGAR_API cigar_status cigar_hash_model_save(const cigar_hash_model* model, const char* path);
CIGAR_API cigar_status cigar_hash_model_load(const char* path, cigar_hash_model** out);
CIGAR_API void cigar_hash_model_free(cigar_hash_model* model);

CIGAR_API uint32_t cigar_hash_model_bits(const cigar_hash_model* model);
CIGAR_API uint32_t cigar_hash_model_num_users(const cigar_hash_model* model);
CIGAR_API uint32_t cigar_hash_model_num_items(const cigar_hash_model* model);

/* ------------------------------------------------------------------ */
/* multi-index hash table                                              */

/* m = 0 picks the default table count for the catalogue size. */
CIGAR_API cigar_status cigar_index_build(const cigar_hash_model* model, uint32_t m,
                                         cigar_index** out);
CIGAR_API cigar_status cigar_index_save(const cigar_index* index, const char* path);
CIGAR_API cigar_status cigar_index_load(const char* path, cigar_index** out);
CIGAR_API void cigar_index_free(cigar_index* index);

CIGAR_API uint32_t cigar_index_num_tables(const cigar_index* index);
CIGAR_API uint32_t cigar_index_num_items(const cigar_index* index);

/* ------------------------------------------------------------------ */
/* candidate cache                                                     */

CIGAR_API cigar_status cigar_candidates_generate(const cigar_dataset* dataset,
                                                 const cigar_hash_model* model,
                                                 const cigar_index* index, uint32_t c,
                                                 uint32_t l_max, cigar_candidates** out);
CIGAR_API cigar_status cigar_candidates_save(const cigar_candidates* candidates,
                                             const char* path);
CIGAR_API cigar_status cigar_candidates_load(const char* path, cigar_candidates** out);
CIGAR_API void cigar_candidates_free(cigar_candidates* candidates);

CIGAR_API uint32_t cigar_candidates_c(const cigar_candidates* candidates);
CIGAR_API uint32_t cigar_candidates_num_users(const cigar_candidates* candidates);
/* Borrow the candidate item ids for one user; the pointer stays valid while
 * the handle lives. */
CIGAR_API cigar_status cigar_candidates_get(const cigar_candidates* candidates, uint32_t user,
                                            const uint32_t** items, uint32_t* count);

/* ------------------------------------------------------------------ */
/* re-ranking models                                                   */

typedef struct cigar_ranker_params {
  int kind; /* cigar_ranker_kind */
  uint32_t k;
  double lambda;
  double h; /* candidate sampling ratio in [0,1] */
  double margin;
  const uint32_t* mlp_arch;
  uint32_t mlp_arch_len;
  uint32_t num_epochs;
  uint32_t iters_per_epoch;
  uint32_t batch_size;
  double learning_rate;
  uint64_t seed;
  uint32_t eval_every;
  uint32_t patience;
  int async_sampler;
} cigar_ranker_params;

CIGAR_API void cigar_ranker_params_init(cigar_ranker_params* params);

/* Trains a ranking model. candidates (nullable) switches on candidate-
 * oriented sampling with ratio h. train_log (nullable) receives a key=value
 * summary (best epoch, validation HR, observed sampling fractions); free
 * with cigar_string_free. */
CIGAR_API cigar_status cigar_ranker_train(const cigar_dataset* dataset,
                                          const cigar_ranker_params* params,
                                          const cigar_candidates* candidates, cigar_ranker** out,
                                          char** train_log);
/* sgn-quantizes a trained BPR-MF model into a Hamming-space ranker. */
CIGAR_API cigar_status cigar_ranker_quantize(const cigar_ranker* bprmf, cigar_ranker** out);
CIGAR_API cigar_status cigar_ranker_save(const cigar_ranker* ranker, const char* path);
CIGAR_API cigar_status cigar_ranker_load(const char* path, cigar_ranker** out);
CIGAR_API void cigar_ranker_free(cigar_ranker* ranker);

CIGAR_API int cigar_ranker_get_kind(const cigar_ranker* ranker);
CIGAR_API cigar_status cigar_ranker_score(const cigar_ranker* ranker, uint32_t user,
                                          uint32_t item, double* score);

/* ------------------------------------------------------------------ */
/* recommendation and evaluation                                       */

/* Full pipeline for one user: hash lookup, popularity padding, re-ranking,
 * training items excluded. items/scores must hold n entries; *count receives
 * how many were produced. */
CIGAR_API cigar_status cigar_recommend(const cigar_dataset* dataset,
                                       const cigar_hash_model* model, const cigar_index* index,
                                       const cigar_ranker* ranker, uint32_t user, uint32_t n,
                                       uint32_t c, uint32_t l_max, uint32_t* items,
                                       double* scores, uint32_t* count);

typedef struct cigar_eval_report {
  double hr;
  double mrr;
  uint32_t n;
  uint32_t num_users;
} cigar_eval_report;

CIGAR_API cigar_status cigar_evaluate_full(const cigar_dataset* dataset,
                                           const cigar_ranker* ranker, uint32_t n,
                                           cigar_split split, cigar_eval_report* report);
CIGAR_API cigar_status cigar_evaluate_pipeline(const cigar_dataset* dataset,
                                               const cigar_hash_model* model,
                                               const cigar_index* index,
                                               const cigar_ranker* ranker, uint32_t n, uint32_t c,
                                               uint32_t l_max, cigar_split split,
                                               cigar_eval_report* report);
CIGAR_API cigar_status cigar_evaluate_candidates(const cigar_dataset* dataset,
                                                 const cigar_hash_model* model,
                                                 const cigar_index* index, uint32_t c,
                                                 uint32_t l_max, cigar_split split,
                                                 cigar_eval_report* report);

/* ------------------------------------------------------------------ */
/* retrieval benchmark                                                 */

typedef struct cigar_bench_params {
  const char* methods; /* comma list of linear-real,linear-hamming,mih,cigar-pipeline */
  uint32_t num_queries;
  uint32_t repeats;
  uint32_t warmup;
  uint32_t top_n;
  uint32_t c;
  uint32_t l_max;
  uint64_t seed;
} cigar_bench_params;

CIGAR_API void cigar_bench_params_init(cigar_bench_params* params);

/* Sequential per-query wall-clock benchmark; csv_out receives the latency
 * table (free with cigar_string_free). ranker may be null when no method
 * needs it. */
CIGAR_API cigar_status cigar_bench_retrieval(const cigar_dataset* dataset,
                                             const cigar_hash_model* model,
                                             const cigar_index* index, const cigar_ranker* ranker,
                                             const cigar_bench_params* params, char** csv_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CIGAR_H */
