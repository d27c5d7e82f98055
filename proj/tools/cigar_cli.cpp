// cigar command-line front end. Everything goes through the C API in
// cigar.h; this file owns argument parsing, file naming and report
// formatting only.
//
// Exit codes: 0 success, 2 usage/input error, 3 numeric/training failure.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cigar.h"
#include "json.hpp"

namespace {

struct CliFailure {
  int exit_code;
};

void require(cigar_status status) {
  if (status == CIGAR_OK) return;
  std::cerr << "error: " << cigar_last_error() << "\n";
  throw CliFailure{status == CIGAR_E_NUMERIC ? 3 : 2};
}

template <typename T, void (*FreeFn)(T*)>
class Handle {
 public:
  Handle() = default;
  ~Handle() { FreeFn(ptr_); }
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;

  T** out() {
    FreeFn(ptr_);
    ptr_ = nullptr;
    return &ptr_;
  }
  T* get() const { return ptr_; }
  operator T*() const { return ptr_; }

 private:
  T* ptr_ = nullptr;
};

using DatasetHandle = Handle<cigar_dataset, cigar_dataset_free>;
using HashHandle = Handle<cigar_hash_model, cigar_hash_model_free>;
using IndexHandle = Handle<cigar_index, cigar_index_free>;
using CandidatesHandle = Handle<cigar_candidates, cigar_candidates_free>;
using RankerHandle = Handle<cigar_ranker, cigar_ranker_free>;

class OwnedString {
 public:
  ~OwnedString() { cigar_string_free(ptr_); }
  char** out() { return &ptr_; }
  const char* get() const { return ptr_ ? ptr_ : ""; }

 private:
  char* ptr_ = nullptr;
};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    throw CliFailure{2};
  }
  out << content;
}

// Resolved run configuration (defaults included) recorded next to the
// artifacts for provenance.
void write_provenance(const CLI::App& sub, const std::string& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  write_text_file((std::filesystem::path(outdir) / (sub.get_name() + ".config")).string(),
                  sub.config_to_str(true, false));
}

std::string parent_dir(const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  return parent.empty() ? "." : parent.string();
}

// Expands `--config file` into regular flags: the file holds flat key=value
// lines, and keys already given on the command line keep precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end()) return args;
  if (std::next(it) == args.end()) {
    std::cerr << "error: --config needs a file argument\n";
    throw CliFailure{2};
  }
  std::string path = *std::next(it);
  args.erase(it, std::next(it, 2));

  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot read config file " << path << "\n";
    throw CliFailure{2};
  }
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: " << path << ":" << line_no << ": expected key=value\n";
      throw CliFailure{2};
    }
    std::string flag = "--" + line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (std::find(args.begin(), args.end(), flag) != args.end()) continue;
    if (value == "true") {
      args.push_back(flag);
    } else if (value != "false") {
      args.push_back(flag);
      args.push_back(value);
    }
  }
  return args;
}

int parse_ranker_kind(const std::string& name) {
  if (name == "bpr-mf") return CIGAR_RANKER_BPRMF;
  if (name == "cml") return CIGAR_RANKER_CML;
  if (name == "neumf") return CIGAR_RANKER_NEUMF;
  if (name == "pop") return CIGAR_RANKER_POP;
  if (name == "bpr-b") return CIGAR_RANKER_BPRB;
  std::cerr << "error: unknown ranker kind '" << name << "'\n";
  throw CliFailure{2};
}

nlohmann::json report_json(const cigar_eval_report& report, const std::string& mode,
                           const std::string& split) {
  return {{"mode", mode},     {"split", split},          {"n", report.n},
          {"hr", report.hr},  {"mrr", report.mrr},       {"num_users", report.num_users}};
}

void print_report_table(const cigar_eval_report& report, const std::string& mode,
                        const std::string& split) {
  std::printf("%-10s %-6s %8s %10s %12s %12s\n", "mode", "split", "N", "users", "HR", "MRR");
  std::printf("%-10s %-6s %8u %10u %12.6f %12.6f\n", mode.c_str(), split.c_str(), report.n,
              report.num_users, report.hr, report.mrr);
}

struct CommonTrainOptions {
  uint32_t epochs = 100;
  uint32_t iters = 0;
  uint32_t batch = 10000;
  double lr = 0.001;
  uint64_t seed = 42;
  uint32_t eval_every = 10;
  uint32_t patience = 20;
  bool sync_sampler = false;

  void attach(CLI::App* app) {
    app->add_option("--epochs", epochs, "Maximum training epochs");
    app->add_option("--iters", iters, "Iterations per epoch (0 = one pass over train)");
    app->add_option("--batch", batch, "Triplet batch size");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--seed", seed, "RNG seed");
    app->add_option("--eval-every", eval_every, "Validate every this many epochs (0 = never)");
    app->add_option("--patience", patience, "Epochs without improvement before stopping");
    app->add_flag("--sync-sampler", sync_sampler, "Sample batches inline instead of a thread");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cigar: binary-code candidate generation and re-ranking for Top-N recommendation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cigar_version_string());
  // --h (the sampling ratio) needs the single-letter namespace, so help is
  // --help everywhere.
  app.set_help_flag("--help", "Print help and exit");
  static std::string config_file;  // handled by expand_config before parsing
  auto add_sub = [&app](const std::string& name, const std::string& desc) {
    auto* sub = app.add_subcommand(name, desc);
    sub->set_help_flag("--help", "Print help and exit");
    sub->add_option("--config", config_file,
                    "Flat key=value run configuration; CLI flags take precedence");
    return sub;
  };

  // ---------------- ingest ----------------
  auto* ingest = add_sub("ingest", "Parse a feedback log, k-core filter, split");
  std::string in_path, in_format = "csv", ingest_out = "dataset.cgds", ingest_outdir;
  uint32_t kcore = 5;
  uint64_t ingest_seed = 42;
  double drop_top = 0.0;
  ingest->add_option("--input", in_path, "Feedback log")->required();
  ingest->add_option("--format", in_format, "Log format: csv, tsv or movielens");
  ingest->add_option("--kcore", kcore, "Minimum interactions per user and item");
  ingest->add_option("--seed", ingest_seed, "Split RNG seed");
  ingest->add_option("--drop-top-percent", drop_top, "Drop the most popular items (percent)");
  ingest->add_option("-o,--out", ingest_out, "Dataset container path");
  ingest->add_option("--outdir", ingest_outdir, "Directory for the resolved config");

  // ---------------- train-hash ----------------
  auto* train_hash = add_sub("train-hash", "Learn binary user/item codes");
  std::string th_dataset, th_out = "hash.cghr", th_curve, th_resume, th_outdir;
  uint32_t th_bits = 64;
  double th_lambda = 0.001, th_alpha = 0.0;
  CommonTrainOptions th_common;
  train_hash->add_option("--dataset", th_dataset, "Dataset container")->required();
  train_hash->add_option("--bits", th_bits, "Code length r");
  train_hash->add_option("--lambda", th_lambda, "L2 coefficient");
  train_hash->add_option("--alpha", th_alpha, "Sigmoid scale (0 = 10/r)");
  th_common.attach(train_hash);
  train_hash->add_option("--resume", th_resume, "Warm-start from a previous model");
  train_hash->add_option("--curve", th_curve, "Write the per-epoch training curve CSV here");
  train_hash->add_option("-o,--out", th_out, "Model container path");
  train_hash->add_option("--outdir", th_outdir, "Directory for the resolved config");

  // ---------------- build-index ----------------
  auto* build_index = add_sub("build-index", "Index item codes in a multi-index table");
  std::string bi_model, bi_out = "index.cgix", bi_outdir;
  uint32_t bi_m = 0;
  build_index->add_option("--model", bi_model, "Hash model container")->required();
  build_index->add_option("--m", bi_m, "Substring count (0 = by catalogue size)");
  build_index->add_option("-o,--out", bi_out, "Index container path");
  build_index->add_option("--outdir", bi_outdir, "Directory for the resolved config");

  // ---------------- gen-candidates ----------------
  auto* gen_cands = add_sub("gen-candidates", "Precompute per-user candidate lists");
  std::string gc_dataset, gc_model, gc_index, gc_out = "candidates.cgcd", gc_outdir;
  uint32_t gc_c = 200, gc_lmax = 1;
  gen_cands->add_option("--dataset", gc_dataset)->required();
  gen_cands->add_option("--model", gc_model)->required();
  gen_cands->add_option("--index", gc_index)->required();
  gen_cands->add_option("--c", gc_c, "Candidates per user");
  gen_cands->add_option("--lmax", gc_lmax, "Maximum per-table probe radius");
  gen_cands->add_option("-o,--out", gc_out, "Candidate cache path");
  gen_cands->add_option("--outdir", gc_outdir, "Directory for the resolved config");

  // ---------------- train-ranker ----------------
  auto* train_ranker = add_sub("train-ranker", "Train a re-ranking model");
  std::string tr_dataset, tr_candidates, tr_from, tr_kind = "bpr-mf";
  std::string tr_out = "ranker.cgrk", tr_log, tr_outdir;
  uint32_t tr_k = 50;
  double tr_lambda = 0.0001, tr_h = 0.5, tr_margin = 0.5;
  std::vector<uint32_t> tr_mlp = {200, 100, 50, 25};
  CommonTrainOptions tr_common;
  train_ranker->add_option("--dataset", tr_dataset)->required();
  train_ranker->add_option("--kind", tr_kind, "bpr-mf, cml, neumf, pop or bpr-b");
  train_ranker->add_option("--candidates", tr_candidates,
                           "Candidate cache; enables candidate-oriented sampling");
  train_ranker->add_option("--from", tr_from, "bpr-b only: bpr-mf model to quantize");
  auto* k_opt = train_ranker->add_option("--k", tr_k, "Embedding size");
  train_ranker->add_option("--lambda", tr_lambda, "L2 coefficient");
  train_ranker->add_option("--h", tr_h, "Candidate sampling ratio in [0,1]");
  train_ranker->add_option("--margin", tr_margin, "Hinge margin (cml)");
  train_ranker->add_option("--mlp", tr_mlp, "MLP layer widths (neumf)")->delimiter(',');
  tr_common.attach(train_ranker);
  train_ranker->add_option("--log", tr_log, "Write the training summary here");
  train_ranker->add_option("-o,--out", tr_out, "Model container path");
  train_ranker->add_option("--outdir", tr_outdir, "Directory for the resolved config");

  // ---------------- recommend ----------------
  auto* recommend = add_sub("recommend", "Top-N recommendations for one user");
  std::string rc_dataset, rc_model, rc_index, rc_ranker;
  int64_t rc_user = 0;
  uint32_t rc_n = 10, rc_c = 200, rc_lmax = 1;
  recommend->add_option("--dataset", rc_dataset)->required();
  recommend->add_option("--model", rc_model)->required();
  recommend->add_option("--index", rc_index)->required();
  recommend->add_option("--ranker", rc_ranker)->required();
  recommend->add_option("--user", rc_user, "Original user id from the log")->required();
  recommend->add_option("-n", rc_n, "List length");
  recommend->add_option("--c", rc_c, "Candidates to retrieve");
  recommend->add_option("--lmax", rc_lmax, "Maximum per-table probe radius");

  // ---------------- evaluate ----------------
  auto* evaluate = add_sub("evaluate", "Leave-one-out ranking metrics");
  std::string ev_dataset, ev_model, ev_index, ev_ranker, ev_mode = "full", ev_split = "test";
  std::string ev_json;
  uint32_t ev_n = 10, ev_c = 200, ev_lmax = 1;
  evaluate->add_option("--dataset", ev_dataset)->required();
  evaluate->add_option("--mode", ev_mode, "full, pipeline or candidates");
  evaluate->add_option("--split", ev_split, "valid or test");
  evaluate->add_option("--model", ev_model, "Hash model (pipeline/candidates)");
  evaluate->add_option("--index", ev_index, "Index (pipeline/candidates)");
  evaluate->add_option("--ranker", ev_ranker, "Ranking model (full/pipeline)");
  evaluate->add_option("--n", ev_n, "Cutoff N");
  evaluate->add_option("--c", ev_c, "Candidates per user");
  evaluate->add_option("--lmax", ev_lmax, "Maximum per-table probe radius");
  evaluate->add_option("--json", ev_json, "Write the machine-readable report here");

  // ---------------- bench ----------------
  auto* bench = add_sub("bench", "Per-query retrieval latency benchmark");
  std::string be_dataset, be_model, be_index, be_ranker, be_out;
  std::string be_methods = "linear-real,linear-hamming,mih,cigar-pipeline";
  uint32_t be_queries = 1000, be_repeats = 3, be_warmup = 100, be_n = 10, be_c = 200, be_lmax = 1;
  uint64_t be_seed = 42;
  bench->add_option("--dataset", be_dataset)->required();
  bench->add_option("--model", be_model)->required();
  bench->add_option("--index", be_index)->required();
  bench->add_option("--ranker", be_ranker, "Needed by linear-real and cigar-pipeline");
  bench->add_option("--methods", be_methods, "Comma list of methods");
  bench->add_option("--queries", be_queries);
  bench->add_option("--repeats", be_repeats);
  bench->add_option("--warmup", be_warmup);
  bench->add_option("--n", be_n, "Top-N for ranking methods");
  bench->add_option("--c", be_c, "Candidates per query");
  bench->add_option("--lmax", be_lmax);
  bench->add_option("--seed", be_seed);
  bench->add_option("-o,--out", be_out, "Write the CSV here (default: stdout)");

  // ---------------- pipeline ----------------
  auto* pipeline = add_sub("pipeline", "Run ingest through evaluation end to end");
  std::string pl_input, pl_format = "csv", pl_outdir = "cigar-run", pl_kind = "bpr-mf";
  uint32_t pl_kcore = 5, pl_bits = 64, pl_m = 0, pl_c = 200, pl_lmax = 1, pl_k = 50, pl_n = 10;
  double pl_drop_top = 0.0, pl_lambda_hash = 0.001, pl_lambda_rank = 0.01, pl_h = 0.5;
  double pl_margin = 0.5;
  CommonTrainOptions pl_common;  // --seed governs the split and both trainers
  pipeline->add_option("--input", pl_input, "Feedback log")->required();
  pipeline->add_option("--format", pl_format, "csv, tsv or movielens");
  pipeline->add_option("--outdir", pl_outdir, "Output directory for all artifacts");
  pipeline->add_option("--kcore", pl_kcore);
  pipeline->add_option("--drop-top-percent", pl_drop_top);
  pipeline->add_option("--bits", pl_bits);
  pipeline->add_option("--m", pl_m, "Substring count (0 = by catalogue size)");
  pipeline->add_option("--c", pl_c);
  pipeline->add_option("--lmax", pl_lmax);
  pipeline->add_option("--kind", pl_kind, "Re-ranker kind");
  pipeline->add_option("--k", pl_k);
  pipeline->add_option("--h", pl_h);
  pipeline->add_option("--lambda-hash", pl_lambda_hash);
  pipeline->add_option("--lambda-rank", pl_lambda_rank);
  pipeline->add_option("--margin", pl_margin);
  pipeline->add_option("--n", pl_n, "Evaluation cutoff");
  pl_common.attach(pipeline);

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const CliFailure& failure) {
    return failure.exit_code;
  }
  std::reverse(args.begin(), args.end());  // App::parse consumes reversed args
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*ingest) {
      cigar_ingest_params params;
      cigar_ingest_params_init(&params);
      params.path = in_path.c_str();
      params.format = in_format.c_str();
      params.kcore = kcore;
      params.seed = ingest_seed;
      params.drop_top_percent = drop_top;
      DatasetHandle dataset;
      require(cigar_ingest(&params, dataset.out()));
      require(cigar_dataset_save(dataset, ingest_out.c_str()));
      write_provenance(*ingest, ingest_outdir.empty() ? parent_dir(ingest_out) : ingest_outdir);
      std::printf("dataset: %u users, %u items, %llu train actions -> %s\n",
                  cigar_dataset_num_users(dataset), cigar_dataset_num_items(dataset),
                  static_cast<unsigned long long>(cigar_dataset_train_size(dataset)),
                  ingest_out.c_str());
    } else if (*train_hash) {
      DatasetHandle dataset;
      require(cigar_dataset_load(th_dataset.c_str(), dataset.out()));
      HashHandle warm;
      if (!th_resume.empty()) require(cigar_hash_model_load(th_resume.c_str(), warm.out()));

      cigar_hashrec_params params;
      cigar_hashrec_params_init(&params);
      params.bits = th_bits;
      params.lambda = th_lambda;
      params.alpha = th_alpha;
      params.num_epochs = th_common.epochs;
      params.iters_per_epoch = th_common.iters;
      params.batch_size = th_common.batch;
      params.learning_rate = th_common.lr;
      params.seed = th_common.seed;
      params.eval_every = th_common.eval_every;
      params.patience = th_common.patience;
      params.async_sampler = th_common.sync_sampler ? 0 : 1;

      HashHandle model;
      OwnedString curve;
      require(cigar_hashrec_train(dataset, &params, warm.get(), model.out(), curve.out()));
      require(cigar_hash_model_save(model, th_out.c_str()));
      if (!th_curve.empty()) write_text_file(th_curve, curve.get());
      write_provenance(*train_hash, th_outdir.empty() ? parent_dir(th_out) : th_outdir);
      std::printf("hash model: %u bits, %u users, %u items -> %s\n",
                  cigar_hash_model_bits(model), cigar_hash_model_num_users(model),
                  cigar_hash_model_num_items(model), th_out.c_str());
    } else if (*build_index) {
      HashHandle model;
      require(cigar_hash_model_load(bi_model.c_str(), model.out()));
      IndexHandle index;
      require(cigar_index_build(model, bi_m, index.out()));
      require(cigar_index_save(index, bi_out.c_str()));
      write_provenance(*build_index, bi_outdir.empty() ? parent_dir(bi_out) : bi_outdir);
      std::printf("index: %u tables over %u items -> %s\n", cigar_index_num_tables(index),
                  cigar_index_num_items(index), bi_out.c_str());
    } else if (*gen_cands) {
      DatasetHandle dataset;
      HashHandle model;
      IndexHandle index;
      require(cigar_dataset_load(gc_dataset.c_str(), dataset.out()));
      require(cigar_hash_model_load(gc_model.c_str(), model.out()));
      require(cigar_index_load(gc_index.c_str(), index.out()));
      CandidatesHandle candidates;
      require(cigar_candidates_generate(dataset, model, index, gc_c, gc_lmax, candidates.out()));
      require(cigar_candidates_save(candidates, gc_out.c_str()));
      write_provenance(*gen_cands, gc_outdir.empty() ? parent_dir(gc_out) : gc_outdir);
      std::printf("candidates: %u per user for %u users -> %s\n",
                  cigar_candidates_c(candidates), cigar_candidates_num_users(candidates),
                  gc_out.c_str());
    } else if (*train_ranker) {
      int kind = parse_ranker_kind(tr_kind);
      DatasetHandle dataset;
      require(cigar_dataset_load(tr_dataset.c_str(), dataset.out()));

      RankerHandle model;
      std::string log_text;
      if (kind == CIGAR_RANKER_BPRB) {
        if (tr_from.empty()) {
          std::cerr << "error: --kind bpr-b requires --from <bpr-mf model>\n";
          throw CliFailure{2};
        }
        RankerHandle source;
        require(cigar_ranker_load(tr_from.c_str(), source.out()));
        require(cigar_ranker_quantize(source, model.out()));
        log_text = "kind=bpr-b\nquantized_from=" + tr_from + "\n";
      } else {
        CandidatesHandle candidates;
        if (!tr_candidates.empty())
          require(cigar_candidates_load(tr_candidates.c_str(), candidates.out()));

        cigar_ranker_params params;
        cigar_ranker_params_init(&params);
        params.kind = kind;
        params.k = tr_k;
        if (kind == CIGAR_RANKER_NEUMF && k_opt->count() == 0) params.k = 25;
        params.lambda = tr_lambda;
        params.h = tr_h;
        params.margin = tr_margin;
        params.mlp_arch = tr_mlp.data();
        params.mlp_arch_len = static_cast<uint32_t>(tr_mlp.size());
        params.num_epochs = tr_common.epochs;
        params.iters_per_epoch = tr_common.iters;
        params.batch_size = tr_common.batch;
        params.learning_rate = tr_common.lr;
        params.seed = tr_common.seed;
        params.eval_every = tr_common.eval_every;
        params.patience = tr_common.patience;
        params.async_sampler = tr_common.sync_sampler ? 0 : 1;

        OwnedString log;
        require(cigar_ranker_train(dataset, &params, candidates.get(), model.out(), log.out()));
        log_text = log.get();
      }
      require(cigar_ranker_save(model, tr_out.c_str()));
      if (!tr_log.empty()) write_text_file(tr_log, log_text);
      write_provenance(*train_ranker, tr_outdir.empty() ? parent_dir(tr_out) : tr_outdir);
      std::printf("ranker: kind %s -> %s\n", tr_kind.c_str(), tr_out.c_str());
      std::fputs(log_text.c_str(), stdout);
    } else if (*recommend) {
      DatasetHandle dataset;
      HashHandle model;
      IndexHandle index;
      RankerHandle ranker;
      require(cigar_dataset_load(rc_dataset.c_str(), dataset.out()));
      require(cigar_hash_model_load(rc_model.c_str(), model.out()));
      require(cigar_index_load(rc_index.c_str(), index.out()));
      require(cigar_ranker_load(rc_ranker.c_str(), ranker.out()));

      uint32_t dense_user = 0;
      require(cigar_dataset_user_id(dataset, rc_user, &dense_user));
      std::vector<uint32_t> items(rc_n);
      std::vector<double> scores(rc_n);
      uint32_t count = 0;
      require(cigar_recommend(dataset, model, index, ranker, dense_user, rc_n, rc_c, rc_lmax,
                              items.data(), scores.data(), &count));
      std::printf("%-6s %12s %14s\n", "rank", "item", "score");
      for (uint32_t i = 0; i < count; ++i) {
        int64_t original = 0;
        require(cigar_dataset_item_original(dataset, items[i], &original));
        std::printf("%-6u %12lld %14.6f\n", i + 1, static_cast<long long>(original), scores[i]);
      }
    } else if (*evaluate) {
      DatasetHandle dataset;
      require(cigar_dataset_load(ev_dataset.c_str(), dataset.out()));
      cigar_split split = ev_split == "valid" ? CIGAR_SPLIT_VALID : CIGAR_SPLIT_TEST;
      if (ev_split != "valid" && ev_split != "test") {
        std::cerr << "error: --split must be valid or test\n";
        throw CliFailure{2};
      }

      cigar_eval_report report;
      if (ev_mode == "full") {
        RankerHandle ranker;
        if (ev_ranker.empty()) {
          std::cerr << "error: --mode full requires --ranker\n";
          throw CliFailure{2};
        }
        require(cigar_ranker_load(ev_ranker.c_str(), ranker.out()));
        require(cigar_evaluate_full(dataset, ranker, ev_n, split, &report));
      } else if (ev_mode == "pipeline" || ev_mode == "candidates") {
        if (ev_model.empty() || ev_index.empty()) {
          std::cerr << "error: --mode " << ev_mode << " requires --model and --index\n";
          throw CliFailure{2};
        }
        HashHandle model;
        IndexHandle index;
        require(cigar_hash_model_load(ev_model.c_str(), model.out()));
        require(cigar_index_load(ev_index.c_str(), index.out()));
        if (ev_mode == "pipeline") {
          RankerHandle ranker;
          if (ev_ranker.empty()) {
            std::cerr << "error: --mode pipeline requires --ranker\n";
            throw CliFailure{2};
          }
          require(cigar_ranker_load(ev_ranker.c_str(), ranker.out()));
          require(cigar_evaluate_pipeline(dataset, model, index, ranker, ev_n, ev_c, ev_lmax,
                                          split, &report));
        } else {
          require(cigar_evaluate_candidates(dataset, model, index, ev_c, ev_lmax, split,
                                            &report));
        }
      } else {
        std::cerr << "error: --mode must be full, pipeline or candidates\n";
        throw CliFailure{2};
      }

      print_report_table(report, ev_mode, ev_split);
      if (!ev_json.empty())
        write_text_file(ev_json, report_json(report, ev_mode, ev_split).dump(2) + "\n");
    } else if (*bench) {
      DatasetHandle dataset;
      HashHandle model;
      IndexHandle index;
      RankerHandle ranker;
      require(cigar_dataset_load(be_dataset.c_str(), dataset.out()));
      require(cigar_hash_model_load(be_model.c_str(), model.out()));
      require(cigar_index_load(be_index.c_str(), index.out()));
      if (!be_ranker.empty()) require(cigar_ranker_load(be_ranker.c_str(), ranker.out()));

      cigar_bench_params params;
      cigar_bench_params_init(&params);
      params.methods = be_methods.c_str();
      params.num_queries = be_queries;
      params.repeats = be_repeats;
      params.warmup = be_warmup;
      params.top_n = be_n;
      params.c = be_c;
      params.l_max = be_lmax;
      params.seed = be_seed;

      OwnedString csv;
      require(cigar_bench_retrieval(dataset, model, index, ranker.get(), &params, csv.out()));
      if (be_out.empty())
        std::fputs(csv.get(), stdout);
      else
        write_text_file(be_out, csv.get());
    } else if (*pipeline) {
      std::error_code ec;
      std::filesystem::create_directories(pl_outdir, ec);
      auto under = [&](const std::string& name) {
        return (std::filesystem::path(pl_outdir) / name).string();
      };

      cigar_ingest_params ip;
      cigar_ingest_params_init(&ip);
      ip.path = pl_input.c_str();
      ip.format = pl_format.c_str();
      ip.kcore = pl_kcore;
      ip.seed = pl_common.seed;
      ip.drop_top_percent = pl_drop_top;
      DatasetHandle dataset;
      require(cigar_ingest(&ip, dataset.out()));
      require(cigar_dataset_save(dataset, under("dataset.cgds").c_str()));
      std::printf("[1/6] dataset: %u users, %u items\n", cigar_dataset_num_users(dataset),
                  cigar_dataset_num_items(dataset));

      cigar_hashrec_params hp;
      cigar_hashrec_params_init(&hp);
      hp.bits = pl_bits;
      hp.lambda = pl_lambda_hash;
      hp.num_epochs = pl_common.epochs;
      hp.iters_per_epoch = pl_common.iters;
      hp.batch_size = pl_common.batch;
      hp.learning_rate = pl_common.lr;
      hp.seed = pl_common.seed;
      hp.eval_every = pl_common.eval_every;
      hp.patience = pl_common.patience;
      hp.async_sampler = pl_common.sync_sampler ? 0 : 1;
      HashHandle hash;
      OwnedString curve;
      require(cigar_hashrec_train(dataset, &hp, nullptr, hash.out(), curve.out()));
      require(cigar_hash_model_save(hash, under("hash.cghr").c_str()));
      write_text_file(under("train-hash-curve.csv"), curve.get());
      std::printf("[2/6] hash model trained (%u bits)\n", cigar_hash_model_bits(hash));

      IndexHandle index;
      require(cigar_index_build(hash, pl_m, index.out()));
      require(cigar_index_save(index, under("index.cgix").c_str()));
      std::printf("[3/6] index built (%u tables)\n", cigar_index_num_tables(index));

      CandidatesHandle candidates;
      require(cigar_candidates_generate(dataset, hash, index, pl_c, pl_lmax, candidates.out()));
      require(cigar_candidates_save(candidates, under("candidates.cgcd").c_str()));
      std::printf("[4/6] candidates generated (c=%u)\n", cigar_candidates_c(candidates));

      cigar_ranker_params rp;
      cigar_ranker_params_init(&rp);
      rp.kind = parse_ranker_kind(pl_kind);
      rp.k = pl_kind == "neumf" ? 25 : pl_k;
      rp.lambda = pl_lambda_rank;
      rp.h = pl_h;
      rp.margin = pl_margin;
      rp.num_epochs = pl_common.epochs;
      rp.iters_per_epoch = pl_common.iters;
      rp.batch_size = pl_common.batch;
      rp.learning_rate = pl_common.lr;
      rp.seed = pl_common.seed;
      rp.eval_every = pl_common.eval_every;
      rp.patience = pl_common.patience;
      rp.async_sampler = pl_common.sync_sampler ? 0 : 1;
      RankerHandle ranker;
      OwnedString train_log;
      require(cigar_ranker_train(dataset, &rp, candidates.get(), ranker.out(), train_log.out()));
      require(cigar_ranker_save(ranker, under("ranker.cgrk").c_str()));
      write_text_file(under("train-ranker.log"), train_log.get());
      std::printf("[5/6] re-ranker trained (%s)\n", pl_kind.c_str());

      nlohmann::json reports = nlohmann::json::array();
      for (auto split : {CIGAR_SPLIT_VALID, CIGAR_SPLIT_TEST}) {
        std::string split_name = split == CIGAR_SPLIT_VALID ? "valid" : "test";
        cigar_eval_report full, piped, stage;
        require(cigar_evaluate_full(dataset, ranker, pl_n, split, &full));
        require(cigar_evaluate_pipeline(dataset, hash, index, ranker, pl_n, pl_c, pl_lmax, split,
                                        &piped));
        require(cigar_evaluate_candidates(dataset, hash, index, pl_c, pl_lmax, split, &stage));
        print_report_table(full, "full", split_name);
        print_report_table(piped, "pipeline", split_name);
        print_report_table(stage, "candidates", split_name);
        reports.push_back(report_json(full, "full", split_name));
        reports.push_back(report_json(piped, "pipeline", split_name));
        reports.push_back(report_json(stage, "candidates", split_name));
      }
      write_text_file(under("reports.json"), reports.dump(2) + "\n");
      write_provenance(*pipeline, pl_outdir);
      std::printf("[6/6] reports written to %s\n", pl_outdir.c_str());
    }
  } catch (const CliFailure& failure) {
    return failure.exit_code;
  }
  return 0;
}
