#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bugsift/ablstm.hpp"
#include "bugsift/ball_tree.hpp"
#include "bugsift/baselines.hpp"
#include "bugsift/common.hpp"
#include "bugsift/corrector.hpp"
#include "bugsift/docvec.hpp"
#include "bugsift/metrics.hpp"

namespace bugsift {

// Shared configuration for the experiment runners. Defaults are desk-scale;
// the CLI maps its pipeline config onto this.
struct HarnessConfig {
  DocVecConfig docvec;
  CorrectorConfig corrector;
  int embed_dim = 64;
  int hidden_dim = 64;
  MergeMode merge = MergeMode::sum;
  TrainConfig train;
  LogRegConfig logreg;
  int knn_k = 20;
  int infer_steps = 30;        // docvec inference for unseen issues
  double train_frac = 0.8;
  double valid_frac = 0.1;
  int n_folds = 1;             // >1 switches rq2 to pooled cross-validation
  std::uint64_t seed = 99;
  bool include_uncorrected_ablstm = false;
};

namespace detail {

template <typename T>
Matrix<double> to_double_matrix(const Matrix<T>& m) {
  Matrix<double> out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    out.data[i] = static_cast<double>(m.data[i]);
  return out;
}

inline std::vector<TokenizedIssue> gather(
    const std::vector<TokenizedIssue>& corpus,
    const std::vector<std::size_t>& idx) {
  std::vector<TokenizedIssue> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(corpus[i]);
  return out;
}

}  // namespace detail

// Document vectors for a whole corpus, indexed by issue id, plus the ball
// tree over them. One place so the corrector, the k-NN baseline and the
// runners share the exact same geometry.
struct VectorIndex {
  DocVecModel<float> model;
  BallTree<double> tree;
};

inline VectorIndex build_vector_index(const std::vector<TokenizedIssue>& corpus,
                                      const DocVecConfig& config,
                                      std::size_t vocab_size,
                                      std::size_t leaf_size = 40) {
  VectorIndex index;
  index.model = train_pvdm<float>(corpus, config, vocab_size);
  Matrix<double> points = detail::to_double_matrix(index.model.doc_vectors);
  index.tree = BallTree<double>::build(std::move(points), index.model.doc_ids,
                                       leaf_size);
  return index;
}

// ---------------------------------------------------------------------------
// Correction-threshold experiment: one control run (no correction) plus one
// run per grid threshold, all sharing the same document vectors, the same
// splits and the same training settings. Per-run predictions are retained
// so callers holding ground truth can score them independently.
// ---------------------------------------------------------------------------

struct ThresholdRunRow {
  std::string run;              // "control" or "p=<value>"
  std::optional<double> p;
  Metrics metrics;              // against the run's own test labels
  std::vector<std::pair<std::string, ReporterType>> predictions;
};

struct ThresholdRunResult {
  std::vector<ThresholdRunRow> rows;
};

inline ThresholdRunResult run_rq1(const std::vector<TokenizedIssue>& corpus,
                                  std::size_t vocab_size,
                                  const std::vector<double>& grid,
                                  const HarnessConfig& config) {
  if (corpus.empty()) throw DataError("rq1: empty corpus");
  VectorIndex index = build_vector_index(corpus, config.docvec, vocab_size);

  std::vector<ReporterType> labels;
  labels.reserve(corpus.size());
  for (const auto& issue : corpus) labels.push_back(issue.reporter_type);
  const FoldSplit split = stratified_split(labels, config.train_frac,
                                           config.valid_frac, config.seed);

  AblstmConfig model_config;
  model_config.vocab_size = static_cast<int>(vocab_size);
  model_config.embed_dim = config.embed_dim;
  model_config.hidden_dim = config.hidden_dim;
  model_config.merge = config.merge;
  model_config.seed = config.seed;

  ThresholdRunResult result;
  auto run_once = [&](const std::string& name, std::optional<double> p) {
    std::vector<TokenizedIssue> working = corpus;
    if (p) {
      CorrectorConfig cc = config.corrector;
      cc.p = *p;
      CorrectionReport report = detect_misclassified(corpus, index.tree, cc);
      working = apply_corrections(corpus, report);
    }
    auto train_split = detail::gather(working, split.train);
    auto valid_split = detail::gather(working, split.valid);
    auto test_split = detail::gather(working, split.test);
    TrainResult<float> trained = train_ablstm<float>(
        train_split, valid_split, test_split, model_config, config.train);

    ThresholdRunRow row;
    row.run = name;
    row.p = p;
    std::vector<ReporterType> predicted =
        predict_corpus(trained.best.model, test_split);
    std::vector<ReporterType> gold;
    gold.reserve(test_split.size());
    for (const auto& issue : test_split) gold.push_back(issue.reporter_type);
    row.metrics = compute_metrics(predicted, gold);
    row.predictions.reserve(test_split.size());
    for (std::size_t i = 0; i < test_split.size(); ++i)
      row.predictions.emplace_back(test_split[i].issue_id, predicted[i]);
    result.rows.push_back(std::move(row));
  };

  run_once("control", std::nullopt);
  for (double p : grid)
    run_once("p=" + std::to_string(p).substr(0, 4), p);
  return result;
}

inline std::string rq1_to_csv(const ThresholdRunResult& result) {
  std::string out = "run,p,f_avg\n";
  char buf[96];
  for (const auto& row : result.rows) {
    std::string p = row.p ? format_metric(row.p) : "NA";
    std::snprintf(buf, sizeof(buf), "%s,%s,%s\n", row.run.c_str(), p.c_str(),
                  format_metric(row.metrics.f_avg).c_str());
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Method-comparison experiment: logistic regression, the k-NN baseline and
// the ABLSTM (corrected pipeline), per source and on the union.
// ---------------------------------------------------------------------------

struct Rq2Table {
  // method -> metrics on the shared test split
  std::map<std::string, Metrics> by_method;
};

struct Rq2Report {
  std::map<std::string, Rq2Table> by_source;  // includes "all" for the union
};

inline Rq2Table evaluate_methods_on(const std::vector<TokenizedIssue>& corpus,
                                    std::size_t vocab_size,
                                    const HarnessConfig& config) {
  if (corpus.size() < 10) throw DataError("rq2: corpus too small");
  std::vector<ReporterType> labels;
  labels.reserve(corpus.size());
  for (const auto& issue : corpus) labels.push_back(issue.reporter_type);

  // One split by default; with n_folds > 1 every issue is a test item in
  // exactly one fold and metrics are computed over the pooled predictions.
  std::vector<FoldSplit> splits;
  if (config.n_folds > 1) {
    splits = ten_fold(labels, config.seed, config.n_folds);
  } else {
    splits.push_back(stratified_split(labels, config.train_frac,
                                      config.valid_frac, config.seed));
  }

  VectorIndex index = build_vector_index(corpus, config.docvec, vocab_size);
  CorrectionReport report =
      detect_misclassified(corpus, index.tree, config.corrector);
  const std::vector<TokenizedIssue> corrected =
      apply_corrections(corpus, report);

  AblstmConfig model_config;
  model_config.vocab_size = static_cast<int>(vocab_size);
  model_config.embed_dim = config.embed_dim;
  model_config.hidden_dim = config.hidden_dim;
  model_config.merge = config.merge;
  model_config.seed = config.seed;

  std::map<std::string, std::vector<ReporterType>> pooled_pred;
  std::vector<ReporterType> pooled_gold;

  for (const FoldSplit& split : splits) {
    auto train_split = detail::gather(corpus, split.train);
    auto test_split = detail::gather(corpus, split.test);
    for (const auto& issue : test_split)
      pooled_gold.push_back(issue.reporter_type);

    // Logistic regression over bag-of-words.
    {
      LogRegModel lr =
          train_logreg_bow(train_split, vocab_size, config.logreg);
      for (const auto& issue : test_split)
        pooled_pred["lr"].push_back(classify_logreg(lr, issue.tokens));
    }

    // k-NN over document vectors; the tree holds training vectors only and
    // test issues are folded in by inference.
    {
      Matrix<double> train_points(split.train.size(),
                                  static_cast<std::size_t>(config.docvec.dim));
      std::vector<std::string> train_ids(split.train.size());
      std::vector<ReporterType> train_labels(split.train.size());
      for (std::size_t i = 0; i < split.train.size(); ++i) {
        const auto& issue = corpus[split.train[i]];
        std::span<const float> v = index.model.doc_vector(issue.issue_id);
        for (std::size_t d = 0; d < v.size(); ++d)
          train_points(i, d) = static_cast<double>(v[d]);
        train_ids[i] = issue.issue_id;
        train_labels[i] = issue.reporter_type;
      }
      BallTree<double> train_tree =
          BallTree<double>::build(std::move(train_points), train_ids);
      std::size_t k = std::min<std::size_t>(
          static_cast<std::size_t>(config.knn_k), train_tree.size());
      for (const auto& issue : test_split) {
        std::vector<float> inferred =
            infer_vector(index.model, issue.tokens, config.infer_steps);
        std::vector<double> q(inferred.begin(), inferred.end());
        pooled_pred["knn"].push_back(
            knn_classify(train_tree, train_labels, k, q));
      }
    }

    // ABLSTM, trained on corrected labels (and optionally on raw ones),
    // scored against the original test labels so methods stay comparable.
    auto run_ablstm = [&](const std::string& method,
                          const std::vector<TokenizedIssue>& working) {
      auto tr = detail::gather(working, split.train);
      auto va = detail::gather(working, split.valid);
      auto te = detail::gather(working, split.test);
      TrainResult<float> trained =
          train_ablstm<float>(tr, va, te, model_config, config.train);
      std::vector<ReporterType> predicted =
          predict_corpus(trained.best.model, te);
      auto& pool = pooled_pred[method];
      pool.insert(pool.end(), predicted.begin(), predicted.end());
    };
    run_ablstm("ablstm", corrected);
    if (config.include_uncorrected_ablstm)
      run_ablstm("ablstm_nocorrect", corpus);
  }

  Rq2Table table;
  for (const auto& [method, predicted] : pooled_pred)
    table.by_method[method] = compute_metrics(predicted, pooled_gold);
  return table;
}

inline Rq2Report run_rq2(
    const std::map<std::string, std::vector<TokenizedIssue>>& corpora,
    std::size_t vocab_size, const HarnessConfig& config) {
  if (corpora.empty()) throw DataError("rq2: no sources");
  Rq2Report report;
  std::vector<TokenizedIssue> all;
  for (const auto& [source, corpus] : corpora) {
    report.by_source[source] = evaluate_methods_on(corpus, vocab_size, config);
    all.insert(all.end(), corpus.begin(), corpus.end());
  }
  if (corpora.size() > 1)
    report.by_source["all"] = evaluate_methods_on(all, vocab_size, config);
  return report;
}

// One CSV per source, columns exactly (method, class, precision, recall, f).
inline std::string rq2_table_to_csv(const Rq2Table& table) {
  std::string out = "method,class,precision,recall,f\n";
  char buf[192];
  for (const auto& [method, metrics] : table.by_method) {
    auto emit = [&](const char* cls, const std::optional<double>& p,
                    const std::optional<double>& r,
                    const std::optional<double>& f) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s\n", method.c_str(), cls,
                    format_metric(p).c_str(), format_metric(r).c_str(),
                    format_metric(f).c_str());
      out += buf;
    };
    emit("bug", metrics.bug.precision, metrics.bug.recall, metrics.bug.f);
    emit("nonbug", metrics.nonbug.precision, metrics.nonbug.recall,
         metrics.nonbug.f);
    emit("average", metrics.avg_precision, metrics.avg_recall, metrics.f_avg);
  }
  return out;
}

}  // namespace bugsift
