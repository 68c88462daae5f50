// Subcommand front end for the issue-classification pipeline: ingestion,
// preprocessing, document vectors, misclassification correction, classifier
// training, evaluation and prediction. One JSON config drives every stage;
// flags override individual fields; every artifact is written atomically and
// stamped with the config hash and seed.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bugsift/ablstm.hpp"
#include "bugsift/baselines.hpp"
#include "bugsift/config.hpp"
#include "bugsift/corrector.hpp"
#include "bugsift/corpus.hpp"
#include "bugsift/docvec.hpp"
#include "bugsift/fetch.hpp"
#include "bugsift/harness.hpp"
#include "bugsift/metrics.hpp"
#include "bugsift/textprep.hpp"

namespace {

using namespace bugsift;
namespace fs = std::filesystem;

struct CliState {
  std::string config_path;
  PipelineConfig config;
  // common overrides
  std::string corpus_override;
  std::string workdir_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;

  void finalize() {
    if (!config_path.empty()) config = load_pipeline_config(config_path);
    if (!corpus_override.empty()) config.corpus_path = corpus_override;
    if (!workdir_override.empty()) config.workdir = workdir_override;
    if (seed_set) {
      nlohmann::json j = pipeline_config_to_json(config);
      j["seed"] = seed_override;
      config = pipeline_config_from_json(j);
    }
  }

  fs::path workdir() const { return fs::path(config.workdir); }
  fs::path artifact(const std::string& name) const { return workdir() / name; }

  LabelLexicon lexicon() const {
    return config.lexicon_path.empty() ? default_lexicon()
                                       : load_lexicon(config.lexicon_path);
  }
  StopwordSet stopwords() const {
    return config.stopwords_path.empty() ? default_stopwords()
                                         : load_stopwords(config.stopwords_path);
  }
};

void log_run(const CliState& state, const std::string& stage) {
  std::fprintf(stderr, "bugsift %s: config_hash=%s seed=%llu\n", stage.c_str(),
               config_hash(state.config).c_str(),
               static_cast<unsigned long long>(state.config.seed));
}

HarnessConfig harness_config_from(const PipelineConfig& config) {
  HarnessConfig h;
  h.docvec = config.docvec;
  h.corrector = config.corrector;
  h.embed_dim = config.model.embed_dim;
  h.hidden_dim = config.model.hidden_dim;
  h.merge = config.model.merge;
  h.train = config.train;
  h.seed = config.seed;
  return h;
}

// ---------------------------------------------------------------------------
// fetch
// ---------------------------------------------------------------------------

struct FetchArgs {
  std::string source = "github";
  std::vector<std::string> repos;     // the curated allowlist
  std::string jira_base;
  std::vector<std::string> projects;
  std::string out;
  int min_issues = 500;
  double min_labeled = 0.5;
  std::string base_url;  // override for testing against a fixture
};

int cmd_fetch(CliState& state, const FetchArgs& args) {
  WorkdirLock lock(state.workdir());
  log_run(state, "fetch");
  LabelLexicon lexicon = state.lexicon();
  InclusionCriteria criteria{args.min_issues, args.min_labeled};
  std::vector<Issue> corpus;
  if (args.source == "github") {
    if (args.repos.empty())
      throw UsageError("fetch: at least one --repo owner/name is required");
    FetchOptions options;
    options.base_url =
        args.base_url.empty() ? "https://api.github.com" : args.base_url;
    if (const char* token = std::getenv("BUGSIFT_GITHUB_TOKEN"))
      options.auth_token = token;
    else if (const char* token2 = std::getenv("GITHUB_TOKEN"))
      options.auth_token = token2;
    for (const auto& repo : args.repos) {
      auto issues = fetch_github(repo, options, criteria);
      corpus.insert(corpus.end(), issues.begin(), issues.end());
    }
  } else if (args.source == "jira") {
    if (args.jira_base.empty() || args.projects.empty())
      throw UsageError("fetch: --base-url and --project are required for jira");
    for (const auto& project : args.projects) {
      auto issues = fetch_jira(args.jira_base, project);
      corpus.insert(corpus.end(), issues.begin(), issues.end());
    }
  } else {
    throw UsageError("fetch: unknown source " + args.source);
  }
  assign_reporter_types(corpus, lexicon);
  fs::path out = args.out.empty() ? state.artifact("corpus.jsonl")
                                  : fs::path(args.out);
  write_jsonl(corpus, out);
  write_run_metadata(out, state.config, "fetch");
  CorpusStats stats = corpus_stats(corpus);
  std::fprintf(stderr, "bugsift fetch: %zu issues, %zu typed\n", corpus.size(),
               stats.total.labeled_count);
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

int cmd_preprocess(CliState& state) {
  WorkdirLock lock(state.workdir());
  log_run(state, "preprocess");
  std::vector<Issue> corpus = read_jsonl(state.config.corpus_path);
  std::vector<Issue> typed = filter_typed(corpus);
  if (typed.empty())
    throw DataError("preprocess: no typed issues in " +
                    state.config.corpus_path);
  StopwordSet stopwords = state.stopwords();
  std::vector<std::vector<std::string>> docs;
  docs.reserve(typed.size());
  for (const auto& issue : typed)
    docs.push_back(preprocess_title(
        issue.title, stopwords,
        static_cast<std::size_t>(state.config.max_title_tokens)));
  Vocabulary vocab = build_vocab(docs, state.config.vocab_cap);
  std::vector<TokenizedIssue> tokenized;
  for (std::size_t i = 0; i < typed.size(); ++i) {
    if (docs[i].empty()) continue;
    tokenized.push_back(TokenizedIssue{typed[i].id, encode(docs[i], vocab),
                                       typed[i].reporter_type});
  }
  if (tokenized.empty())
    throw DataError("preprocess: every title reduced to nothing");
  save_vocab(vocab, state.artifact("vocab.json"));
  write_tokenized_jsonl(tokenized, state.artifact("tokenized.jsonl"));
  write_run_metadata(state.artifact("tokenized.jsonl"), state.config,
                     "preprocess");
  std::fprintf(stderr, "bugsift preprocess: %zu issues, vocab %zu\n",
               tokenized.size(), vocab.size());
  return 0;
}

// ---------------------------------------------------------------------------
// docvec
// ---------------------------------------------------------------------------

int cmd_docvec(CliState& state, const std::string& export_text) {
  WorkdirLock lock(state.workdir());
  log_run(state, "docvec");
  Vocabulary vocab = load_vocab(state.artifact("vocab.json"));
  auto tokenized = read_tokenized_jsonl(state.artifact("tokenized.jsonl"));
  auto model = train_pvdm<float>(tokenized, state.config.docvec, vocab.size());
  save_docvec(model, state.artifact("docvec.bin"));
  write_run_metadata(state.artifact("docvec.bin"), state.config, "docvec");
  if (!export_text.empty())
    write_file_atomic(export_text, docvec_text_export(model));
  std::fprintf(stderr, "bugsift docvec: %zu vectors of dim %d\n",
               model.doc_ids.size(), model.config.dim);
  return 0;
}

// ---------------------------------------------------------------------------
// correct / sweep
// ---------------------------------------------------------------------------

BallTree<double> tree_from_model(const DocVecModel<float>& model) {
  Matrix<double> points(model.doc_vectors.rows, model.doc_vectors.cols);
  for (std::size_t i = 0; i < points.data.size(); ++i)
    points.data[i] = static_cast<double>(model.doc_vectors.data[i]);
  return BallTree<double>::build(std::move(points), model.doc_ids);
}

int cmd_correct(CliState& state) {
  WorkdirLock lock(state.workdir());
  log_run(state, "correct");
  auto tokenized = read_tokenized_jsonl(state.artifact("tokenized.jsonl"));
  auto model = load_docvec<float>(state.artifact("docvec.bin"));
  BallTree<double> tree = tree_from_model(model);
  CorrectionReport report =
      detect_misclassified(tokenized, tree, state.config.corrector);
  auto corrected = apply_corrections(tokenized, report);
  write_tokenized_jsonl(corrected, state.artifact("corrected.jsonl"));

  nlohmann::json j{{"k", report.k},
                   {"p", report.p},
                   {"correction_rate", report.correction_rate},
                   {"flagged", report.flagged_ids}};
  nlohmann::json evidence = nlohmann::json::object();
  for (const auto& [id, ev] : report.per_issue)
    evidence[id] = {{"opposite", ev.opposite_count}, {"k_used", ev.k_used}};
  j["evidence"] = evidence;
  write_file_atomic(state.artifact("correction.json"), j.dump(2) + "\n");
  write_run_metadata(state.artifact("corrected.jsonl"), state.config,
                     "correct");
  std::fprintf(stderr, "bugsift correct: flagged %zu of %zu (rate %.4f)\n",
               report.flagged_ids.size(), tokenized.size(),
               report.correction_rate);
  return 0;
}

int cmd_sweep(CliState& state, const std::string& out_csv) {
  WorkdirLock lock(state.workdir());
  log_run(state, "sweep");
  if (state.config.annotations_path.empty())
    throw UsageError("sweep: an annotations file is required");
  auto tokenized = read_tokenized_jsonl(state.artifact("tokenized.jsonl"));
  auto model = load_docvec<float>(state.artifact("docvec.bin"));
  AnnotationSet annotations = load_annotations(state.config.annotations_path);
  BallTree<double> tree = tree_from_model(model);
  SweepResult sweep =
      threshold_sweep(tokenized, tree, annotations.sample,
                      annotations.misclassified, state.config.corrector);
  fs::path out = out_csv.empty() ? state.artifact("sweep.csv")
                                 : fs::path(out_csv);
  write_file_atomic(out, sweep_to_csv(sweep));
  write_run_metadata(out, state.config, "sweep");
  std::fprintf(stderr, "bugsift sweep: %zu thresholds, monotone=%s\n",
               sweep.rows.size(), sweep.monotone ? "yes" : "no");
  return 0;
}

// ---------------------------------------------------------------------------
// train / evaluate / predict
// ---------------------------------------------------------------------------

std::vector<TokenizedIssue> select(const std::vector<TokenizedIssue>& corpus,
                                   const std::vector<std::size_t>& idx) {
  std::vector<TokenizedIssue> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(corpus[i]);
  return out;
}

int cmd_train(CliState& state, bool use_corrected) {
  WorkdirLock lock(state.workdir());
  log_run(state, "train");
  Vocabulary vocab = load_vocab(state.artifact("vocab.json"));
  fs::path input = use_corrected && fs::exists(state.artifact("corrected.jsonl"))
                       ? state.artifact("corrected.jsonl")
                       : state.artifact("tokenized.jsonl");
  auto tokenized = read_tokenized_jsonl(input);
  std::vector<ReporterType> labels;
  for (const auto& t : tokenized) labels.push_back(t.reporter_type);
  FoldSplit split = stratified_split(labels, 0.8, 0.1, state.config.seed);

  AblstmConfig model_config = state.config.model;
  model_config.vocab_size = static_cast<int>(vocab.size());
  auto result = train_ablstm<float>(
      select(tokenized, split.train), select(tokenized, split.valid),
      select(tokenized, split.test), model_config, state.config.train,
      state.artifact("ckpt"));
  if (!result.selection_note.empty())
    std::fprintf(stderr, "bugsift train: %s\n", result.selection_note.c_str());
  save_checkpoint(result.best, state.artifact("best.ckpt"),
                  config_hash(state.config));

  auto test_set = select(tokenized, split.test);
  std::vector<ReporterType> predicted =
      predict_corpus(result.best.model, test_set);
  std::vector<ReporterType> gold;
  for (const auto& t : test_set) gold.push_back(t.reporter_type);
  Metrics metrics = compute_metrics(predicted, gold);
  nlohmann::json j{{"epoch", result.best.epoch},
                   {"validation_accuracy", result.best.validation_accuracy},
                   {"test_f_avg", metrics.f_avg ? nlohmann::json(*metrics.f_avg)
                                                : nlohmann::json("NA")},
                   {"test_micro_f", metrics.micro},
                   {"input", input.string()}};
  write_file_atomic(state.artifact("train_metrics.json"), j.dump(2) + "\n");
  write_run_metadata(state.artifact("best.ckpt"), state.config, "train");
  std::fprintf(stderr, "bugsift train: best epoch %d, val acc %.4f\n",
               result.best.epoch, result.best.validation_accuracy);
  return 0;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  auto cell = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json("NA");
  };
  return nlohmann::json{
      {"bug",
       {{"precision", cell(m.bug.precision)},
        {"recall", cell(m.bug.recall)},
        {"f", cell(m.bug.f)}}},
      {"nonbug",
       {{"precision", cell(m.nonbug.precision)},
        {"recall", cell(m.nonbug.recall)},
        {"f", cell(m.nonbug.f)}}},
      {"average",
       {{"precision", cell(m.avg_precision)},
        {"recall", cell(m.avg_recall)},
        {"f", cell(m.f_avg)}}},
      {"micro_f", m.micro},
      {"n_bug", m.n_bug},
      {"n_nonbug", m.n_nonbug}};
}

int cmd_evaluate(CliState& state, const std::string& mode,
                 const std::vector<std::string>& source_specs,
                 const std::string& grid_spec, bool json_mirror,
                 int n_folds) {
  WorkdirLock lock(state.workdir());
  log_run(state, "evaluate");
  if (mode == "test") {
    auto ckpt = load_checkpoint<float>(state.artifact("best.ckpt"));
    auto tokenized = read_tokenized_jsonl(state.artifact("tokenized.jsonl"));
    std::vector<ReporterType> predicted =
        predict_corpus(ckpt.model, tokenized);
    std::vector<ReporterType> gold;
    for (const auto& t : tokenized) gold.push_back(t.reporter_type);
    Metrics m = compute_metrics(predicted, gold);
    std::string csv = "class,precision,recall,f\n";
    char buf[160];
    auto emit = [&](const char* cls, const Prf& prf_row) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s\n", cls,
                    format_metric(prf_row.precision).c_str(),
                    format_metric(prf_row.recall).c_str(),
                    format_metric(prf_row.f).c_str());
      csv += buf;
    };
    emit("bug", m.bug);
    emit("nonbug", m.nonbug);
    std::snprintf(buf, sizeof(buf), "average,%s,%s,%s\n",
                  format_metric(m.avg_precision).c_str(),
                  format_metric(m.avg_recall).c_str(),
                  format_metric(m.f_avg).c_str());
    csv += buf;
    write_file_atomic(state.artifact("eval.csv"), csv);
    write_run_metadata(state.artifact("eval.csv"), state.config, "evaluate");
    if (json_mirror)
      write_file_atomic(state.artifact("eval.json"),
                        metrics_to_json(m).dump(2) + "\n");
    std::printf("%s", csv.c_str());
    return 0;
  }

  Vocabulary vocab = load_vocab(state.artifact("vocab.json"));
  HarnessConfig harness = harness_config_from(state.config);
  harness.n_folds = n_folds;
  if (mode == "rq1") {
    auto tokenized = read_tokenized_jsonl(state.artifact("tokenized.jsonl"));
    std::vector<double> grid;
    if (grid_spec.empty()) {
      grid = default_threshold_grid();
    } else {
      std::stringstream ss(grid_spec);
      std::string item;
      while (std::getline(ss, item, ',')) grid.push_back(std::stod(item));
    }
    auto result = run_rq1(tokenized, vocab.size(), grid, harness);
    write_file_atomic(state.artifact("rq1.csv"), rq1_to_csv(result));
    write_run_metadata(state.artifact("rq1.csv"), state.config, "evaluate");
    if (json_mirror) {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : result.rows)
        rows.push_back({{"run", row.run},
                        {"p", row.p ? nlohmann::json(*row.p)
                                    : nlohmann::json("NA")},
                        {"metrics", metrics_to_json(row.metrics)}});
      write_file_atomic(state.artifact("rq1.json"), rows.dump(2) + "\n");
    }
    std::printf("%s", rq1_to_csv(result).c_str());
    return 0;
  }
  if (mode == "rq2") {
    std::map<std::string, std::vector<TokenizedIssue>> corpora;
    if (source_specs.empty()) {
      corpora["all"] =
          read_tokenized_jsonl(state.artifact("tokenized.jsonl"));
    } else {
      for (const auto& spec : source_specs) {
        auto eq = spec.find('=');
        if (eq == std::string::npos)
          throw UsageError("evaluate: --source must be name=path");
        corpora[spec.substr(0, eq)] =
            read_tokenized_jsonl(spec.substr(eq + 1));
      }
    }
    auto report = run_rq2(corpora, vocab.size(), harness);
    for (const auto& [source, table] : report.by_source) {
      fs::path out = state.artifact("rq2_" + source + ".csv");
      write_file_atomic(out, rq2_table_to_csv(table));
      write_run_metadata(out, state.config, "evaluate");
      if (json_mirror) {
        nlohmann::json methods = nlohmann::json::object();
        for (const auto& [method, metrics] : table.by_method)
          methods[method] = metrics_to_json(metrics);
        write_file_atomic(state.artifact("rq2_" + source + ".json"),
                          methods.dump(2) + "\n");
      }
    }
    std::fprintf(stderr, "bugsift evaluate: wrote %zu rq2 tables\n",
                 report.by_source.size());
    return 0;
  }
  throw UsageError("evaluate: unknown mode " + mode);
}

int cmd_predict(CliState& state, const std::string& input_path) {
  log_run(state, "predict");
  Vocabulary vocab = load_vocab(state.artifact("vocab.json"));
  auto ckpt = load_checkpoint<float>(state.artifact("best.ckpt"));
  StopwordSet stopwords = state.stopwords();

  std::istream* in = &std::cin;
  std::ifstream file;
  if (!input_path.empty() && input_path != "-") {
    file.open(input_path);
    if (!file) throw DataError("predict: cannot open " + input_path);
    in = &file;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(*in, line)) {
    ++line_no;
    std::string id;
    std::string title = line;
    auto tab = line.find('\t');
    if (tab != std::string::npos) {
      id = line.substr(0, tab);
      title = line.substr(tab + 1);
    } else {
      id = "line" + std::to_string(line_no);
    }
    auto words = preprocess_title(
        title, stopwords,
        static_cast<std::size_t>(state.config.max_title_tokens));
    std::vector<int> tokens = encode(words, vocab);
    if (tokens.empty()) tokens.push_back(vocab.ukn_index);
    auto pred = predict(ckpt.model, tokens);
    std::printf("%s\t%s\t%.6f\n", id.c_str(),
                pred.label == ReporterType::bug ? "bug" : "nonbug",
                static_cast<double>(pred.probs[kClassBug]));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bugsift: bug vs non-bug issue classification pipeline"};
  app.require_subcommand(1);

  CliState state;
  app.add_option("--config", state.config_path, "pipeline config JSON");
  app.add_option("--workdir", state.workdir_override, "artifact directory");
  app.add_option("--corpus", state.corpus_override, "corpus JSONL path");
  auto* seed_opt =
      app.add_option("--seed", state.seed_override, "global seed override");

  FetchArgs fetch_args;
  auto* fetch_cmd = app.add_subcommand("fetch", "ingest issues from a tracker");
  fetch_cmd->add_option("--source", fetch_args.source, "github or jira");
  fetch_cmd->add_option("--repo", fetch_args.repos,
                        "github repository owner/name (repeatable allowlist)");
  fetch_cmd->add_option("--base-url", fetch_args.jira_base, "jira base url");
  fetch_cmd->add_option("--project", fetch_args.projects,
                        "jira project key (repeatable)");
  fetch_cmd->add_option("--out", fetch_args.out, "output corpus JSONL");
  fetch_cmd->add_option("--min-issues", fetch_args.min_issues,
                        "inclusion threshold on issue count");
  fetch_cmd->add_option("--min-labeled", fetch_args.min_labeled,
                        "inclusion threshold on labeled fraction");
  fetch_cmd->add_option("--api-url", fetch_args.base_url,
                        "override the github api endpoint");

  auto* preprocess_cmd =
      app.add_subcommand("preprocess", "tokenize titles and build the vocabulary");

  std::string export_text;
  auto* docvec_cmd =
      app.add_subcommand("docvec", "train document vectors over the corpus");
  docvec_cmd->add_option("--export-text", export_text,
                         "also write 'id v1 .. vdim' lines here");

  double k_override = -1, p_override = -1;
  auto* correct_cmd = app.add_subcommand(
      "correct", "flag and flip probable misclassifications");
  correct_cmd->add_option("--k", k_override, "neighbor count");
  correct_cmd->add_option("--p", p_override, "judgment threshold");

  bool train_raw = false;
  auto* train_cmd = app.add_subcommand("train", "train the classifier");
  train_cmd->add_flag("--uncorrected", train_raw,
                      "train on the raw labels even if corrections exist");
  std::string merge_mode;
  train_cmd->add_option("--merge", merge_mode,
                        "bidirectional merge: sum (default) or concat");
  std::string selection_mode;
  train_cmd->add_option("--selection", selection_mode,
                        "checkpoint selection: validation (default) or test");

  std::string eval_mode = "test";
  std::vector<std::string> source_specs;
  std::string grid_spec;
  bool json_mirror = false;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "score the pipeline (test, rq1, rq2)");
  evaluate_cmd->add_option("--mode", eval_mode, "test | rq1 | rq2");
  evaluate_cmd->add_option("--source", source_specs,
                           "rq2 corpus as name=path (repeatable)");
  evaluate_cmd->add_option("--grid", grid_spec,
                           "rq1 comma-separated thresholds");
  evaluate_cmd->add_flag("--json", json_mirror,
                         "also write machine-readable JSON mirrors");
  int eval_folds = 1;
  evaluate_cmd->add_option("--folds", eval_folds,
                           "rq2 cross-validation folds (default 1 split)");

  std::string predict_input;
  auto* predict_cmd = app.add_subcommand(
      "predict", "label titles from stdin or a file (id<TAB>title per line)");
  predict_cmd->add_option("--input", predict_input, "input file, - for stdin");

  std::string sweep_out;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "corrector threshold sweep against the annotation file");
  sweep_cmd->add_option("--out", sweep_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fprintf(stderr, "error: stage=parse code=1 reason=%s\n",
                 e.get_name().c_str());
    return 1;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    state.seed_set = seed_opt->count() > 0;
    state.finalize();
    if (correct_cmd->parsed()) {
      if (k_override > 0) state.config.corrector.k = static_cast<int>(k_override);
      if (p_override > 0) state.config.corrector.p = p_override;
    }
    if (train_cmd->parsed()) {
      if (merge_mode == "concat") state.config.model.merge = MergeMode::concat;
      else if (merge_mode == "sum") state.config.model.merge = MergeMode::sum;
      else if (!merge_mode.empty())
        throw UsageError("train: unknown merge mode " + merge_mode);
      if (selection_mode == "test")
        state.config.train.selection = SelectionMode::best_test;
      else if (!selection_mode.empty() && selection_mode != "validation")
        throw UsageError("train: unknown selection mode " + selection_mode);
    }

    if (fetch_cmd->parsed()) return cmd_fetch(state, fetch_args);
    if (preprocess_cmd->parsed()) return cmd_preprocess(state);
    if (docvec_cmd->parsed()) return cmd_docvec(state, export_text);
    if (correct_cmd->parsed()) return cmd_correct(state);
    if (train_cmd->parsed()) return cmd_train(state, !train_raw);
    if (evaluate_cmd->parsed())
      return cmd_evaluate(state, eval_mode, source_specs, grid_spec,
                          json_mirror, eval_folds);
    if (predict_cmd->parsed()) return cmd_predict(state, predict_input);
    if (sweep_cmd->parsed()) return cmd_sweep(state, sweep_out);
    throw UsageError("no subcommand");
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: stage=%s code=1 reason=%s\n", stage.c_str(),
                 e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: stage=%s code=2 reason=%s\n", stage.c_str(),
                 e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: stage=%s code=3 reason=%s\n", stage.c_str(),
                 e.what());
    return 3;
  }
}
