// Acceptance suite: seven end-to-end criteria, one pass/fail line each.
// Every tolerance is pinned in code; the binary exits nonzero if any
// criterion fails.
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bugsift/ablstm.hpp"
#include "bugsift/ball_tree.hpp"
#include "bugsift/baselines.hpp"
#include "bugsift/corrector.hpp"
#include "bugsift/docvec.hpp"
#include "bugsift/harness.hpp"
#include "bugsift/metrics.hpp"
#include "bugsift/textprep.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace bugsift;

namespace {

struct Criterion {
  int number;
  std::string name;
  double time_limit_s;
  std::function<bool(std::string&)> run;
};

bool check(bool ok, std::string& detail, const std::string& message) {
  if (!ok) detail += (detail.empty() ? "" : "; ") + message;
  return ok;
}

// ---------------------------------------------------------------------------
// 1. Metric fidelity: the published sweep table's F cells follow from its
// precision/recall cells, and the weighted-F example from its class rows.
// ---------------------------------------------------------------------------

bool criterion_metric_fidelity(std::string& detail) {
  const double precision[] = {0.88, 0.873, 0.85,  0.837, 0.789, 0.739,
                              0.672, 0.59, 0.516, 0.453, 0.4};
  const double recall[] = {0.018, 0.06, 0.127, 0.218, 0.317, 0.433,
                           0.546, 0.643, 0.732, 0.816, 0.889};
  const double expected_f[] = {0.035, 0.112, 0.221, 0.346, 0.452, 0.546,
                               0.603, 0.615, 0.605, 0.583, 0.552};
  bool ok = true;
  for (int i = 0; i < 11; ++i) {
    double f = f_measure(precision[i], recall[i]);
    ok &= check(std::fabs(f - expected_f[i]) <= 0.002, detail,
                "F cell " + std::to_string(i) + " got " + std::to_string(f));
  }
  // Weighted average of the class F rows at a 44.7% bug share.
  auto favg = weighted_f(0.647, 0.742, 447, 553);
  ok &= check(favg.has_value() && std::fabs(*favg - 0.700) <= 0.005, detail,
              "weighted F got " + std::to_string(favg.value_or(-1)));
  return ok;
}

// ---------------------------------------------------------------------------
// 2. Ball-tree exactness against the linear-scan oracle.
// ---------------------------------------------------------------------------

bool criterion_ball_tree(std::string& detail) {
  SplitMix64 rng(0xacce97);
  const std::size_t dims[] = {2, 16, 128};
  bool ok = true;
  for (int instance = 0; instance < 200 && ok; ++instance) {
    const std::size_t dim = dims[instance % 3];
    const std::size_t n = 1 + rng.below(2000);
    Matrix<double> points(n, dim);
    for (auto& v : points.data) v = rng.uniform(-1, 1);
    if (n > 3 && instance % 5 == 0)  // duplicate rows stress tie order
      for (std::size_t d = 0; d < dim; ++d) points(2, d) = points(1, d);
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "p%06zu", i);
      ids[i] = buf;
    }
    auto tree = BallTree<double>::build(points, ids, 1 + rng.below(64));
    std::vector<double> query(dim);
    for (auto& v : query) v = rng.uniform(-1.2, 1.2);
    std::set<std::size_t> ks = {1, std::min<std::size_t>(5, n),
                                std::min<std::size_t>(20, n), n};
    for (std::size_t k : ks) {
      auto got = tree.knn(query, k);
      auto want = oracle::brute_force_knn(points, ids,
                                          std::span<const double>(query), k);
      ok &= check(got.size() == want.size(), detail, "size mismatch");
      for (std::size_t i = 0; ok && i < got.size(); ++i) {
        ok &= check(got[i].index == want[i].index &&
                        std::fabs(got[i].distance - want[i].distance) < 1e-9,
                    detail,
                    "instance " + std::to_string(instance) + " k " +
                        std::to_string(k) + " rank " + std::to_string(i));
      }
    }
  }
  return ok;
}

// ---------------------------------------------------------------------------
// 3. Gradient fidelity: analytic vs central finite differences in double
// precision for the classifier (every parameter tensor), the document-vector
// loss, and the logistic-regression baseline. Entries below the
// finite-difference resolution floor are held to an absolute bound.
// ---------------------------------------------------------------------------

bool criterion_gradients(std::string& detail) {
  bool ok = true;

  // Classifier, both merge modes.
  for (MergeMode merge : {MergeMode::sum, MergeMode::concat}) {
    AblstmConfig config;
    config.vocab_size = 6;
    config.embed_dim = 4;
    config.hidden_dim = 4;
    config.merge = merge;
    config.seed = 20240917;
    AblstmModel<double> model = init_ablstm<double>(config);
    std::vector<TokenizedIssue> batch = {
        {"a", {0, 2, 4}, ReporterType::bug},
        {"b", {5}, ReporterType::nonbug},
    };
    auto loss_of = [&]() {
      double total = 0.0;
      for (const auto& issue : batch)
        total += forward_sequence(model, issue.tokens,
                                  class_index(issue.reporter_type))
                     .loss;
      return total / static_cast<double>(batch.size());
    };
    AblstmModel<double> grads = zeros_like(model);
    for (const auto& issue : batch) {
      auto sf = forward_sequence(model, issue.tokens,
                                 class_index(issue.reporter_type));
      backward_sequence(model, sf, grads,
                        1.0 / static_cast<double>(batch.size()));
    }
    std::vector<std::pair<std::string, std::span<double>>> grad_views;
    for_each_tensor(grads, [&](const std::string& name, std::span<double> t) {
      grad_views.emplace_back(name, t);
    });
    std::size_t slot = 0;
    double worst = 0.0;
    std::string worst_name;
    for_each_tensor(model, [&](const std::string& name, std::span<double> t) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        double fd = oracle::central_difference(t[i], 1e-5, loss_of);
        double analytic = grad_views[slot].second[i];
        if (std::max(std::fabs(fd), std::fabs(analytic)) < 1e-5) {
          ok &= check(std::fabs(fd - analytic) < 1e-9, detail,
                      name + " small-entry drift");
          continue;
        }
        double rel = oracle::relative_error(analytic, fd);
        if (rel > worst) {
          worst = rel;
          worst_name = name;
        }
      }
      ++slot;
    });
    ok &= check(worst < 1e-5, detail,
                "classifier worst rel err " + std::to_string(worst) + " in " +
                    worst_name);
  }

  // Document-vector loss.
  double pvdm_err = pvdm_gradient_check();
  ok &= check(pvdm_err < 1e-5, detail,
              "document-vector rel err " + std::to_string(pvdm_err));

  // Logistic regression on a 5-feature toy.
  {
    LogRegModel model;
    model.weights = {0.3, -0.2, 0.05, 0.4, -0.5};
    model.bias = 0.1;
    std::vector<TokenizedIssue> batch = {
        {"a", {0, 1, 1}, ReporterType::bug},
        {"b", {2, 3}, ReporterType::nonbug},
        {"c", {4}, ReporterType::bug},
    };
    LogRegGrads grads;
    logreg_loss_grad(model, batch, 1e-3, &grads);
    auto loss_of = [&]() {
      return logreg_loss_grad(model, batch, 1e-3, nullptr);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
      double fd = oracle::central_difference(model.weights[i], 1e-6, loss_of);
      worst = std::max(worst, oracle::relative_error(grads.weights[i], fd));
    }
    double fd_bias = oracle::central_difference(model.bias, 1e-6, loss_of);
    worst = std::max(worst, oracle::relative_error(grads.bias, fd_bias));
    ok &= check(worst < 1e-5, detail,
                "logistic-regression rel err " + std::to_string(worst));
  }
  return ok;
}

// ---------------------------------------------------------------------------
// 4. Corrector behavior on the two-Gaussian corpus with 10% flipped labels.
// ---------------------------------------------------------------------------

bool criterion_corrector(std::string& detail) {
  auto data = synth::two_gaussians(500, 8, 8.0, 0.10, 0xc088ec7);
  auto issues = synth::as_tokenized(data);
  auto tree = BallTree<double>::build(data.points, data.ids, 40);
  CorrectorConfig config;  // k = 20, p = 0.8
  auto report = detect_misclassified(issues, tree, config);

  std::size_t caught = 0, flagged_clean = 0;
  for (const auto& id : report.flagged_ids) {
    if (data.flipped_ids.count(id)) ++caught;
    else ++flagged_clean;
  }
  double recall = static_cast<double>(caught) /
                  static_cast<double>(data.flipped_ids.size());
  double precision =
      report.flagged_ids.empty()
          ? 0.0
          : static_cast<double>(caught) /
                static_cast<double>(report.flagged_ids.size());
  bool ok = true;
  ok &= check(recall >= 0.90, detail,
              "flip recovery recall " + std::to_string(recall));
  ok &= check(precision >= 0.90, detail,
              "flip recovery precision " + std::to_string(precision));

  // Exact nesting of flag sets across the full threshold grid.
  const std::set<std::string>* previous = nullptr;
  std::vector<std::set<std::string>> flag_sets;
  for (double p : default_threshold_grid()) {
    CorrectorConfig grid_config = config;
    grid_config.p = p;
    flag_sets.push_back(
        detect_misclassified(issues, tree, grid_config).flagged_ids);
  }
  for (std::size_t i = 0; i < flag_sets.size(); ++i) {
    if (previous) {
      ok &= check(std::includes(flag_sets[i].begin(), flag_sets[i].end(),
                                previous->begin(), previous->end()),
                  detail, "flag sets not nested at grid row " +
                              std::to_string(i));
    }
    previous = &flag_sets[i];
  }
  return ok;
}

// ---------------------------------------------------------------------------
// Shared harness configuration for the training criteria.
// ---------------------------------------------------------------------------

HarnessConfig training_harness() {
  HarnessConfig config;
  config.docvec.dim = 64;
  config.docvec.window = 5;
  config.docvec.epochs = 200;
  config.docvec.seed = 31;
  config.corrector.k = 20;
  config.embed_dim = 48;
  config.hidden_dim = 48;
  config.train.batch_size = 64;
  config.train.dropout = 0.2;
  config.train.max_epochs = 12;
  config.train.learning_rate = 2e-3;
  config.train.seed = 17;
  config.logreg.epochs = 30;
  config.infer_steps = 30;
  config.seed = 23;
  return config;
}

std::optional<double> f_avg_against_truth(
    const std::vector<std::pair<std::string, ReporterType>>& predictions,
    const std::map<std::string, ReporterType>& truth) {
  std::vector<ReporterType> predicted, gold;
  for (const auto& [id, label] : predictions) {
    predicted.push_back(label);
    gold.push_back(truth.at(id));
  }
  return compute_metrics(predicted, gold).f_avg;
}

// ---------------------------------------------------------------------------
// 5. Correction-threshold replication: on the noisy corpus, the corrected
// pipeline at p=0.8 beats the uncorrected control against ground truth, and
// p=0.5 over-correction degrades below the control.
// ---------------------------------------------------------------------------

bool criterion_rq1(std::string& detail) {
  synth::TextCorpus text = synth::noisy_corpus(2000, 0.10, 0x5eeded);
  synth::PreparedCorpus prepared = synth::prepare(text);
  std::map<std::string, ReporterType> truth;
  for (std::size_t i = 0; i < prepared.tokenized.size(); ++i)
    truth[prepared.tokenized[i].issue_id] = prepared.true_types[i];

  HarnessConfig config = training_harness();
  auto result = run_rq1(prepared.tokenized, prepared.vocab.size(), {0.8, 0.5},
                        config);

  auto control = f_avg_against_truth(result.rows[0].predictions, truth);
  auto corrected = f_avg_against_truth(result.rows[1].predictions, truth);
  auto overcorrected = f_avg_against_truth(result.rows[2].predictions, truth);
  bool ok = true;
  ok &= check(control && corrected && overcorrected, detail,
              "undefined f_avg in a run");
  if (!ok) return false;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "control %.4f, p=0.8 %.4f, p=0.5 %.4f", *control, *corrected,
                *overcorrected);
  detail = buf;
  ok &= corrected > control;
  ok &= overcorrected < control;
  return ok;
}

// ---------------------------------------------------------------------------
// 6. End-to-end learning on the separable corpus: the classifier reaches
// F >= 0.95 within five epochs and the method ordering holds.
// ---------------------------------------------------------------------------

bool criterion_end_to_end(std::string& detail) {
  synth::TextCorpus text = synth::separable_corpus(2000, 0x7e57);
  synth::PreparedCorpus prepared = synth::prepare(text);
  HarnessConfig config = training_harness();
  config.train.max_epochs = 5;

  std::map<std::string, std::vector<TokenizedIssue>> corpora;
  corpora["synthetic"] = prepared.tokenized;
  auto report = run_rq2(corpora, prepared.vocab.size(), config);
  const Rq2Table& table = report.by_source.at("synthetic");

  auto f_of = [&](const char* method) {
    return table.by_method.at(method).f_avg;
  };
  auto ablstm = f_of("ablstm");
  auto lr = f_of("lr");
  auto knn = f_of("knn");
  bool ok = true;
  ok &= check(ablstm.has_value() && lr.has_value() && knn.has_value(), detail,
              "a method reported an undefined weighted F");
  if (!ok) return false;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "ablstm %.4f, lr %.4f, knn %.4f", *ablstm,
                *lr, *knn);
  detail = buf;
  ok &= *ablstm >= 0.95;
  ok &= *ablstm > *lr;
  ok &= *lr > *knn;
  return ok;
}

// ---------------------------------------------------------------------------
// 7. Invariant suites under randomized property testing, 100+ cases each.
// ---------------------------------------------------------------------------

bool criterion_invariants(std::string& detail) {
  bool ok = true;
  SplitMix64 rng(0x1776);

  // Attention weights and output probabilities normalize (single precision).
  for (int it = 0; it < 100; ++it) {
    AblstmConfig config;
    config.vocab_size = 5 + static_cast<int>(rng.below(10));
    config.embed_dim = 3 + static_cast<int>(rng.below(8));
    config.hidden_dim = 3 + static_cast<int>(rng.below(8));
    config.merge = rng.below(2) ? MergeMode::sum : MergeMode::concat;
    config.seed = rng.next_u64();
    auto model = init_ablstm<float>(config);
    std::vector<int> tokens(1 + rng.below(20));
    for (auto& t : tokens)
      t = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.vocab_size)));
    auto sf = forward_sequence(model, tokens, -1);
    float alpha_sum = 0.0f;
    for (float a : sf.alpha) alpha_sum += a;
    ok &= check(std::fabs(alpha_sum - 1.0f) < 1e-6f, detail,
                "attention weights sum " + std::to_string(alpha_sum));
    ok &= check(std::fabs(sf.probs[0] + sf.probs[1] - 1.0f) < 1e-6f, detail,
                "probabilities sum " +
                    std::to_string(sf.probs[0] + sf.probs[1]));
    if (!ok) break;
  }

  // Micro F equals accuracy for binary single-label predictions.
  for (int it = 0; it < 100 && ok; ++it) {
    std::size_t n = 1 + rng.below(500);
    std::vector<ReporterType> gold(n), predicted(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = rng.below(2) ? ReporterType::bug : ReporterType::nonbug;
      predicted[i] = rng.below(2) ? ReporterType::bug : ReporterType::nonbug;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (gold[i] == predicted[i]) ++hits;
    double accuracy_value =
        static_cast<double>(hits) / static_cast<double>(n);
    ok &= check(std::fabs(micro_f(predicted, gold) - accuracy_value) < 1e-12,
                detail, "micro F != accuracy");
  }

  // Applying a correction report twice restores the corpus.
  for (int it = 0; it < 100 && ok; ++it) {
    std::size_t n = 1 + rng.below(200);
    std::vector<TokenizedIssue> issues(n);
    CorrectionReport report;
    for (std::size_t i = 0; i < n; ++i) {
      issues[i] = {"i" + std::to_string(i),
                   {static_cast<int>(rng.below(50))},
                   rng.below(2) ? ReporterType::bug : ReporterType::nonbug};
      if (rng.below(3) == 0) report.flagged_ids.insert(issues[i].issue_id);
    }
    auto twice = apply_corrections(apply_corrections(issues, report), report);
    ok &= check(twice == issues, detail, "correction not an involution");
  }

  // JSONL round-trip is the identity.
  auto path = std::filesystem::temp_directory_path() / "bugsift_acc.jsonl";
  for (int it = 0; it < 100 && ok; ++it) {
    std::size_t n = 1 + rng.below(30);
    std::vector<Issue> corpus(n);
    for (std::size_t i = 0; i < n; ++i) {
      corpus[i].id = "r" + std::to_string(it) + "/" + std::to_string(i);
      corpus[i].source = rng.below(2) ? Source::jira : Source::github;
      corpus[i].project = "p" + std::to_string(rng.below(5));
      corpus[i].title = "title " + std::to_string(rng.next_u64());
      std::size_t labels = rng.below(4);
      for (std::size_t l = 0; l < labels; ++l)
        corpus[i].raw_labels.push_back("l" + std::to_string(rng.below(9)));
      corpus[i].reporter_type = static_cast<ReporterType>(rng.below(3));
    }
    write_jsonl(corpus, path);
    ok &= check(read_jsonl(path) == corpus, detail,
                "JSONL round-trip changed the corpus");
  }

  // Ten-fold partition laws: disjoint coverage and stratification.
  for (int it = 0; it < 100 && ok; ++it) {
    std::size_t n = 10 + rng.below(400);
    std::vector<ReporterType> labels(n);
    std::size_t n_bug = 0;
    for (auto& label : labels) {
      label = rng.below(2) ? ReporterType::bug : ReporterType::nonbug;
      if (label == ReporterType::bug) ++n_bug;
    }
    auto folds = ten_fold(labels, rng.next_u64());
    std::vector<int> covered(n, 0);
    for (const auto& fold : folds) {
      for (std::size_t idx : fold.test) covered[idx]++;
      std::vector<int> once(n, 0);
      for (std::size_t idx : fold.train) once[idx]++;
      for (std::size_t idx : fold.valid) once[idx]++;
      for (std::size_t idx : fold.test) once[idx]++;
      for (int c : once) ok &= check(c == 1, detail, "fold not a partition");
      std::size_t fold_bug = 0;
      for (std::size_t idx : fold.test)
        if (labels[idx] == ReporterType::bug) ++fold_bug;
      double expected = static_cast<double>(n_bug) *
                        static_cast<double>(fold.test.size()) /
                        static_cast<double>(n);
      ok &= check(std::fabs(static_cast<double>(fold_bug) - expected) <= 2.0,
                  detail, "stratification bound violated");
    }
    for (int c : covered)
      ok &= check(c == 1, detail, "test folds do not cover exactly once");
  }
  return ok;
}

}  // namespace

int main() {
  std::vector<Criterion> criteria = {
      {1, "metric fidelity (published tables via the F formulas)", 1.0,
       criterion_metric_fidelity},
      {2, "ball-tree knn matches brute force on 200 instances", 30.0,
       criterion_ball_tree},
      {3, "gradient fidelity (classifier, document vectors, baseline)", 60.0,
       criterion_gradients},
      {4, "corrector recovers flipped labels; flag sets nest in p", 120.0,
       criterion_corrector},
      {5, "correction threshold shape: p=0.8 helps, p=0.5 hurts", 900.0,
       criterion_rq1},
      {6, "end-to-end learning and method ordering", 600.0,
       criterion_end_to_end},
      {7, "randomized invariant suites (100+ cases each)", 120.0,
       criterion_invariants},
  };

  int failures = 0;
  for (auto& criterion : criteria) {
    auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (elapsed > criterion.time_limit_s) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + std::string("over time budget");
    }
    std::printf("[%s] criterion %d: %s (%.1fs%s%s)\n", ok ? "PASS" : "FAIL",
                criterion.number, criterion.name.c_str(), elapsed,
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  else std::printf("all criteria passed\n");
  return failures;
}
