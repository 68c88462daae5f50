#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bugsift/ball_tree.hpp"
#include "bugsift/common.hpp"
#include "bugsift/metrics.hpp"
#include "bugsift/textprep.hpp"

namespace bugsift {

// Thresholded-majority correction rule: an issue is flagged as misclassified
// when at least ceil(k*p) of its k nearest neighbors carry the opposite type.
struct CorrectorConfig {
  int k = 20;
  double p = 0.8;            // judgment threshold, in [0.5, 1.0]
  bool exclude_self = true;  // an issue is not its own evidence
  int threads = 1;

  void validate() const {
    if (k < 1) throw UsageError("corrector: k must be >= 1");
    if (p < 0.5 || p > 1.0)
      throw UsageError("corrector: p must be in [0.5, 1.0]");
    if (threads < 1) throw UsageError("corrector: threads must be >= 1");
  }
};

// Smallest integer count satisfying "at least k*p", computed away from
// floating-point edges (20 * 0.55 must give 11, not 12).
inline int opposite_threshold(int k, double p) {
  return static_cast<int>(std::ceil(static_cast<double>(k) * p - 1e-9));
}

struct IssueEvidence {
  int opposite_count = 0;
  int k_used = 0;
};

struct CorrectionReport {
  std::set<std::string> flagged_ids;
  std::map<std::string, IssueEvidence> per_issue;
  double correction_rate = 0.0;  // |flagged| / corpus size
  int k = 0;
  double p = 0.0;
};

// Query each issue's neighborhood and flag the threshold violations.
// Detection reads original labels only; corrections are applied afterwards
// in a single pass by apply_corrections.
inline CorrectionReport detect_misclassified(
    const std::vector<TokenizedIssue>& issues, const BallTree<double>& tree,
    const CorrectorConfig& config) {
  config.validate();
  if (issues.size() <= static_cast<std::size_t>(config.k))
    throw DataError("corrector: corpus size must exceed k");

  std::map<std::string, ReporterType> type_by_id;
  for (const auto& issue : issues) type_by_id[issue.issue_id] = issue.reporter_type;
  std::map<std::string, std::size_t> row_by_id;
  for (std::size_t r = 0; r < tree.ids().size(); ++r)
    row_by_id[tree.ids()[r]] = r;

  const int threshold = opposite_threshold(config.k, config.p);
  const std::size_t k_query = static_cast<std::size_t>(config.k) +
                              (config.exclude_self ? 1 : 0);
  if (k_query > tree.size())
    throw DataError("corrector: not enough points for k+1 neighbors");

  std::vector<std::pair<std::string, IssueEvidence>> rows(issues.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& issue = issues[i];
      auto row_it = row_by_id.find(issue.issue_id);
      if (row_it == row_by_id.end())
        throw DataError("corrector: no vector for issue " + issue.issue_id);
      auto neighbors = tree.knn(tree.point(row_it->second), k_query);
      if (config.exclude_self) {
        auto self = std::find_if(neighbors.begin(), neighbors.end(),
                                 [&](const auto& n) {
                                   return tree.ids()[n.index] == issue.issue_id;
                                 });
        if (self != neighbors.end())
          neighbors.erase(self);
        else
          neighbors.pop_back();  // all-duplicate corner: drop the farthest
      }
      IssueEvidence ev;
      ev.k_used = static_cast<int>(neighbors.size());
      for (const auto& n : neighbors) {
        auto it = type_by_id.find(tree.ids()[n.index]);
        if (it == type_by_id.end())
          throw DataError("corrector: neighbor without a label: " +
                          tree.ids()[n.index]);
        if (it->second == opposite(issue.reporter_type)) ++ev.opposite_count;
      }
      rows[i] = {issue.issue_id, ev};
    }
  };

  if (config.threads <= 1 || issues.size() < 64) {
    work(0, issues.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (issues.size() + config.threads - 1) /
                        static_cast<std::size_t>(config.threads);
    for (int t = 0; t < config.threads; ++t) {
      std::size_t begin = static_cast<std::size_t>(t) * chunk;
      std::size_t end = std::min(issues.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  CorrectionReport report;
  report.k = config.k;
  report.p = config.p;
  for (auto& [id, ev] : rows) {
    report.per_issue.emplace(id, ev);
    if (ev.opposite_count >= threshold) report.flagged_ids.insert(id);
  }
  report.correction_rate = issues.empty()
                               ? 0.0
                               : static_cast<double>(report.flagged_ids.size()) /
                                     static_cast<double>(issues.size());
  return report;
}

// Flip the reporter type of exactly the flagged issues. Detection used the
// original labels throughout, so applying a report twice restores the input.
inline std::vector<TokenizedIssue> apply_corrections(
    const std::vector<TokenizedIssue>& issues, const CorrectionReport& report) {
  std::set<std::string> known;
  for (const auto& issue : issues) known.insert(issue.issue_id);
  for (const auto& id : report.flagged_ids)
    if (!known.count(id))
      throw DataError("correction report flags unknown issue " + id);
  std::vector<TokenizedIssue> out = issues;
  for (auto& issue : out)
    if (report.flagged_ids.count(issue.issue_id))
      issue.reporter_type = opposite(issue.reporter_type);
  return out;
}

// ---------------------------------------------------------------------------
// Corrector evaluation against a manually annotated sample.
//   precision_p = |M ∩ M_p| / |S ∩ M_p|,  recall_p = |M ∩ M_p| / |M|
// where S is the annotated sample, M its misclassified subset, and M_p the
// flagged set.
// ---------------------------------------------------------------------------

struct CorrectorEvalReport {
  std::optional<double> precision_p;
  std::optional<double> recall_p;
  std::optional<double> f_measure;
  double correction_rate = 0.0;
  std::size_t sample_size = 0;       // |S|
  std::size_t manual_size = 0;       // |M|
  std::size_t flagged_in_sample = 0; // |S ∩ M_p|
  std::size_t hits = 0;              // |M ∩ M_p|
};

inline CorrectorEvalReport evaluate_corrector(const CorrectionReport& report,
                                              const std::set<std::string>& sample,
                                              const std::set<std::string>& manual) {
  for (const auto& id : manual)
    if (!sample.count(id))
      throw DataError("annotated misclassified id outside the sample: " + id);
  CorrectorEvalReport eval;
  eval.sample_size = sample.size();
  eval.manual_size = manual.size();
  eval.correction_rate = report.correction_rate;
  for (const auto& id : sample)
    if (report.flagged_ids.count(id)) ++eval.flagged_in_sample;
  for (const auto& id : manual)
    if (report.flagged_ids.count(id)) ++eval.hits;
  if (eval.flagged_in_sample > 0)
    eval.precision_p = static_cast<double>(eval.hits) /
                       static_cast<double>(eval.flagged_in_sample);
  if (eval.manual_size > 0)
    eval.recall_p =
        static_cast<double>(eval.hits) / static_cast<double>(eval.manual_size);
  if (eval.precision_p && eval.recall_p)
    eval.f_measure = f_measure(*eval.precision_p, *eval.recall_p);
  return eval;
}

// Annotation file: {"sample": [ids], "misclassified": [ids]}.
struct AnnotationSet {
  std::set<std::string> sample;
  std::set<std::string> misclassified;
};

inline AnnotationSet load_annotations(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("annotations " + path.string() + ": " + e.what());
  }
  AnnotationSet a;
  for (const auto& id : j.at("sample")) a.sample.insert(id.get<std::string>());
  for (const auto& id : j.at("misclassified"))
    a.misclassified.insert(id.get<std::string>());
  for (const auto& id : a.misclassified)
    if (!a.sample.count(id))
      throw DataError("annotations: misclassified id not in sample: " + id);
  return a;
}

// ---------------------------------------------------------------------------
// Threshold sweep over the standard grid.
// ---------------------------------------------------------------------------

inline std::vector<double> default_threshold_grid() {
  return {1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5};
}

struct SweepRow {
  double p = 0.0;
  CorrectorEvalReport eval;
  std::set<std::string> flagged;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  // flagged(p1) ⊆ flagged(p2) for every p1 >= p2 in the grid.
  bool monotone = true;
};

inline SweepResult threshold_sweep(const std::vector<TokenizedIssue>& issues,
                                   const BallTree<double>& tree,
                                   const std::set<std::string>& sample,
                                   const std::set<std::string>& manual,
                                   const CorrectorConfig& base,
                                   std::vector<double> grid = default_threshold_grid()) {
  std::sort(grid.begin(), grid.end(), std::greater<double>());
  SweepResult result;
  for (double p : grid) {
    CorrectorConfig config = base;
    config.p = p;
    CorrectionReport report = detect_misclassified(issues, tree, config);
    SweepRow row;
    row.p = p;
    row.flagged = report.flagged_ids;
    row.eval = evaluate_corrector(report, sample, manual);
    result.rows.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    const auto& stricter = result.rows[i - 1].flagged;
    const auto& looser = result.rows[i].flagged;
    if (!std::includes(looser.begin(), looser.end(), stricter.begin(),
                       stricter.end()))
      result.monotone = false;
  }
  return result;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

// CSV rows mirroring the sweep table: p, precision, recall, f, c_rate.
inline std::string sweep_to_csv(const SweepResult& sweep) {
  std::string out = "p,precision,recall,f,c_rate\n";
  char buf[160];
  for (const auto& row : sweep.rows) {
    std::snprintf(buf, sizeof(buf), "%.2f,%s,%s,%s,%.6f\n", row.p,
                  format_metric(row.eval.precision_p).c_str(),
                  format_metric(row.eval.recall_p).c_str(),
                  format_metric(row.eval.f_measure).c_str(),
                  row.eval.correction_rate);
    out += buf;
  }
  return out;
}

}  // namespace bugsift
