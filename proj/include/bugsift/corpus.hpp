#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "bugsift/common.hpp"
#include "bugsift/io.hpp"

namespace bugsift {

enum class Source { github, jira };

// Type implied by the labels an issue's reporter attached. `none` means no
// label mapped to either class under the active lexicon.
enum class ReporterType { bug, nonbug, none };

// Classification of a single raw label string.
enum class LabelClass { bug, nonbug, irrelevant };

inline std::string to_string(Source s) {
  return s == Source::github ? "github" : "jira";
}
inline Source source_from_string(std::string_view s) {
  if (s == "github") return Source::github;
  if (s == "jira") return Source::jira;
  throw DataError("unknown source: " + std::string(s));
}
inline std::string to_string(ReporterType t) {
  switch (t) {
    case ReporterType::bug: return "bug";
    case ReporterType::nonbug: return "nonbug";
    default: return "null";
  }
}
inline ReporterType reporter_type_from_string(std::string_view s) {
  if (s == "bug") return ReporterType::bug;
  if (s == "nonbug") return ReporterType::nonbug;
  if (s == "null") return ReporterType::none;
  throw DataError("unknown reporter_type: " + std::string(s));
}
inline ReporterType opposite(ReporterType t) {
  if (t == ReporterType::bug) return ReporterType::nonbug;
  if (t == ReporterType::nonbug) return ReporterType::bug;
  return t;
}

// One tracker entry. `id` is "<source>/<project>/<local-id>" and must be
// unique within a corpus file.
struct Issue {
  std::string id;
  Source source = Source::github;
  std::string project;
  std::string title;
  std::vector<std::string> raw_labels;
  ReporterType reporter_type = ReporterType::none;

  bool operator==(const Issue&) const = default;
};

// ---------------------------------------------------------------------------
// Label lexicon: which label terms mean "bug", which mean "non-bug", and
// which prefix separators to strip ("type=defect" -> "defect").
// ---------------------------------------------------------------------------

struct LabelLexicon {
  std::unordered_set<std::string> bug_terms;
  std::unordered_set<std::string> nonbug_terms;
  std::vector<std::string> prefix_separators = {"=", ":"};

  // bug/nonbug sets disjoint, all entries lowercase and separator-free.
  void validate() const {
    for (const auto& t : bug_terms)
      if (nonbug_terms.count(t))
        throw DataError("lexicon term in both classes: " + t);
    auto check = [&](const std::string& t) {
      if (t != ascii_lower(t))
        throw DataError("lexicon term not lowercase: " + t);
      for (const auto& sep : prefix_separators)
        if (t.find(sep) != std::string::npos)
          throw DataError("lexicon term contains a prefix separator: " + t);
    };
    for (const auto& t : bug_terms) check(t);
    for (const auto& t : nonbug_terms) check(t);
  }
};

inline LabelLexicon default_lexicon() {
  LabelLexicon lex;
  lex.bug_terms = {"bug", "bug report", "crash", "defect"};
  lex.nonbug_terms = {"suggestion",  "enhancement", "improvement",
                      "enhancement request", "feature", "feature request"};
  return lex;
}

inline LabelLexicon lexicon_from_json(const nlohmann::json& j) {
  LabelLexicon lex;
  lex.bug_terms.clear();
  lex.nonbug_terms.clear();
  for (const auto& t : j.at("bug")) lex.bug_terms.insert(t.get<std::string>());
  for (const auto& t : j.at("nonbug"))
    lex.nonbug_terms.insert(t.get<std::string>());
  if (j.contains("prefix_separators")) {
    lex.prefix_separators.clear();
    for (const auto& s : j.at("prefix_separators"))
      lex.prefix_separators.push_back(s.get<std::string>());
  }
  lex.validate();
  return lex;
}

inline nlohmann::json lexicon_to_json(const LabelLexicon& lex) {
  std::set<std::string> bug(lex.bug_terms.begin(), lex.bug_terms.end());
  std::set<std::string> nonbug(lex.nonbug_terms.begin(),
                               lex.nonbug_terms.end());
  return nlohmann::json{{"bug", bug},
                        {"nonbug", nonbug},
                        {"prefix_separators", lex.prefix_separators}};
}

inline LabelLexicon load_lexicon(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("lexicon " + path.string() + ": " + e.what());
  }
  return lexicon_from_json(j);
}

// Project admission thresholds for ingestion.
struct InclusionCriteria {
  int min_issue_count = 500;
  double min_labeled_fraction = 0.5;

  void validate() const {
    if (min_issue_count < 0 || min_labeled_fraction < 0.0 ||
        min_labeled_fraction > 1.0)
      throw UsageError("invalid inclusion criteria");
  }
};

// ---------------------------------------------------------------------------
// Label normalization and reporter-type derivation.
// ---------------------------------------------------------------------------

// Lowercase, strip the first prefix segment ("type=bug" -> "bug",
// "a=b=c" -> "b=c"), trim, then look the remainder up in the lexicon.
// Total function: anything unrecognized is Irrelevant.
inline LabelClass normalize_label(std::string_view raw,
                                  const LabelLexicon& lexicon) {
  std::string s = ascii_lower(raw);
  std::size_t cut = std::string::npos;
  std::size_t sep_len = 0;
  for (const auto& sep : lexicon.prefix_separators) {
    if (sep.empty()) continue;
    std::size_t at = s.find(sep);
    if (at != std::string::npos && (cut == std::string::npos || at < cut)) {
      cut = at;
      sep_len = sep.size();
    }
  }
  if (cut != std::string::npos) s = s.substr(cut + sep_len);
  s = trim(s);
  if (lexicon.bug_terms.count(s)) return LabelClass::bug;
  if (lexicon.nonbug_terms.count(s)) return LabelClass::nonbug;
  return LabelClass::irrelevant;
}

// Bug-dominant: one bug-mapped label makes the issue a bug regardless of
// what else is attached.
inline ReporterType derive_reporter_type(
    const std::vector<std::string>& raw_labels, const LabelLexicon& lexicon) {
  bool saw_nonbug = false;
  for (const auto& label : raw_labels) {
    switch (normalize_label(label, lexicon)) {
      case LabelClass::bug: return ReporterType::bug;
      case LabelClass::nonbug: saw_nonbug = true; break;
      case LabelClass::irrelevant: break;
    }
  }
  return saw_nonbug ? ReporterType::nonbug : ReporterType::none;
}

// Keep only typed issues, order preserved.
inline std::vector<Issue> filter_typed(const std::vector<Issue>& corpus) {
  std::vector<Issue> out;
  out.reserve(corpus.size());
  for (const auto& issue : corpus)
    if (issue.reporter_type != ReporterType::none) out.push_back(issue);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus statistics.
// ---------------------------------------------------------------------------

struct SourceStats {
  std::size_t labeled_count = 0;   // issues typed bug or nonbug
  std::size_t project_count = 0;
  std::optional<double> bug_fraction;  // nullopt when no typed issues
};

struct CorpusStats {
  std::map<std::string, SourceStats> per_source;
  SourceStats total;
};

inline CorpusStats corpus_stats(const std::vector<Issue>& corpus) {
  struct Acc {
    std::size_t bug = 0, nonbug = 0;
    std::set<std::string> projects;
  };
  std::map<std::string, Acc> groups;
  Acc total;
  for (const auto& issue : corpus) {
    Acc& g = groups[to_string(issue.source)];
    g.projects.insert(issue.project);
    total.projects.insert(to_string(issue.source) + "/" + issue.project);
    if (issue.reporter_type == ReporterType::bug) {
      ++g.bug;
      ++total.bug;
    } else if (issue.reporter_type == ReporterType::nonbug) {
      ++g.nonbug;
      ++total.nonbug;
    }
  }
  auto finish = [](const Acc& a) {
    SourceStats s;
    s.labeled_count = a.bug + a.nonbug;
    s.project_count = a.projects.size();
    if (s.labeled_count > 0)
      s.bug_fraction = static_cast<double>(a.bug) /
                       static_cast<double>(s.labeled_count);
    return s;
  };
  CorpusStats stats;
  for (const auto& [name, acc] : groups) stats.per_source[name] = finish(acc);
  stats.total = finish(total);
  return stats;
}

// ---------------------------------------------------------------------------
// JSONL persistence: one JSON object per line, UTF-8. Unknown fields are
// ignored on read; duplicate ids are an error.
// ---------------------------------------------------------------------------

inline nlohmann::json issue_to_json(const Issue& issue) {
  return nlohmann::json{{"id", issue.id},
                        {"source", to_string(issue.source)},
                        {"project", issue.project},
                        {"title", issue.title},
                        {"raw_labels", issue.raw_labels},
                        {"reporter_type", to_string(issue.reporter_type)}};
}

inline Issue issue_from_json(const nlohmann::json& j) {
  Issue issue;
  issue.id = j.at("id").get<std::string>();
  if (j.contains("source"))
    issue.source = source_from_string(j.at("source").get<std::string>());
  if (j.contains("project")) issue.project = j.at("project").get<std::string>();
  if (j.contains("title")) issue.title = j.at("title").get<std::string>();
  if (j.contains("raw_labels"))
    issue.raw_labels = j.at("raw_labels").get<std::vector<std::string>>();
  if (j.contains("reporter_type"))
    issue.reporter_type =
        reporter_type_from_string(j.at("reporter_type").get<std::string>());
  return issue;
}

inline void write_jsonl(const std::vector<Issue>& corpus,
                        const std::filesystem::path& path) {
  std::string out;
  for (const auto& issue : corpus) {
    out += issue_to_json(issue).dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

inline std::vector<Issue> read_jsonl(const std::filesystem::path& path) {
  std::string contents = read_file(path);
  std::vector<Issue> corpus;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t begin = 0;
  while (begin < contents.size()) {
    std::size_t end = contents.find('\n', begin);
    if (end == std::string::npos) end = contents.size();
    std::string_view line(contents.data() + begin, end - begin);
    begin = end + 1;
    ++line_no;
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(trimmed);
      corpus.push_back(issue_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": parse error at line " +
                      std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(corpus.back().id).second)
      throw DataError(path.string() + ": duplicate id at line " +
                      std::to_string(line_no) + ": " + corpus.back().id);
  }
  return corpus;
}

}  // namespace bugsift
