#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "bugsift/corpus.hpp"

using namespace bugsift;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "bugsift_corpus_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Issue make_issue(std::string id, ReporterType type,
                 Source source = Source::github, std::string project = "p") {
  Issue issue;
  issue.id = std::move(id);
  issue.source = source;
  issue.project = std::move(project);
  issue.title = "title of " + issue.id;
  issue.reporter_type = type;
  return issue;
}

}  // namespace

TEST_CASE("normalize_label strips one prefix level and classifies") {
  LabelLexicon lex = default_lexicon();
  CHECK(normalize_label("type=defect", lex) == LabelClass::bug);
  CHECK(normalize_label("", lex) == LabelClass::irrelevant);
  CHECK(normalize_label("status=pending", lex) == LabelClass::irrelevant);
  CHECK(normalize_label("BUG", lex) == LabelClass::bug);
  CHECK(normalize_label("kind: enhancement", lex) == LabelClass::nonbug);
  CHECK(normalize_label("  crash  ", lex) == LabelClass::bug);
  // Only the first prefix segment goes: "kind=type=defect" leaves
  // "type=defect", which is not a lexicon term.
  CHECK(normalize_label("kind=type=defect", lex) == LabelClass::irrelevant);
  // Earliest separator wins regardless of lexicon order.
  CHECK(normalize_label("a:b=crash", lex) == LabelClass::irrelevant);
  CHECK(normalize_label("x:crash", lex) == LabelClass::bug);
}

TEST_CASE("normalize_label is idempotent on normalized terms") {
  LabelLexicon lex = default_lexicon();
  for (const auto& term : lex.bug_terms) {
    CHECK(normalize_label(term, lex) == LabelClass::bug);
    CHECK(normalize_label("type=" + term, lex) == LabelClass::bug);
  }
  for (const auto& term : lex.nonbug_terms) {
    CHECK(normalize_label(term, lex) == LabelClass::nonbug);
    CHECK(normalize_label("kind:" + term, lex) == LabelClass::nonbug);
  }
}

TEST_CASE("derive_reporter_type is bug-dominant and order-insensitive") {
  LabelLexicon lex = default_lexicon();
  CHECK(derive_reporter_type({"bug", "mac"}, lex) == ReporterType::bug);
  CHECK(derive_reporter_type({}, lex) == ReporterType::none);
  CHECK(derive_reporter_type({"enhancement"}, lex) == ReporterType::nonbug);
  CHECK(derive_reporter_type({"enhancement", "crash"}, lex) ==
        ReporterType::bug);
  CHECK(derive_reporter_type({"crash", "enhancement"}, lex) ==
        ReporterType::bug);
  CHECK(derive_reporter_type({"mac", "pending"}, lex) == ReporterType::none);

  SplitMix64 rng(71);
  std::vector<std::string> pool = {"bug",     "mac",        "enhancement",
                                   "pending", "type=crash", "windows",
                                   "feature", "wontfix"};
  for (int it = 0; it < 100; ++it) {
    std::vector<std::string> labels;
    std::size_t n = rng.below(5);
    for (std::size_t i = 0; i < n; ++i)
      labels.push_back(pool[rng.below(pool.size())]);
    ReporterType a = derive_reporter_type(labels, lex);
    shuffle(labels, rng);
    CHECK(derive_reporter_type(labels, lex) == a);
  }
}

TEST_CASE("filter_typed keeps typed issues in order and is idempotent") {
  std::vector<Issue> corpus = {make_issue("a", ReporterType::bug),
                               make_issue("b", ReporterType::none),
                               make_issue("c", ReporterType::nonbug)};
  auto typed = filter_typed(corpus);
  REQUIRE(typed.size() == 2);
  CHECK(typed[0].id == "a");
  CHECK(typed[1].id == "c");
  CHECK(filter_typed(typed) == typed);

  std::vector<Issue> all_null = {make_issue("x", ReporterType::none),
                                 make_issue("y", ReporterType::none)};
  CHECK(filter_typed(all_null).empty());
}

TEST_CASE("corpus_stats guards the degenerate cases") {
  std::vector<Issue> corpus;
  for (int i = 0; i < 2; ++i)
    corpus.push_back(make_issue("b" + std::to_string(i), ReporterType::bug));
  for (int i = 0; i < 2; ++i)
    corpus.push_back(make_issue("n" + std::to_string(i), ReporterType::nonbug));
  CorpusStats stats = corpus_stats(corpus);
  REQUIRE(stats.total.bug_fraction.has_value());
  CHECK(*stats.total.bug_fraction == doctest::Approx(0.5));

  std::vector<Issue> untyped = {make_issue("u", ReporterType::none)};
  CorpusStats empty_stats = corpus_stats(untyped);
  CHECK(!empty_stats.total.bug_fraction.has_value());
  CHECK(empty_stats.total.labeled_count == 0);
}

TEST_CASE("bug fractions are in [0,1] or undefined, never junk") {
  SplitMix64 rng(353);
  for (int it = 0; it < 100; ++it) {
    std::vector<Issue> corpus;
    std::size_t n = rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      Issue issue = make_issue("x" + std::to_string(i),
                               static_cast<ReporterType>(rng.below(3)),
                               rng.below(2) ? Source::jira : Source::github);
      corpus.push_back(std::move(issue));
    }
    CorpusStats stats = corpus_stats(corpus);
    auto in_range = [](const SourceStats& s) {
      return !s.bug_fraction || (*s.bug_fraction >= 0.0 && *s.bug_fraction <= 1.0);
    };
    CHECK(in_range(stats.total));
    for (const auto& [name, s] : stats.per_source) CHECK(in_range(s));
  }
}

TEST_CASE("corpus_stats mirrors the 447-of-1000 bug share") {
  std::vector<Issue> corpus;
  for (int i = 0; i < 447; ++i)
    corpus.push_back(make_issue("gb" + std::to_string(i), ReporterType::bug));
  for (int i = 0; i < 553; ++i)
    corpus.push_back(make_issue("gn" + std::to_string(i), ReporterType::nonbug));
  CorpusStats stats = corpus_stats(corpus);
  CHECK(*stats.per_source.at("github").bug_fraction == doctest::Approx(0.447));
}

TEST_CASE("corpus_stats reproduces the full-corpus shape" *
          doctest::skip(false)) {
  // Four source groups with the published row counts; bug counts are the
  // rounded per-row shares. The aggregate bug share lands on 51.6%.
  struct Row {
    Source source;
    const char* tag;
    std::size_t typed;
    std::size_t bugs;
    std::size_t projects;
  };
  const std::vector<Row> rows = {
      {Source::jira, "apache", 815338, 441913, 620},
      {Source::jira, "jboss", 329552, 162469, 418},
      {Source::jira, "spring", 65446, 25982, 95},
      {Source::github, "github", 85833, 38367, 23},
  };
  std::vector<Issue> corpus;
  corpus.reserve(1296169);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.typed; ++i) {
      Issue issue;
      issue.source = row.source;
      issue.project =
          std::string(row.tag) + std::to_string(i % row.projects);
      issue.id = std::string(row.tag) + "/" + std::to_string(i);
      issue.reporter_type =
          i < row.bugs ? ReporterType::bug : ReporterType::nonbug;
      corpus.push_back(std::move(issue));
    }
  }
  REQUIRE(corpus.size() == 1296169);
  CorpusStats stats = corpus_stats(corpus);
  CHECK(stats.total.labeled_count == 1296169);
  CHECK(stats.total.project_count == 1156);
  REQUIRE(stats.total.bug_fraction.has_value());
  CHECK(*stats.total.bug_fraction == doctest::Approx(0.516).epsilon(0.001));
  CHECK(*stats.per_source.at("github").bug_fraction ==
        doctest::Approx(0.447).epsilon(0.001));
}

TEST_CASE("jsonl round-trip is the identity") {
  SplitMix64 rng(2024);
  std::vector<Issue> corpus;
  for (int i = 0; i < 1000; ++i) {
    Issue issue;
    issue.id = "it/" + std::to_string(i) + "/" + std::to_string(rng.next_u64());
    issue.source = rng.below(2) ? Source::jira : Source::github;
    issue.project = "proj" + std::to_string(rng.below(7));
    issue.title = "Title #" + std::to_string(i) + " with ünïcode and 中文";
    std::size_t n_labels = rng.below(4);
    for (std::size_t l = 0; l < n_labels; ++l)
      issue.raw_labels.push_back("label" + std::to_string(rng.below(20)));
    issue.reporter_type = static_cast<ReporterType>(rng.below(3));
    corpus.push_back(std::move(issue));
  }
  auto path = temp_path("roundtrip.jsonl");
  write_jsonl(corpus, path);
  CHECK(read_jsonl(path) == corpus);
}

TEST_CASE("jsonl read rejects malformed lines with the line number") {
  auto path = temp_path("bad.jsonl");
  write_file_atomic(path,
                    R"({"id":"a","title":"t"})"
                    "\nnot json\n");
  try {
    read_jsonl(path);
    FAIL("expected a parse error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("jsonl read rejects duplicate ids") {
  auto path = temp_path("dup.jsonl");
  write_file_atomic(path,
                    R"({"id":"a","title":"t"})"
                    "\n"
                    R"({"id":"a","title":"u"})"
                    "\n");
  CHECK_THROWS_AS(read_jsonl(path), DataError);
}

TEST_CASE("jsonl read ignores unknown fields") {
  auto path = temp_path("extra.jsonl");
  write_file_atomic(
      path,
      R"({"id":"a","title":"t","reporter_type":"bug","whatever":[1,2,3]})"
      "\n");
  auto corpus = read_jsonl(path);
  REQUIRE(corpus.size() == 1);
  CHECK(corpus[0].reporter_type == ReporterType::bug);
}

TEST_CASE("lexicon json round-trip and validation") {
  LabelLexicon lex = default_lexicon();
  auto j = lexicon_to_json(lex);
  LabelLexicon back = lexicon_from_json(j);
  CHECK(back.bug_terms == lex.bug_terms);
  CHECK(back.nonbug_terms == lex.nonbug_terms);

  LabelLexicon broken = lex;
  broken.nonbug_terms.insert("bug");
  CHECK_THROWS_AS(broken.validate(), DataError);
}
