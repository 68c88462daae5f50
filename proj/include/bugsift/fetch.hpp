#pragma once

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "bugsift/common.hpp"
#include "bugsift/corpus.hpp"

namespace bugsift {

// Raised when a repository fails the inclusion thresholds; callers can tell
// "this project is unsuitable" apart from transport failures.
struct CriteriaError : DataError {
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Response parsing, kept free of transport so fixtures can drive it.
// ---------------------------------------------------------------------------

// One page of GitHub's issue listing. Pull requests (entries carrying a
// "pull_request" key) are skipped; labels are taken verbatim.
inline std::vector<Issue> parse_github_issues_page(const nlohmann::json& page,
                                                   const std::string& project) {
  if (!page.is_array()) throw DataError("github: issue page is not an array");
  std::vector<Issue> issues;
  for (const auto& entry : page) {
    if (entry.contains("pull_request")) continue;
    Issue issue;
    issue.source = Source::github;
    issue.project = project;
    issue.id = "github/" + project + "/" +
               std::to_string(entry.at("number").get<long long>());
    issue.title = entry.value("title", std::string{});
    if (entry.contains("labels"))
      for (const auto& label : entry.at("labels"))
        issue.raw_labels.push_back(label.at("name").get<std::string>());
    issues.push_back(std::move(issue));
  }
  return issues;
}

// One page of Jira's search results. Jira has a single issue-type field;
// it is lowercased and mapped into raw_labels so downstream treatment is
// uniform with GitHub.
inline std::vector<Issue> parse_jira_search_page(const nlohmann::json& page,
                                                 const std::string& project) {
  std::vector<Issue> issues;
  for (const auto& entry : page.at("issues")) {
    Issue issue;
    issue.source = Source::jira;
    issue.project = project;
    issue.id = "jira/" + project + "/" + entry.at("key").get<std::string>();
    const auto& fields = entry.at("fields");
    issue.title = fields.value("summary", std::string{});
    if (fields.contains("issuetype") && fields.at("issuetype").contains("name"))
      issue.raw_labels.push_back(
          ascii_lower(fields.at("issuetype").at("name").get<std::string>()));
    issues.push_back(std::move(issue));
  }
  return issues;
}

inline void enforce_criteria(const std::vector<Issue>& issues,
                             const InclusionCriteria& criteria,
                             const std::string& project) {
  criteria.validate();
  if (issues.size() < static_cast<std::size_t>(criteria.min_issue_count))
    throw CriteriaError(project + ": only " + std::to_string(issues.size()) +
                        " issues, need " +
                        std::to_string(criteria.min_issue_count));
  std::size_t labeled = 0;
  for (const auto& issue : issues)
    if (!issue.raw_labels.empty()) ++labeled;
  const double fraction =
      issues.empty() ? 0.0
                     : static_cast<double>(labeled) /
                           static_cast<double>(issues.size());
  if (fraction < criteria.min_labeled_fraction)
    throw CriteriaError(project + ": only " + std::to_string(labeled) + "/" +
                        std::to_string(issues.size()) + " issues labeled");
}

// ---------------------------------------------------------------------------
// Transport.
// ---------------------------------------------------------------------------

struct FetchOptions {
  std::string base_url;       // e.g. "https://api.github.com"
  std::string auth_token;     // GitHub only; read from env by the CLI
  int per_page = 100;
  int max_retries = 4;
  int backoff_ms = 250;       // doubled per retry
  int timeout_seconds = 30;
};

namespace detail {

inline nlohmann::json http_get_json(const FetchOptions& options,
                                    const std::string& path,
                                    const std::string& context) {
  httplib::Client client(options.base_url);
  client.set_connection_timeout(options.timeout_seconds);
  client.set_read_timeout(options.timeout_seconds);
  client.set_follow_location(true);
  httplib::Headers headers{{"Accept", "application/json"},
                           {"User-Agent", "bugsift"}};
  if (!options.auth_token.empty())
    headers.emplace("Authorization", "token " + options.auth_token);

  int backoff = options.backoff_ms;
  for (int attempt = 0;; ++attempt) {
    auto res = client.Get(path, headers);
    if (!res)
      throw RuntimeFailure(context + ": connection failed for " +
                           options.base_url + path);
    if (res->status == 401)
      throw RuntimeFailure(context + ": authentication failure (HTTP 401)");
    if (res->status == 403 || res->status == 429 || res->status >= 500) {
      // 403 doubles as GitHub's rate-limit signal; retry with backoff.
      if (attempt >= options.max_retries)
        throw RuntimeFailure(context + ": giving up after " +
                             std::to_string(attempt) + " retries (HTTP " +
                             std::to_string(res->status) + ")");
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
      continue;
    }
    if (res->status != 200)
      throw RuntimeFailure(context + ": HTTP " + std::to_string(res->status));
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure(context + ": bad JSON in response: " + e.what());
    }
  }
}

}  // namespace detail

// Page through a GitHub repository ("owner/name"), excluding pull requests,
// and enforce the inclusion criteria before returning.
inline std::vector<Issue> fetch_github(const std::string& repo,
                                       const FetchOptions& options,
                                       const InclusionCriteria& criteria) {
  std::vector<Issue> issues;
  for (int page = 1;; ++page) {
    std::string path = "/repos/" + repo + "/issues?state=all&per_page=" +
                       std::to_string(options.per_page) +
                       "&page=" + std::to_string(page);
    nlohmann::json body = detail::http_get_json(options, path, "github " + repo);
    if (!body.is_array())
      throw RuntimeFailure("github " + repo + ": unexpected response shape");
    std::vector<Issue> parsed = parse_github_issues_page(body, repo);
    issues.insert(issues.end(), parsed.begin(), parsed.end());
    if (body.size() < static_cast<std::size_t>(options.per_page)) break;
  }
  enforce_criteria(issues, criteria, repo);
  return issues;
}

// Pull every issue of one Jira project via the search endpoint.
inline std::vector<Issue> fetch_jira(const std::string& base_url,
                                     const std::string& project_key,
                                     FetchOptions options = {}) {
  options.base_url = base_url;
  std::vector<Issue> issues;
  long long start_at = 0;
  while (true) {
    std::string path = "/rest/api/2/search?jql=project=" + project_key +
                       "&fields=summary,issuetype&maxResults=" +
                       std::to_string(options.per_page) +
                       "&startAt=" + std::to_string(start_at);
    nlohmann::json body =
        detail::http_get_json(options, path, "jira " + project_key);
    long long total;
    std::vector<Issue> parsed;
    try {
      total = body.at("total").get<long long>();
      parsed = parse_jira_search_page(body, project_key);
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure("jira " + project_key + ": bad search response: " +
                           e.what());
    }
    issues.insert(issues.end(), parsed.begin(), parsed.end());
    start_at += static_cast<long long>(parsed.size());
    if (start_at >= total || parsed.empty()) break;
  }
  return issues;
}

// Derive reporter types in place from raw labels.
inline void assign_reporter_types(std::vector<Issue>& issues,
                                  const LabelLexicon& lexicon) {
  for (auto& issue : issues)
    issue.reporter_type = derive_reporter_type(issue.raw_labels, lexicon);
}

}  // namespace bugsift
