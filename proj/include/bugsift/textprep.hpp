#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "bugsift/common.hpp"
#include "bugsift/corpus.hpp"
#include "bugsift/io.hpp"
#include "bugsift/stemmer.hpp"

namespace bugsift {

// ---------------------------------------------------------------------------
// UTF-8 scanning. Lenient: an invalid byte is treated as a one-byte
// codepoint so preprocessing stays a total function.
// ---------------------------------------------------------------------------

namespace detail {

inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  unsigned char c0 = static_cast<unsigned char>(s[i]);
  if (c0 < 0x80) {
    ++i;
    return c0;
  }
  int extra = 0;
  char32_t cp = 0;
  if ((c0 & 0xe0) == 0xc0) {
    extra = 1;
    cp = c0 & 0x1f;
  } else if ((c0 & 0xf0) == 0xe0) {
    extra = 2;
    cp = c0 & 0x0f;
  } else if ((c0 & 0xf8) == 0xf0) {
    extra = 3;
    cp = c0 & 0x07;
  } else {
    ++i;
    return c0;  // stray continuation byte
  }
  if (i + static_cast<std::size_t>(extra) >= s.size()) {
    ++i;
    return c0;  // truncated sequence
  }
  for (int k = 1; k <= extra; ++k) {
    unsigned char cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((cc & 0xc0) != 0x80) {
      ++i;
      return c0;
    }
    cp = (cp << 6) | (cc & 0x3f);
  }
  i += static_cast<std::size_t>(extra) + 1;
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

}  // namespace detail

// Punctuation set used by title preprocessing: ASCII punctuation (backtick
// included) plus the common Unicode punctuation blocks that show up in
// tracker titles (Latin-1 marks, general punctuation, CJK and fullwidth
// forms).
inline bool is_punct_codepoint(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2f) || (cp >= 0x3a && cp <= 0x40) ||
           (cp >= 0x5b && cp <= 0x60) || (cp >= 0x7b && cp <= 0x7e);
  }
  switch (cp) {
    case 0x00a1: case 0x00a7: case 0x00ab: case 0x00b6: case 0x00b7:
    case 0x00bb: case 0x00bf: case 0x3001: case 0x3002: case 0x300c:
    case 0x300d: case 0x2026:
      return true;
    default:
      break;
  }
  if (cp >= 0x2010 && cp <= 0x2027) return true;   // dashes, smart quotes
  if (cp >= 0x2030 && cp <= 0x205e) return true;   // daggers, primes, bullets
  if (cp >= 0xff01 && cp <= 0xff0f) return true;   // fullwidth ASCII punct
  if (cp >= 0xff1a && cp <= 0xff20) return true;
  if (cp >= 0xff3b && cp <= 0xff40) return true;
  if (cp >= 0xff5b && cp <= 0xff65) return true;
  return false;
}

inline bool is_space_codepoint(char32_t cp) {
  if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' ||
      cp == '\v')
    return true;
  if (cp == 0x00a0 || cp == 0x1680 || cp == 0x2028 || cp == 0x2029 ||
      cp == 0x202f || cp == 0x205f || cp == 0x3000 || cp == 0xfeff)
    return true;
  return cp >= 0x2000 && cp <= 0x200b;
}

// ---------------------------------------------------------------------------
// Stop words. The list ships as a data file but is also embedded so the
// library works without one. Entries are stored together with their stems,
// because the membership test runs after stemming.
// ---------------------------------------------------------------------------

namespace detail {
inline const char* kStopwordList =
    "a about above after again against all am an and any are as at be because "
    "been before being below between both but by cannot could did do does "
    "doing down during each few for from further had has have having he her "
    "here hers herself him himself his how i if in into is it its itself just "
    "me more most my myself no nor not now of off on once only or other ought "
    "our ours ourselves out over own same she should so some such than that "
    "the their theirs them themselves then there these they this those "
    "through to too under until up very was we were what when where which "
    "while who whom why will with would you your yours yourself yourselves "
    "aren arent cant couldn couldnt didn didnt doesn doesnt don dont hadn "
    "hadnt hasn hasnt haven havent isn isnt let lets mustn mustnt shan shant "
    "shes shouldn shouldnt thats theres wasn wasnt weren werent whats wheres "
    "whos wont wouldn wouldnt youd youll youre youve hes hed im ive itll";
}  // namespace detail

using StopwordSet = std::unordered_set<std::string>;

inline void insert_stopword(StopwordSet& set, const std::string& word) {
  if (word.empty()) return;
  set.insert(word);
  set.insert(stem(word));
}

inline StopwordSet default_stopwords() {
  StopwordSet set;
  std::string_view all = detail::kStopwordList;
  std::size_t begin = 0;
  while (begin < all.size()) {
    std::size_t end = all.find(' ', begin);
    if (end == std::string_view::npos) end = all.size();
    insert_stopword(set, std::string(all.substr(begin, end - begin)));
    begin = end + 1;
  }
  return set;
}

// Newline-delimited UTF-8 file, '#' comments allowed.
inline StopwordSet load_stopwords(const std::filesystem::path& path) {
  std::string contents = read_file(path);
  StopwordSet set;
  std::size_t begin = 0;
  while (begin <= contents.size()) {
    std::size_t end = contents.find('\n', begin);
    if (end == std::string::npos) end = contents.size();
    std::string word = trim(std::string_view(contents).substr(begin, end - begin));
    if (!word.empty() && word[0] != '#') insert_stopword(set, word);
    if (end == contents.size()) break;
    begin = end + 1;
  }
  return set;
}

// ---------------------------------------------------------------------------
// Title preprocessing pipeline: whitespace split, punctuation strip,
// lowercase (identifiers exempt), stem, stop-word removal, truncation.
// Camel-case identifiers are kept whole.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxTitleTokens = 64;

inline std::vector<std::string> preprocess_title(
    std::string_view title, const StopwordSet& stopwords,
    std::size_t max_tokens = kMaxTitleTokens) {
  std::vector<std::string> out;
  std::size_t i = 0;
  std::string token;
  auto flush = [&]() {
    if (token.empty()) return;
    std::string word = std::move(token);
    token.clear();
    if (out.size() >= max_tokens) return;
    if (!is_identifier_token(word)) word = ascii_lower(word);
    word = stem(word);
    if (stopwords.count(word)) return;
    out.push_back(std::move(word));
  };
  while (i < title.size()) {
    char32_t cp = detail::decode_utf8(title, i);
    if (is_space_codepoint(cp)) {
      flush();
    } else if (!is_punct_codepoint(cp)) {
      detail::append_utf8(token, cp);
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary: the `cap` most frequent words plus the unknown token. Ties in
// frequency go to the word seen first, so builds are deterministic given
// corpus order.
// ---------------------------------------------------------------------------

inline constexpr const char* kUnknownToken = "<UKN>";
inline constexpr int kDefaultVocabCap = 20000;

struct Vocabulary {
  std::unordered_map<std::string, int> word_to_index;
  std::vector<std::string> index_to_word;  // inverse; index 0 is <UKN>
  int ukn_index = 0;
  int cap = kDefaultVocabCap;

  std::size_t size() const { return index_to_word.size(); }

  int lookup(const std::string& word) const {
    auto it = word_to_index.find(word);
    return it == word_to_index.end() ? ukn_index : it->second;
  }
};

inline Vocabulary build_vocab(
    const std::vector<std::vector<std::string>>& corpus, int cap) {
  if (cap < 1) throw UsageError("vocabulary cap must be >= 1");
  struct Entry {
    std::size_t count = 0;
    std::size_t first_seen = 0;
  };
  std::unordered_map<std::string, Entry> freq;
  std::size_t position = 0;
  for (const auto& doc : corpus) {
    for (const auto& word : doc) {
      auto [it, inserted] = freq.try_emplace(word);
      if (inserted) it->second.first_seen = position;
      ++it->second.count;
      ++position;
    }
  }
  std::vector<std::pair<std::string, Entry>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first_seen < b.second.first_seen;
  });
  if (ranked.size() > static_cast<std::size_t>(cap)) ranked.resize(static_cast<std::size_t>(cap));

  Vocabulary vocab;
  vocab.cap = cap;
  vocab.ukn_index = 0;
  vocab.index_to_word.push_back(kUnknownToken);
  vocab.word_to_index[kUnknownToken] = 0;
  for (const auto& [word, entry] : ranked) {
    int idx = static_cast<int>(vocab.index_to_word.size());
    vocab.index_to_word.push_back(word);
    vocab.word_to_index[word] = idx;
  }
  return vocab;
}

inline std::vector<int> encode(const std::vector<std::string>& tokens,
                               const Vocabulary& vocab) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& w : tokens) out.push_back(vocab.lookup(w));
  return out;
}

inline std::string decode_token(int index, const Vocabulary& vocab) {
  if (index < 0 || static_cast<std::size_t>(index) >= vocab.size())
    throw DataError("token index out of range: " + std::to_string(index));
  return vocab.index_to_word[static_cast<std::size_t>(index)];
}

inline nlohmann::json vocab_to_json(const Vocabulary& vocab) {
  nlohmann::json words = nlohmann::json::object();
  for (std::size_t i = 0; i < vocab.index_to_word.size(); ++i)
    words[vocab.index_to_word[i]] = static_cast<int>(i);
  return nlohmann::json{
      {"ukn_index", vocab.ukn_index}, {"cap", vocab.cap}, {"words", words}};
}

inline Vocabulary vocab_from_json(const nlohmann::json& j) {
  Vocabulary vocab;
  vocab.ukn_index = j.at("ukn_index").get<int>();
  vocab.cap = j.at("cap").get<int>();
  const auto& words = j.at("words");
  vocab.index_to_word.resize(words.size());
  for (auto it = words.begin(); it != words.end(); ++it) {
    int idx = it.value().get<int>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= vocab.index_to_word.size())
      throw DataError("vocabulary file has an out-of-range index");
    vocab.index_to_word[static_cast<std::size_t>(idx)] = it.key();
    vocab.word_to_index[it.key()] = idx;
  }
  if (vocab.word_to_index.size() != vocab.index_to_word.size())
    throw DataError("vocabulary file is not a bijection");
  return vocab;
}

inline void save_vocab(const Vocabulary& vocab,
                       const std::filesystem::path& path) {
  write_file_atomic(path, vocab_to_json(vocab).dump(2) + "\n");
}

inline Vocabulary load_vocab(const std::filesystem::path& path) {
  try {
    return vocab_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("vocabulary " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tokenized issues: vocabulary-encoded, typed, ready for the models.
// ---------------------------------------------------------------------------

struct TokenizedIssue {
  std::string issue_id;
  std::vector<int> tokens;  // non-empty, indices < vocabulary size
  ReporterType reporter_type = ReporterType::bug;  // bug or nonbug only

  bool operator==(const TokenizedIssue&) const = default;
};

// Preprocess and encode every typed issue; issues whose titles reduce to
// nothing are dropped.
inline std::vector<TokenizedIssue> tokenize_corpus(
    const std::vector<Issue>& issues, const Vocabulary& vocab,
    const StopwordSet& stopwords, std::size_t max_tokens = kMaxTitleTokens) {
  std::vector<TokenizedIssue> out;
  out.reserve(issues.size());
  for (const auto& issue : issues) {
    if (issue.reporter_type == ReporterType::none) continue;
    auto words = preprocess_title(issue.title, stopwords, max_tokens);
    if (words.empty()) continue;
    out.push_back(TokenizedIssue{issue.id, encode(words, vocab),
                                 issue.reporter_type});
  }
  return out;
}

inline void write_tokenized_jsonl(const std::vector<TokenizedIssue>& corpus,
                                  const std::filesystem::path& path) {
  std::string out;
  for (const auto& t : corpus) {
    nlohmann::json j{{"issue_id", t.issue_id},
                     {"tokens", t.tokens},
                     {"reporter_type", to_string(t.reporter_type)}};
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

inline std::vector<TokenizedIssue> read_tokenized_jsonl(
    const std::filesystem::path& path) {
  std::string contents = read_file(path);
  std::vector<TokenizedIssue> corpus;
  std::size_t line_no = 0, begin = 0;
  while (begin < contents.size()) {
    std::size_t end = contents.find('\n', begin);
    if (end == std::string::npos) end = contents.size();
    std::string_view line(contents.data() + begin, end - begin);
    begin = end + 1;
    ++line_no;
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(trimmed);
      TokenizedIssue t;
      t.issue_id = j.at("issue_id").get<std::string>();
      t.tokens = j.at("tokens").get<std::vector<int>>();
      t.reporter_type =
          reporter_type_from_string(j.at("reporter_type").get<std::string>());
      corpus.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": parse error at line " +
                      std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace bugsift
