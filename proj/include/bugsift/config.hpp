#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "bugsift/ablstm.hpp"
#include "bugsift/common.hpp"
#include "bugsift/corrector.hpp"
#include "bugsift/docvec.hpp"
#include "bugsift/io.hpp"
#include "bugsift/textprep.hpp"

namespace bugsift {

// Single JSON config driving the whole pipeline; individual CLI flags
// override fields. The canonical dump is hashed and the hash is stamped into
// every artifact's metadata, so "same config hash + same inputs" identifies
// a reproducible run.
struct PipelineConfig {
  // paths
  std::string corpus_path = "corpus.jsonl";
  std::string lexicon_path;      // empty -> built-in defaults
  std::string stopwords_path;    // empty -> built-in defaults
  std::string annotations_path;  // for corrector evaluation
  std::string workdir = "bugsift-out";

  int vocab_cap = kDefaultVocabCap;
  int max_title_tokens = static_cast<int>(kMaxTitleTokens);

  DocVecConfig docvec;
  CorrectorConfig corrector;
  AblstmConfig model;   // vocab_size filled at run time
  TrainConfig train;

  std::uint64_t seed = 42;
};

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  return nlohmann::json{
      {"paths",
       {{"corpus", c.corpus_path},
        {"lexicon", c.lexicon_path},
        {"stopwords", c.stopwords_path},
        {"annotations", c.annotations_path},
        {"workdir", c.workdir}}},
      {"vocab", {{"cap", c.vocab_cap}, {"max_title_tokens", c.max_title_tokens}}},
      {"docvec",
       {{"dim", c.docvec.dim},
        {"window", c.docvec.window},
        {"negative_samples", c.docvec.negative_samples},
        {"epochs", c.docvec.epochs},
        {"learning_rate", c.docvec.learning_rate},
        {"min_count", c.docvec.min_count},
        {"threads", c.docvec.threads}}},
      {"corrector",
       {{"k", c.corrector.k},
        {"p", c.corrector.p},
        {"exclude_self", c.corrector.exclude_self},
        {"threads", c.corrector.threads}}},
      {"model",
       {{"embed_dim", c.model.embed_dim},
        {"hidden_dim", c.model.hidden_dim},
        {"merge", c.model.merge == MergeMode::sum ? "sum" : "concat"}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"dropout", c.train.dropout},
        {"max_epochs", c.train.max_epochs},
        {"learning_rate", c.train.learning_rate},
        {"clip_norm", c.train.clip_norm},
        {"selection", c.train.selection == SelectionMode::best_validation
                          ? "validation"
                          : "test"}}},
      {"seed", c.seed}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    c.corpus_path = p.value("corpus", c.corpus_path);
    c.lexicon_path = p.value("lexicon", c.lexicon_path);
    c.stopwords_path = p.value("stopwords", c.stopwords_path);
    c.annotations_path = p.value("annotations", c.annotations_path);
    c.workdir = p.value("workdir", c.workdir);
  }
  if (j.contains("vocab")) {
    c.vocab_cap = j.at("vocab").value("cap", c.vocab_cap);
    c.max_title_tokens =
        j.at("vocab").value("max_title_tokens", c.max_title_tokens);
  }
  if (j.contains("docvec")) {
    const auto& d = j.at("docvec");
    c.docvec.dim = d.value("dim", c.docvec.dim);
    c.docvec.window = d.value("window", c.docvec.window);
    c.docvec.negative_samples =
        d.value("negative_samples", c.docvec.negative_samples);
    c.docvec.epochs = d.value("epochs", c.docvec.epochs);
    c.docvec.learning_rate = d.value("learning_rate", c.docvec.learning_rate);
    c.docvec.min_count = d.value("min_count", c.docvec.min_count);
    c.docvec.threads = d.value("threads", c.docvec.threads);
  }
  if (j.contains("corrector")) {
    const auto& k = j.at("corrector");
    c.corrector.k = k.value("k", c.corrector.k);
    c.corrector.p = k.value("p", c.corrector.p);
    c.corrector.exclude_self = k.value("exclude_self", c.corrector.exclude_self);
    c.corrector.threads = k.value("threads", c.corrector.threads);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
    c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
    if (m.value("merge", "sum") == std::string("concat"))
      c.model.merge = MergeMode::concat;
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.dropout = t.value("dropout", c.train.dropout);
    c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.clip_norm = t.value("clip_norm", c.train.clip_norm);
    if (t.value("selection", "validation") == std::string("test"))
      c.train.selection = SelectionMode::best_test;
  }
  c.seed = j.value("seed", c.seed);
  // Seeds fan out from the global one unless set explicitly elsewhere.
  c.docvec.seed = seed_mix(c.seed, 0xd0c);
  c.model.seed = seed_mix(c.seed, 0xab1);
  c.train.seed = seed_mix(c.seed, 0x7a0);
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  try {
    return pipeline_config_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config " + path.string() + ": " + e.what());
  }
}

// Hash of the canonical (key-sorted) config dump.
inline std::string config_hash(const PipelineConfig& c) {
  return to_hex(fnv1a64(pipeline_config_to_json(c).dump()));
}

// One command at a time per artifact directory. The lock file records the
// owning pid; destruction releases it.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir) {
    std::filesystem::create_directories(workdir);
    path_ = workdir / ".bugsift.lock";
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw RuntimeFailure("workdir is locked by another run: " +
                           path_.string());
    std::string line = "pid=" + std::to_string(::getpid()) + "\n";
    ssize_t written = ::write(fd, line.data(), line.size());
    (void)written;
    ::close(fd);
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;
  ~WorkdirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

// Run metadata stamped next to every artifact.
inline void write_run_metadata(const std::filesystem::path& artifact,
                               const PipelineConfig& config,
                               const std::string& stage) {
  nlohmann::json meta{{"stage", stage},
                      {"config_hash", config_hash(config)},
                      {"seed", config.seed}};
  write_file_atomic(artifact.string() + ".run.json", meta.dump(2) + "\n");
}

}  // namespace bugsift
