#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "bugsift/common.hpp"
#include "bugsift/io.hpp"
#include "bugsift/tensor.hpp"
#include "bugsift/textprep.hpp"

namespace bugsift {

// Distributed-memory paragraph vectors: a per-document vector is trained
// jointly with word vectors by predicting each center word from the mean of
// the document vector and the in-window word vectors, with a
// negative-sampling logistic loss.
struct DocVecConfig {
  int dim = 128;
  int window = 5;
  int negative_samples = 5;
  int epochs = 10;
  double learning_rate = 0.025;  // linearly decayed to 1e-4 of the initial
  int min_count = 1;
  std::uint64_t seed = 1;
  int threads = 1;  // >1 enables lock-free racy updates; not deterministic

  void validate() const {
    if (dim < 1 || window < 1 || negative_samples < 1 || learning_rate <= 0 ||
        epochs < 0 || min_count < 0 || threads < 1)
      throw UsageError("invalid document-vector configuration");
  }
};

namespace detail {
constexpr std::uint64_t kDocInitSalt = 0xd0c5eedull;
constexpr std::uint64_t kWordInitSalt = 0x10ab5eedull;
constexpr std::uint64_t kTrainSalt = 0x7ea15a17ull;
constexpr std::uint64_t kInferSalt = 0x1fe25a17ull;
}  // namespace detail

template <typename T = float>
struct DocVecModel {
  Matrix<T> doc_vectors;   // |docs| x dim
  Matrix<T> word_in;       // |vocab| x dim
  Matrix<T> word_out;      // |vocab| x dim
  DocVecConfig config;
  std::vector<std::string> doc_ids;             // row alignment
  std::unordered_map<std::string, std::size_t> id_to_row;
  std::vector<std::uint64_t> token_counts;      // corpus frequency per index
  std::vector<double> noise_cdf;                // unigram^0.75 sampler
  std::vector<double> epoch_loss;               // training curve

  std::span<const T> doc_vector(const std::string& id) const {
    auto it = id_to_row.find(id);
    if (it == id_to_row.end()) throw DataError("unknown document id: " + id);
    return doc_vectors.row(it->second);
  }

  int sample_negative(SplitMix64& rng, int exclude) const {
    for (int attempt = 0; attempt < 8; ++attempt) {
      double r = rng.uniform() * noise_cdf.back();
      auto it = std::upper_bound(noise_cdf.begin(), noise_cdf.end(), r);
      int idx = static_cast<int>(it - noise_cdf.begin());
      if (idx >= static_cast<int>(noise_cdf.size()))
        idx = static_cast<int>(noise_cdf.size()) - 1;
      if (idx != exclude) return idx;
    }
    return -1;  // caller skips this sample
  }
};

namespace detail {

template <typename T>
void seeded_uniform_row(std::span<T> row, std::uint64_t seed, double scale) {
  SplitMix64 rng(seed);
  for (auto& v : row) v = static_cast<T>(rng.uniform(-scale, scale));
}

// One prediction event: center word vs. (doc vector + context words).
// Returns the loss; when `out` pointers are given, accumulates analytic
// gradients instead of applying updates. The same routine backs training,
// inference and the gradient check.
template <typename T>
struct EventGrads {
  std::vector<T> ctx;            // d(loss)/d(context mean)
  std::vector<std::pair<int, std::vector<T>>> out_rows;  // per word_out row
};

template <typename T>
double negsampling_event(const Matrix<T>& word_out, std::span<const T> ctx_mean,
                         int center, std::span<const int> negatives,
                         EventGrads<T>* grads) {
  double loss = 0.0;
  if (grads) {
    grads->ctx.assign(ctx_mean.size(), T{});
    grads->out_rows.clear();
  }
  auto accumulate = [&](int word, T label) {
    std::span<const T> out_row = word_out.row(static_cast<std::size_t>(word));
    T score = dot(out_row, ctx_mean);
    T signed_score = label > T{0} ? score : -score;
    loss -= static_cast<double>(log_sigmoid(signed_score));
    if (grads) {
      T g = sigmoid(score) - label;  // d(loss)/d(score)
      axpy(g, out_row, std::span<T>(grads->ctx));
      std::vector<T> row_grad(ctx_mean.size());
      for (std::size_t i = 0; i < row_grad.size(); ++i)
        row_grad[i] = g * ctx_mean[i];
      grads->out_rows.emplace_back(word, std::move(row_grad));
    }
  };
  accumulate(center, T{1});
  for (int n : negatives) accumulate(n, T{0});
  return loss;
}

}  // namespace detail

template <typename T = float>
DocVecModel<T> train_pvdm(const std::vector<TokenizedIssue>& corpus,
                          const DocVecConfig& config, std::size_t vocab_size) {
  config.validate();
  if (corpus.empty()) throw DataError("document-vector training: empty corpus");
  for (const auto& doc : corpus) {
    if (doc.tokens.empty())
      throw DataError("document-vector training: empty document " +
                      doc.issue_id);
    for (int t : doc.tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
        throw DataError("token index out of vocabulary range in " +
                        doc.issue_id);
  }

  DocVecModel<T> model;
  model.config = config;
  const std::size_t dim = static_cast<std::size_t>(config.dim);
  model.doc_vectors = Matrix<T>(corpus.size(), dim);
  model.word_in = Matrix<T>(vocab_size, dim);
  model.word_out = Matrix<T>(vocab_size, dim);  // zero-initialized
  model.doc_ids.resize(corpus.size());
  model.token_counts.assign(vocab_size, 0);

  const double init_scale = 0.5 / static_cast<double>(dim);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    model.doc_ids[i] = corpus[i].issue_id;
    if (!model.id_to_row.emplace(corpus[i].issue_id, i).second)
      throw DataError("duplicate document id: " + corpus[i].issue_id);
    detail::seeded_uniform_row<T>(
        model.doc_vectors.row(i),
        seed_mix(config.seed, fnv1a64(corpus[i].issue_id),
                 detail::kDocInitSalt),
        init_scale);
    for (int t : corpus[i].tokens)
      ++model.token_counts[static_cast<std::size_t>(t)];
  }
  for (std::size_t v = 0; v < vocab_size; ++v)
    detail::seeded_uniform_row<T>(
        model.word_in.row(v),
        seed_mix(config.seed, v, detail::kWordInitSalt), init_scale);

  model.noise_cdf.resize(vocab_size);
  double acc = 0.0;
  for (std::size_t v = 0; v < vocab_size; ++v) {
    acc += std::pow(static_cast<double>(model.token_counts[v]), 0.75);
    model.noise_cdf[v] = acc;
  }
  if (acc <= 0.0) throw DataError("document-vector training: no tokens");

  // Canonical processing order (sorted by id) makes training independent of
  // the order documents arrived in.
  std::vector<std::size_t> schedule(corpus.size());
  std::iota(schedule.begin(), schedule.end(), 0);
  std::sort(schedule.begin(), schedule.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].issue_id < corpus[b].issue_id;
  });

  std::uint64_t eligible = 0;
  for (const auto& doc : corpus)
    for (int t : doc.tokens)
      if (model.token_counts[static_cast<std::size_t>(t)] >=
          static_cast<std::uint64_t>(config.min_count))
        ++eligible;
  const double total_updates = static_cast<double>(
      std::max<std::uint64_t>(1, eligible * static_cast<std::uint64_t>(
                                                std::max(config.epochs, 1))));

  std::vector<T> ctx(dim);
  std::vector<int> negatives;
  detail::EventGrads<T> grads;

  auto run_doc = [&](std::size_t row, int epoch, std::uint64_t& update_counter,
                     double& loss_sum, std::uint64_t& events,
                     std::vector<T>& ctx_buf, std::vector<int>& neg_buf,
                     detail::EventGrads<T>& grad_buf) {
    const auto& doc = corpus[row];
    SplitMix64 rng(seed_mix(config.seed ^ detail::kTrainSalt,
                            fnv1a64(doc.issue_id),
                            static_cast<std::uint64_t>(epoch)));
    const int len = static_cast<int>(doc.tokens.size());
    for (int t = 0; t < len; ++t) {
      const int center = doc.tokens[static_cast<std::size_t>(t)];
      if (model.token_counts[static_cast<std::size_t>(center)] <
          static_cast<std::uint64_t>(config.min_count))
        continue;
      const double progress =
          static_cast<double>(update_counter) / total_updates;
      const double lr =
          config.learning_rate * ((1.0 - progress) + progress * 1e-4);
      ++update_counter;

      // Context: document vector plus in-window words, mean-combined.
      int lo = std::max(0, t - config.window);
      int hi = std::min(len - 1, t + config.window);
      std::span<T> dv = model.doc_vectors.row(row);
      for (std::size_t d = 0; d < dim; ++d) ctx_buf[d] = dv[d];
      int parts = 1;
      for (int u = lo; u <= hi; ++u) {
        if (u == t) continue;
        axpy(T{1},
             std::span<const T>(model.word_in.row(
                 static_cast<std::size_t>(doc.tokens[static_cast<std::size_t>(u)]))),
             std::span<T>(ctx_buf));
        ++parts;
      }
      const T inv = T{1} / static_cast<T>(parts);
      for (auto& v : ctx_buf) v *= inv;

      neg_buf.clear();
      for (int s = 0; s < config.negative_samples; ++s) {
        int neg = model.sample_negative(rng, center);
        if (neg >= 0) neg_buf.push_back(neg);
      }

      loss_sum += detail::negsampling_event<T>(model.word_out, ctx_buf, center,
                                               neg_buf, &grad_buf);
      ++events;

      const T step = static_cast<T>(lr);
      for (const auto& [word, row_grad] : grad_buf.out_rows)
        axpy(-step, std::span<const T>(row_grad),
             model.word_out.row(static_cast<std::size_t>(word)));
      const T shared = -step * inv;
      axpy(shared, std::span<const T>(grad_buf.ctx), dv);
      for (int u = lo; u <= hi; ++u) {
        if (u == t) continue;
        axpy(shared, std::span<const T>(grad_buf.ctx),
             model.word_in.row(
                 static_cast<std::size_t>(doc.tokens[static_cast<std::size_t>(u)])));
      }
    }
  };

  if (config.threads <= 1) {
    std::uint64_t update_counter = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      double loss_sum = 0.0;
      std::uint64_t events = 0;
      for (std::size_t row : schedule)
        run_doc(row, epoch, update_counter, loss_sum, events, ctx, negatives,
                grads);
      model.epoch_loss.push_back(events ? loss_sum / static_cast<double>(events)
                                        : 0.0);
    }
  } else {
    // Lock-free parallel mode: racy but convergent. Loss curve is still
    // recorded, but runs are not reproducible.
    const int n_threads = config.threads;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      std::vector<double> losses(static_cast<std::size_t>(n_threads), 0.0);
      std::vector<std::uint64_t> counts(static_cast<std::size_t>(n_threads), 0);
      std::vector<std::thread> workers;
      for (int w = 0; w < n_threads; ++w) {
        workers.emplace_back([&, w]() {
          std::vector<T> ctx_local(dim);
          std::vector<int> neg_local;
          detail::EventGrads<T> grad_local;
          std::uint64_t local_updates =
              static_cast<std::uint64_t>(epoch) * eligible / n_threads;
          for (std::size_t s = static_cast<std::size_t>(w);
               s < schedule.size(); s += static_cast<std::size_t>(n_threads))
            run_doc(schedule[s], epoch, local_updates,
                    losses[static_cast<std::size_t>(w)],
                    counts[static_cast<std::size_t>(w)], ctx_local, neg_local,
                    grad_local);
        });
      }
      for (auto& th : workers) th.join();
      double loss_sum = std::accumulate(losses.begin(), losses.end(), 0.0);
      std::uint64_t events =
          std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
      model.epoch_loss.push_back(events ? loss_sum / static_cast<double>(events)
                                        : 0.0);
    }
  }
  return model;
}

// Fold a new document into a trained model: word vectors stay frozen, a
// fresh document vector is fit by the same loss. steps == 0 returns the
// seeded initialization.
template <typename T>
std::vector<T> infer_vector(const DocVecModel<T>& model,
                            const std::vector<int>& tokens, int steps) {
  if (tokens.empty()) throw DataError("cannot infer a vector for no tokens");
  if (steps < 0) throw UsageError("steps must be >= 0");
  const auto& config = model.config;
  const std::size_t dim = static_cast<std::size_t>(config.dim);
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= model.word_in.rows)
      throw DataError("token index out of vocabulary range");

  std::string token_bytes;
  for (int t : tokens) {
    token_bytes.append(reinterpret_cast<const char*>(&t), sizeof(int));
  }
  std::uint64_t seed =
      seed_mix(config.seed ^ detail::kInferSalt, fnv1a64(token_bytes));
  std::vector<T> vec(dim);
  detail::seeded_uniform_row<T>(std::span<T>(vec), seed,
                                0.5 / static_cast<double>(dim));
  if (steps == 0) return vec;

  SplitMix64 rng(seed_mix(seed, 0x57e9));
  const int len = static_cast<int>(tokens.size());
  const double total = static_cast<double>(steps) * len;
  std::vector<T> ctx(dim);
  std::vector<int> negatives;
  detail::EventGrads<T> grads;
  std::uint64_t update = 0;
  for (int step = 0; step < steps; ++step) {
    for (int t = 0; t < len; ++t) {
      const int center = tokens[static_cast<std::size_t>(t)];
      const double progress = static_cast<double>(update) / total;
      const double lr =
          config.learning_rate * ((1.0 - progress) + progress * 1e-4);
      ++update;
      int lo = std::max(0, t - config.window);
      int hi = std::min(len - 1, t + config.window);
      for (std::size_t d = 0; d < dim; ++d) ctx[d] = vec[d];
      int parts = 1;
      for (int u = lo; u <= hi; ++u) {
        if (u == t) continue;
        axpy(T{1},
             std::span<const T>(model.word_in.row(
                 static_cast<std::size_t>(tokens[static_cast<std::size_t>(u)]))),
             std::span<T>(ctx));
        ++parts;
      }
      const T inv = T{1} / static_cast<T>(parts);
      for (auto& v : ctx) v *= inv;
      negatives.clear();
      for (int s = 0; s < config.negative_samples; ++s) {
        int neg = model.sample_negative(rng, center);
        if (neg >= 0) negatives.push_back(neg);
      }
      detail::negsampling_event<T>(model.word_out, ctx, center, negatives,
                                   &grads);
      // Only the fresh document vector moves.
      axpy(static_cast<T>(-lr) * inv, std::span<const T>(grads.ctx),
           std::span<T>(vec));
    }
  }
  return vec;
}

// ---------------------------------------------------------------------------
// Gradient validation: analytic gradients of the negative-sampling loss vs.
// central finite differences on a tiny double-precision setup. Returns the
// maximum relative error across every touched parameter.
// ---------------------------------------------------------------------------

inline double pvdm_gradient_check() {
  using T = double;
  const std::size_t vocab = 8, dim = 5;
  Matrix<T> word_in(vocab, dim), word_out(vocab, dim), doc(1, dim);
  SplitMix64 rng(20240917);
  for (auto& v : word_in.data) v = rng.uniform(-0.4, 0.4);
  for (auto& v : word_out.data) v = rng.uniform(-0.4, 0.4);
  for (auto& v : doc.data) v = rng.uniform(-0.4, 0.4);

  const int center = 3;
  const std::vector<int> ctx_words = {1, 5, 6};
  const std::vector<int> negatives = {0, 2, 7};
  const int parts = static_cast<int>(ctx_words.size()) + 1;

  auto context_mean = [&](const Matrix<T>& w_in, const Matrix<T>& d) {
    std::vector<T> ctx(d.row(0).begin(), d.row(0).end());
    for (int w : ctx_words)
      axpy(T{1}, std::span<const T>(w_in.row(static_cast<std::size_t>(w))),
           std::span<T>(ctx));
    for (auto& v : ctx) v /= static_cast<T>(parts);
    return ctx;
  };
  auto loss_at = [&](const Matrix<T>& w_in, const Matrix<T>& w_out,
                     const Matrix<T>& d) {
    std::vector<T> ctx = context_mean(w_in, d);
    return detail::negsampling_event<T>(w_out, ctx, center, negatives,
                                        nullptr);
  };

  std::vector<T> ctx = context_mean(word_in, doc);
  detail::EventGrads<T> grads;
  detail::negsampling_event<T>(word_out, ctx, center, negatives, &grads);

  const double h = 1e-6;
  double max_rel = 0.0;
  auto check = [&](Matrix<T>& target, std::size_t r, std::size_t c,
                   double analytic) {
    const T saved = target(r, c);
    target(r, c) = saved + h;
    double up = loss_at(word_in, word_out, doc);
    target(r, c) = saved - h;
    double down = loss_at(word_in, word_out, doc);
    target(r, c) = saved;
    double fd = (up - down) / (2 * h);
    double rel =
        std::fabs(analytic - fd) / std::max({std::fabs(analytic),
                                             std::fabs(fd), 1e-8});
    max_rel = std::max(max_rel, rel);
  };

  // Context-side gradients distribute by the mean rule.
  for (std::size_t c = 0; c < dim; ++c)
    check(doc, 0, c, grads.ctx[c] / parts);
  for (int w : ctx_words)
    for (std::size_t c = 0; c < dim; ++c)
      check(word_in, static_cast<std::size_t>(w), c, grads.ctx[c] / parts);
  for (const auto& [word, row_grad] : grads.out_rows)
    for (std::size_t c = 0; c < dim; ++c)
      check(word_out, static_cast<std::size_t>(word), c, row_grad[c]);
  return max_rel;
}

// ---------------------------------------------------------------------------
// Persistence: versioned binary with float32 matrices, plus a text export
// ("id v1 ... vdim" per line) for inspection.
// ---------------------------------------------------------------------------

inline constexpr const char* kDocVecMagic = "BSFTDVEC";
inline constexpr std::uint32_t kDocVecVersion = 1;

template <typename T>
void save_docvec(const DocVecModel<T>& model,
                 const std::filesystem::path& path) {
  BinaryWriter w(kDocVecMagic, kDocVecVersion);
  w.u32(static_cast<std::uint32_t>(model.config.dim));
  w.u32(static_cast<std::uint32_t>(model.config.window));
  w.u32(static_cast<std::uint32_t>(model.config.negative_samples));
  w.u32(static_cast<std::uint32_t>(model.config.epochs));
  w.f64(model.config.learning_rate);
  w.u32(static_cast<std::uint32_t>(model.config.min_count));
  w.u64(model.config.seed);
  w.u64(model.doc_ids.size());
  w.u64(model.word_in.rows);
  for (const auto& id : model.doc_ids) w.str(id);
  for (std::uint64_t c : model.token_counts) w.u64(c);
  w.matrix(model.doc_vectors);
  w.matrix(model.word_in);
  w.matrix(model.word_out);
  w.vec_f64(model.epoch_loss);
  w.save(path);
}

template <typename T = float>
DocVecModel<T> load_docvec(const std::filesystem::path& path) {
  BinaryReader r = BinaryReader::open(path, kDocVecMagic, kDocVecVersion);
  DocVecModel<T> model;
  model.config.dim = static_cast<int>(r.u32());
  model.config.window = static_cast<int>(r.u32());
  model.config.negative_samples = static_cast<int>(r.u32());
  model.config.epochs = static_cast<int>(r.u32());
  model.config.learning_rate = r.f64();
  model.config.min_count = static_cast<int>(r.u32());
  model.config.seed = r.u64();
  std::size_t n_docs = r.u64();
  std::size_t n_vocab = r.u64();
  model.doc_ids.resize(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) {
    model.doc_ids[i] = r.str();
    model.id_to_row[model.doc_ids[i]] = i;
  }
  model.token_counts.resize(n_vocab);
  for (auto& c : model.token_counts) c = r.u64();
  model.doc_vectors = r.matrix<T>();
  model.word_in = r.matrix<T>();
  model.word_out = r.matrix<T>();
  model.epoch_loss = r.vec_f64();
  model.noise_cdf.resize(n_vocab);
  double acc = 0.0;
  for (std::size_t v = 0; v < n_vocab; ++v) {
    acc += std::pow(static_cast<double>(model.token_counts[v]), 0.75);
    model.noise_cdf[v] = acc;
  }
  return model;
}

template <typename T>
std::string docvec_text_export(const DocVecModel<T>& model) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < model.doc_ids.size(); ++i) {
    out += model.doc_ids[i];
    for (T v : model.doc_vectors.row(i)) {
      std::snprintf(buf, sizeof(buf), " %.6g", static_cast<double>(v));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace bugsift
