#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bugsift/common.hpp"
#include "bugsift/io.hpp"
#include "bugsift/metrics.hpp"
#include "bugsift/tensor.hpp"
#include "bugsift/textprep.hpp"

namespace bugsift {

// Attention-based bidirectional LSTM classifier. Forward and backward LSTM
// passes are merged per position (element-wise sum by default, concatenation
// as an option), pooled into a single representation by learned attention
// weights, and mapped to bug/non-bug probabilities by a softmax layer.

enum class MergeMode { sum, concat };

// How the final model is picked from the per-epoch checkpoints.
// `best_test` mirrors a selection protocol that peeks at test accuracy; it
// exists for comparison runs only and training emits a warning when used.
enum class SelectionMode { best_validation, best_test };

struct AblstmConfig {
  int vocab_size = 0;
  int embed_dim = 256;
  int hidden_dim = 256;
  MergeMode merge = MergeMode::sum;
  std::uint64_t seed = 42;

  int merged_dim() const {
    return merge == MergeMode::sum ? hidden_dim : 2 * hidden_dim;
  }
  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1)
      throw UsageError("ablstm: invalid dimensions");
  }
};

struct TrainConfig {
  int batch_size = 1024;
  double dropout = 0.5;   // inverted dropout on the merged outputs and h*
  int max_epochs = 20;
  double learning_rate = 1e-3;  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global-norm gradient clipping
  std::uint64_t seed = 42;
  SelectionMode selection = SelectionMode::best_validation;

  void validate() const {
    if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw UsageError("train: dropout must be in [0, 1)");
    if (max_epochs < 1) throw UsageError("train: max_epochs must be >= 1");
    if (learning_rate <= 0) throw UsageError("train: learning rate must be > 0");
  }
};

template <typename T>
struct LstmParams {
  Matrix<T> U_i, U_f, U_o, U_g;  // N x d
  Matrix<T> W_i, W_f, W_o, W_g;  // N x N
  std::vector<T> b_i, b_f, b_o, b_g;  // N
};

template <typename T = float>
struct AblstmModel {
  AblstmConfig config;
  // Rows of `embedding` are the columns of the mathematical d x V embedding
  // matrix: one d-vector per vocabulary word.
  Matrix<T> embedding;  // V x d
  LstmParams<T> fwd, bwd;
  std::vector<T> attn_w;  // merged_dim
  Matrix<T> out_w;        // 2 x merged_dim
  std::vector<T> out_b;   // 2
};

// Class index convention: 0 = bug, 1 = nonbug. Exact probability ties
// resolve to bug.
inline constexpr int kClassBug = 0;
inline constexpr int kClassNonBug = 1;

inline int class_index(ReporterType t) {
  return t == ReporterType::bug ? kClassBug : kClassNonBug;
}
inline ReporterType class_type(int index) {
  return index == kClassBug ? ReporterType::bug : ReporterType::nonbug;
}

namespace detail {

template <typename T>
void xavier_init(Matrix<T>& m, std::size_t fan_in, std::size_t fan_out,
                 SplitMix64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : m.data) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
void init_lstm(LstmParams<T>& p, int hidden, int input, SplitMix64& rng) {
  auto nd = [&](Matrix<T>& m) {
    m = Matrix<T>(static_cast<std::size_t>(hidden),
                  static_cast<std::size_t>(input));
    xavier_init(m, static_cast<std::size_t>(input),
                static_cast<std::size_t>(hidden), rng);
  };
  auto nn = [&](Matrix<T>& m) {
    m = Matrix<T>(static_cast<std::size_t>(hidden),
                  static_cast<std::size_t>(hidden));
    xavier_init(m, static_cast<std::size_t>(hidden),
                static_cast<std::size_t>(hidden), rng);
  };
  nd(p.U_i); nd(p.U_f); nd(p.U_o); nd(p.U_g);
  nn(p.W_i); nn(p.W_f); nn(p.W_o); nn(p.W_g);
  p.b_i.assign(static_cast<std::size_t>(hidden), T{0});
  // Forget gate opens at 1 so early training does not wash out the cell.
  p.b_f.assign(static_cast<std::size_t>(hidden), T{1});
  p.b_o.assign(static_cast<std::size_t>(hidden), T{0});
  p.b_g.assign(static_cast<std::size_t>(hidden), T{0});
}

}  // namespace detail

template <typename T = float>
AblstmModel<T> init_ablstm(const AblstmConfig& config) {
  config.validate();
  AblstmModel<T> model;
  model.config = config;
  SplitMix64 rng(seed_mix(config.seed, 0xab15f3));
  model.embedding = Matrix<T>(static_cast<std::size_t>(config.vocab_size),
                              static_cast<std::size_t>(config.embed_dim));
  detail::xavier_init(model.embedding,
                      static_cast<std::size_t>(config.vocab_size),
                      static_cast<std::size_t>(config.embed_dim), rng);
  detail::init_lstm(model.fwd, config.hidden_dim, config.embed_dim, rng);
  detail::init_lstm(model.bwd, config.hidden_dim, config.embed_dim, rng);
  const std::size_t merged = static_cast<std::size_t>(config.merged_dim());
  {
    double limit = std::sqrt(6.0 / static_cast<double>(merged + 1));
    model.attn_w.resize(merged);
    for (auto& v : model.attn_w) v = static_cast<T>(rng.uniform(-limit, limit));
  }
  model.out_w = Matrix<T>(2, merged);
  detail::xavier_init(model.out_w, merged, 2, rng);
  model.out_b.assign(2, T{0});
  return model;
}

// Visit every parameter tensor as a flat span, in a fixed order shared by
// the optimizer, the serializer and the gradient tests.
template <typename T, typename Fn>
void for_each_tensor(AblstmModel<T>& model, Fn&& fn) {
  fn("embedding", std::span<T>(model.embedding.data));
  auto dir = [&](const std::string& prefix, LstmParams<T>& p) {
    fn(prefix + ".U_i", std::span<T>(p.U_i.data));
    fn(prefix + ".U_f", std::span<T>(p.U_f.data));
    fn(prefix + ".U_o", std::span<T>(p.U_o.data));
    fn(prefix + ".U_g", std::span<T>(p.U_g.data));
    fn(prefix + ".W_i", std::span<T>(p.W_i.data));
    fn(prefix + ".W_f", std::span<T>(p.W_f.data));
    fn(prefix + ".W_o", std::span<T>(p.W_o.data));
    fn(prefix + ".W_g", std::span<T>(p.W_g.data));
    fn(prefix + ".b_i", std::span<T>(p.b_i));
    fn(prefix + ".b_f", std::span<T>(p.b_f));
    fn(prefix + ".b_o", std::span<T>(p.b_o));
    fn(prefix + ".b_g", std::span<T>(p.b_g));
  };
  dir("fwd", model.fwd);
  dir("bwd", model.bwd);
  fn("attn_w", std::span<T>(model.attn_w));
  fn("out_w", std::span<T>(model.out_w.data));
  fn("out_b", std::span<T>(model.out_b));
}

template <typename T, typename Fn>
void for_each_tensor(const AblstmModel<T>& model, Fn&& fn) {
  for_each_tensor(const_cast<AblstmModel<T>&>(model),
                  [&](const std::string& name, std::span<T> t) {
                    fn(name, std::span<const T>(t));
                  });
}

template <typename T>
AblstmModel<T> zeros_like(const AblstmModel<T>& model) {
  AblstmModel<T> z = model;
  for_each_tensor(z, [](const std::string&, std::span<T> t) {
    for (auto& v : t) v = T{0};
  });
  return z;
}

// ---------------------------------------------------------------------------
// Layer operations.
// ---------------------------------------------------------------------------

// Word embedding lookup: the product of the embedding matrix with the word's
// one-hot vector, i.e. the word's column.
template <typename T>
std::vector<T> embed(const AblstmModel<T>& model, int token_index) {
  if (token_index < 0 ||
      static_cast<std::size_t>(token_index) >= model.embedding.rows)
    throw DataError("embed: token index out of range");
  std::span<const T> row =
      model.embedding.row(static_cast<std::size_t>(token_index));
  return std::vector<T>(row.begin(), row.end());
}

// One LSTM cell update:
//   i = sigmoid(U_i x + W_i h + b_i)        f = sigmoid(U_f x + W_f h + b_f)
//   o = sigmoid(U_o x + W_o h + b_o)        g = tanh(U_g x + W_g h + b_g)
//   c' = f*c + i*g                          h' = o * tanh(c')
template <typename T>
struct LstmStep {
  std::vector<T> i, f, o, g, c, tanh_c, h;
};

template <typename T>
LstmStep<T> lstm_step(std::span<const T> x, std::span<const T> h_prev,
                      std::span<const T> c_prev, const LstmParams<T>& p) {
  const std::size_t n = p.b_i.size();
  if (x.size() != p.U_i.cols || h_prev.size() != n || c_prev.size() != n)
    throw UsageError("lstm_step: shape mismatch");
  LstmStep<T> s;
  auto gate = [&](const Matrix<T>& u, const Matrix<T>& w,
                  const std::vector<T>& b, std::vector<T>& out) {
    out.assign(n, T{0});
    matvec_add(u, x, std::span<T>(out));
    matvec_add(w, h_prev, std::span<T>(out));
    for (std::size_t j = 0; j < n; ++j) out[j] += b[j];
  };
  gate(p.U_i, p.W_i, p.b_i, s.i);
  gate(p.U_f, p.W_f, p.b_f, s.f);
  gate(p.U_o, p.W_o, p.b_o, s.o);
  gate(p.U_g, p.W_g, p.b_g, s.g);
  for (std::size_t j = 0; j < n; ++j) {
    s.i[j] = sigmoid(s.i[j]);
    s.f[j] = sigmoid(s.f[j]);
    s.o[j] = sigmoid(s.o[j]);
    s.g[j] = std::tanh(s.g[j]);
  }
  s.c.resize(n);
  s.tanh_c.resize(n);
  s.h.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    s.c[j] = s.f[j] * c_prev[j] + s.i[j] * s.g[j];
    s.tanh_c[j] = std::tanh(s.c[j]);
    s.h[j] = s.o[j] * s.tanh_c[j];
  }
  return s;
}

template <typename T>
struct LstmRun {
  std::vector<LstmStep<T>> steps;  // processing order
};

template <typename T>
LstmRun<T> run_lstm(const LstmParams<T>& p,
                    const std::vector<std::vector<T>>& xs) {
  LstmRun<T> run;
  run.steps.reserve(xs.size());
  const std::size_t n = p.b_i.size();
  std::vector<T> h(n, T{0}), c(n, T{0});
  for (const auto& x : xs) {
    run.steps.push_back(lstm_step<T>(x, h, c, p));
    h = run.steps.back().h;
    c = run.steps.back().c;
  }
  return run;
}

// Merged bidirectional outputs. Row t of the result is the position-t
// output: forward h_t combined with the backward pass's output for the same
// position (the backward LSTM consumes the reversed sequence and its outputs
// are re-aligned here). Sum mode adds them; concat mode stacks them.
template <typename T>
Matrix<T> bilstm_forward(const AblstmModel<T>& model,
                         const std::vector<std::vector<T>>& xs) {
  if (xs.empty()) throw DataError("bilstm_forward: empty sequence");
  const std::size_t m = xs.size();
  const std::size_t n = static_cast<std::size_t>(model.config.hidden_dim);
  LstmRun<T> f = run_lstm(model.fwd, xs);
  std::vector<std::vector<T>> rev(xs.rbegin(), xs.rend());
  LstmRun<T> b = run_lstm(model.bwd, rev);
  Matrix<T> H(m, static_cast<std::size_t>(model.config.merged_dim()));
  for (std::size_t t = 0; t < m; ++t) {
    const auto& hf = f.steps[t].h;
    const auto& hb = b.steps[m - 1 - t].h;
    std::span<T> row = H.row(t);
    if (model.config.merge == MergeMode::sum) {
      for (std::size_t j = 0; j < n; ++j) row[j] = hf[j] + hb[j];
    } else {
      for (std::size_t j = 0; j < n; ++j) row[j] = hf[j];
      for (std::size_t j = 0; j < n; ++j) row[n + j] = hb[j];
    }
  }
  return H;
}

// Attention pooling:
//   M = tanh(H),  alpha = softmax(w^T M),  r = H alpha^T,  h* = tanh(r).
// Rows of H are positions.
template <typename T>
struct AttentionResult {
  std::vector<T> alpha;  // m, sums to 1
  std::vector<T> r;      // merged_dim
  std::vector<T> hstar;  // merged_dim
};

template <typename T>
AttentionResult<T> attention(const Matrix<T>& H, const std::vector<T>& w) {
  if (H.rows == 0) throw DataError("attention: empty sequence");
  if (H.cols != w.size()) throw UsageError("attention: shape mismatch");
  const std::size_t m = H.rows, n = H.cols;
  AttentionResult<T> out;
  std::vector<T> scores(m);
  for (std::size_t t = 0; t < m; ++t) {
    T s = T{0};
    std::span<const T> row = H.row(t);
    for (std::size_t j = 0; j < n; ++j) s += w[j] * std::tanh(row[j]);
    scores[t] = s;
  }
  T max_score = *std::max_element(scores.begin(), scores.end());
  out.alpha.resize(m);
  T total = T{0};
  for (std::size_t t = 0; t < m; ++t) {
    out.alpha[t] = std::exp(scores[t] - max_score);
    total += out.alpha[t];
  }
  for (auto& a : out.alpha) a /= total;
  out.r.assign(n, T{0});
  for (std::size_t t = 0; t < m; ++t)
    axpy(out.alpha[t], H.row(t), std::span<T>(out.r));
  out.hstar.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.hstar[j] = std::tanh(out.r[j]);
  return out;
}

template <typename T>
std::array<T, 2> softmax2(const std::array<T, 2>& logits) {
  T mx = std::max(logits[0], logits[1]);
  T e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
  T z = e0 + e1;
  return {e0 / z, e1 / z};
}

// Output layer: probs = softmax(W0 h* + b0), label = argmax (ties -> bug).
template <typename T>
struct Prediction {
  std::array<T, 2> probs;
  ReporterType label;
};

template <typename T>
Prediction<T> predict_from_representation(const AblstmModel<T>& model,
                                          const std::vector<T>& hstar) {
  std::array<T, 2> logits{};
  logits[0] = dot(std::span<const T>(model.out_w.row(0)),
                  std::span<const T>(hstar)) + model.out_b[0];
  logits[1] = dot(std::span<const T>(model.out_w.row(1)),
                  std::span<const T>(hstar)) + model.out_b[1];
  Prediction<T> p;
  p.probs = softmax2(logits);
  p.label = p.probs[kClassBug] >= p.probs[kClassNonBug] ? ReporterType::bug
                                                        : ReporterType::nonbug;
  return p;
}

// Cross-entropy with a probability floor so a saturated wrong prediction
// cannot produce an infinite loss.
template <typename T>
double cross_entropy(const std::array<T, 2>& probs, int gold_class) {
  double p = static_cast<double>(probs[static_cast<std::size_t>(gold_class)]);
  return -std::log(std::max(p, 1e-12));
}

// ---------------------------------------------------------------------------
// Full forward pass with caches for backpropagation.
// ---------------------------------------------------------------------------

template <typename T>
struct SeqForward {
  std::vector<int> tokens;
  std::vector<std::vector<T>> x;  // m x d embeddings
  LstmRun<T> fwd;                 // original order
  LstmRun<T> bwd;                 // reversed order
  Matrix<T> H;                    // m x merged, after dropout when training
  Matrix<T> mask_H;               // empty during inference
  std::vector<T> mask_h;
  std::vector<T> Mt_flat;         // m x merged, tanh(H)
  std::vector<T> alpha;
  std::vector<T> r, hstar0, hstar;
  std::array<T, 2> probs;
  double loss = 0.0;
  int gold = -1;
};

template <typename T>
SeqForward<T> forward_sequence(const AblstmModel<T>& model,
                               const std::vector<int>& tokens, int gold_class,
                               double dropout_rate = 0.0,
                               SplitMix64* rng = nullptr) {
  if (tokens.empty()) throw DataError("forward: empty token sequence");
  const std::size_t m = tokens.size();
  const std::size_t n = static_cast<std::size_t>(model.config.hidden_dim);
  const std::size_t merged = static_cast<std::size_t>(model.config.merged_dim());
  SeqForward<T> sf;
  sf.tokens = tokens;
  sf.gold = gold_class;
  sf.x.reserve(m);
  for (int tok : tokens) sf.x.push_back(embed(model, tok));

  sf.fwd = run_lstm(model.fwd, sf.x);
  std::vector<std::vector<T>> rev(sf.x.rbegin(), sf.x.rend());
  sf.bwd = run_lstm(model.bwd, rev);

  sf.H = Matrix<T>(m, merged);
  for (std::size_t t = 0; t < m; ++t) {
    const auto& hf = sf.fwd.steps[t].h;
    const auto& hb = sf.bwd.steps[m - 1 - t].h;
    std::span<T> row = sf.H.row(t);
    if (model.config.merge == MergeMode::sum) {
      for (std::size_t j = 0; j < n; ++j) row[j] = hf[j] + hb[j];
    } else {
      for (std::size_t j = 0; j < n; ++j) row[j] = hf[j];
      for (std::size_t j = 0; j < n; ++j) row[n + j] = hb[j];
    }
  }

  const bool training = dropout_rate > 0.0 && rng != nullptr;
  if (training) {
    const double keep = 1.0 - dropout_rate;
    sf.mask_H = Matrix<T>(m, merged);
    for (auto& v : sf.mask_H.data)
      v = rng->uniform() < keep ? static_cast<T>(1.0 / keep) : T{0};
    for (std::size_t i = 0; i < sf.H.data.size(); ++i)
      sf.H.data[i] *= sf.mask_H.data[i];
    sf.mask_h.resize(merged);
    for (auto& v : sf.mask_h)
      v = rng->uniform() < keep ? static_cast<T>(1.0 / keep) : T{0};
  }

  // Attention over the (possibly dropped) merged outputs.
  sf.Mt_flat.resize(m * merged);
  std::vector<T> scores(m);
  for (std::size_t t = 0; t < m; ++t) {
    std::span<const T> row = sf.H.row(t);
    T s = T{0};
    for (std::size_t j = 0; j < merged; ++j) {
      T mt = std::tanh(row[j]);
      sf.Mt_flat[t * merged + j] = mt;
      s += model.attn_w[j] * mt;
    }
    scores[t] = s;
  }
  T max_score = *std::max_element(scores.begin(), scores.end());
  sf.alpha.resize(m);
  T total = T{0};
  for (std::size_t t = 0; t < m; ++t) {
    sf.alpha[t] = std::exp(scores[t] - max_score);
    total += sf.alpha[t];
  }
  for (auto& a : sf.alpha) a /= total;
  sf.r.assign(merged, T{0});
  for (std::size_t t = 0; t < m; ++t)
    axpy(sf.alpha[t], sf.H.row(t), std::span<T>(sf.r));
  sf.hstar0.resize(merged);
  for (std::size_t j = 0; j < merged; ++j) sf.hstar0[j] = std::tanh(sf.r[j]);
  sf.hstar = sf.hstar0;
  if (training)
    for (std::size_t j = 0; j < merged; ++j) sf.hstar[j] *= sf.mask_h[j];

  std::array<T, 2> logits{};
  logits[0] = dot(std::span<const T>(model.out_w.row(0)),
                  std::span<const T>(sf.hstar)) + model.out_b[0];
  logits[1] = dot(std::span<const T>(model.out_w.row(1)),
                  std::span<const T>(sf.hstar)) + model.out_b[1];
  sf.probs = softmax2(logits);
  if (gold_class >= 0) sf.loss = cross_entropy(sf.probs, gold_class);
  return sf;
}

template <typename T>
Prediction<T> predict(const AblstmModel<T>& model,
                      const std::vector<int>& tokens) {
  SeqForward<T> sf = forward_sequence(model, tokens, -1);
  Prediction<T> p;
  p.probs = sf.probs;
  p.label = p.probs[kClassBug] >= p.probs[kClassNonBug] ? ReporterType::bug
                                                        : ReporterType::nonbug;
  return p;
}

// ---------------------------------------------------------------------------
// Backpropagation through the output layer, attention, both LSTM directions
// and the touched embedding rows. `scale` weights this sequence's
// contribution (1/batch for mean batch loss).
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void backward_lstm(const LstmParams<T>& p, const std::vector<std::vector<T>>& xs,
                   const LstmRun<T>& run,
                   const std::vector<std::vector<T>>& dh_out,
                   LstmParams<T>& grads, std::vector<std::vector<T>>& dxs,
                   T scale) {
  const std::size_t m = xs.size();
  const std::size_t n = p.b_i.size();
  std::vector<T> dh_next(n, T{0}), dc_next(n, T{0});
  std::vector<T> dh(n), dc(n), da_i(n), da_f(n), da_o(n), da_g(n);
  for (std::size_t t = m; t-- > 0;) {
    const LstmStep<T>& s = run.steps[t];
    std::span<const T> c_prev =
        t == 0 ? std::span<const T>() : std::span<const T>(run.steps[t - 1].c);
    std::span<const T> h_prev =
        t == 0 ? std::span<const T>() : std::span<const T>(run.steps[t - 1].h);
    for (std::size_t j = 0; j < n; ++j) {
      dh[j] = dh_out[t][j] + dh_next[j];
      T do_ = dh[j] * s.tanh_c[j];
      dc[j] = dc_next[j] + dh[j] * s.o[j] * (T{1} - s.tanh_c[j] * s.tanh_c[j]);
      T di = dc[j] * s.g[j];
      T dg = dc[j] * s.i[j];
      T df = dc[j] * (t == 0 ? T{0} : c_prev[j]);
      dc_next[j] = dc[j] * s.f[j];
      da_i[j] = di * s.i[j] * (T{1} - s.i[j]);
      da_f[j] = df * s.f[j] * (T{1} - s.f[j]);
      da_o[j] = do_ * s.o[j] * (T{1} - s.o[j]);
      da_g[j] = dg * (T{1} - s.g[j] * s.g[j]);
    }
    auto accumulate = [&](Matrix<T>& dU, Matrix<T>& dW, std::vector<T>& db,
                          const std::vector<T>& da) {
      for (std::size_t j = 0; j < n; ++j) {
        const T a = da[j] * scale;
        if (a != T{0}) {
          std::span<T> du_row = dU.row(j);
          const auto& x = xs[t];
          for (std::size_t cix = 0; cix < x.size(); ++cix)
            du_row[cix] += a * x[cix];
          if (t > 0) {
            std::span<T> dw_row = dW.row(j);
            for (std::size_t cix = 0; cix < n; ++cix)
              dw_row[cix] += a * h_prev[cix];
          }
          db[j] += a;
        }
      }
    };
    accumulate(grads.U_i, grads.W_i, grads.b_i, da_i);
    accumulate(grads.U_f, grads.W_f, grads.b_f, da_f);
    accumulate(grads.U_o, grads.W_o, grads.b_o, da_o);
    accumulate(grads.U_g, grads.W_g, grads.b_g, da_g);

    // dx_t and dh_{t-1}
    std::fill(dxs[t].begin(), dxs[t].end(), T{0});
    matvec_transpose_add(p.U_i, std::span<const T>(da_i), std::span<T>(dxs[t]));
    matvec_transpose_add(p.U_f, std::span<const T>(da_f), std::span<T>(dxs[t]));
    matvec_transpose_add(p.U_o, std::span<const T>(da_o), std::span<T>(dxs[t]));
    matvec_transpose_add(p.U_g, std::span<const T>(da_g), std::span<T>(dxs[t]));
    std::fill(dh_next.begin(), dh_next.end(), T{0});
    matvec_transpose_add(p.W_i, std::span<const T>(da_i), std::span<T>(dh_next));
    matvec_transpose_add(p.W_f, std::span<const T>(da_f), std::span<T>(dh_next));
    matvec_transpose_add(p.W_o, std::span<const T>(da_o), std::span<T>(dh_next));
    matvec_transpose_add(p.W_g, std::span<const T>(da_g), std::span<T>(dh_next));
  }
}

}  // namespace detail

template <typename T>
void backward_sequence(const AblstmModel<T>& model, const SeqForward<T>& sf,
                       AblstmModel<T>& grads, T scale) {
  const std::size_t m = sf.tokens.size();
  const std::size_t n = static_cast<std::size_t>(model.config.hidden_dim);
  const std::size_t merged = static_cast<std::size_t>(model.config.merged_dim());
  const bool trained_with_dropout = !sf.mask_h.empty();

  // Output layer.
  std::array<T, 2> dlogits = sf.probs;
  dlogits[static_cast<std::size_t>(sf.gold)] -= T{1};
  std::vector<T> dhstar(merged, T{0});
  for (int cls = 0; cls < 2; ++cls) {
    const T dz = dlogits[static_cast<std::size_t>(cls)];
    grads.out_b[static_cast<std::size_t>(cls)] += scale * dz;
    std::span<T> gw = grads.out_w.row(static_cast<std::size_t>(cls));
    std::span<const T> w = model.out_w.row(static_cast<std::size_t>(cls));
    for (std::size_t j = 0; j < merged; ++j) {
      gw[j] += scale * dz * sf.hstar[j];
      dhstar[j] += dz * w[j];
    }
  }
  if (trained_with_dropout)
    for (std::size_t j = 0; j < merged; ++j) dhstar[j] *= sf.mask_h[j];

  // h* = tanh(r)
  std::vector<T> dr(merged);
  for (std::size_t j = 0; j < merged; ++j)
    dr[j] = dhstar[j] * (T{1} - sf.hstar0[j] * sf.hstar0[j]);

  // r = sum_t alpha_t H_t ; alpha = softmax(w^T tanh(H))
  std::vector<T> dalpha(m, T{0});
  Matrix<T> dH(m, merged);
  for (std::size_t t = 0; t < m; ++t) {
    std::span<const T> hrow = sf.H.row(t);
    T acc = T{0};
    for (std::size_t j = 0; j < merged; ++j) acc += hrow[j] * dr[j];
    dalpha[t] = acc;
    std::span<T> dhrow = dH.row(t);
    for (std::size_t j = 0; j < merged; ++j) dhrow[j] = sf.alpha[t] * dr[j];
  }
  T alpha_dot = T{0};
  for (std::size_t t = 0; t < m; ++t) alpha_dot += sf.alpha[t] * dalpha[t];
  for (std::size_t t = 0; t < m; ++t) {
    const T ds = sf.alpha[t] * (dalpha[t] - alpha_dot);
    std::span<T> dhrow = dH.row(t);
    const T* mt_row = sf.Mt_flat.data() + t * merged;
    for (std::size_t j = 0; j < merged; ++j) {
      grads.attn_w[j] += scale * ds * mt_row[j];
      dhrow[j] += model.attn_w[j] * ds * (T{1} - mt_row[j] * mt_row[j]);
    }
  }

  // Undo dropout on H, then split per direction.
  if (trained_with_dropout)
    for (std::size_t i = 0; i < dH.data.size(); ++i)
      dH.data[i] *= sf.mask_H.data[i];

  std::vector<std::vector<T>> dh_fwd(m, std::vector<T>(n));
  std::vector<std::vector<T>> dh_bwd(m, std::vector<T>(n));  // processing order
  for (std::size_t t = 0; t < m; ++t) {
    std::span<const T> dhrow = dH.row(t);
    if (model.config.merge == MergeMode::sum) {
      for (std::size_t j = 0; j < n; ++j) {
        dh_fwd[t][j] = dhrow[j];
        dh_bwd[m - 1 - t][j] = dhrow[j];
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        dh_fwd[t][j] = dhrow[j];
        dh_bwd[m - 1 - t][j] = dhrow[n + j];
      }
    }
  }

  std::vector<std::vector<T>> dx_fwd(m, std::vector<T>(sf.x[0].size()));
  std::vector<std::vector<T>> dx_bwd(m, std::vector<T>(sf.x[0].size()));
  detail::backward_lstm(model.fwd, sf.x, sf.fwd, dh_fwd, grads.fwd, dx_fwd,
                        scale);
  std::vector<std::vector<T>> rev(sf.x.rbegin(), sf.x.rend());
  detail::backward_lstm(model.bwd, rev, sf.bwd, dh_bwd, grads.bwd, dx_bwd,
                        scale);

  // Embedding rows: forward direction indexes positions directly, backward
  // direction processed the reversed sequence.
  for (std::size_t t = 0; t < m; ++t) {
    std::span<T> grow =
        grads.embedding.row(static_cast<std::size_t>(sf.tokens[t]));
    for (std::size_t j = 0; j < grow.size(); ++j)
      grow[j] += scale * (dx_fwd[t][j] + dx_bwd[m - 1 - t][j]);
  }
}

// dx gradients in backward_lstm are unscaled on purpose: embedding
// accumulation applies `scale` once. Parameter grads carry it already.

// ---------------------------------------------------------------------------
// Adam with global-norm clipping.
// ---------------------------------------------------------------------------

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(AblstmModel<T>& model, const TrainConfig& config)
      : config_(config) {
    for_each_tensor(model, [&](const std::string&, std::span<T> t) {
      m_.emplace_back(t.size(), T{0});
      v_.emplace_back(t.size(), T{0});
    });
  }

  void step(AblstmModel<T>& model, AblstmModel<T>& grads) {
    double norm_sq = 0.0;
    for_each_tensor(grads, [&](const std::string&, std::span<T> g) {
      for (T x : g) norm_sq += static_cast<double>(x) * static_cast<double>(x);
    });
    double clip = 1.0;
    const double norm = std::sqrt(norm_sq);
    if (config_.clip_norm > 0 && norm > config_.clip_norm)
      clip = config_.clip_norm / norm;

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, t_);
    const double bc2 = 1.0 - std::pow(config_.beta2, t_);
    std::size_t slot = 0;
    std::vector<std::span<T>> param_views;
    for_each_tensor(model, [&](const std::string&, std::span<T> p) {
      param_views.push_back(p);
    });
    for_each_tensor(grads, [&](const std::string&, std::span<T> g) {
      std::span<T> p = param_views[slot];
      std::vector<T>& m = m_[slot];
      std::vector<T>& v = v_[slot];
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        m[i] = static_cast<T>(config_.beta1 * m[i] + (1.0 - config_.beta1) * gi);
        v[i] = static_cast<T>(config_.beta2 * v[i] +
                              (1.0 - config_.beta2) * gi * gi);
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        p[i] -= static_cast<T>(config_.learning_rate * mhat /
                               (std::sqrt(vhat) + config_.epsilon));
      }
      ++slot;
    });
  }

 private:
  TrainConfig config_;
  std::vector<std::vector<T>> m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints and training.
// ---------------------------------------------------------------------------

template <typename T = float>
struct Checkpoint {
  AblstmModel<T> model;
  int epoch = 0;
  double validation_accuracy = 0.0;
  std::uint64_t rng_state = 0;
};

inline constexpr const char* kCheckpointMagic = "BSFTCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt,
                     const std::filesystem::path& path,
                     const std::string& config_hash = "") {
  BinaryWriter w(kCheckpointMagic, kCheckpointVersion);
  const AblstmConfig& c = ckpt.model.config;
  nlohmann::json config_json{{"vocab_size", c.vocab_size},
                             {"embed_dim", c.embed_dim},
                             {"hidden_dim", c.hidden_dim},
                             {"merge", c.merge == MergeMode::sum ? "sum" : "concat"},
                             {"seed", c.seed}};
  w.str(config_json.dump());
  std::vector<std::pair<std::string, std::span<const T>>> tensors;
  for_each_tensor(ckpt.model,
                  [&](const std::string& name, std::span<const T> t) {
                    tensors.emplace_back(name, t);
                  });
  w.u64(tensors.size());
  for (auto& [name, t] : tensors) {
    w.str(name);
    w.u64(t.size());
    for (T v : t) w.f32(static_cast<float>(v));
  }
  w.save(path);

  nlohmann::json meta{{"epoch", ckpt.epoch},
                      {"validation_accuracy", ckpt.validation_accuracy},
                      {"rng_state", to_hex(ckpt.rng_state)},
                      {"config_hash", config_hash}};
  write_file_atomic(path.string() + ".meta.json", meta.dump(2) + "\n");
}

template <typename T = float>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  BinaryReader r = BinaryReader::open(path, kCheckpointMagic,
                                      kCheckpointVersion);
  Checkpoint<T> ckpt;
  nlohmann::json config_json = nlohmann::json::parse(r.str());
  AblstmConfig config;
  config.vocab_size = config_json.at("vocab_size").get<int>();
  config.embed_dim = config_json.at("embed_dim").get<int>();
  config.hidden_dim = config_json.at("hidden_dim").get<int>();
  config.merge = config_json.at("merge").get<std::string>() == "sum"
                     ? MergeMode::sum
                     : MergeMode::concat;
  config.seed = config_json.at("seed").get<std::uint64_t>();
  ckpt.model = init_ablstm<T>(config);
  std::size_t n_tensors = r.u64();
  std::map<std::string, std::span<T>> by_name;
  for_each_tensor(ckpt.model, [&](const std::string& name, std::span<T> t) {
    by_name[name] = t;
  });
  for (std::size_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    std::size_t count = r.u64();
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second.size() != count)
      throw DataError("checkpoint tensor mismatch: " + name);
    for (std::size_t j = 0; j < count; ++j)
      it->second[j] = static_cast<T>(r.f32());
  }
  std::filesystem::path meta_path = path.string() + ".meta.json";
  if (std::filesystem::exists(meta_path)) {
    nlohmann::json meta = nlohmann::json::parse(read_file(meta_path));
    ckpt.epoch = meta.value("epoch", 0);
    ckpt.validation_accuracy = meta.value("validation_accuracy", 0.0);
    if (meta.contains("rng_state"))
      ckpt.rng_state =
          std::stoull(meta.at("rng_state").get<std::string>(), nullptr, 16);
  }
  return ckpt;
}

template <typename T>
std::vector<ReporterType> predict_corpus(const AblstmModel<T>& model,
                                         const std::vector<TokenizedIssue>& corpus) {
  std::vector<ReporterType> out;
  out.reserve(corpus.size());
  for (const auto& issue : corpus)
    out.push_back(predict(model, issue.tokens).label);
  return out;
}

template <typename T>
double accuracy(const AblstmModel<T>& model,
                const std::vector<TokenizedIssue>& corpus) {
  if (corpus.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& issue : corpus)
    if (predict(model, issue.tokens).label == issue.reporter_type) ++hits;
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_accuracy = 0.0;
};

template <typename T = float>
struct TrainResult {
  Checkpoint<T> best;
  std::vector<EpochStats> history;
  std::string selection_note;  // non-empty when test-based selection was used
};

// Mini-batch training. Batches are gradient-accumulation units: variable
// length titles are grouped by exact length inside each batch purely for
// processing order, every sequence contributes its exact (unpadded) loss.
// One checkpoint per epoch; selection per TrainConfig.
template <typename T = float>
TrainResult<T> train_ablstm(const std::vector<TokenizedIssue>& train_set,
                            const std::vector<TokenizedIssue>& valid_set,
                            const std::vector<TokenizedIssue>& test_set,
                            const AblstmConfig& model_config,
                            const TrainConfig& train_config,
                            const std::filesystem::path& checkpoint_dir = {}) {
  train_config.validate();
  if (train_set.empty()) throw DataError("train: empty training split");
  if (valid_set.empty()) throw DataError("train: empty validation split");
  if (train_config.selection == SelectionMode::best_test && test_set.empty())
    throw DataError("train: test-based selection needs a test split");

  AblstmModel<T> model = init_ablstm<T>(model_config);
  AblstmModel<T> grads = zeros_like(model);
  AdamOptimizer<T> opt(model, train_config);
  SplitMix64 rng(seed_mix(train_config.seed, 0x7a117));

  std::vector<Checkpoint<T>> checkpoints;
  std::vector<std::filesystem::path> checkpoint_paths;
  const bool to_disk = !checkpoint_dir.empty();
  if (to_disk) std::filesystem::create_directories(checkpoint_dir);

  TrainResult<T> result;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(train_config.batch_size)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(
                                             train_config.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      std::stable_sort(batch.begin(), batch.end(),
                       [&](std::size_t a, std::size_t b) {
                         return train_set[a].tokens.size() <
                                train_set[b].tokens.size();
                       });
      for_each_tensor(grads, [](const std::string&, std::span<T> t) {
        std::fill(t.begin(), t.end(), T{0});
      });
      const T scale = T{1} / static_cast<T>(batch.size());
      double batch_loss = 0.0;
      for (std::size_t idx : batch) {
        const TokenizedIssue& issue = train_set[idx];
        SeqForward<T> sf =
            forward_sequence(model, issue.tokens,
                             class_index(issue.reporter_type),
                             train_config.dropout, &rng);
        if (!std::isfinite(sf.loss))
          throw RuntimeFailure("train: non-finite loss at epoch " +
                               std::to_string(epoch) + ", issue " +
                               issue.issue_id);
        batch_loss += sf.loss;
        backward_sequence(model, sf, grads, scale);
      }
      opt.step(model, grads);
      epoch_loss += batch_loss;
      seen += batch.size();
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
    stats.validation_accuracy = accuracy(model, valid_set);
    result.history.push_back(stats);

    Checkpoint<T> ckpt{model, epoch, stats.validation_accuracy, rng.state()};
    if (to_disk) {
      std::filesystem::path p =
          checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(ckpt, p);
      checkpoint_paths.push_back(p);
      // Keep memory flat when writing to disk: retain metadata only.
      ckpt.model = AblstmModel<T>{};
    }
    checkpoints.push_back(std::move(ckpt));
  }

  auto materialize = [&](std::size_t i) -> Checkpoint<T> {
    if (to_disk) {
      Checkpoint<T> c = load_checkpoint<T>(checkpoint_paths[i]);
      c.epoch = checkpoints[i].epoch;
      c.validation_accuracy = checkpoints[i].validation_accuracy;
      c.rng_state = checkpoints[i].rng_state;
      return c;
    }
    return checkpoints[i];
  };

  if (train_config.selection == SelectionMode::best_validation) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < checkpoints.size(); ++i)
      if (checkpoints[i].validation_accuracy >
          checkpoints[best].validation_accuracy)
        best = i;
    result.best = materialize(best);
  } else {
    // Rank by validation accuracy, take the top three, then pick the one
    // with the best *test* accuracy. Optimistically biased by construction;
    // reported numbers from this mode are not honest test estimates.
    std::vector<std::size_t> ranked(checkpoints.size());
    std::iota(ranked.begin(), ranked.end(), 0);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) {
                       return checkpoints[a].validation_accuracy >
                              checkpoints[b].validation_accuracy;
                     });
    ranked.resize(std::min<std::size_t>(3, ranked.size()));
    std::size_t best = ranked[0];
    double best_acc = -1.0;
    for (std::size_t i : ranked) {
      Checkpoint<T> c = materialize(i);
      double test_acc = accuracy(c.model, test_set);
      if (test_acc > best_acc) {
        best_acc = test_acc;
        best = i;
      }
    }
    result.best = materialize(best);
    result.selection_note =
        "warning: model selected by test accuracy; the reported test "
        "performance is optimistically biased";
  }
  return result;
}

}  // namespace bugsift
