#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "bugsift/ball_tree.hpp"
#include "bugsift/common.hpp"
#include "bugsift/metrics.hpp"
#include "bugsift/tensor.hpp"
#include "bugsift/textprep.hpp"

namespace bugsift {

// ---------------------------------------------------------------------------
// Bag-of-words logistic regression, trained by SGD with L2 regularization.
// Feature x is the token-count vector over the vocabulary; y = 1 for bug.
// ---------------------------------------------------------------------------

struct LogRegConfig {
  double learning_rate = 0.1;
  int epochs = 30;
  double l2 = 1e-4;
  std::uint64_t seed = 7;
};

struct LogRegModel {
  std::vector<double> weights;  // one per vocabulary index
  double bias = 0.0;
};

inline double logreg_margin(const LogRegModel& model,
                            const std::vector<int>& tokens) {
  double z = model.bias;
  for (int t : tokens) z += model.weights[static_cast<std::size_t>(t)];
  return z;
}

inline double logreg_prob_bug(const LogRegModel& model,
                              const std::vector<int>& tokens) {
  return sigmoid(logreg_margin(model, tokens));
}

inline ReporterType classify_logreg(const LogRegModel& model,
                                    const std::vector<int>& tokens) {
  return logreg_prob_bug(model, tokens) >= 0.5 ? ReporterType::bug
                                               : ReporterType::nonbug;
}

// Mean cross-entropy over a batch plus (l2/2)||w||^2, with its exact
// gradient. Pure function of the parameters; the finite-difference test
// drives it directly.
struct LogRegGrads {
  std::vector<double> weights;
  double bias = 0.0;
};

inline double logreg_loss_grad(const LogRegModel& model,
                               const std::vector<TokenizedIssue>& batch,
                               double l2, LogRegGrads* grads) {
  if (batch.empty()) throw DataError("logistic regression: empty batch");
  if (grads) {
    grads->weights.assign(model.weights.size(), 0.0);
    grads->bias = 0.0;
  }
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& issue : batch) {
    const double y = issue.reporter_type == ReporterType::bug ? 1.0 : 0.0;
    const double z = logreg_margin(model, issue.tokens);
    loss -= inv * (y > 0.5 ? log_sigmoid(z) : log_sigmoid(-z));
    if (grads) {
      const double g = inv * (sigmoid(z) - y);
      grads->bias += g;
      for (int t : issue.tokens)
        grads->weights[static_cast<std::size_t>(t)] += g;
    }
  }
  double reg = 0.0;
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    reg += model.weights[i] * model.weights[i];
    if (grads) grads->weights[i] += l2 * model.weights[i];
  }
  loss += 0.5 * l2 * reg;
  return loss;
}

inline LogRegModel train_logreg_bow(const std::vector<TokenizedIssue>& train,
                                    std::size_t vocab_size,
                                    const LogRegConfig& config = {}) {
  if (train.empty()) throw DataError("logistic regression: empty training set");
  LogRegModel model;
  model.weights.assign(vocab_size, 0.0);
  SplitMix64 rng(seed_mix(config.seed, 0x10c9e6));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const double total_steps =
      static_cast<double>(config.epochs) * static_cast<double>(train.size());
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t idx : order) {
      const TokenizedIssue& issue = train[idx];
      const double lr =
          config.learning_rate *
          (1.0 - 0.9 * static_cast<double>(step) / total_steps);
      ++step;
      const double y = issue.reporter_type == ReporterType::bug ? 1.0 : 0.0;
      const double g = sigmoid(logreg_margin(model, issue.tokens)) - y;
      // Decoupled L2: shrink, then apply the sparse data gradient.
      const double shrink = 1.0 - lr * config.l2;
      for (auto& w : model.weights) w *= shrink;
      model.bias -= lr * g;
      for (int t : issue.tokens)
        model.weights[static_cast<std::size_t>(t)] -= lr * g;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Plain majority-vote k-NN over document vectors: the traditional rule, kept
// as a baseline classifier (distinct from the thresholded corrector).
// ---------------------------------------------------------------------------

inline ReporterType knn_classify(const BallTree<double>& train_tree,
                                 std::span<const ReporterType> train_labels,
                                 std::size_t k, std::span<const double> query) {
  if (train_labels.size() != train_tree.size())
    throw UsageError("knn baseline: label count does not match tree");
  if (k < 1 || k > train_tree.size())
    throw UsageError("knn baseline: k out of range");
  auto neighbors = train_tree.knn(query, k);
  std::size_t bug_votes = 0;
  for (const auto& n : neighbors)
    if (train_labels[n.index] == ReporterType::bug) ++bug_votes;
  return 2 * bug_votes >= k ? ReporterType::bug : ReporterType::nonbug;
}

}  // namespace bugsift
