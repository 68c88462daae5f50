#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bugsift/baselines.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace bugsift;

TEST_CASE("logistic regression separates an easy corpus") {
  std::vector<TokenizedIssue> train;
  SplitMix64 rng(1);
  for (int i = 0; i < 200; ++i) {
    bool bug = i % 2 == 0;
    std::vector<int> tokens = {bug ? 1 : 2,
                               static_cast<int>(3 + rng.below(4))};
    train.push_back({"t" + std::to_string(i), tokens,
                     bug ? ReporterType::bug : ReporterType::nonbug});
  }
  LogRegModel model = train_logreg_bow(train, 7);
  std::size_t correct = 0;
  for (const auto& issue : train)
    if (classify_logreg(model, issue.tokens) == issue.reporter_type) ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(train.size()) >=
        0.98);
}

TEST_CASE("zero weights give probability one half") {
  LogRegModel model;
  model.weights.assign(10, 0.0);
  model.bias = 0.0;
  CHECK(logreg_prob_bug(model, {1, 2, 3}) == doctest::Approx(0.5));
  CHECK(classify_logreg(model, {4}) == ReporterType::bug);  // 0.5 ties to bug
}

TEST_CASE("logistic-regression gradients match finite differences") {
  LogRegModel model;
  model.weights = {0.3, -0.2, 0.05, 0.4, -0.5};
  model.bias = 0.1;
  std::vector<TokenizedIssue> batch = {
      {"a", {0, 1, 1}, ReporterType::bug},
      {"b", {2, 3}, ReporterType::nonbug},
      {"c", {4}, ReporterType::bug},
  };
  const double l2 = 1e-3;
  LogRegGrads grads;
  logreg_loss_grad(model, batch, l2, &grads);

  auto loss_of = [&]() { return logreg_loss_grad(model, batch, l2, nullptr); };
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    double fd = oracle::central_difference(model.weights[i], 1e-6, loss_of);
    CHECK(oracle::relative_error(grads.weights[i], fd) < 1e-6);
  }
  double fd_bias = oracle::central_difference(model.bias, 1e-6, loss_of);
  CHECK(oracle::relative_error(grads.bias, fd_bias) < 1e-6);
}

TEST_CASE("logistic regression rejects an empty training set") {
  CHECK_THROWS_AS(train_logreg_bow({}, 5), DataError);
}

TEST_CASE("knn baseline votes over the training neighborhood") {
  // Three colinear training points; the middle one is nonbug.
  Matrix<double> points(3, 2);
  points(0, 0) = 0.0;
  points(1, 0) = 1.0;
  points(2, 0) = 2.0;
  std::vector<ReporterType> labels = {ReporterType::bug, ReporterType::nonbug,
                                      ReporterType::bug};
  auto tree = BallTree<double>::build(points, {"a", "b", "c"}, 2);

  // k = 1 at a training point returns that point's label.
  CHECK(knn_classify(tree, labels, 1, points.row(1)) == ReporterType::nonbug);
  // k = 3 with votes {bug, bug, nonbug} goes to bug.
  CHECK(knn_classify(tree, labels, 3, points.row(0)) == ReporterType::bug);
  // Tie votes (k even) resolve to bug.
  CHECK(knn_classify(tree, labels, 2, std::vector<double>{0.5, 0.0}) ==
        ReporterType::bug);
  CHECK_THROWS_AS(knn_classify(tree, labels, 4, points.row(0)), UsageError);
}

TEST_CASE("knn baseline agrees with the brute-force vote oracle") {
  SplitMix64 rng(321);
  std::size_t n = 400, dim = 8;
  Matrix<double> points(n, dim);
  for (auto& v : points.data) v = rng.uniform(-1, 1);
  std::vector<std::string> ids(n);
  std::vector<ReporterType> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "k%05zu", i);
    ids[i] = buf;
    labels[i] = rng.below(2) ? ReporterType::bug : ReporterType::nonbug;
  }
  auto tree = BallTree<double>::build(points, ids, 25);
  for (int q = 0; q < 500; ++q) {
    std::vector<double> query(dim);
    for (auto& v : query) v = rng.uniform(-1.2, 1.2);
    std::size_t k = 1 + rng.below(25);
    CHECK(knn_classify(tree, labels, k, query) ==
          oracle::brute_force_vote(points, ids, labels,
                                   std::span<const double>(query), k));
  }
}
