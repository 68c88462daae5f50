#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bugsift/metrics.hpp"

using namespace bugsift;

namespace {

std::vector<ReporterType> random_labels(std::size_t n, SplitMix64& rng) {
  std::vector<ReporterType> v(n);
  for (auto& t : v)
    t = rng.below(2) ? ReporterType::bug : ReporterType::nonbug;
  return v;
}

}  // namespace

TEST_CASE("F is the harmonic mean of precision and recall") {
  CHECK(f_measure(0.789, 0.317) == doctest::Approx(0.452).epsilon(0.005));
  CHECK(f_measure(0.88, 0.018) == doctest::Approx(0.035).epsilon(0.03));
  CHECK(f_measure(0.5, 0.5) == doctest::Approx(0.5));
  CHECK(f_measure(0.0, 0.0) == 0.0);
}

TEST_CASE("prf marks zero denominators as undefined") {
  ClassCounts none;  // everything zero
  Prf empty = prf(none);
  CHECK(!empty.precision.has_value());
  CHECK(!empty.recall.has_value());
  CHECK(!empty.f.has_value());

  ClassCounts never_predicted{.tp = 0, .fp = 0, .fn = 5, .tn = 5};
  Prf np = prf(never_predicted);
  CHECK(!np.precision.has_value());
  CHECK(*np.recall == doctest::Approx(0.0));

  ClassCounts always_right{.tp = 7, .fp = 0, .fn = 0, .tn = 3};
  Prf ar = prf(always_right);
  CHECK(*ar.precision == doctest::Approx(1.0));
  CHECK(*ar.recall == doctest::Approx(1.0));
  CHECK(*ar.f == doctest::Approx(1.0));
}

TEST_CASE("weighted F averages by class size") {
  CHECK(*weighted_f(0.8, 0.6, 100, 100) == doctest::Approx(0.7));
  // The GitHub logistic-regression row: class Fs 0.647/0.742 at a 44.7%
  // bug share average to 0.700.
  CHECK(*weighted_f(0.647, 0.742, 447, 553) ==
        doctest::Approx(0.700).epsilon(0.0072));
  CHECK(*weighted_f(0.9, std::nullopt, 10, 0) == doctest::Approx(0.9));
  CHECK(!weighted_f(std::nullopt, 0.5, 10, 10).has_value());
  CHECK_THROWS_AS(weighted_f(0.5, 0.5, 0, 0), DataError);
}

TEST_CASE("weighted F of equal class scores is that score") {
  SplitMix64 rng(12);
  for (int it = 0; it < 100; ++it) {
    double f = rng.uniform();
    std::size_t na = 1 + rng.below(1000), nb = 1 + rng.below(1000);
    CHECK(*weighted_f(f, f, na, nb) == doctest::Approx(f));
  }
}

TEST_CASE("weighted F lies between the two class scores") {
  SplitMix64 rng(13);
  for (int it = 0; it < 100; ++it) {
    double fa = rng.uniform(), fb = rng.uniform();
    std::size_t na = 1 + rng.below(500), nb = 1 + rng.below(500);
    double favg = *weighted_f(fa, fb, na, nb);
    CHECK(favg >= std::min(fa, fb) - 1e-12);
    CHECK(favg <= std::max(fa, fb) + 1e-12);
  }
}

TEST_CASE("micro F equals accuracy for binary single-label predictions") {
  std::vector<ReporterType> gold = {ReporterType::bug, ReporterType::nonbug,
                                    ReporterType::bug, ReporterType::nonbug};
  CHECK(micro_f(gold, gold) == doctest::Approx(1.0));

  std::vector<ReporterType> half = {ReporterType::bug, ReporterType::bug,
                                    ReporterType::bug, ReporterType::nonbug};
  CHECK(micro_f(half, gold) == doctest::Approx(0.75));

  SplitMix64 rng(2718);
  for (int it = 0; it < 100; ++it) {
    std::size_t n = 1 + rng.below(1000);
    auto g = random_labels(n, rng);
    auto p = random_labels(n, rng);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (g[i] == p[i]) ++correct;
    double acc = static_cast<double>(correct) / static_cast<double>(n);
    CHECK(micro_f(p, g) == doctest::Approx(acc).epsilon(1e-12));
  }
  CHECK_THROWS_AS(micro_f({}, {}), DataError);
}

TEST_CASE("confusion counts stay consistent across the two class views") {
  SplitMix64 rng(5);
  for (int it = 0; it < 50; ++it) {
    std::size_t n = 1 + rng.below(300);
    auto gold = random_labels(n, rng);
    auto pred = random_labels(n, rng);
    ConfusionCounts c = count_confusion(pred, gold);
    CHECK(c.bug.tp == c.nonbug.tn);
    CHECK(c.bug.fp == c.nonbug.fn);
    CHECK(c.bug.fn == c.nonbug.fp);
    CHECK(c.bug.tp + c.bug.fp + c.bug.fn + c.bug.tn == n);
    CHECK(c.n_bug + c.n_nonbug == n);
  }
}

TEST_CASE("compute_metrics aggregates the per-class table") {
  std::vector<ReporterType> gold = {
      ReporterType::bug, ReporterType::bug, ReporterType::bug,
      ReporterType::nonbug, ReporterType::nonbug};
  std::vector<ReporterType> pred = {
      ReporterType::bug, ReporterType::bug, ReporterType::nonbug,
      ReporterType::nonbug, ReporterType::bug};
  Metrics m = compute_metrics(pred, gold);
  CHECK(m.n_bug == 3);
  CHECK(m.n_nonbug == 2);
  CHECK(*m.bug.precision == doctest::Approx(2.0 / 3.0));
  CHECK(*m.bug.recall == doctest::Approx(2.0 / 3.0));
  CHECK(*m.nonbug.precision == doctest::Approx(0.5));
  CHECK(*m.nonbug.recall == doctest::Approx(0.5));
  CHECK(*m.f_avg ==
        doctest::Approx((3.0 * (2.0 / 3.0) + 2.0 * 0.5) / 5.0));
  CHECK(m.micro == doctest::Approx(3.0 / 5.0));
}

TEST_CASE("ten folds partition the corpus with stratification") {
  SplitMix64 rng(1234);
  std::vector<ReporterType> labels(100);
  for (std::size_t i = 0; i < 100; ++i)
    labels[i] = i < 44 ? ReporterType::bug : ReporterType::nonbug;
  shuffle(labels, rng);

  auto folds = ten_fold(labels, 99);
  REQUIRE(folds.size() == 10);
  std::vector<int> covered(100, 0);
  std::size_t global_bug = 44;
  for (const auto& fold : folds) {
    CHECK(fold.test.size() == 10);
    for (std::size_t idx : fold.test) covered[idx] += 1;

    // Stratification: per-fold bug count within +/-2 of the global rate.
    std::size_t fold_bug = 0;
    for (std::size_t idx : fold.test)
      if (labels[idx] == ReporterType::bug) ++fold_bug;
    double expected =
        static_cast<double>(global_bug) * 10.0 / 100.0;
    CHECK(std::fabs(static_cast<double>(fold_bug) - expected) <= 2.0);

    // train/valid/test are disjoint and cover everything exactly once.
    std::vector<int> seen(100, 0);
    for (std::size_t idx : fold.train) seen[idx]++;
    for (std::size_t idx : fold.valid) seen[idx]++;
    for (std::size_t idx : fold.test) seen[idx]++;
    for (int s : seen) CHECK(s == 1);

    // Validation is roughly 10% of the non-test pool.
    CHECK(fold.valid.size() >= 8);
    CHECK(fold.valid.size() <= 11);
  }
  for (int c : covered) CHECK(c == 1);

  auto again = ten_fold(labels, 99);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    CHECK(folds[f].train == again[f].train);
    CHECK(folds[f].valid == again[f].valid);
    CHECK(folds[f].test == again[f].test);
  }

  std::vector<ReporterType> tiny(5, ReporterType::bug);
  CHECK_THROWS_AS(ten_fold(tiny, 1), DataError);
}

TEST_CASE("stratified_split keeps fractions and determinism") {
  std::vector<ReporterType> labels(200);
  for (std::size_t i = 0; i < 200; ++i)
    labels[i] = i % 3 == 0 ? ReporterType::bug : ReporterType::nonbug;
  auto split = stratified_split(labels, 0.8, 0.1, 42);
  CHECK(split.train.size() + split.valid.size() + split.test.size() == 200);
  CHECK(split.train.size() >= 158);
  CHECK(split.train.size() <= 162);
  auto again = stratified_split(labels, 0.8, 0.1, 42);
  CHECK(split.train == again.train);
  CHECK_THROWS_AS(stratified_split(labels, 0.9, 0.2, 1), UsageError);
}
