#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "bugsift/common.hpp"
#include "bugsift/corpus.hpp"

namespace bugsift {

// ---------------------------------------------------------------------------
// Precision / recall / F. A zero denominator yields "undefined" (nullopt),
// never a silent zero; F is 0 only when precision and recall are both
// defined and both zero.
// ---------------------------------------------------------------------------

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Two views of the same predictions: bug-as-positive and nonbug-as-positive.
struct ConfusionCounts {
  ClassCounts bug;
  ClassCounts nonbug;
  std::size_t n_bug = 0;     // gold bug count
  std::size_t n_nonbug = 0;  // gold nonbug count
};

inline ConfusionCounts count_confusion(std::span<const ReporterType> predicted,
                                       std::span<const ReporterType> gold) {
  if (predicted.size() != gold.size())
    throw UsageError("confusion: prediction/gold size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool gold_bug = gold[i] == ReporterType::bug;
    const bool pred_bug = predicted[i] == ReporterType::bug;
    if (gold_bug) ++c.n_bug; else ++c.n_nonbug;
    if (gold_bug && pred_bug) { ++c.bug.tp; ++c.nonbug.tn; }
    if (!gold_bug && pred_bug) { ++c.bug.fp; ++c.nonbug.fn; }
    if (gold_bug && !pred_bug) { ++c.bug.fn; ++c.nonbug.fp; }
    if (!gold_bug && !pred_bug) { ++c.bug.tn; ++c.nonbug.tp; }
  }
  return c;
}

// Harmonic mean of precision and recall.
inline double f_measure(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

struct Prf {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f;
};

inline Prf prf(const ClassCounts& c) {
  Prf out;
  if (c.tp + c.fp > 0)
    out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0)
    out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (out.precision && out.recall) out.f = f_measure(*out.precision, *out.recall);
  return out;
}

// Class-size-weighted mean of the per-class F scores.
inline std::optional<double> weighted_f(std::optional<double> f_bug,
                                        std::optional<double> f_nonbug,
                                        std::size_t n_bug,
                                        std::size_t n_nonbug) {
  if (n_bug + n_nonbug == 0)
    throw DataError("weighted F over an empty population");
  if (n_bug == 0) return f_nonbug;
  if (n_nonbug == 0) return f_bug;
  if (!f_bug || !f_nonbug) return std::nullopt;
  return (static_cast<double>(n_bug) * *f_bug +
          static_cast<double>(n_nonbug) * *f_nonbug) /
         static_cast<double>(n_bug + n_nonbug);
}

// Micro-averaged F across both classes: TP/FP/FN pooled globally. For
// single-label binary prediction this equals accuracy exactly.
inline double micro_f(std::span<const ReporterType> predicted,
                      std::span<const ReporterType> gold) {
  if (gold.empty()) throw DataError("micro F of an empty prediction set");
  ConfusionCounts c = count_confusion(predicted, gold);
  const double tp = static_cast<double>(c.bug.tp + c.nonbug.tp);
  const double fp = static_cast<double>(c.bug.fp + c.nonbug.fp);
  const double fn = static_cast<double>(c.bug.fn + c.nonbug.fn);
  const double precision = tp / (tp + fp);
  const double recall = tp / (tp + fn);
  return f_measure(precision, recall);
}

// Everything a results table needs for one classifier on one test set.
struct Metrics {
  Prf bug;
  Prf nonbug;
  std::optional<double> avg_precision;
  std::optional<double> avg_recall;
  std::optional<double> f_avg;
  double micro = 0.0;
  std::size_t n_bug = 0;
  std::size_t n_nonbug = 0;
};

inline std::optional<double> weighted_mean(std::optional<double> a,
                                           std::optional<double> b,
                                           std::size_t na, std::size_t nb) {
  if (na == 0) return b;
  if (nb == 0) return a;
  if (!a || !b) return std::nullopt;
  return (static_cast<double>(na) * *a + static_cast<double>(nb) * *b) /
         static_cast<double>(na + nb);
}

inline Metrics compute_metrics(std::span<const ReporterType> predicted,
                               std::span<const ReporterType> gold) {
  ConfusionCounts c = count_confusion(predicted, gold);
  Metrics m;
  m.bug = prf(c.bug);
  m.nonbug = prf(c.nonbug);
  m.n_bug = c.n_bug;
  m.n_nonbug = c.n_nonbug;
  m.avg_precision =
      weighted_mean(m.bug.precision, m.nonbug.precision, c.n_bug, c.n_nonbug);
  m.avg_recall = weighted_mean(m.bug.recall, m.nonbug.recall, c.n_bug, c.n_nonbug);
  m.f_avg = weighted_f(m.bug.f, m.nonbug.f, c.n_bug, c.n_nonbug);
  m.micro = micro_f(predicted, gold);
  return m;
}

// ---------------------------------------------------------------------------
// Stratified ten-fold splits. Each issue lands in exactly one test fold;
// within each round the validation set is carved from the training portion
// (10% of it), stratified the same way. Deterministic by seed.
// ---------------------------------------------------------------------------

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

inline std::vector<FoldSplit> ten_fold(std::span<const ReporterType> labels,
                                       std::uint64_t seed, int n_folds = 10) {
  if (n_folds < 2) throw UsageError("ten_fold: need at least 2 folds");
  if (labels.size() < static_cast<std::size_t>(n_folds))
    throw DataError("ten_fold: corpus smaller than the fold count");

  std::vector<std::size_t> bugs, nonbugs;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == ReporterType::bug ? bugs : nonbugs).push_back(i);
  SplitMix64 rng(seed_mix(seed, 0xf01d));
  shuffle(bugs, rng);
  shuffle(nonbugs, rng);

  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(n_folds));
  // One rotating cursor across both classes: per-class counts per fold stay
  // within one of each other, and so do total fold sizes.
  std::size_t cursor = 0;
  auto deal = [&](const std::vector<std::size_t>& items) {
    for (std::size_t item : items) {
      folds[cursor].push_back(item);
      cursor = (cursor + 1) % static_cast<std::size_t>(n_folds);
    }
  };
  deal(bugs);
  deal(nonbugs);

  std::vector<FoldSplit> splits(static_cast<std::size_t>(n_folds));
  for (int f = 0; f < n_folds; ++f) {
    FoldSplit& split = splits[static_cast<std::size_t>(f)];
    split.test = folds[static_cast<std::size_t>(f)];
    std::vector<std::size_t> pool_bug, pool_nonbug;
    for (int g = 0; g < n_folds; ++g) {
      if (g == f) continue;
      for (std::size_t idx : folds[static_cast<std::size_t>(g)])
        (labels[idx] == ReporterType::bug ? pool_bug : pool_nonbug).push_back(idx);
    }
    SplitMix64 fold_rng(seed_mix(seed, 0x7a1d + static_cast<std::uint64_t>(f)));
    shuffle(pool_bug, fold_rng);
    shuffle(pool_nonbug, fold_rng);
    auto carve = [&](std::vector<std::size_t>& pool) {
      std::size_t n_valid = (pool.size() + 9) / 10;  // ceil(10%)
      for (std::size_t i = 0; i < pool.size(); ++i)
        (i < n_valid ? split.valid : split.train).push_back(pool[i]);
    };
    carve(pool_bug);
    carve(pool_nonbug);
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.valid.begin(), split.valid.end());
    std::sort(split.test.begin(), split.test.end());
  }
  return splits;
}

// Single stratified train/valid/test split; the desk-scale default where a
// full cross-validation run is not wanted.
inline FoldSplit stratified_split(std::span<const ReporterType> labels,
                                  double train_frac, double valid_frac,
                                  std::uint64_t seed) {
  if (train_frac <= 0 || valid_frac < 0 || train_frac + valid_frac >= 1.0)
    throw UsageError("stratified_split: bad fractions");
  std::vector<std::size_t> bugs, nonbugs;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == ReporterType::bug ? bugs : nonbugs).push_back(i);
  SplitMix64 rng(seed_mix(seed, 0x5b117));
  shuffle(bugs, rng);
  shuffle(nonbugs, rng);
  FoldSplit split;
  auto deal = [&](const std::vector<std::size_t>& items) {
    std::size_t n_train = static_cast<std::size_t>(
        std::floor(train_frac * static_cast<double>(items.size())));
    std::size_t n_valid = static_cast<std::size_t>(
        std::floor(valid_frac * static_cast<double>(items.size())));
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i < n_train) split.train.push_back(items[i]);
      else if (i < n_train + n_valid) split.valid.push_back(items[i]);
      else split.test.push_back(items[i]);
    }
  };
  deal(bugs);
  deal(nonbugs);
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace bugsift
