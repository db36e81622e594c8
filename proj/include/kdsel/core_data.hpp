#pragma once

// Samples, label sets, probability vectors and the elementary per-sample
// signals (pseudo-label, teacher confidence, entropy).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdsel {

using LabelIndex = std::size_t;
using SampleId = std::int64_t;

// Sum tolerance for a probability vector. Out-of-tolerance input is rejected,
// never renormalized.
inline constexpr double kProbSumTolerance = 1e-6;

class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> names);

  // Names "0", "1", ..., "K-1".
  static LabelSet numbered(std::size_t k);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& operator[](LabelIndex i) const { return names_.at(i); }

 private:
  std::vector<std::string> names_;
};

class ProbDist {
 public:
  // Throws std::invalid_argument if K < 2, an entry is negative or not
  // finite, or the sum is off by more than kProbSumTolerance. The message
  // contains "sum out of tolerance" for the last case.
  explicit ProbDist(std::vector<double> probs);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](LabelIndex i) const noexcept { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }

 private:
  std::vector<double> probs_;
};

struct Sample {
  SampleId id = 0;
  std::vector<double> features;
  std::optional<LabelIndex> gold_label;
};

struct PseudoLabeledSample {
  Sample sample;
  LabelIndex pseudo_label = 0;
  ProbDist teacher_probs;
  double confidence = 0.0;

  // Derives pseudo_label and confidence from the teacher distribution.
  PseudoLabeledSample(Sample s, ProbDist probs);
};

struct DatasetSplit {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<PseudoLabeledSample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  // Train gold labels (when present) may only be used for evaluation.
  bool train_gold_eval_only = true;

  // Throws std::invalid_argument on a violated split invariant: missing gold
  // label in val/test, duplicated id across splits, wrong feature width, or
  // label out of range.
  void validate() const;
};

// Index of the largest entry; ties go to the lowest index.
LabelIndex argmax_label(const ProbDist& p) noexcept;
LabelIndex argmax_label(std::span<const double> values) noexcept;

// Largest entry, in [1/K, 1].
double confidence(const ProbDist& p) noexcept;

// Shannon entropy in nats with 0 ln 0 = 0, in [0, ln K].
double entropy(const ProbDist& p) noexcept;
double entropy(std::span<const double> probs) noexcept;

}  // namespace kdsel
