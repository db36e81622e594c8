#include "kdsel/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <fmt/format.h>

namespace kdsel {

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) {
    throw std::invalid_argument("label set needs at least 2 labels");
  }
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) {
      throw std::invalid_argument(fmt::format("duplicate label name '{}'", n));
    }
  }
}

LabelSet LabelSet::numbered(std::size_t k) {
  std::vector<std::string> names;
  names.reserve(k);
  for (std::size_t i = 0; i < k; ++i) names.push_back(std::to_string(i));
  return LabelSet(std::move(names));
}

ProbDist::ProbDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) {
    throw std::invalid_argument("probability vector needs at least 2 entries");
  }
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) {
      throw std::invalid_argument(
          fmt::format("probability entry {} is negative or not finite", p));
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbSumTolerance) {
    throw std::invalid_argument(
        fmt::format("probability sum out of tolerance: {}", sum));
  }
}

PseudoLabeledSample::PseudoLabeledSample(Sample s, ProbDist probs)
    : sample(std::move(s)),
      pseudo_label(argmax_label(probs)),
      teacher_probs(std::move(probs)),
      confidence(kdsel::confidence(teacher_probs)) {}

void DatasetSplit::validate() const {
  if (num_classes < 2) throw std::invalid_argument("dataset needs K >= 2");
  std::unordered_set<SampleId> ids;
  auto check = [&](const Sample& s, const char* split, bool need_gold) {
    if (s.features.size() != dim) {
      throw std::invalid_argument(fmt::format(
          "{} sample {} has {} features, expected {}", split, s.id,
          s.features.size(), dim));
    }
    if (need_gold && !s.gold_label) {
      throw std::invalid_argument(
          fmt::format("{} sample {} has no gold label", split, s.id));
    }
    if (s.gold_label && *s.gold_label >= num_classes) {
      throw std::invalid_argument(
          fmt::format("{} sample {} gold label out of range", split, s.id));
    }
    if (!ids.insert(s.id).second) {
      throw std::invalid_argument(
          fmt::format("sample id {} appears more than once", s.id));
    }
  };
  for (const auto& t : train) {
    check(t.sample, "train", false);
    if (t.teacher_probs.size() != num_classes) {
      throw std::invalid_argument(fmt::format(
          "train sample {} teacher vector has wrong length", t.sample.id));
    }
  }
  for (const auto& s : val) check(s, "val", true);
  for (const auto& s : test) check(s, "test", true);
}

LabelIndex argmax_label(std::span<const double> values) noexcept {
  LabelIndex best = 0;
  for (LabelIndex i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

LabelIndex argmax_label(const ProbDist& p) noexcept {
  return argmax_label(p.values());
}

double confidence(const ProbDist& p) noexcept {
  return p[argmax_label(p)];
}

double entropy(std::span<const double> probs) noexcept {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  // Rounding can push a one-hot or uniform input just outside [0, ln K].
  return std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
}

double entropy(const ProbDist& p) noexcept { return entropy(p.values()); }

}  // namespace kdsel
