#include "kdsel/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace kdsel {

namespace {

constexpr std::pair<BaselineKind, std::string_view> kNames[] = {
    {BaselineKind::Random, "random"},
    {BaselineKind::NoSelection, "no_ds"},
    {BaselineKind::EntropyScore, "entropy_score"},
    {BaselineKind::TopUncertainty, "top_uncertainty"},
    {BaselineKind::FixedConfThreshold, "fixed_conf_threshold"},
    {BaselineKind::WithoutTeacher, "llkd_wo_tc"},
    {BaselineKind::WithoutStudent, "llkd_wo_su"},
};

// Marks the first `count` indices of `order` (stable order of keys).
std::vector<int> take_first(const std::vector<std::size_t>& order, std::size_t count,
                            std::size_t n) {
  std::vector<int> mask(n, 0);
  for (std::size_t r = 0; r < count; ++r) mask[order[r]] = 1;
  return mask;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

std::string_view to_string(BaselineKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

BaselineKind baseline_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument(fmt::format("unknown baseline '{}'", name));
}

bool BaselineSpec::uses_ratio() const noexcept {
  return kind == BaselineKind::Random || kind == BaselineKind::EntropyScore ||
         kind == BaselineKind::TopUncertainty;
}

void BaselineSpec::validate() const {
  if (uses_ratio() != ratio.has_value()) {
    throw std::invalid_argument(fmt::format(
        "baseline {} {} a ratio", to_string(kind), uses_ratio() ? "requires" : "does not take"));
  }
  if (ratio && !(*ratio > 0.0 && *ratio <= 1.0)) {
    throw std::invalid_argument(fmt::format("ratio {} outside (0, 1]", *ratio));
  }
  const bool needs_threshold = kind == BaselineKind::FixedConfThreshold;
  if (needs_threshold != threshold.has_value()) {
    throw std::invalid_argument(fmt::format(
        "baseline {} {} a threshold", to_string(kind),
        needs_threshold ? "requires" : "does not take"));
  }
}

std::size_t ratio_count(double ratio, std::size_t batch_size) {
  // Guard against products like 0.3 * 10 = 3.0000000000000004.
  const double raw = std::ceil(ratio * static_cast<double>(batch_size) - 1e-9);
  const auto count = static_cast<std::size_t>(std::max(raw, 1.0));
  return std::min(count, batch_size);
}

std::vector<int> baseline_mask(const BaselineSpec& spec,
                               std::span<const PseudoLabeledSample> batch,
                               std::span<const double> uncertainties, std::mt19937_64& rng,
                               const SelectorStates* selector) {
  spec.validate();
  const std::size_t n = batch.size();
  if (uncertainties.size() != n) {
    throw std::invalid_argument("batch/uncertainty length mismatch");
  }
  switch (spec.kind) {
    case BaselineKind::NoSelection:
      return std::vector<int>(n, 1);

    case BaselineKind::Random: {
      // Partial Fisher-Yates.
      auto idx = iota_indices(n);
      const std::size_t count = ratio_count(*spec.ratio, n);
      for (std::size_t r = 0; r < count; ++r) {
        std::uniform_int_distribution<std::size_t> pick(r, n - 1);
        std::swap(idx[r], idx[pick(rng)]);
      }
      return take_first(idx, count, n);
    }

    case BaselineKind::EntropyScore: {
      std::vector<double> h(n);
      for (std::size_t i = 0; i < n; ++i) h[i] = entropy(batch[i].teacher_probs);
      auto idx = iota_indices(n);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return h[a] < h[b]; });
      return take_first(idx, ratio_count(*spec.ratio, n), n);
    }

    case BaselineKind::TopUncertainty: {
      auto idx = iota_indices(n);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return uncertainties[a] > uncertainties[b];
      });
      return take_first(idx, ratio_count(*spec.ratio, n), n);
    }

    case BaselineKind::FixedConfThreshold: {
      std::vector<int> mask(n);
      for (std::size_t i = 0; i < n; ++i) {
        mask[i] = batch[i].confidence >= *spec.threshold ? 1 : 0;
      }
      return mask;
    }

    case BaselineKind::WithoutTeacher:
    case BaselineKind::WithoutStudent: {
      if (!selector) {
        throw std::invalid_argument(
            fmt::format("baseline {} needs selector states", to_string(spec.kind)));
      }
      SelectOptions opts;
      opts.force_teacher_pass = spec.kind == BaselineKind::WithoutTeacher;
      opts.force_student_pass = spec.kind == BaselineKind::WithoutStudent;
      return select(batch, uncertainties, selector->student, selector->teacher, opts).mask;
    }
  }
  throw std::logic_error("unhandled baseline kind");
}

}  // namespace kdsel
