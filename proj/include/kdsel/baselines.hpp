#pragma once

// Reference selection rules used for comparison and ablation.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdsel/core_data.hpp"
#include "kdsel/selector.hpp"

namespace kdsel {

enum class BaselineKind {
  Random,              // ceil(ratio * B) uniformly drawn samples
  NoSelection,         // every sample
  EntropyScore,        // ceil(ratio * B) lowest teacher entropy
  TopUncertainty,      // ceil(ratio * B) highest student uncertainty
  FixedConfThreshold,  // confidence >= threshold
  WithoutTeacher,      // adaptive selector, teacher indicator forced to pass
  WithoutStudent,      // adaptive selector, student indicator forced to pass
};

std::string_view to_string(BaselineKind kind);
// Accepts the names printed by to_string. Throws on unknown names.
BaselineKind baseline_kind_from_string(std::string_view name);

// Default ratio grid for the ratio-based kinds.
inline constexpr double kRatioGrid[] = {0.1, 0.3, 0.5, 0.7, 0.9};

struct BaselineSpec {
  BaselineKind kind = BaselineKind::NoSelection;
  std::optional<double> ratio;
  std::optional<double> threshold;
  std::uint64_t rng_seed = 0;

  bool uses_ratio() const noexcept;
  // Throws std::invalid_argument when ratio/threshold presence does not
  // match the kind or a value is out of range.
  void validate() const;
};

// ceil(ratio * batch_size), clamped to [1, batch_size] for positive ratios.
std::size_t ratio_count(double ratio, std::size_t batch_size);

struct SelectorStates {
  const ThresholdState& student;
  const ThresholdState& teacher;
};

// Mask for one batch. The adaptive-selector ablations require `selector`
// (states already updated with this batch); Random draws from `rng`.
std::vector<int> baseline_mask(const BaselineSpec& spec,
                               std::span<const PseudoLabeledSample> batch,
                               std::span<const double> uncertainties, std::mt19937_64& rng,
                               const SelectorStates* selector = nullptr);

}  // namespace kdsel
