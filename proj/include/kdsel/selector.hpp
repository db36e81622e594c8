#pragma once

// Adaptive dual-threshold sample selection.
//
// Two ThresholdState instances track the learning status: one over student
// uncertainty (entropy of the student prediction), one over teacher
// confidence. Each keeps a global EMA of the batch-mean signal and a per-class
// EMA of the class-conditional batch mean, keyed by pseudo-label. The class
// threshold is
//
//   (local[y] / max_y' local[y'])^beta_local * global^beta_global
//
// and a sample is kept iff its uncertainty and its confidence both reach the
// thresholds of its pseudo-label class.

#include <cstddef>
#include <span>
#include <vector>

#include "kdsel/core_data.hpp"
#include "kdsel/student.hpp"

namespace kdsel {

struct ThresholdState {
  double tau_global = 0.0;
  std::vector<double> p_hat_local;
  double lambda = 0.9;
  double beta_local = 1.0;
  double beta_global = 1.0;
  std::size_t step = 0;

  // Cold-start state: zero global and local parts, step 0. Throws if
  // lambda is outside (0, 1), a beta is negative, or K < 2.
  static ThresholdState initial(std::size_t num_classes, double lambda,
                                double beta_local, double beta_global);

  std::size_t num_classes() const noexcept { return p_hat_local.size(); }
};

// Global EMA with the batch mean; advances the step counter.
ThresholdState update_global(const ThresholdState& state, std::span<const double> signals);

// Per-class EMA with the class-conditional batch mean. Classes absent from the
// batch keep their previous value. Does not advance the step counter.
ThresholdState update_local(const ThresholdState& state, std::span<const double> signals,
                            std::span<const LabelIndex> pseudo_labels);

// update_global followed by update_local: one batch, one step.
ThresholdState update(const ThresholdState& state, std::span<const double> signals,
                      std::span<const LabelIndex> pseudo_labels);

// Normalized local part. All-zero local vectors normalize to 0.
double max_norm(const ThresholdState& state, LabelIndex y);

// Final class threshold; 0^0 is taken as 1 so a zero beta disables its factor.
double final_threshold(const ThresholdState& state, LabelIndex y);
std::vector<double> final_thresholds(const ThresholdState& state);

struct SelectOptions {
  // Ablation switches: a forced indicator always passes.
  bool force_teacher_pass = false;
  bool force_student_pass = false;
};

struct SelectionResult {
  std::vector<int> mask;
  // Raw indicator outcomes before any forcing.
  std::vector<int> teacher_pass;
  std::vector<int> student_pass;
  std::vector<double> weights;
  std::vector<double> student_thresholds_used;
  std::vector<double> teacher_thresholds_used;
};

// Mask only; weights are all ones.
SelectionResult select(std::span<const PseudoLabeledSample> batch,
                       std::span<const double> uncertainties,
                       const ThresholdState& student_state,
                       const ThresholdState& teacher_state, SelectOptions opts = {});

enum class WeightNormalization {
  FullBatch,     // normalize each signal over all B samples
  SelectedOnly,  // normalize over mask == 1 samples only
};

// weight_i = C_i / sum C + U_i / sum U. A zero sum makes that term uniform.
// With SelectedOnly, unselected samples get weight 0 and the sums run over the
// selected subset (all ones if nothing is selected).
std::vector<double> compute_weights(std::span<const double> confidences,
                                    std::span<const double> uncertainties,
                                    std::span<const int> mask,
                                    WeightNormalization norm = WeightNormalization::FullBatch);

enum class UpdateOrder {
  UpdateThenSelect,
  SelectThenUpdate,
};

struct RunBatchOptions {
  bool weighted = false;
  WeightNormalization normalization = WeightNormalization::FullBatch;
  UpdateOrder order = UpdateOrder::UpdateThenSelect;
  SelectOptions select;
};

struct BatchOutcome {
  SelectionResult selection;
  std::vector<double> uncertainties;
  std::vector<double> confidences;
  ThresholdState student_state;
  ThresholdState teacher_state;
};

// Student uncertainties from the current (pre-update) parameters, both EMA
// updates, the mask, and the weights. Deterministic.
BatchOutcome run_batch(std::span<const PseudoLabeledSample> batch,
                       const StudentParams& params, const ThresholdState& student_state,
                       const ThresholdState& teacher_state, const RunBatchOptions& opts = {});

}  // namespace kdsel
