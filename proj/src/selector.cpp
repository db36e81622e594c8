#include "kdsel/selector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace kdsel {

namespace {

void require_batch(std::span<const double> signals) {
  if (signals.empty()) throw std::invalid_argument("threshold update on empty batch");
}

double ema(double lambda, double previous, double current) {
  return lambda * previous + (1.0 - lambda) * current;
}

std::vector<LabelIndex> pseudo_labels_of(std::span<const PseudoLabeledSample> batch) {
  std::vector<LabelIndex> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(s.pseudo_label);
  return out;
}

}  // namespace

ThresholdState ThresholdState::initial(std::size_t num_classes, double lambda,
                                       double beta_local, double beta_global) {
  if (num_classes < 2) throw std::invalid_argument("threshold state needs K >= 2");
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw std::invalid_argument(fmt::format("momentum {} outside (0, 1)", lambda));
  }
  if (!(beta_local >= 0.0) || !(beta_global >= 0.0)) {
    throw std::invalid_argument("threshold exponents must be nonnegative");
  }
  ThresholdState s;
  s.p_hat_local.assign(num_classes, 0.0);
  s.lambda = lambda;
  s.beta_local = beta_local;
  s.beta_global = beta_global;
  return s;
}

ThresholdState update_global(const ThresholdState& state, std::span<const double> signals) {
  require_batch(signals);
  double sum = 0.0;
  for (double v : signals) sum += v;
  const double mean = sum / static_cast<double>(signals.size());
  ThresholdState next = state;
  next.tau_global = ema(state.lambda, state.tau_global, mean);
  ++next.step;
  return next;
}

ThresholdState update_local(const ThresholdState& state, std::span<const double> signals,
                            std::span<const LabelIndex> pseudo_labels) {
  require_batch(signals);
  if (signals.size() != pseudo_labels.size()) {
    throw std::invalid_argument("signal/label length mismatch");
  }
  const std::size_t k = state.num_classes();
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (pseudo_labels[i] >= k) {
      throw std::invalid_argument(fmt::format("pseudo-label {} out of range", pseudo_labels[i]));
    }
    sum[pseudo_labels[i]] += signals[i];
    ++count[pseudo_labels[i]];
  }
  ThresholdState next = state;
  for (std::size_t y = 0; y < k; ++y) {
    if (count[y] == 0) continue;
    next.p_hat_local[y] =
        ema(state.lambda, state.p_hat_local[y], sum[y] / static_cast<double>(count[y]));
  }
  return next;
}

ThresholdState update(const ThresholdState& state, std::span<const double> signals,
                      std::span<const LabelIndex> pseudo_labels) {
  return update_local(update_global(state, signals), signals, pseudo_labels);
}

double max_norm(const ThresholdState& state, LabelIndex y) {
  if (y >= state.num_classes()) {
    throw std::invalid_argument(fmt::format("class {} out of range", y));
  }
  const double top = *std::max_element(state.p_hat_local.begin(), state.p_hat_local.end());
  if (top <= 0.0) return 0.0;
  return state.p_hat_local[y] / top;
}

double final_threshold(const ThresholdState& state, LabelIndex y) {
  // std::pow(0, 0) == 1, which is the rule we want for a disabled factor.
  return std::pow(max_norm(state, y), state.beta_local) *
         std::pow(state.tau_global, state.beta_global);
}

std::vector<double> final_thresholds(const ThresholdState& state) {
  std::vector<double> out(state.num_classes());
  for (std::size_t y = 0; y < out.size(); ++y) out[y] = final_threshold(state, y);
  return out;
}

SelectionResult select(std::span<const PseudoLabeledSample> batch,
                       std::span<const double> uncertainties,
                       const ThresholdState& student_state,
                       const ThresholdState& teacher_state, SelectOptions opts) {
  if (uncertainties.size() != batch.size()) {
    throw std::invalid_argument("batch/uncertainty length mismatch");
  }
  const auto student_thr = final_thresholds(student_state);
  const auto teacher_thr = final_thresholds(teacher_state);
  SelectionResult r;
  r.mask.resize(batch.size());
  r.teacher_pass.resize(batch.size());
  r.student_pass.resize(batch.size());
  r.weights.assign(batch.size(), 1.0);
  r.student_thresholds_used.resize(batch.size());
  r.teacher_thresholds_used.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LabelIndex y = batch[i].pseudo_label;
    r.student_thresholds_used[i] = student_thr.at(y);
    r.teacher_thresholds_used[i] = teacher_thr.at(y);
    r.student_pass[i] = uncertainties[i] >= student_thr[y] ? 1 : 0;
    r.teacher_pass[i] = batch[i].confidence >= teacher_thr[y] ? 1 : 0;
    const bool student_ok = opts.force_student_pass || r.student_pass[i];
    const bool teacher_ok = opts.force_teacher_pass || r.teacher_pass[i];
    r.mask[i] = student_ok && teacher_ok ? 1 : 0;
  }
  return r;
}

std::vector<double> compute_weights(std::span<const double> confidences,
                                    std::span<const double> uncertainties,
                                    std::span<const int> mask, WeightNormalization norm) {
  const std::size_t n = confidences.size();
  if (n == 0) throw std::invalid_argument("weights for empty batch");
  if (uncertainties.size() != n || mask.size() != n) {
    throw std::invalid_argument("weight input length mismatch");
  }
  const bool subset = norm == WeightNormalization::SelectedOnly;
  auto included = [&](std::size_t i) { return !subset || mask[i] != 0; };
  std::size_t members = 0;
  double sum_c = 0.0, sum_u = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!included(i)) continue;
    ++members;
    sum_c += confidences[i];
    sum_u += uncertainties[i];
  }
  if (members == 0) return std::vector<double>(n, 1.0);
  const double uniform = 1.0 / static_cast<double>(members);
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!included(i)) continue;
    const double fc = sum_c > 0.0 ? confidences[i] / sum_c : uniform;
    const double fu = sum_u > 0.0 ? uncertainties[i] / sum_u : uniform;
    w[i] = fc + fu;
  }
  return w;
}

BatchOutcome run_batch(std::span<const PseudoLabeledSample> batch,
                       const StudentParams& params, const ThresholdState& student_state,
                       const ThresholdState& teacher_state, const RunBatchOptions& opts) {
  if (batch.empty()) throw std::invalid_argument("run_batch on empty batch");
  if (student_state.num_classes() != params.num_classes ||
      teacher_state.num_classes() != params.num_classes) {
    throw std::invalid_argument("threshold state class count does not match student");
  }
  BatchOutcome out;
  out.uncertainties.reserve(batch.size());
  out.confidences.reserve(batch.size());
  for (const auto& s : batch) {
    out.uncertainties.push_back(uncertainty(params, s.sample));
    out.confidences.push_back(s.confidence);
  }
  const auto labels = pseudo_labels_of(batch);
  out.student_state = update(student_state, out.uncertainties, labels);
  out.teacher_state = update(teacher_state, out.confidences, labels);

  if (opts.order == UpdateOrder::UpdateThenSelect) {
    out.selection = select(batch, out.uncertainties, out.student_state,
                           out.teacher_state, opts.select);
  } else {
    out.selection =
        select(batch, out.uncertainties, student_state, teacher_state, opts.select);
  }
  if (opts.weighted) {
    out.selection.weights = compute_weights(out.confidences, out.uncertainties,
                                            out.selection.mask, opts.normalization);
  }
  return out;
}

}  // namespace kdsel
