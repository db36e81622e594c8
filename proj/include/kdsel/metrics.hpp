#pragma once

// Evaluation and reporting: accuracy, macro-F1, reliability binning,
// before/after-selection accuracy, the per-run step ledger and the
// data-efficiency summary derived from it.

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kdsel/core_data.hpp"

namespace kdsel {

// Fraction of positions where preds == golds. Throws on empty or unequal input.
double accuracy(std::span<const LabelIndex> preds, std::span<const LabelIndex> golds);

// Mean over the K classes of 2PR/(P+R). A class with no true positives
// (including one never predicted and never present) contributes 0.
double macro_f1(std::span<const LabelIndex> preds, std::span<const LabelIndex> golds,
                std::size_t num_classes);

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  // Empty bins have no accuracy.
  std::optional<double> accuracy;
};

// Equal-width bins over [lo, hi]; the top edge belongs to the last bin.
// Values outside the range (beyond 1e-9 slack) are rejected, as is n_bins < 2.
std::vector<CalibrationBin> calibration_bins(std::span<const double> values,
                                             std::span<const int> correct,
                                             std::size_t n_bins, double lo, double hi);

struct ThresholdEvalRecord {
  std::size_t step = 0;
  std::size_t batch_size = 0;
  std::size_t selected = 0;
  double teacher_acc_before = 0.0;
  double student_acc_before = 0.0;
  // Absent when nothing was selected.
  std::optional<double> teacher_acc_after;
  std::optional<double> student_acc_after;
  // Per-threshold view: teacher accuracy over samples passing the teacher
  // threshold, student accuracy over samples passing the student threshold.
  std::size_t teacher_selected = 0;
  std::size_t student_selected = 0;
  std::optional<double> teacher_acc_teacher_sel;
  std::optional<double> student_acc_student_sel;
};

// Teacher accuracy compares pseudo-labels with gold labels; student accuracy
// compares student predictions with pseudo-labels. "after" restricts both to
// mask == 1.
ThresholdEvalRecord threshold_evaluation(std::span<const LabelIndex> pseudo_labels,
                                         std::span<const int> mask,
                                         std::span<const LabelIndex> golds,
                                         std::span<const LabelIndex> student_preds);

// Also fills the per-threshold fields from the two raw indicator vectors.
ThresholdEvalRecord threshold_evaluation(std::span<const LabelIndex> pseudo_labels,
                                         std::span<const int> mask,
                                         std::span<const LabelIndex> golds,
                                         std::span<const LabelIndex> student_preds,
                                         std::span<const int> teacher_pass,
                                         std::span<const int> student_pass);

struct StepRecord {
  std::size_t step = 0;  // 1-based training step
  std::size_t epoch = 0;
  std::size_t batch_size = 0;
  std::size_t selected = 0;
  std::size_t cum_selected = 0;
  std::size_t cum_seen = 0;
  double loss = 0.0;
  double min_uncertainty = 0.0;
  double max_uncertainty = 0.0;
  double min_confidence = 0.0;
  double max_confidence = 0.0;
  double student_tau = 0.0;
  double teacher_tau = 0.0;
  std::vector<double> student_local;
  std::vector<double> teacher_local;
  std::vector<double> student_thresholds;
  std::vector<double> teacher_thresholds;
};

struct EvalRecord {
  std::size_t step = 0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
};

class RunLedger {
 public:
  explicit RunLedger(std::size_t num_classes) : num_classes_(num_classes) {}

  // Fills step, cum_selected and cum_seen from the running totals, then
  // appends. Throws if selected > batch_size.
  const StepRecord& append_step(StepRecord rec);
  void append_eval(EvalRecord rec) { evals_.push_back(rec); }
  void append_threshold_eval(ThresholdEvalRecord rec) {
    threshold_evals_.push_back(rec);
  }

  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<StepRecord>& steps() const noexcept { return steps_; }
  const std::vector<EvalRecord>& evals() const noexcept { return evals_; }
  const std::vector<ThresholdEvalRecord>& threshold_evals() const noexcept {
    return threshold_evals_;
  }

 private:
  std::size_t num_classes_;
  std::vector<StepRecord> steps_;
  std::vector<EvalRecord> evals_;
  std::vector<ThresholdEvalRecord> threshold_evals_;
};

struct EfficiencyReport {
  std::size_t total_selected = 0;
  std::size_t total_seen = 0;
  double fraction = 0.0;  // total_selected / total_seen, 0 when nothing seen
};

EfficiencyReport efficiency_report(const RunLedger& ledger);

// Delimited (comma-separated) reports with a fixed header row. Doubles are
// printed in shortest round-trip form; undefined values print as "NA".
void write_ledger_csv(std::ostream& out, const RunLedger& ledger);
void write_thresholds_csv(std::ostream& out, const RunLedger& ledger);
void write_threshold_eval_csv(std::ostream& out, const RunLedger& ledger);
void write_evals_csv(std::ostream& out, const RunLedger& ledger);
void write_calibration_csv(std::ostream& out, const std::string& signal,
                           std::size_t seed, std::span<const CalibrationBin> bins,
                           bool header);

}  // namespace kdsel
