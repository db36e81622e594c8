#include "kdsel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace kdsel {

namespace {

void check_pair(std::span<const LabelIndex> preds, std::span<const LabelIndex> golds) {
  if (preds.empty()) throw std::invalid_argument("no predictions to evaluate");
  if (preds.size() != golds.size()) {
    throw std::invalid_argument(fmt::format(
        "prediction/gold length mismatch: {} vs {}", preds.size(), golds.size()));
  }
}

std::string opt(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string("NA");
}

}  // namespace

double accuracy(std::span<const LabelIndex> preds, std::span<const LabelIndex> golds) {
  check_pair(preds, golds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f1(std::span<const LabelIndex> preds, std::span<const LabelIndex> golds,
                std::size_t num_classes) {
  check_pair(preds, golds);
  std::vector<std::size_t> tp(num_classes, 0), pred_count(num_classes, 0),
      gold_count(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || golds[i] >= num_classes) {
      throw std::invalid_argument(fmt::format("label out of range at position {}", i));
    }
    ++pred_count[preds[i]];
    ++gold_count[golds[i]];
    if (preds[i] == golds[i]) ++tp[preds[i]];
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    // 2PR/(P+R) == 2TP/(pred + gold); zero when TP == 0.
    if (tp[c] > 0) {
      total += 2.0 * static_cast<double>(tp[c]) /
               static_cast<double>(pred_count[c] + gold_count[c]);
    }
  }
  return total / static_cast<double>(num_classes);
}

std::vector<CalibrationBin> calibration_bins(std::span<const double> values,
                                             std::span<const int> correct,
                                             std::size_t n_bins, double lo, double hi) {
  if (n_bins < 2) throw std::invalid_argument("calibration needs at least 2 bins");
  if (!(hi > lo)) throw std::invalid_argument("calibration range is empty");
  if (values.size() != correct.size()) {
    throw std::invalid_argument("calibration values/flags length mismatch");
  }
  constexpr double kSlack = 1e-9;
  const double width = (hi - lo) / static_cast<double>(n_bins);
  std::vector<CalibrationBin> bins(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = lo + width * static_cast<double>(b);
    bins[b].hi = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= lo - kSlack && v <= hi + kSlack)) {
      throw std::invalid_argument(
          fmt::format("value {} outside calibration range [{}, {}]", v, lo, hi));
    }
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
    auto& bin = bins[static_cast<std::size_t>(b)];
    ++bin.count;
    if (correct[i]) ++bin.correct;
  }
  for (auto& bin : bins) {
    if (bin.count > 0) {
      bin.accuracy = static_cast<double>(bin.correct) / static_cast<double>(bin.count);
    }
  }
  return bins;
}

ThresholdEvalRecord threshold_evaluation(std::span<const LabelIndex> pseudo_labels,
                                         std::span<const int> mask,
                                         std::span<const LabelIndex> golds,
                                         std::span<const LabelIndex> student_preds) {
  const std::size_t n = pseudo_labels.size();
  if (n == 0) throw std::invalid_argument("threshold evaluation on empty batch");
  if (mask.size() != n || golds.size() != n || student_preds.size() != n) {
    throw std::invalid_argument("threshold evaluation length mismatch");
  }
  std::size_t teacher_all = 0, student_all = 0, teacher_sel = 0, student_sel = 0,
              selected = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool t_ok = pseudo_labels[i] == golds[i];
    const bool s_ok = student_preds[i] == pseudo_labels[i];
    teacher_all += t_ok;
    student_all += s_ok;
    if (mask[i]) {
      ++selected;
      teacher_sel += t_ok;
      student_sel += s_ok;
    }
  }
  ThresholdEvalRecord rec;
  rec.batch_size = n;
  rec.selected = selected;
  rec.teacher_acc_before = static_cast<double>(teacher_all) / static_cast<double>(n);
  rec.student_acc_before = static_cast<double>(student_all) / static_cast<double>(n);
  if (selected > 0) {
    rec.teacher_acc_after =
        static_cast<double>(teacher_sel) / static_cast<double>(selected);
    rec.student_acc_after =
        static_cast<double>(student_sel) / static_cast<double>(selected);
  }
  return rec;
}

ThresholdEvalRecord threshold_evaluation(std::span<const LabelIndex> pseudo_labels,
                                         std::span<const int> mask,
                                         std::span<const LabelIndex> golds,
                                         std::span<const LabelIndex> student_preds,
                                         std::span<const int> teacher_pass,
                                         std::span<const int> student_pass) {
  auto rec = threshold_evaluation(pseudo_labels, mask, golds, student_preds);
  const std::size_t n = pseudo_labels.size();
  if (teacher_pass.size() != n || student_pass.size() != n) {
    throw std::invalid_argument("threshold evaluation length mismatch");
  }
  std::size_t teacher_hits = 0, student_hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (teacher_pass[i]) {
      ++rec.teacher_selected;
      teacher_hits += pseudo_labels[i] == golds[i];
    }
    if (student_pass[i]) {
      ++rec.student_selected;
      student_hits += student_preds[i] == pseudo_labels[i];
    }
  }
  if (rec.teacher_selected > 0) {
    rec.teacher_acc_teacher_sel =
        static_cast<double>(teacher_hits) / static_cast<double>(rec.teacher_selected);
  }
  if (rec.student_selected > 0) {
    rec.student_acc_student_sel =
        static_cast<double>(student_hits) / static_cast<double>(rec.student_selected);
  }
  return rec;
}

const StepRecord& RunLedger::append_step(StepRecord rec) {
  if (rec.selected > rec.batch_size) {
    throw std::invalid_argument("selected count exceeds batch size");
  }
  const std::size_t prev_sel = steps_.empty() ? 0 : steps_.back().cum_selected;
  const std::size_t prev_seen = steps_.empty() ? 0 : steps_.back().cum_seen;
  rec.step = steps_.size() + 1;
  rec.cum_selected = prev_sel + rec.selected;
  rec.cum_seen = prev_seen + rec.batch_size;
  steps_.push_back(std::move(rec));
  return steps_.back();
}

EfficiencyReport efficiency_report(const RunLedger& ledger) {
  EfficiencyReport r;
  for (const auto& s : ledger.steps()) {
    r.total_selected += s.selected;
    r.total_seen += s.batch_size;
  }
  if (r.total_seen > 0) {
    r.fraction =
        static_cast<double>(r.total_selected) / static_cast<double>(r.total_seen);
  }
  return r;
}

void write_ledger_csv(std::ostream& out, const RunLedger& ledger) {
  out << "step,epoch,batch_size,selected,cum_selected,cum_seen,loss,"
         "min_uncertainty,max_uncertainty,min_confidence,max_confidence,"
         "student_tau,teacher_tau\n";
  for (const auto& s : ledger.steps()) {
    fmt::print(out, "{},{},{},{},{},{},{},{},{},{},{},{},{}\n", s.step, s.epoch,
               s.batch_size, s.selected, s.cum_selected, s.cum_seen, s.loss,
               s.min_uncertainty, s.max_uncertainty, s.min_confidence,
               s.max_confidence, s.student_tau, s.teacher_tau);
  }
}

void write_thresholds_csv(std::ostream& out, const RunLedger& ledger) {
  out << "step,class,student_tau,student_local,student_threshold,"
         "teacher_tau,teacher_local,teacher_threshold\n";
  for (const auto& s : ledger.steps()) {
    for (std::size_t c = 0; c < s.student_thresholds.size(); ++c) {
      fmt::print(out, "{},{},{},{},{},{},{},{}\n", s.step, c, s.student_tau,
                 s.student_local[c], s.student_thresholds[c], s.teacher_tau,
                 s.teacher_local[c], s.teacher_thresholds[c]);
    }
  }
}

void write_threshold_eval_csv(std::ostream& out, const RunLedger& ledger) {
  out << "step,batch_size,selected,teacher_acc_before,teacher_acc_after,"
         "student_acc_before,student_acc_after,teacher_selected,"
         "teacher_acc_teacher_sel,student_selected,student_acc_student_sel\n";
  for (const auto& r : ledger.threshold_evals()) {
    fmt::print(out, "{},{},{},{},{},{},{},{},{},{},{}\n", r.step, r.batch_size, r.selected,
               r.teacher_acc_before, opt(r.teacher_acc_after), r.student_acc_before,
               opt(r.student_acc_after), r.teacher_selected, opt(r.teacher_acc_teacher_sel),
               r.student_selected, opt(r.student_acc_student_sel));
  }
}

void write_evals_csv(std::ostream& out, const RunLedger& ledger) {
  out << "step,val_accuracy,val_macro_f1\n";
  for (const auto& e : ledger.evals()) {
    fmt::print(out, "{},{},{}\n", e.step, e.val_accuracy, e.val_macro_f1);
  }
}

void write_calibration_csv(std::ostream& out, const std::string& signal,
                           std::size_t seed, std::span<const CalibrationBin> bins,
                           bool header) {
  if (header) out << "signal,seed,bin_lo,bin_hi,count,accuracy\n";
  for (const auto& b : bins) {
    fmt::print(out, "{},{},{},{},{},{}\n", signal, seed, b.lo, b.hi, b.count,
               opt(b.accuracy));
  }
}

}  // namespace kdsel
