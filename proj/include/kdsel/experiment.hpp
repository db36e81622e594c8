#pragma once

// Config-driven training runs: data + teacher preparation, the epoch/batch
// loop with selection, validation-based model selection, report files, and
// hyper-parameter sweeps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kdsel/baselines.hpp"
#include "kdsel/core_data.hpp"
#include "kdsel/metrics.hpp"
#include "kdsel/selector.hpp"
#include "kdsel/student.hpp"
#include "kdsel/synth.hpp"
#include "kdsel/teacher.hpp"

namespace kdsel {

struct MethodSpec {
  enum class Kind { Llkd, LlkdWeighted, Baseline };
  Kind kind = Kind::Llkd;
  BaselineSpec baseline;  // used when kind == Baseline
  SelectOptions force;    // ablation switches for the adaptive selector

  // "llkd", "llkd_w", "no_ds", "random:0.3", "entropy_score:0.5",
  // "top_uncertainty:0.5", "fixed_conf_threshold:0.8", "llkd_wo_tc", "llkd_wo_su".
  static MethodSpec parse(const std::string& text);

  // File-safe name, e.g. "llkd", "random_0.3", "llkd_notc_nosu".
  std::string name() const;
  void validate() const;
};

struct SelectorHyper {
  double lambda_s = 0.9;
  double lambda_t = 0.9;
  double beta_s1 = 1.0;  // student local exponent
  double beta_s2 = 1.0;  // student global exponent
  double beta_t1 = 1.0;  // teacher local exponent
  double beta_t2 = 1.0;  // teacher global exponent
  UpdateOrder order = UpdateOrder::UpdateThenSelect;
  WeightNormalization normalization = WeightNormalization::FullBatch;
};

struct SweepGrid {
  std::vector<double> lambda_s, lambda_t, beta_s1, beta_s2, beta_t1, beta_t2;
  bool empty() const noexcept;
};

struct ExperimentConfig {
  // Exactly one data source and one teacher source.
  std::optional<SynthConfig> synthetic;
  std::optional<std::filesystem::path> dataset_path;
  std::optional<SimulatedTeacherConfig> simulated_teacher;
  std::optional<std::filesystem::path> teacher_path;

  MethodSpec method;
  double learning_rate = 0.1;
  std::size_t epochs = 6;
  std::size_t batch_size = 32;
  SelectorHyper selector;
  std::vector<std::uint64_t> seeds{0};
  std::size_t eval_every = 100;
  std::size_t threshold_eval_every = 100;
  std::size_t calibration_bins = 10;
  std::filesystem::path output_dir = "out";
  SweepGrid sweep;

  void validate() const;
};

// Parses the JSON config document. Unknown keys anywhere are errors. Relative
// paths are resolved against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Per-seed stream derivation (splitmix64 over base, seed and a stream tag).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t seed, std::uint64_t stream);

// Dataset with pseudo-labeled train split for one seed.
DatasetSplit prepare_data(const ExperimentConfig& cfg, std::uint64_t seed);

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  RunLedger ledger{0};
  EvalResult best_val;
  std::size_t best_step = 0;
  EvalResult test;
  EfficiencyReport efficiency;
  StudentParams best_params;
  std::vector<CalibrationBin> teacher_calibration;
  std::vector<CalibrationBin> student_calibration;
};

// One training run on prepared data. Throws std::runtime_error on a
// non-finite loss after writing the offending batch to
// <output_dir>/nan_batch_<method>_seed<seed>.csv.
RunResult train_run(const ExperimentConfig& cfg, const DatasetSplit& data,
                    std::uint64_t seed);

struct ExperimentResult {
  std::vector<RunResult> runs;
};

// All seeds; when write_outputs is set, writes per-run ledgers plus
// summary.csv, summary_stats.csv and calibration.csv under output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs = true);

struct SummaryRow {
  std::string method;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
  double val_accuracy = 0.0;
  std::size_t selected = 0;
  std::size_t seen = 0;
  double percentage = 0.0;
};

struct SummaryStats {
  std::string method;
  std::size_t runs = 0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double macro_f1_mean = 0.0, macro_f1_std = 0.0;
  double selected_mean = 0.0;
  double percentage_mean = 0.0;
};

SummaryRow summarize(const RunResult& run);
// Groups by method in first-appearance order; std is the sample standard
// deviation (0 for a single run).
std::vector<SummaryStats> aggregate(const std::vector<SummaryRow>& rows);

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(std::istream& in);
void write_summary_stats_csv(std::ostream& out, const std::vector<SummaryStats>& stats);

struct SweepRow {
  SelectorHyper hyper;
  double val_accuracy = 0.0;  // mean over seeds of the best validation accuracy
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
  bool best = false;
};

// Cartesian product of the grid (empty axes keep the base value); the first
// row with the highest validation accuracy is flagged best.
std::vector<SweepRow> sweep(const ExperimentConfig& cfg, bool write_outputs = true);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace kdsel
