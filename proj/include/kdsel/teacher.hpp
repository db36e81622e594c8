#pragma once

// Pseudo-label sources: a calibrated simulated teacher, and a reader/writer
// for externally computed teacher probability files.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "kdsel/core_data.hpp"

namespace kdsel {

struct SimulatedTeacherConfig {
  // Target marginal pseudo-label accuracy, in (1/K, 1].
  double base_accuracy = 0.7;
  // Slope of the logistic link between confidence and correctness, per
  // standard deviation of the confidence distribution. 0 = uncorrelated.
  double calibration_strength = 2.0;
  // Beta(alpha, beta) shape of drawn confidences, rescaled onto [1/K, 1].
  double confidence_alpha = 2.0;
  double confidence_beta = 2.0;
  std::uint64_t rng_seed = 0;

  void validate(std::size_t num_classes) const;
};

// P(pseudo-label correct | confidence c) = logistic(shift + strength * z(c)),
// z the standardized confidence; shift is solved so the average over the
// confidence distribution equals base_accuracy.
class CorrectnessModel {
 public:
  CorrectnessModel(const SimulatedTeacherConfig& cfg, std::size_t num_classes);

  double probability(double confidence) const;
  // Average of probability() over the confidence distribution, by quantile
  // quadrature. Equals base_accuracy after construction.
  double marginal_accuracy() const;

  double mean_confidence() const noexcept { return mean_; }
  double sd_confidence() const noexcept { return sd_; }
  double shift() const noexcept { return shift_; }

 private:
  double average_with_shift(double shift) const;

  double alpha_, beta_, strength_, floor_;
  double mean_ = 0.0, sd_ = 0.0, shift_ = 0.0;
  bool always_correct_ = false;
  std::vector<double> quadrature_nodes_;
};

// Mass c on `label`, (1 - c)/(K - 1) on every other label.
ProbDist teacher_distribution(double confidence, LabelIndex label, std::size_t num_classes);

// Deterministic in (samples, cfg); each sample's draws come from an RNG
// stream derived from (rng_seed, sample id). Throws if a sample has no gold
// label or the config is out of range.
std::vector<PseudoLabeledSample> simulate_teacher(std::span<const Sample> samples,
                                                  const SimulatedTeacherConfig& cfg,
                                                  std::size_t num_classes);

// External teacher file, newline-delimited JSON:
//   {"K": 3, "labels": ["a", "b", "c"]}                 header
//   {"id": 17, "probs": [0.1, 0.7, 0.2], "pseudo_label": 1}
// pseudo_label is optional; when given it must equal the argmax.
struct ExternalTeacherRecord {
  SampleId id = 0;
  ProbDist probs;
};

struct ExternalTeacherFile {
  LabelSet labels;
  std::vector<ExternalTeacherRecord> records;
};

// Errors name the offending line, e.g. "line 3: label/argmax mismatch".
ExternalTeacherFile read_external(std::istream& in);
ExternalTeacherFile read_external(const std::filesystem::path& path);

// Pairs each sample with its record by id, preserving sample order. Throws if
// a sample has no record.
std::vector<PseudoLabeledSample> attach_teacher(std::span<const Sample> samples,
                                                const ExternalTeacherFile& file);

// Reads the file and returns pseudo-labeled samples with ids only (no
// features); use attach_teacher to join with a dataset.
std::vector<PseudoLabeledSample> ingest_external(const std::filesystem::path& path);

void write_external(std::ostream& out, const LabelSet& labels,
                    std::span<const PseudoLabeledSample> samples);

}  // namespace kdsel
