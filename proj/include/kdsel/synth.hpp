#pragma once

// Seeded Gaussian-cluster classification data with gold labels on every split.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "kdsel/core_data.hpp"

namespace kdsel {

struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t dim = 20;
  std::size_t n_train = 5000;
  std::size_t n_val = 500;
  std::size_t n_test = 2000;
  // Minimum pairwise center distance, in within-class standard deviations.
  double class_separation = 2.0;
  // Optional per-class proportions (normalized internally); balanced if empty.
  std::vector<double> class_proportions;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Samples with gold labels; the teacher turns `train` into pseudo-labeled data.
struct LabeledData {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct ClusterCenters {
  std::vector<std::vector<double>> centers;  // K x d
};

// Unit-variance isotropic clusters around centers with pairwise distance >=
// class_separation. Ids run 0.. across train, val, test in that order.
// Throws std::runtime_error if centers cannot be placed (suggests a larger d).
LabeledData generate(const SynthConfig& cfg, ClusterCenters* centers_out = nullptr);

// Per-class label counts for a split of n samples: round-robin when balanced,
// largest-remainder allocation for explicit proportions.
std::vector<std::size_t> class_counts(std::size_t n, std::size_t num_classes,
                                      const std::vector<double>& proportions);

// Delimited dump:
//   # kdsel dataset v1
//   K,d,n_train,n_val,n_test,seed
//   <values>
//   id,gold,x0,...,x{d-1}
//   <rows: train, then val, then test>
// Missing gold labels are written as -1.
void write_dataset(std::ostream& out, const LabeledData& data);
LabeledData read_dataset(std::istream& in);
LabeledData read_dataset(const std::filesystem::path& path);

}  // namespace kdsel
