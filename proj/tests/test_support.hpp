#pragma once

// Small builders shared by the unit tests.

#include <random>
#include <vector>

#include "kdsel/core_data.hpp"

namespace kdsel::testing {

inline Sample make_sample(SampleId id, std::vector<double> features,
                          std::optional<LabelIndex> gold = std::nullopt) {
  Sample s;
  s.id = id;
  s.features = std::move(features);
  s.gold_label = gold;
  return s;
}

inline PseudoLabeledSample make_pls(SampleId id, std::vector<double> features,
                                    std::vector<double> probs,
                                    std::optional<LabelIndex> gold = std::nullopt) {
  return PseudoLabeledSample(make_sample(id, std::move(features), gold),
                             ProbDist(std::move(probs)));
}

// Random probability vector of length k from normalized exponentials.
inline std::vector<double> random_probs(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  double sum = 0.0;
  for (double& v : p) sum += (v = e(rng));
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n,
                                         double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

}  // namespace kdsel::testing
