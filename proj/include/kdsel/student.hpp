#pragma once

// Linear softmax student: p(y|x) = softmax(W x + b), trained by plain SGD on
// the masked, optionally weighted, pseudo-label cross-entropy.

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "kdsel/core_data.hpp"

namespace kdsel {

struct StudentParams {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // row-major K x d
  std::vector<double> bias;     // K
  double learning_rate = 0.1;

  // All-zero parameters: uniform predictions, maximal entropy.
  static StudentParams zeros(std::size_t num_classes, std::size_t dim,
                             double learning_rate);

  double& weight(LabelIndex c, std::size_t j) { return weights[c * dim + j]; }
  double weight(LabelIndex c, std::size_t j) const { return weights[c * dim + j]; }

  // Throws std::invalid_argument on shape mismatch, non-finite entries or a
  // non-positive learning rate.
  void validate() const;
};

struct Gradient {
  std::vector<double> weights;
  std::vector<double> bias;
};

struct EvalResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

std::vector<double> logits(const StudentParams& params, std::span<const double> features);

// Max-shifted softmax of the logits. Throws on feature-width mismatch.
ProbDist forward(const StudentParams& params, std::span<const double> features);
inline ProbDist forward(const StudentParams& params, const Sample& sample) {
  return forward(params, sample.features);
}

LabelIndex predict(const StudentParams& params, std::span<const double> features);

// Entropy of the student distribution, in [0, ln K].
double uncertainty(const StudentParams& params, const Sample& sample);

// (1/B) sum_i weights_i * mask_i * -ln p(pseudo_label_i | x_i). Divides by
// the full batch size regardless of how many samples are selected.
double batch_loss(const StudentParams& params, std::span<const PseudoLabeledSample> batch,
                  std::span<const int> mask, std::span<const double> weights);

Gradient loss_gradient(const StudentParams& params,
                       std::span<const PseudoLabeledSample> batch,
                       std::span<const int> mask, std::span<const double> weights);

// One SGD step. A fully masked batch returns the parameters unchanged.
StudentParams train_step(const StudentParams& params,
                         std::span<const PseudoLabeledSample> batch,
                         std::span<const int> mask, std::span<const double> weights);

// Accuracy and macro-F1 against gold labels. Throws on empty input or a
// sample without a gold label.
EvalResult evaluate(const StudentParams& params, std::span<const Sample> samples);

// Text checkpoint: "kdsel-student <version>", "K d learning_rate", then K*d
// weights (row-major) and K biases, one value per line.
void save_checkpoint(std::ostream& out, const StudentParams& params);
StudentParams load_checkpoint(std::istream& in);

}  // namespace kdsel
