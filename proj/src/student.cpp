#include "kdsel/student.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "kdsel/metrics.hpp"

namespace kdsel {

namespace {

constexpr int kCheckpointVersion = 1;

void check_width(const StudentParams& params, std::span<const double> features) {
  if (features.size() != params.dim) {
    throw std::invalid_argument(fmt::format(
        "feature width {} does not match student dimension {}", features.size(),
        params.dim));
  }
}

void check_batch(std::span<const PseudoLabeledSample> batch, std::span<const int> mask,
                 std::span<const double> weights) {
  if (mask.size() != batch.size() || weights.size() != batch.size()) {
    throw std::invalid_argument(fmt::format(
        "batch/mask/weights length mismatch: {}/{}/{}", batch.size(), mask.size(),
        weights.size()));
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument(fmt::format("sample weight {} is negative", w));
    }
  }
}

// Shifted logits and their log-partition: log p_c = shifted[c] - log_z.
struct LogSoftmax {
  std::vector<double> shifted;
  double log_z = 0.0;
};

LogSoftmax log_softmax(const StudentParams& params, std::span<const double> features) {
  LogSoftmax out;
  out.shifted = logits(params, features);
  const double top = *std::max_element(out.shifted.begin(), out.shifted.end());
  double z = 0.0;
  for (double& l : out.shifted) {
    l -= top;
    z += std::exp(l);
  }
  out.log_z = std::log(z);
  return out;
}

}  // namespace

StudentParams StudentParams::zeros(std::size_t num_classes, std::size_t dim,
                                   double learning_rate) {
  StudentParams p;
  p.num_classes = num_classes;
  p.dim = dim;
  p.weights.assign(num_classes * dim, 0.0);
  p.bias.assign(num_classes, 0.0);
  p.learning_rate = learning_rate;
  p.validate();
  return p;
}

void StudentParams::validate() const {
  if (num_classes < 2) throw std::invalid_argument("student needs K >= 2");
  if (weights.size() != num_classes * dim || bias.size() != num_classes) {
    throw std::invalid_argument("student parameter shape mismatch");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be positive");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(weights.begin(), weights.end(), finite) ||
      !std::all_of(bias.begin(), bias.end(), finite)) {
    throw std::invalid_argument("student parameters contain non-finite values");
  }
}

std::vector<double> logits(const StudentParams& params, std::span<const double> features) {
  check_width(params, features);
  std::vector<double> out(params.bias);
  for (std::size_t c = 0; c < params.num_classes; ++c) {
    const double* row = params.weights.data() + c * params.dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < params.dim; ++j) acc += row[j] * features[j];
    out[c] += acc;
  }
  return out;
}

ProbDist forward(const StudentParams& params, std::span<const double> features) {
  auto ls = log_softmax(params, features);
  const double z = std::exp(ls.log_z);
  for (double& l : ls.shifted) l = std::exp(l) / z;
  return ProbDist(std::move(ls.shifted));
}

LabelIndex predict(const StudentParams& params, std::span<const double> features) {
  return argmax_label(logits(params, features));
}

double uncertainty(const StudentParams& params, const Sample& sample) {
  return entropy(forward(params, sample));
}

double batch_loss(const StudentParams& params, std::span<const PseudoLabeledSample> batch,
                  std::span<const int> mask, std::span<const double> weights) {
  check_batch(batch, mask, weights);
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!mask[i]) continue;
    const auto ls = log_softmax(params, batch[i].sample.features);
    const double nll = ls.log_z - ls.shifted[batch[i].pseudo_label];
    total += weights[i] * nll;
  }
  return total / static_cast<double>(batch.size());
}

Gradient loss_gradient(const StudentParams& params,
                       std::span<const PseudoLabeledSample> batch,
                       std::span<const int> mask, std::span<const double> weights) {
  check_batch(batch, mask, weights);
  Gradient g{std::vector<double>(params.weights.size(), 0.0),
             std::vector<double>(params.bias.size(), 0.0)};
  const double inv_b = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!mask[i] || weights[i] == 0.0) continue;
    const auto& x = batch[i].sample.features;
    const auto p = forward(params, x);
    const double coef = weights[i] * inv_b;
    for (std::size_t c = 0; c < params.num_classes; ++c) {
      const double delta =
          coef * (p[c] - (c == batch[i].pseudo_label ? 1.0 : 0.0));
      double* row = g.weights.data() + c * params.dim;
      for (std::size_t j = 0; j < params.dim; ++j) row[j] += delta * x[j];
      g.bias[c] += delta;
    }
  }
  return g;
}

StudentParams train_step(const StudentParams& params,
                         std::span<const PseudoLabeledSample> batch,
                         std::span<const int> mask, std::span<const double> weights) {
  const auto g = loss_gradient(params, batch, mask, weights);
  StudentParams next = params;
  for (std::size_t k = 0; k < next.weights.size(); ++k) {
    next.weights[k] -= params.learning_rate * g.weights[k];
  }
  for (std::size_t c = 0; c < next.bias.size(); ++c) {
    next.bias[c] -= params.learning_rate * g.bias[c];
  }
  return next;
}

EvalResult evaluate(const StudentParams& params, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("evaluation set is empty");
  std::vector<LabelIndex> preds, golds;
  preds.reserve(samples.size());
  golds.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.gold_label) {
      throw std::invalid_argument(
          fmt::format("evaluation sample {} has no gold label", s.id));
    }
    preds.push_back(predict(params, s.features));
    golds.push_back(*s.gold_label);
  }
  return {accuracy(preds, golds), macro_f1(preds, golds, params.num_classes)};
}

void save_checkpoint(std::ostream& out, const StudentParams& params) {
  fmt::print(out, "kdsel-student {}\n{} {} {}\n", kCheckpointVersion,
             params.num_classes, params.dim, params.learning_rate);
  for (double w : params.weights) fmt::print(out, "{}\n", w);
  for (double b : params.bias) fmt::print(out, "{}\n", b);
}

StudentParams load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "kdsel-student") {
    throw std::runtime_error("not a student checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw std::runtime_error(fmt::format("unsupported checkpoint version {}", version));
  }
  StudentParams p;
  if (!(in >> p.num_classes >> p.dim >> p.learning_rate)) {
    throw std::runtime_error("truncated checkpoint header");
  }
  p.weights.resize(p.num_classes * p.dim);
  p.bias.resize(p.num_classes);
  for (double& w : p.weights) {
    if (!(in >> w)) throw std::runtime_error("truncated checkpoint weights");
  }
  for (double& b : p.bias) {
    if (!(in >> b)) throw std::runtime_error("truncated checkpoint bias");
  }
  p.validate();
  return p;
}

}  // namespace kdsel
