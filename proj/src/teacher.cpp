#include "kdsel/teacher.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace kdsel {

namespace {

using json = nlohmann::json;

constexpr std::size_t kQuadratureNodes = 4000;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::mt19937_64 sample_stream(std::uint64_t seed, SampleId id) {
  const auto uid = static_cast<std::uint64_t>(id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(uid), static_cast<std::uint32_t>(uid >> 32),
                    0x7eac4e5u};
  return std::mt19937_64(seq);
}

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
  throw std::runtime_error(fmt::format("line {}: {}", line, what));
}

}  // namespace

void SimulatedTeacherConfig::validate(std::size_t num_classes) const {
  if (num_classes < 2) throw std::invalid_argument("teacher needs K >= 2");
  const double floor = 1.0 / static_cast<double>(num_classes);
  if (!(base_accuracy > floor && base_accuracy <= 1.0)) {
    throw std::invalid_argument(
        fmt::format("base_accuracy {} outside (1/K, 1]", base_accuracy));
  }
  if (!(calibration_strength >= 0.0) || !std::isfinite(calibration_strength)) {
    throw std::invalid_argument("calibration_strength must be >= 0");
  }
  if (!(confidence_alpha > 0.0) || !(confidence_beta > 0.0)) {
    throw std::invalid_argument("confidence shape parameters must be positive");
  }
}

CorrectnessModel::CorrectnessModel(const SimulatedTeacherConfig& cfg,
                                   std::size_t num_classes)
    : alpha_(cfg.confidence_alpha),
      beta_(cfg.confidence_beta),
      strength_(cfg.calibration_strength),
      floor_(1.0 / static_cast<double>(num_classes)) {
  cfg.validate(num_classes);
  const double ab = alpha_ + beta_;
  const double span = 1.0 - floor_;
  mean_ = floor_ + span * alpha_ / ab;
  sd_ = span * std::sqrt(alpha_ * beta_ / (ab * ab * (ab + 1.0)));

  quadrature_nodes_.resize(kQuadratureNodes);
  for (std::size_t i = 0; i < kQuadratureNodes; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(kQuadratureNodes);
    quadrature_nodes_[i] = floor_ + span * boost::math::ibeta_inv(alpha_, beta_, u);
  }

  if (cfg.base_accuracy >= 1.0) {
    always_correct_ = true;
    return;
  }
  const double target = cfg.base_accuracy;
  auto gap = [&](double s) { return average_with_shift(s) - target; };
  double lo = -1.0, hi = 1.0;
  while (gap(lo) > 0.0) lo *= 2.0;
  while (gap(hi) < 0.0) hi *= 2.0;
  boost::math::tools::eps_tolerance<double> tol(50);
  const auto [a, b] = boost::math::tools::bisect(gap, lo, hi, tol);
  shift_ = 0.5 * (a + b);
}

double CorrectnessModel::probability(double confidence) const {
  if (always_correct_) return 1.0;
  return logistic(shift_ + strength_ * (confidence - mean_) / sd_);
}

double CorrectnessModel::average_with_shift(double shift) const {
  double total = 0.0;
  for (double c : quadrature_nodes_) total += logistic(shift + strength_ * (c - mean_) / sd_);
  return total / static_cast<double>(quadrature_nodes_.size());
}

double CorrectnessModel::marginal_accuracy() const {
  return always_correct_ ? 1.0 : average_with_shift(shift_);
}

ProbDist teacher_distribution(double confidence, LabelIndex label, std::size_t num_classes) {
  if (label >= num_classes) throw std::invalid_argument("teacher label out of range");
  const double rest = (1.0 - confidence) / static_cast<double>(num_classes - 1);
  std::vector<double> p(num_classes, rest);
  p[label] = confidence;
  return ProbDist(std::move(p));
}

std::vector<PseudoLabeledSample> simulate_teacher(std::span<const Sample> samples,
                                                  const SimulatedTeacherConfig& cfg,
                                                  std::size_t num_classes) {
  const CorrectnessModel link(cfg, num_classes);
  const double floor = 1.0 / static_cast<double>(num_classes);
  std::vector<PseudoLabeledSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.gold_label) {
      throw std::invalid_argument(
          fmt::format("simulated teacher needs a gold label (sample {})", s.id));
    }
    const LabelIndex gold = *s.gold_label;
    if (gold >= num_classes) throw std::invalid_argument("gold label out of range");

    auto rng = sample_stream(cfg.rng_seed, s.id);
    std::gamma_distribution<double> ga(cfg.confidence_alpha, 1.0);
    std::gamma_distribution<double> gb(cfg.confidence_beta, 1.0);
    const double xa = ga(rng);
    const double xb = gb(rng);
    double x = xa + xb > 0.0 ? xa / (xa + xb) : 0.5;
    // Keep the chosen label a strict maximum.
    x = std::clamp(x, 1e-9, 1.0);
    const double c = floor + (1.0 - floor) * x;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    LabelIndex label = gold;
    if (unit(rng) >= link.probability(c)) {
      std::uniform_int_distribution<std::size_t> wrong(0, num_classes - 2);
      label = wrong(rng);
      if (label >= gold) ++label;
    }
    out.emplace_back(s, teacher_distribution(c, label, num_classes));
  }
  return out;
}

ExternalTeacherFile read_external(std::istream& in) {
  std::string text;
  std::size_t line_no = 0;
  std::optional<LabelSet> labels;
  std::size_t k = 0;
  std::vector<ExternalTeacherRecord> records;
  std::unordered_map<SampleId, std::size_t> seen;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      fail_line(line_no, fmt::format("malformed record: {}", e.what()));
    }
    if (!doc.is_object()) fail_line(line_no, "record is not an object");
    try {
      if (!labels) {
        if (!doc.contains("K")) fail_line(line_no, "missing header record with K");
        k = doc.at("K").get<std::size_t>();
        std::vector<std::string> names;
        if (doc.contains("labels")) {
          names = doc.at("labels").get<std::vector<std::string>>();
        } else {
          for (std::size_t i = 0; i < k; ++i) names.push_back(std::to_string(i));
        }
        if (names.size() != k) fail_line(line_no, "header label count differs from K");
        labels.emplace(std::move(names));
        continue;
      }
      for (const auto& [key, _] : doc.items()) {
        if (key != "id" && key != "probs" && key != "pseudo_label") {
          fail_line(line_no, fmt::format("unknown field '{}'", key));
        }
      }
      if (!doc.contains("id") || !doc.contains("probs")) {
        fail_line(line_no, "record needs 'id' and 'probs'");
      }
      const auto id = doc.at("id").get<SampleId>();
      auto probs = doc.at("probs").get<std::vector<double>>();
      if (probs.size() != k) {
        fail_line(line_no, fmt::format("probs has {} entries, expected {}", probs.size(), k));
      }
      std::optional<ProbDist> dist;
      try {
        dist.emplace(std::move(probs));
      } catch (const std::invalid_argument& e) {
        fail_line(line_no, e.what());
      }
      if (doc.contains("pseudo_label")) {
        const auto stored = doc.at("pseudo_label").get<std::size_t>();
        if (stored != argmax_label(*dist)) fail_line(line_no, "label/argmax mismatch");
      }
      if (!seen.emplace(id, records.size()).second) {
        fail_line(line_no, fmt::format("duplicate id {}", id));
      }
      records.push_back({id, std::move(*dist)});
    } catch (const json::exception& e) {
      fail_line(line_no, fmt::format("malformed record: {}", e.what()));
    }
  }
  if (!labels) throw std::runtime_error("external teacher file has no header record");
  return {std::move(*labels), std::move(records)};
}

ExternalTeacherFile read_external(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  return read_external(in);
}

std::vector<PseudoLabeledSample> attach_teacher(std::span<const Sample> samples,
                                                const ExternalTeacherFile& file) {
  std::unordered_map<SampleId, const ExternalTeacherRecord*> by_id;
  for (const auto& r : file.records) by_id.emplace(r.id, &r);
  std::vector<PseudoLabeledSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      throw std::runtime_error(fmt::format("no teacher record for sample {}", s.id));
    }
    out.emplace_back(s, it->second->probs);
  }
  return out;
}

std::vector<PseudoLabeledSample> ingest_external(const std::filesystem::path& path) {
  const auto file = read_external(path);
  std::vector<PseudoLabeledSample> out;
  out.reserve(file.records.size());
  for (const auto& r : file.records) {
    Sample s;
    s.id = r.id;
    out.emplace_back(std::move(s), r.probs);
  }
  return out;
}

void write_external(std::ostream& out, const LabelSet& labels,
                    std::span<const PseudoLabeledSample> samples) {
  out << json{{"K", labels.size()}, {"labels", labels.names()}}.dump() << '\n';
  for (const auto& s : samples) {
    const auto v = s.teacher_probs.values();
    json rec{{"id", s.sample.id},
             {"probs", std::vector<double>(v.begin(), v.end())},
             {"pseudo_label", s.pseudo_label}};
    out << rec.dump() << '\n';
  }
}

}  // namespace kdsel
