#include "kdsel/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace kdsel {

namespace {

constexpr int kMaxPlacementAttempts = 1000;
constexpr const char* kMagic = "# kdsel dataset v1";

std::vector<std::vector<double>> place_centers(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double radius = cfg.class_separation;
  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    std::vector<std::vector<double>> centers(cfg.num_classes, std::vector<double>(cfg.dim));
    for (auto& c : centers) {
      double norm = 0.0;
      for (double& v : c) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : c) v *= radius / norm;
    }
    bool ok = true;
    for (std::size_t a = 0; a < centers.size() && ok; ++a) {
      for (std::size_t b = a + 1; b < centers.size() && ok; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
          const double diff = centers[a][j] - centers[b][j];
          d2 += diff * diff;
        }
        ok = std::sqrt(d2) >= cfg.class_separation;
      }
    }
    if (ok) return centers;
  }
  throw std::runtime_error(fmt::format(
      "could not place {} class centers {} apart in {} dimensions; try a larger d",
      cfg.num_classes, cfg.class_separation, cfg.dim));
}

std::vector<Sample> make_split(std::size_t n, const SynthConfig& cfg,
                               const std::vector<std::vector<double>>& centers,
                               SampleId first_id, std::mt19937_64& rng) {
  const auto counts = class_counts(n, cfg.num_classes, cfg.class_proportions);
  // Round-robin over classes until each quota is used up.
  std::vector<LabelIndex> labels;
  labels.reserve(n);
  std::vector<std::size_t> left = counts;
  while (labels.size() < n) {
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      if (left[c] > 0) {
        labels.push_back(c);
        --left[c];
      }
    }
  }
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = first_id + static_cast<SampleId>(i);
    out[i].gold_label = labels[i];
    out[i].features.resize(cfg.dim);
    for (std::size_t j = 0; j < cfg.dim; ++j) {
      out[i].features[j] = centers[labels[i]][j] + normal(rng);
    }
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("synthetic data needs K >= 2");
  if (dim < 2) throw std::invalid_argument("synthetic data needs d >= 2");
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw std::invalid_argument("every split needs at least one sample");
  }
  if (!(class_separation > 0.0)) throw std::invalid_argument("class_separation must be > 0");
  if (!class_proportions.empty()) {
    if (class_proportions.size() != num_classes) {
      throw std::invalid_argument("class_proportions needs one entry per class");
    }
    double sum = 0.0;
    for (double p : class_proportions) {
      if (!(p >= 0.0)) throw std::invalid_argument("class proportions must be >= 0");
      sum += p;
    }
    if (!(sum > 0.0)) throw std::invalid_argument("class proportions sum to zero");
  }
}

std::vector<std::size_t> class_counts(std::size_t n, std::size_t num_classes,
                                      const std::vector<double>& proportions) {
  std::vector<std::size_t> counts(num_classes, n / num_classes);
  if (proportions.empty()) {
    for (std::size_t c = 0; c < n % num_classes; ++c) ++counts[c];
    return counts;
  }
  const double total = std::accumulate(proportions.begin(), proportions.end(), 0.0);
  std::vector<double> remainder(num_classes);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double exact = static_cast<double>(n) * proportions[c] / total;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::vector<std::size_t> order(num_classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[order[r % num_classes]];
  return counts;
}

LabeledData generate(const SynthConfig& cfg, ClusterCenters* centers_out) {
  cfg.validate();
  std::mt19937_64 rng(cfg.rng_seed);
  auto centers = place_centers(cfg, rng);
  LabeledData data;
  data.num_classes = cfg.num_classes;
  data.dim = cfg.dim;
  data.seed = cfg.rng_seed;
  data.train = make_split(cfg.n_train, cfg, centers, 0, rng);
  data.val = make_split(cfg.n_val, cfg, centers, static_cast<SampleId>(cfg.n_train), rng);
  data.test = make_split(cfg.n_test, cfg, centers,
                         static_cast<SampleId>(cfg.n_train + cfg.n_val), rng);
  if (centers_out) centers_out->centers = std::move(centers);
  return data;
}

void write_dataset(std::ostream& out, const LabeledData& data) {
  fmt::print(out, "{}\nK,d,n_train,n_val,n_test,seed\n{},{},{},{},{},{}\nid,gold", kMagic,
             data.num_classes, data.dim, data.train.size(), data.val.size(),
             data.test.size(), data.seed);
  for (std::size_t j = 0; j < data.dim; ++j) fmt::print(out, ",x{}", j);
  out << '\n';
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& s : *split) {
      const long long gold = s.gold_label ? static_cast<long long>(*s.gold_label) : -1;
      fmt::print(out, "{},{}", s.id, gold);
      for (double v : s.features) fmt::print(out, ",{}", v);
      out << '\n';
    }
  }
}

LabeledData read_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> const std::string& {
    if (!std::getline(in, line)) {
      throw std::runtime_error(fmt::format("dataset truncated after line {}", line_no));
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  if (next() != kMagic) throw std::runtime_error("not a kdsel dataset file");
  next();  // header names
  const auto meta = split_csv(next());
  if (meta.size() != 6) throw std::runtime_error("line 3: expected 6 header values");
  LabeledData data;
  std::size_t sizes[3];
  try {
    data.num_classes = std::stoul(meta[0]);
    data.dim = std::stoul(meta[1]);
    sizes[0] = std::stoul(meta[2]);
    sizes[1] = std::stoul(meta[3]);
    sizes[2] = std::stoul(meta[4]);
    data.seed = std::stoull(meta[5]);
  } catch (const std::exception&) {
    throw std::runtime_error("line 3: malformed header values");
  }
  next();  // column names
  std::vector<Sample>* splits[3] = {&data.train, &data.val, &data.test};
  for (int s = 0; s < 3; ++s) {
    splits[s]->reserve(sizes[s]);
    for (std::size_t i = 0; i < sizes[s]; ++i) {
      const auto cells = split_csv(next());
      if (cells.size() != data.dim + 2) {
        throw std::runtime_error(fmt::format("line {}: expected {} columns, got {}",
                                             line_no, data.dim + 2, cells.size()));
      }
      Sample sample;
      try {
        sample.id = std::stoll(cells[0]);
        const long long gold = std::stoll(cells[1]);
        if (gold >= 0) sample.gold_label = static_cast<LabelIndex>(gold);
        sample.features.reserve(data.dim);
        for (std::size_t j = 0; j < data.dim; ++j) {
          sample.features.push_back(std::stod(cells[j + 2]));
        }
      } catch (const std::exception&) {
        throw std::runtime_error(fmt::format("line {}: malformed number", line_no));
      }
      splits[s]->push_back(std::move(sample));
    }
  }
  return data;
}

LabeledData read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  return read_dataset(in);
}

}  // namespace kdsel
