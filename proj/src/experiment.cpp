#include "kdsel/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

namespace kdsel {

namespace {

using json = nlohmann::json;

// Stream tags for derive_seed.
constexpr std::uint64_t kStreamData = 1;
constexpr std::uint64_t kStreamTeacher = 2;
constexpr std::uint64_t kStreamShuffle = 3;
constexpr std::uint64_t kStreamBaseline = 4;

// Reads keys from a JSON object and rejects anything left unread.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) {
      throw std::invalid_argument(fmt::format("config: '{}' must be an object", where_));
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& at(const std::string& key) {
    used_.insert(key);
    return obj_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument(
          fmt::format("config: '{}.{}' has the wrong type", where_, key));
    }
  }

  template <typename T>
  void get_opt(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    T v{};
    get(key, v);
    out = v;
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!used_.count(key)) {
        throw std::invalid_argument(fmt::format("config: unknown key '{}.{}'", where_, key));
      }
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

MethodSpec parse_method(const json& j) {
  if (j.is_string()) return MethodSpec::parse(j.get<std::string>());
  ObjectReader r(j, "method");
  std::string kind;
  r.get("kind", kind);
  MethodSpec m = MethodSpec::parse(kind);
  if (m.kind == MethodSpec::Kind::Baseline) {
    r.get_opt("ratio", m.baseline.ratio);
    r.get_opt("threshold", m.baseline.threshold);
    r.get("seed", m.baseline.rng_seed);
  }
  r.get("force_teacher_pass", m.force.force_teacher_pass);
  r.get("force_student_pass", m.force.force_student_pass);
  r.finish();
  return m;
}

SynthConfig parse_synth(const json& j) {
  ObjectReader r(j, "data.synthetic");
  SynthConfig s;
  r.get("num_classes", s.num_classes);
  r.get("dim", s.dim);
  r.get("n_train", s.n_train);
  r.get("n_val", s.n_val);
  r.get("n_test", s.n_test);
  r.get("class_separation", s.class_separation);
  r.get("class_proportions", s.class_proportions);
  r.get("seed", s.rng_seed);
  r.finish();
  return s;
}

SimulatedTeacherConfig parse_teacher(const json& j) {
  ObjectReader r(j, "teacher.simulated");
  SimulatedTeacherConfig t;
  r.get("base_accuracy", t.base_accuracy);
  r.get("calibration_strength", t.calibration_strength);
  if (r.has("confidence_shape")) {
    std::vector<double> shape;
    r.get("confidence_shape", shape);
    if (shape.size() != 2) {
      throw std::invalid_argument("config: teacher.simulated.confidence_shape needs 2 values");
    }
    t.confidence_alpha = shape[0];
    t.confidence_beta = shape[1];
  }
  r.get("seed", t.rng_seed);
  r.finish();
  return t;
}

UpdateOrder parse_order(const std::string& s) {
  if (s == "update_then_select") return UpdateOrder::UpdateThenSelect;
  if (s == "select_then_update") return UpdateOrder::SelectThenUpdate;
  throw std::invalid_argument(fmt::format("config: unknown update_order '{}'", s));
}

WeightNormalization parse_normalization(const std::string& s) {
  if (s == "full_batch") return WeightNormalization::FullBatch;
  if (s == "selected_only") return WeightNormalization::SelectedOnly;
  throw std::invalid_argument(fmt::format("config: unknown weight_normalization '{}'", s));
}

std::string format_ratio(double v) { return fmt::format("{}", v); }

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string run_file(const std::string& kind, const std::string& method, std::uint64_t seed) {
  return fmt::format("{}_{}_seed{}.csv", kind, method, seed);
}

void dump_batch(const std::filesystem::path& path, std::span<const PseudoLabeledSample> batch,
                std::span<const int> mask, std::span<const double> weights,
                std::span<const double> uncertainties) {
  std::ofstream out(path);
  out << "id,pseudo_label,confidence,uncertainty,mask,weight,features\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    fmt::print(out, "{},{},{},{},{},{}", batch[i].sample.id, batch[i].pseudo_label,
               batch[i].confidence, uncertainties[i], mask[i], weights[i]);
    for (double v : batch[i].sample.features) fmt::print(out, ",{}", v);
    out << '\n';
  }
}

[[noreturn]] void fail_non_finite(const ExperimentConfig& cfg, const std::string& method,
                                  std::uint64_t seed, std::size_t step,
                                  std::span<const PseudoLabeledSample> batch,
                                  std::span<const int> mask, std::span<const double> weights,
                                  std::span<const double> uncertainties) {
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / run_file("nan_batch", method, seed);
  dump_batch(path, batch, mask, weights, uncertainties);
  throw std::runtime_error(fmt::format("non-finite loss at step {} ({} seed {}); batch written to {}",
                                       step, method, seed, path.string()));
}

bool better(const EvalResult& a, const EvalResult& b) {
  return a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.macro_f1 > b.macro_f1);
}

}  // namespace

MethodSpec MethodSpec::parse(const std::string& text) {
  MethodSpec m;
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  std::optional<double> arg;
  if (colon != std::string::npos) {
    try {
      arg = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument(fmt::format("method '{}' has a malformed argument", text));
    }
  }
  if (head == "llkd" || head == "llkd_w") {
    if (arg) throw std::invalid_argument(fmt::format("method '{}' takes no argument", head));
    m.kind = head == "llkd" ? Kind::Llkd : Kind::LlkdWeighted;
    return m;
  }
  m.kind = Kind::Baseline;
  m.baseline.kind = baseline_kind_from_string(head);
  if (m.baseline.uses_ratio()) {
    m.baseline.ratio = arg;
  } else if (m.baseline.kind == BaselineKind::FixedConfThreshold) {
    m.baseline.threshold = arg;
  } else if (arg) {
    throw std::invalid_argument(fmt::format("method '{}' takes no argument", head));
  }
  return m;
}

std::string MethodSpec::name() const {
  std::string base;
  switch (kind) {
    case Kind::Llkd: base = "llkd"; break;
    case Kind::LlkdWeighted: base = "llkd_w"; break;
    case Kind::Baseline:
      base = std::string(to_string(baseline.kind));
      if (baseline.ratio) base += "_" + format_ratio(*baseline.ratio);
      if (baseline.threshold) base += "_" + format_ratio(*baseline.threshold);
      break;
  }
  if (force.force_teacher_pass) base += "_notc";
  if (force.force_student_pass) base += "_nosu";
  return base;
}

void MethodSpec::validate() const {
  if (kind == Kind::Baseline) baseline.validate();
}

bool SweepGrid::empty() const noexcept {
  return lambda_s.empty() && lambda_t.empty() && beta_s1.empty() && beta_s2.empty() &&
         beta_t1.empty() && beta_t2.empty();
}

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == dataset_path.has_value()) {
    throw std::invalid_argument("config: give exactly one of data.synthetic / data.path");
  }
  if (simulated_teacher.has_value() == teacher_path.has_value()) {
    throw std::invalid_argument(
        "config: give exactly one of teacher.simulated / teacher.external");
  }
  if (synthetic) synthetic->validate();
  method.validate();
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (eval_every < 1 || threshold_eval_every < 1) {
    throw std::invalid_argument("config: evaluation cadence must be >= 1");
  }
  if (calibration_bins < 2) throw std::invalid_argument("config: calibration_bins must be >= 2");
  auto lambda_ok = [](double l) { return l > 0.0 && l < 1.0; };
  auto beta_ok = [](double b) { return b >= 0.0; };
  const auto& s = selector;
  if (!lambda_ok(s.lambda_s) || !lambda_ok(s.lambda_t)) {
    throw std::invalid_argument("config: lambda values must lie in (0, 1)");
  }
  if (!beta_ok(s.beta_s1) || !beta_ok(s.beta_s2) || !beta_ok(s.beta_t1) ||
      !beta_ok(s.beta_t2)) {
    throw std::invalid_argument("config: beta values must be >= 0");
  }
  for (const auto* axis : {&sweep.lambda_s, &sweep.lambda_t}) {
    if (!std::all_of(axis->begin(), axis->end(), lambda_ok)) {
      throw std::invalid_argument("config: sweep lambda values must lie in (0, 1)");
    }
  }
  for (const auto* axis : {&sweep.beta_s1, &sweep.beta_s2, &sweep.beta_t1, &sweep.beta_t2}) {
    if (!std::all_of(axis->begin(), axis->end(), beta_ok)) {
      throw std::invalid_argument("config: sweep beta values must be >= 0");
    }
  }
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  ObjectReader top(doc, "config");

  if (top.has("data")) {
    ObjectReader r(top.at("data"), "data");
    if (r.has("synthetic")) cfg.synthetic = parse_synth(r.at("synthetic"));
    if (r.has("path")) {
      std::string p;
      r.get("path", p);
      cfg.dataset_path = resolve(base_dir, p);
    }
    r.finish();
  }
  if (top.has("teacher")) {
    ObjectReader r(top.at("teacher"), "teacher");
    if (r.has("simulated")) cfg.simulated_teacher = parse_teacher(r.at("simulated"));
    if (r.has("external")) {
      std::string p;
      r.get("external", p);
      cfg.teacher_path = resolve(base_dir, p);
    }
    r.finish();
  }
  if (top.has("method")) cfg.method = parse_method(top.at("method"));
  if (top.has("student")) {
    ObjectReader r(top.at("student"), "student");
    r.get("learning_rate", cfg.learning_rate);
    r.get("epochs", cfg.epochs);
    r.get("batch_size", cfg.batch_size);
    r.finish();
  }
  if (top.has("selector")) {
    ObjectReader r(top.at("selector"), "selector");
    auto& s = cfg.selector;
    r.get("lambda_s", s.lambda_s);
    r.get("lambda_t", s.lambda_t);
    r.get("beta_s1", s.beta_s1);
    r.get("beta_s2", s.beta_s2);
    r.get("beta_t1", s.beta_t1);
    r.get("beta_t2", s.beta_t2);
    if (r.has("update_order")) {
      std::string v;
      r.get("update_order", v);
      s.order = parse_order(v);
    }
    if (r.has("weight_normalization")) {
      std::string v;
      r.get("weight_normalization", v);
      s.normalization = parse_normalization(v);
    }
    r.finish();
  }
  top.get("seeds", cfg.seeds);
  top.get("eval_every", cfg.eval_every);
  top.get("threshold_eval_every", cfg.threshold_eval_every);
  top.get("calibration_bins", cfg.calibration_bins);
  if (top.has("output_dir")) {
    std::string p;
    top.get("output_dir", p);
    cfg.output_dir = resolve(base_dir, p);
  } else {
    cfg.output_dir = resolve(base_dir, cfg.output_dir.string());
  }
  if (top.has("sweep")) {
    ObjectReader r(top.at("sweep"), "sweep");
    r.get("lambda_s", cfg.sweep.lambda_s);
    r.get("lambda_t", cfg.sweep.lambda_t);
    r.get("beta_s1", cfg.sweep.beta_s1);
    r.get("beta_s2", cfg.sweep.beta_s2);
    r.get("beta_t1", cfg.sweep.beta_t1);
    r.get("beta_t2", cfg.sweep.beta_t2);
    r.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open config {}", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(fmt::format("config {}: {}", path.string(), e.what()));
  }
  return parse_config(doc, path.parent_path());
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t seed, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ seed) ^ stream);
}

DatasetSplit prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  LabeledData raw;
  if (cfg.synthetic) {
    SynthConfig s = *cfg.synthetic;
    s.rng_seed = derive_seed(s.rng_seed, seed, kStreamData);
    raw = generate(s);
  } else {
    raw = read_dataset(*cfg.dataset_path);
  }
  DatasetSplit split;
  split.num_classes = raw.num_classes;
  split.dim = raw.dim;
  if (cfg.simulated_teacher) {
    SimulatedTeacherConfig t = *cfg.simulated_teacher;
    t.rng_seed = derive_seed(t.rng_seed, seed, kStreamTeacher);
    split.train = simulate_teacher(raw.train, t, raw.num_classes);
  } else {
    const auto file = read_external(*cfg.teacher_path);
    if (file.labels.size() != raw.num_classes) {
      throw std::runtime_error("teacher file K does not match the dataset");
    }
    split.train = attach_teacher(raw.train, file);
  }
  split.val = std::move(raw.val);
  split.test = std::move(raw.test);
  split.validate();
  return split;
}

RunResult train_run(const ExperimentConfig& cfg, const DatasetSplit& data,
                    std::uint64_t seed) {
  const std::size_t k = data.num_classes;
  const auto& hp = cfg.selector;
  RunResult result;
  result.method = cfg.method.name();
  result.seed = seed;
  result.ledger = RunLedger(k);

  auto params = StudentParams::zeros(k, data.dim, cfg.learning_rate);
  auto student_state = ThresholdState::initial(k, hp.lambda_s, hp.beta_s1, hp.beta_s2);
  auto teacher_state = ThresholdState::initial(k, hp.lambda_t, hp.beta_t1, hp.beta_t2);

  RunBatchOptions opts;
  opts.weighted = cfg.method.kind == MethodSpec::Kind::LlkdWeighted;
  opts.normalization = hp.normalization;
  opts.order = hp.order;
  opts.select = cfg.method.force;

  std::mt19937_64 shuffle_rng(derive_seed(0, seed, kStreamShuffle));
  std::mt19937_64 baseline_rng(derive_seed(cfg.method.baseline.rng_seed, seed, kStreamBaseline));

  const bool train_has_gold =
      std::all_of(data.train.begin(), data.train.end(),
                  [](const PseudoLabeledSample& s) { return s.sample.gold_label.has_value(); });

  const std::size_t n = data.train.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<PseudoLabeledSample> batch;
  bool have_best = false;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      ++step;
      const std::size_t end = std::min(n, start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.train[order[i]]);

      BatchOutcome outcome;
      try {
        outcome = run_batch(batch, params, student_state, teacher_state, opts);
      } catch (const std::invalid_argument&) {
        // A diverged student cannot score the batch; report it as a loss failure.
        const std::vector<int> ones(batch.size(), 1);
        const std::vector<double> unit(batch.size(), 1.0);
        if (std::isfinite(batch_loss(params, batch, ones, unit))) throw;
        const std::vector<double> nan(batch.size(), std::nan(""));
        fail_non_finite(cfg, result.method, seed, step, batch, ones, unit, nan);
      }
      student_state = outcome.student_state;
      teacher_state = outcome.teacher_state;

      std::vector<int> mask;
      if (cfg.method.kind == MethodSpec::Kind::Baseline) {
        const SelectorStates states{student_state, teacher_state};
        mask = baseline_mask(cfg.method.baseline, batch, outcome.uncertainties, baseline_rng,
                             &states);
      } else {
        mask = outcome.selection.mask;
      }
      const auto& weights = outcome.selection.weights;

      const double loss = batch_loss(params, batch, mask, weights);
      if (!std::isfinite(loss)) {
        fail_non_finite(cfg, result.method, seed, step, batch, mask, weights,
                        outcome.uncertainties);
      }

      if (train_has_gold && step % cfg.threshold_eval_every == 0) {
        std::vector<LabelIndex> pls, golds, preds;
        for (const auto& s : batch) {
          pls.push_back(s.pseudo_label);
          golds.push_back(*s.sample.gold_label);
          preds.push_back(predict(params, s.sample.features));
        }
        auto rec = threshold_evaluation(pls, mask, golds, preds,
                                        outcome.selection.teacher_pass,
                                        outcome.selection.student_pass);
        rec.step = step;
        result.ledger.append_threshold_eval(rec);
      }

      params = train_step(params, batch, mask, weights);

      StepRecord rec;
      rec.epoch = epoch;
      rec.batch_size = batch.size();
      rec.selected = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
      rec.loss = loss;
      const auto [umin, umax] =
          std::minmax_element(outcome.uncertainties.begin(), outcome.uncertainties.end());
      const auto [cmin, cmax] =
          std::minmax_element(outcome.confidences.begin(), outcome.confidences.end());
      rec.min_uncertainty = *umin;
      rec.max_uncertainty = *umax;
      rec.min_confidence = *cmin;
      rec.max_confidence = *cmax;
      rec.student_tau = student_state.tau_global;
      rec.teacher_tau = teacher_state.tau_global;
      rec.student_local = student_state.p_hat_local;
      rec.teacher_local = teacher_state.p_hat_local;
      rec.student_thresholds = final_thresholds(student_state);
      rec.teacher_thresholds = final_thresholds(teacher_state);
      result.ledger.append_step(std::move(rec));

      if (step % cfg.eval_every == 0 || step == total_steps) {
        const auto val = evaluate(params, data.val);
        result.ledger.append_eval({step, val.accuracy, val.macro_f1});
        if (!have_best || better(val, result.best_val)) {
          have_best = true;
          result.best_val = val;
          result.best_step = step;
          result.best_params = params;
        }
      }
    }
  }

  result.test = evaluate(result.best_params, data.test);
  result.efficiency = efficiency_report(result.ledger);

  if (train_has_gold) {
    std::vector<double> conf;
    std::vector<int> correct;
    for (const auto& s : data.train) {
      conf.push_back(s.confidence);
      correct.push_back(s.pseudo_label == *s.sample.gold_label ? 1 : 0);
    }
    result.teacher_calibration =
        calibration_bins(conf, correct, cfg.calibration_bins, 1.0 / static_cast<double>(k), 1.0);
  }
  {
    std::vector<double> unc;
    std::vector<int> correct;
    for (const auto& s : data.val) {
      unc.push_back(uncertainty(result.best_params, s));
      correct.push_back(predict(result.best_params, s.features) == *s.gold_label ? 1 : 0);
    }
    result.student_calibration = calibration_bins(unc, correct, cfg.calibration_bins, 0.0,
                                                  std::log(static_cast<double>(k)));
  }
  return result;
}

SummaryRow summarize(const RunResult& run) {
  SummaryRow row;
  row.method = run.method;
  row.seed = run.seed;
  row.test_accuracy = run.test.accuracy;
  row.test_macro_f1 = run.test.macro_f1;
  row.val_accuracy = run.best_val.accuracy;
  row.selected = run.efficiency.total_selected;
  row.seen = run.efficiency.total_seen;
  row.percentage = run.efficiency.fraction;
  return row;
}

std::vector<SummaryStats> aggregate(const std::vector<SummaryRow>& rows) {
  std::vector<std::string> methods;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
  }
  std::vector<SummaryStats> out;
  for (const auto& m : methods) {
    std::vector<double> acc, f1, sel, pct;
    for (const auto& r : rows) {
      if (r.method != m) continue;
      acc.push_back(r.test_accuracy);
      f1.push_back(r.test_macro_f1);
      sel.push_back(static_cast<double>(r.selected));
      pct.push_back(r.percentage);
    }
    SummaryStats s;
    s.method = m;
    s.runs = acc.size();
    s.accuracy_mean = mean_of(acc);
    s.accuracy_std = sample_std(acc);
    s.macro_f1_mean = mean_of(f1);
    s.macro_f1_std = sample_std(f1);
    s.selected_mean = mean_of(sel);
    s.percentage_mean = mean_of(pct);
    out.push_back(s);
  }
  return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "method,seed,test_accuracy,test_macro_f1,val_accuracy,selected,seen,percentage\n";
  for (const auto& r : rows) {
    fmt::print(out, "{},{},{},{},{},{},{},{}\n", r.method, r.seed, r.test_accuracy,
               r.test_macro_f1, r.val_accuracy, r.selected, r.seen, r.percentage);
  }
}

std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("method,seed,", 0) != 0) {
    throw std::runtime_error("not a summary file");
  }
  std::vector<SummaryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) {
      throw std::runtime_error(fmt::format("summary line {}: expected 8 columns", line_no));
    }
    SummaryRow r;
    try {
      r.method = cells[0];
      r.seed = std::stoull(cells[1]);
      r.test_accuracy = std::stod(cells[2]);
      r.test_macro_f1 = std::stod(cells[3]);
      r.val_accuracy = std::stod(cells[4]);
      r.selected = std::stoull(cells[5]);
      r.seen = std::stoull(cells[6]);
      r.percentage = std::stod(cells[7]);
    } catch (const std::exception&) {
      throw std::runtime_error(fmt::format("summary line {}: malformed number", line_no));
    }
    rows.push_back(r);
  }
  return rows;
}

void write_summary_stats_csv(std::ostream& out, const std::vector<SummaryStats>& stats) {
  out << "method,runs,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,"
         "selected_mean,percentage_mean\n";
  for (const auto& s : stats) {
    fmt::print(out, "{},{},{},{},{},{},{},{}\n", s.method, s.runs, s.accuracy_mean,
               s.accuracy_std, s.macro_f1_mean, s.macro_f1_std, s.selected_mean,
               s.percentage_mean);
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
    out << contents;
    if (!out) throw std::runtime_error(fmt::format("write failed for {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs) {
  cfg.validate();
  if (write_outputs) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) {
      throw std::runtime_error(
          fmt::format("cannot create output directory {}: {}", cfg.output_dir.string(),
                      ec.message()));
    }
  }
  ExperimentResult result;
  std::vector<SummaryRow> rows;
  std::ostringstream calibration;
  bool calib_header = true;
  for (const auto seed : cfg.seeds) {
    const auto data = prepare_data(cfg, seed);
    auto run = train_run(cfg, data, seed);
    rows.push_back(summarize(run));
    if (write_outputs) {
      const auto& dir = cfg.output_dir;
      std::ostringstream s;
      write_ledger_csv(s, run.ledger);
      write_file_atomic(dir / run_file("ledger", run.method, seed), s.str());
      s.str("");
      write_thresholds_csv(s, run.ledger);
      write_file_atomic(dir / run_file("thresholds", run.method, seed), s.str());
      s.str("");
      write_threshold_eval_csv(s, run.ledger);
      write_file_atomic(dir / run_file("threshold_eval", run.method, seed), s.str());
      s.str("");
      write_evals_csv(s, run.ledger);
      write_file_atomic(dir / run_file("evals", run.method, seed), s.str());
      s.str("");
      save_checkpoint(s, run.best_params);
      write_file_atomic(dir / fmt::format("student_{}_seed{}.txt", run.method, seed), s.str());
      if (!run.teacher_calibration.empty()) {
        write_calibration_csv(calibration, "teacher_confidence", seed, run.teacher_calibration,
                              calib_header);
        calib_header = false;
      }
      write_calibration_csv(calibration, "student_uncertainty", seed, run.student_calibration,
                            calib_header);
      calib_header = false;
    }
    result.runs.push_back(std::move(run));
  }
  if (write_outputs) {
    std::ostringstream s;
    write_summary_csv(s, rows);
    write_file_atomic(cfg.output_dir / "summary.csv", s.str());
    s.str("");
    write_summary_stats_csv(s, aggregate(rows));
    write_file_atomic(cfg.output_dir / "summary_stats.csv", s.str());
    write_file_atomic(cfg.output_dir / "calibration.csv", calibration.str());
  }
  return result;
}

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, bool write_outputs) {
  cfg.validate();
  const auto& base = cfg.selector;
  auto axis = [](const std::vector<double>& grid, double fallback) {
    return grid.empty() ? std::vector<double>{fallback} : grid;
  };
  const auto ls = axis(cfg.sweep.lambda_s, base.lambda_s);
  const auto lt = axis(cfg.sweep.lambda_t, base.lambda_t);
  const auto bs1 = axis(cfg.sweep.beta_s1, base.beta_s1);
  const auto bs2 = axis(cfg.sweep.beta_s2, base.beta_s2);
  const auto bt1 = axis(cfg.sweep.beta_t1, base.beta_t1);
  const auto bt2 = axis(cfg.sweep.beta_t2, base.beta_t2);

  // Data depend only on the seed; prepare once per seed.
  std::vector<DatasetSplit> data;
  for (const auto seed : cfg.seeds) data.push_back(prepare_data(cfg, seed));

  std::vector<SweepRow> rows;
  for (double a : ls)
    for (double b : lt)
      for (double c : bs1)
        for (double d : bs2)
          for (double e : bt1)
            for (double f : bt2) {
              ExperimentConfig point = cfg;
              point.selector.lambda_s = a;
              point.selector.lambda_t = b;
              point.selector.beta_s1 = c;
              point.selector.beta_s2 = d;
              point.selector.beta_t1 = e;
              point.selector.beta_t2 = f;
              std::vector<double> val, acc, f1;
              for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
                const auto run = train_run(point, data[i], cfg.seeds[i]);
                val.push_back(run.best_val.accuracy);
                acc.push_back(run.test.accuracy);
                f1.push_back(run.test.macro_f1);
              }
              rows.push_back({point.selector, mean_of(val), mean_of(acc), mean_of(f1), false});
            }
  auto best = std::max_element(rows.begin(), rows.end(), [](const auto& x, const auto& y) {
    return x.val_accuracy < y.val_accuracy;
  });
  best->best = true;
  if (write_outputs) {
    std::ostringstream s;
    write_sweep_csv(s, rows);
    write_file_atomic(cfg.output_dir / "sweep.csv", s.str());
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "lambda_s,lambda_t,beta_s1,beta_s2,beta_t1,beta_t2,val_accuracy,test_accuracy,"
         "test_macro_f1,best\n";
  for (const auto& r : rows) {
    const auto& h = r.hyper;
    fmt::print(out, "{},{},{},{},{},{},{},{},{},{}\n", h.lambda_s, h.lambda_t, h.beta_s1,
               h.beta_s2, h.beta_t1, h.beta_t2, r.val_accuracy, r.test_accuracy,
               r.test_macro_f1, r.best ? 1 : 0);
  }
}

}  // namespace kdsel
