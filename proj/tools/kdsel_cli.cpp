// kdsel: command-line front end for running selection experiments.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "kdsel/experiment.hpp"

namespace {

struct Overrides {
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::string method;
};

kdsel::ExperimentConfig load_with_overrides(const std::string& path, const Overrides& o) {
  auto cfg = kdsel::load_config(path);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.method.empty()) cfg.method = kdsel::MethodSpec::parse(o.method);
  cfg.validate();
  return cfg;
}

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-o,--out", o.out, "Output directory (overrides output_dir)");
  cmd->add_option("-s,--seed", o.seeds, "Seed(s) to run (overrides seeds)");
  cmd->add_option("-m,--method", o.method,
                  "Method: llkd, llkd_w, no_ds, random:R, entropy_score:R, "
                  "top_uncertainty:R, fixed_conf_threshold:T, llkd_wo_tc, llkd_wo_su");
}

int cmd_run(const std::string& config, const Overrides& o) {
  const auto cfg = load_with_overrides(config, o);
  const auto result = kdsel::run_experiment(cfg);
  std::vector<kdsel::SummaryRow> rows;
  for (const auto& run : result.runs) rows.push_back(kdsel::summarize(run));
  for (const auto& s : kdsel::aggregate(rows)) {
    fmt::print("{}: acc {:.4f} +/- {:.4f}, macro-F1 {:.4f} +/- {:.4f}, selected {:.1f}%\n",
               s.method, s.accuracy_mean, s.accuracy_std, s.macro_f1_mean, s.macro_f1_std,
               100.0 * s.percentage_mean);
  }
  fmt::print("reports written to {}\n", cfg.output_dir.string());
  return 0;
}

int cmd_sweep(const std::string& config, const Overrides& o) {
  const auto cfg = load_with_overrides(config, o);
  const auto rows = kdsel::sweep(cfg);
  kdsel::write_sweep_csv(std::cout, rows);
  return 0;
}

int cmd_gen_data(const std::string& config, const std::string& out,
                 const std::string& teacher_out, std::uint64_t seed) {
  const auto cfg = kdsel::load_config(config);
  if (!cfg.synthetic) throw std::invalid_argument("gen-data needs data.synthetic in the config");
  auto synth = *cfg.synthetic;
  synth.rng_seed = kdsel::derive_seed(synth.rng_seed, seed, 1);
  const auto data = kdsel::generate(synth);
  std::ostringstream s;
  kdsel::write_dataset(s, data);
  kdsel::write_file_atomic(out, s.str());
  if (!teacher_out.empty()) {
    if (!cfg.simulated_teacher) {
      throw std::invalid_argument("--teacher-out needs teacher.simulated in the config");
    }
    auto t = *cfg.simulated_teacher;
    t.rng_seed = kdsel::derive_seed(t.rng_seed, seed, 2);
    const auto labeled = kdsel::simulate_teacher(data.train, t, data.num_classes);
    std::ostringstream ts;
    kdsel::write_external(ts, kdsel::LabelSet::numbered(data.num_classes), labeled);
    kdsel::write_file_atomic(teacher_out, ts.str());
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& summaries, const std::string& out) {
  std::vector<kdsel::SummaryRow> rows;
  for (const auto& path : summaries) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open {}", path));
    const auto part = kdsel::read_summary_csv(in);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::ostringstream s;
  kdsel::write_summary_stats_csv(s, kdsel::aggregate(rows));
  if (out.empty()) {
    std::cout << s.str();
  } else {
    kdsel::write_file_atomic(out, s.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive teacher-confidence / student-uncertainty data selection"};
  app.require_subcommand(1);

  std::string config;
  Overrides run_o, sweep_o;
  auto* run = app.add_subcommand("run", "Train every seed of one method and write reports");
  run->add_option("-c,--config", config, "Config file (JSON)")->required();
  add_overrides(run, run_o);

  auto* sw = app.add_subcommand("sweep", "Selector hyper-parameter grid");
  sw->add_option("-c,--config", config, "Config file (JSON)")->required();
  add_overrides(sw, sweep_o);

  std::string data_out, teacher_out;
  std::uint64_t data_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset (and teacher file)");
  gen->add_option("-c,--config", config, "Config file with data.synthetic")->required();
  gen->add_option("-o,--out", data_out, "Dataset output path")->required();
  gen->add_option("--teacher-out", teacher_out, "Simulated teacher output path (JSONL)");
  gen->add_option("-s,--seed", data_seed, "Run seed mixed into the data seed");

  std::vector<std::string> summaries;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Aggregate summary.csv files (mean, std)");
  report->add_option("summaries", summaries, "summary.csv files")->required();
  report->add_option("-o,--out", report_out, "Write to file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(config, run_o);
    if (*sw) return cmd_sweep(config, sweep_o);
    if (*gen) return cmd_gen_data(config, data_out, teacher_out, data_seed);
    if (*report) return cmd_report(summaries, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
