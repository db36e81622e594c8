#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kdsel/experiment.hpp"

using namespace kdsel;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_doc() {
  return json::parse(R"({
    "data": {"synthetic": {"num_classes": 3, "dim": 4, "n_train": 300, "n_val": 60,
                           "n_test": 90, "class_separation": 2.0, "seed": 5}},
    "teacher": {"simulated": {"base_accuracy": 0.7, "calibration_strength": 2.0, "seed": 8}},
    "method": "llkd",
    "student": {"learning_rate": 0.1, "epochs": 2, "batch_size": 16},
    "seeds": [0],
    "eval_every": 10
  })");
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("kdsel_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string ledger_text(const RunLedger& l) {
  std::ostringstream a;
  write_ledger_csv(a, l);
  write_thresholds_csv(a, l);
  return a.str();
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_config(small_doc());
  REQUIRE(cfg.synthetic.has_value());
  CHECK(cfg.synthetic->n_train == 300);
  CHECK(cfg.simulated_teacher->rng_seed == 8);
  CHECK(cfg.batch_size == 16);
  CHECK(cfg.selector.lambda_s == 0.9);
  CHECK(cfg.method.kind == MethodSpec::Kind::Llkd);

  auto doc = small_doc();
  doc["method"] = json::parse(R"({"kind": "random", "ratio": 0.3, "seed": 4})");
  doc["selector"] = json::parse(
      R"({"beta_s1": 0, "update_order": "select_then_update", "weight_normalization": "selected_only"})");
  const auto b = parse_config(doc, "/tmp/base");
  CHECK(b.method.baseline.kind == BaselineKind::Random);
  CHECK(*b.method.baseline.ratio == 0.3);
  CHECK(b.method.baseline.rng_seed == 4);
  CHECK(b.selector.beta_s1 == 0.0);
  CHECK(b.selector.order == UpdateOrder::SelectThenUpdate);
  CHECK(b.selector.normalization == WeightNormalization::SelectedOnly);
  CHECK(b.output_dir == fs::path("/tmp/base/out"));
}

TEST_CASE("config errors") {
  auto fails = [](json doc, const std::string& what) {
    CHECK_THROWS_WITH_AS(parse_config(doc), doctest::Contains(what.c_str()), std::invalid_argument);
  };
  auto d = small_doc();
  d["colour"] = "blue";
  fails(d, "unknown key 'config.colour'");
  d = small_doc();
  d["student"]["momentum"] = 0.9;
  fails(d, "unknown key 'student.momentum'");
  d = small_doc();
  d["data"]["synthetic"]["noise"] = 1;
  fails(d, "unknown key 'data.synthetic.noise'");
  d = small_doc();
  d["student"]["epochs"] = "six";
  fails(d, "wrong type");
  d = small_doc();
  d["selector"] = json::parse(R"({"lambda_s": 1.0})");
  fails(d, "lambda");
  d = small_doc();
  d["method"] = "random";
  fails(d, "ratio");
  d = small_doc();
  d["method"] = "magic";
  fails(d, "unknown baseline");
  d = small_doc();
  d["data"]["path"] = "x.csv";
  fails(d, "exactly one");
  d = small_doc();
  d.erase("teacher");
  fails(d, "exactly one");
}

TEST_CASE("method parse and names") {
  CHECK(MethodSpec::parse("llkd").name() == "llkd");
  CHECK(MethodSpec::parse("llkd_w").name() == "llkd_w");
  CHECK(MethodSpec::parse("random:0.3").name() == "random_0.3");
  CHECK(MethodSpec::parse("fixed_conf_threshold:0.8").name() == "fixed_conf_threshold_0.8");
  CHECK(MethodSpec::parse("llkd_wo_tc").name() == "llkd_wo_tc");
  auto forced = MethodSpec::parse("llkd");
  forced.force = {true, true};
  CHECK(forced.name() == "llkd_notc_nosu");
  CHECK_THROWS_AS(MethodSpec::parse("llkd:0.3"), std::invalid_argument);
  CHECK_THROWS_AS(MethodSpec::parse("no_ds:0.3"), std::invalid_argument);
  CHECK_THROWS_AS(MethodSpec::parse("random:abc"), std::invalid_argument);
}

TEST_CASE("derive_seed separates streams and seeds") {
  CHECK(derive_seed(1, 0, 1) != derive_seed(1, 0, 2));
  CHECK(derive_seed(1, 0, 1) != derive_seed(1, 1, 1));
  CHECK(derive_seed(1, 0, 1) == derive_seed(1, 0, 1));
}

TEST_CASE("no_ds and fully forced llkd give identical ledgers") {
  auto cfg = parse_config(small_doc());
  const auto data = prepare_data(cfg, 0);
  cfg.method = MethodSpec::parse("no_ds");
  const auto a = train_run(cfg, data, 0);
  cfg.method = MethodSpec::parse("llkd");
  cfg.method.force = {true, true};
  const auto b = train_run(cfg, data, 0);
  CHECK(ledger_text(a.ledger) == ledger_text(b.ledger));
  CHECK(a.efficiency.fraction == 1.0);
  CHECK(a.test.accuracy == b.test.accuracy);
}

TEST_CASE("train_run bookkeeping") {
  const auto cfg = parse_config(small_doc());
  const auto data = prepare_data(cfg, 0);
  const auto r = train_run(cfg, data, 0);
  // 300 / 16 -> 19 steps per epoch, 2 epochs.
  CHECK(r.ledger.steps().size() == 38);
  CHECK(r.ledger.steps().back().cum_seen == 600);
  CHECK(r.efficiency.total_seen == 600);
  CHECK(r.ledger.steps()[18].batch_size == 12);
  // Evaluations at 10, 20, 30 and the final step.
  CHECK(r.ledger.evals().size() == 4);
  CHECK(r.ledger.evals().back().step == 38);
  CHECK((r.best_step % 10 == 0 || r.best_step == 38));
  std::size_t bins = 0;
  for (const auto& b : r.teacher_calibration) bins += b.count;
  CHECK(bins == 300);
  bins = 0;
  for (const auto& b : r.student_calibration) bins += b.count;
  CHECK(bins == 60);
  // The first step always selects everything (cold-start thresholds are 0).
  CHECK(r.ledger.steps()[0].selected == 16);
}

TEST_CASE("run_experiment writes deterministic outputs and stats") {
  auto cfg = parse_config(small_doc());
  cfg.seeds = {0, 1, 2};
  cfg.output_dir = scratch("exp_a");
  const auto res = run_experiment(cfg);
  REQUIRE(res.runs.size() == 3);
  for (const char* f : {"summary.csv", "summary_stats.csv", "calibration.csv",
                        "ledger_llkd_seed0.csv", "thresholds_llkd_seed2.csv",
                        "threshold_eval_llkd_seed1.csv", "evals_llkd_seed0.csv",
                        "student_llkd_seed0.txt"}) {
    CHECK(fs::exists(cfg.output_dir / f));
  }
  std::ifstream in(cfg.output_dir / "summary.csv");
  const auto rows = read_summary_csv(in);
  REQUIRE(rows.size() == 3);
  const auto stats = aggregate(rows);
  REQUIRE(stats.size() == 1);
  CHECK(stats[0].runs == 3);
  const double m = (rows[0].test_accuracy + rows[1].test_accuracy + rows[2].test_accuracy) / 3;
  CHECK(stats[0].accuracy_mean == doctest::Approx(m).epsilon(1e-12));
  double ss = 0.0;
  for (const auto& r : rows) ss += (r.test_accuracy - m) * (r.test_accuracy - m);
  CHECK(stats[0].accuracy_std == doctest::Approx(std::sqrt(ss / 2)).epsilon(1e-12));
  // Different seeds see different data.
  CHECK(slurp(cfg.output_dir / "ledger_llkd_seed0.csv") !=
        slurp(cfg.output_dir / "ledger_llkd_seed1.csv"));

  const auto first = cfg.output_dir;
  cfg.output_dir = scratch("exp_b");
  run_experiment(cfg);
  for (const char* f : {"summary.csv", "ledger_llkd_seed1.csv", "calibration.csv"}) {
    CHECK(slurp(first / f) == slurp(cfg.output_dir / f));
  }
  fs::remove_all(first);
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("summary round trip and aggregation") {
  std::vector<SummaryRow> rows{{"a", 0, 0.5, 0.4, 0.6, 10, 20, 0.5},
                               {"b", 0, 0.7, 0.7, 0.7, 20, 20, 1.0},
                               {"a", 1, 0.7, 0.6, 0.6, 12, 20, 0.6}};
  std::stringstream ss;
  write_summary_csv(ss, rows);
  const auto back = read_summary_csv(ss);
  REQUIRE(back.size() == 3);
  CHECK(back[2].percentage == 0.6);
  const auto stats = aggregate(back);
  REQUIRE(stats.size() == 2);
  CHECK(stats[0].method == "a");
  CHECK(stats[0].accuracy_mean == doctest::Approx(0.6));
  CHECK(stats[0].accuracy_std == doctest::Approx(std::sqrt(0.02)));
  CHECK(stats[1].accuracy_std == 0.0);
  std::stringstream bad("nope\n");
  CHECK_THROWS_AS(read_summary_csv(bad), std::runtime_error);
}

TEST_CASE("sweep grids") {
  auto doc = small_doc();
  doc["student"]["epochs"] = 1;
  doc["sweep"] = json::parse(R"({"lambda_s": [0.1, 0.3, 0.5, 0.7, 0.9],
                                 "lambda_t": [0.1, 0.3, 0.5, 0.7, 0.9]})");
  auto cfg = parse_config(doc);
  cfg.output_dir = scratch("sweep");
  const auto rows = sweep(cfg, false);
  CHECK(rows.size() == 25);
  std::size_t flagged = 0;
  double best = -1.0;
  for (const auto& r : rows) {
    flagged += r.best;
    best = std::max(best, r.val_accuracy);
  }
  CHECK(flagged == 1);
  for (const auto& r : rows) {
    if (r.best) CHECK(r.val_accuracy == best);
  }

  doc["sweep"] = json::parse(
      R"({"beta_s1": [0, 1], "beta_s2": [0, 1], "beta_t1": [0, 1], "beta_t2": [0, 1]})");
  cfg = parse_config(doc);
  CHECK(sweep(cfg, false).size() == 16);
}

TEST_CASE("non-finite loss aborts and dumps the batch") {
  auto cfg = parse_config(small_doc());
  cfg.method = MethodSpec::parse("no_ds");
  cfg.learning_rate = std::numeric_limits<double>::max();
  cfg.output_dir = scratch("nan");
  const auto data = prepare_data(cfg, 0);
  CHECK_THROWS_WITH_AS(train_run(cfg, data, 0), doctest::Contains("non-finite loss"),
                       std::runtime_error);
  CHECK(fs::exists(cfg.output_dir / "nan_batch_no_ds_seed0.csv"));
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("write_file_atomic replaces contents") {
  const auto dir = scratch("atomic");
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  CHECK(slurp(dir / "f.txt") == "two");
  CHECK_FALSE(fs::exists(dir / "f.txt.tmp"));
  fs::remove_all(dir);
}
