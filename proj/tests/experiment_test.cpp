#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ampgrad/experiment.hpp"

using namespace ampgrad;

namespace {

std::string scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// drops the wall_ms column (field 9 of 10) from a metrics CSV
std::string strip_wall(const std::string& csv) {
  std::stringstream in(csv), out;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string field;
    int idx = 0;
    while (std::getline(row, field, ',')) {
      if (idx != 8) out << field << ",";
      ++idx;
    }
    out << "\n";
  }
  return out.str();
}

// fast 6-epoch config on gaussian blobs; two sweep points incl. baseline
std::string tiny_config(const std::string& out_dir) {
  return R"({
    "arch": "mlp-tiny",
    "dataset": {"kind": "synth-gaussians", "n": 128, "test_n": 64, "classes": 2, "dim": 4,
                 "separation": 3.0, "seed": 5},
    "schedule": ["[(2,0.1,0,1),(4,0.1,0,1),(5,0.05,0,1),(6,0.05,0,1)]",
                  "[(2,0.1,0,1),(4,0.1,0.5,2),(5,0.05,0,1),(6,0.05,0,1)]"],
    "layer_types": ["ReLU"],
    "seeds": [1, 2],
    "batch_size": 32,
    "out_dir": ")" +
         out_dir + R"("
  })";
}

}  // namespace

TEST(SweepStep1, ElevenPointsWithFactorTwo) {
  const auto base = baseline_schedule("paper");
  const auto points = sweep_step1(base);
  ASSERT_EQ(points.size(), 11u);
  EXPECT_EQ(points.front().label, "S1_0.0");
  EXPECT_EQ(points.back().label, "S1_1.0");
  for (size_t i = 0; i < points.size(); ++i) {
    EXPECT_DOUBLE_EQ(points[i].phases[1].beta, 0.1 * static_cast<double>(i));
    EXPECT_DOUBLE_EQ(points[i].phases[1].gamma, 2.0);
    EXPECT_DOUBLE_EQ(points[i].phases[2].beta, 0.0);
  }
  // xx = 0 leaves the training identical to baseline
  EXPECT_DOUBLE_EQ(points[0].phases[1].beta, 0.0);
}

TEST(SweepStep1, RejectsWrongBaseShape) {
  EXPECT_THROW(sweep_step1(make_schedule({{10, 0.1, 0, 1}})), ConfigError);
  EXPECT_THROW(sweep_step1(make_s1(baseline_schedule("paper"), 0.5)), ConfigError);
}

TEST(SweepStep2, PaperParamsFormat) {
  const auto base = baseline_schedule("paper");
  const auto points = sweep_step2(base, {0.5});
  ASSERT_EQ(points.size(), 11u);
  const auto& s = points[3];  // xx = 0.3
  EXPECT_EQ(s.label, "S2_0.5_0.3");
  const std::vector<PhaseParams> want = {
      {50, 0.1, 0, 1}, {100, 0.1, 0.5, 2}, {130, 0.01, 0.3, 2}, {150, 0.01, 0, 1}};
  EXPECT_EQ(s.phases, want);

  EXPECT_EQ(sweep_step2(base, {0.1, 0.3, 0.5, 0.6}).size(), 44u);
  // xx = 0: schedule equals S1_{mm} through epoch 100 (same phase-2 params)
  EXPECT_EQ(points[0].phases[1], make_s1(base, 0.5).phases[1]);
  EXPECT_DOUBLE_EQ(points[0].phases[2].beta, 0.0);
}

TEST(SweepGamma, GridsAndValidation) {
  const auto best = make_s2(baseline_schedule("paper"), 0.5, 0.3);
  const auto coarse = sweep_gamma(best, gamma_grid_coarse());
  ASSERT_EQ(coarse.size(), 10u);
  EXPECT_DOUBLE_EQ(coarse[0].phases[1].gamma, 1.0);  // gamma=1 point present
  EXPECT_DOUBLE_EQ(coarse[9].phases[1].gamma, 10.0);
  const auto fine = sweep_gamma(best, gamma_grid_fine());
  ASSERT_EQ(fine.size(), 20u);
  EXPECT_DOUBLE_EQ(fine[0].phases[1].gamma, 1.1);
  EXPECT_DOUBLE_EQ(fine[19].phases[1].gamma, 3.0);
  EXPECT_THROW(sweep_gamma(best, {0.5}), ConfigError);
  // every label parses back to its schedule
  const auto base = baseline_schedule("paper");
  for (const auto& s : fine) EXPECT_EQ(schedule_from_label(s.label, base), s) << s.label;
}

TEST(Config, ValidationRules) {
  EXPECT_THROW(parse_experiment_config("not json"), ParseError);
  EXPECT_THROW(parse_experiment_config(R"({"arch":"cnn-small"})"), ConfigError);  // no schedule
  EXPECT_THROW(parse_experiment_config(
                   R"({"schedule":"baseline","sweep":{"beta_step1":true}})"),
               ConfigError);  // both given
  EXPECT_THROW(parse_experiment_config(
                   R"({"sweep":{"beta_step1":true,"gamma":{"schedule":"S1_0.5"}}})"),
               ConfigError);  // two swept params
  EXPECT_THROW(parse_experiment_config(R"({"schedule":"baseline","seeds":[]})"), ConfigError);

  const auto cfg = parse_experiment_config(R"({"schedule":"S1_0.5","base":"desk"})");
  ASSERT_EQ(cfg.schedules.size(), 1u);
  EXPECT_EQ(cfg.schedules[0].label, "S1_0.5");
  EXPECT_EQ(cfg.schedules[0].total_epochs(), 30);

  const auto sweep_cfg = parse_experiment_config(R"({"sweep":{"beta_step1":true},"base":"paper"})");
  EXPECT_EQ(sweep_cfg.schedules.size(), 11u);
}

TEST(Experiment, EndToEndRunsSummaryAndPlots) {
  const std::string out = scratch_dir("ampgrad_exp_e2e");
  ExperimentConfig cfg = parse_experiment_config(tiny_config(out));
  std::ostringstream log;
  ASSERT_EQ(run_experiment(cfg, log), 0) << log.str();

  // per-run CSVs + selection dumps for the amplified schedule
  for (const auto label : {"baseline", "S1_0.5"})
    for (int seed : {1, 2})
      EXPECT_TRUE(std::filesystem::exists(run_stem(out, label, static_cast<uint64_t>(seed)) + ".csv"))
          << label << seed;
  EXPECT_TRUE(std::filesystem::exists(run_stem(out, "S1_0.5", 1) + ".amp"));
  EXPECT_FALSE(std::filesystem::exists(run_stem(out, "baseline", 1) + ".amp"));

  // summary: improvement column equals best amplified minus baseline mean,
  // recomputed here from the raw CSVs
  const auto rows = read_summary(out + "/summary.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].label, "baseline");
  EXPECT_FALSE(rows[0].has_improvement);
  ASSERT_EQ(rows[1].label, "S1_0.5");
  ASSERT_TRUE(rows[1].has_improvement);

  auto final_test_acc = [&](const std::string& label, int seed) {
    return read_metrics(run_stem(out, label, static_cast<uint64_t>(seed)) + ".csv").back().test_acc;
  };
  const double base_mean = (final_test_acc("baseline", 1) + final_test_acc("baseline", 2)) / 2.0;
  const double amp_best = std::max(final_test_acc("S1_0.5", 1), final_test_acc("S1_0.5", 2));
  EXPECT_NEAR(rows[1].improve_test, amp_best - base_mean, 1e-4);
  EXPECT_NEAR(rows[1].best_test_acc, amp_best, 1e-4);

  // every record stream covers epochs 1..6
  const auto recs = read_metrics(run_stem(out, "S1_0.5", 1) + ".csv");
  ASSERT_EQ(recs.size(), 6u);
  for (int e = 1; e <= 6; ++e) EXPECT_EQ(recs[static_cast<size_t>(e - 1)].epoch, e);

  // plot emission: ratio file for the S1 family + epoch file for the best point
  const auto written = emit_plot_data(out);
  ASSERT_GE(written.size(), 2u);
  const std::string ratio = read_file(out + "/ratio_S1.tsv");
  EXPECT_NE(ratio.find("ratio\tmean_test_acc"), std::string::npos);
  EXPECT_NE(ratio.find("0.5\t"), std::string::npos);
  // baseline-mean column recomputed independently
  char want[64];
  std::snprintf(want, sizeof(want), "%.6g", base_mean);
  EXPECT_NE(ratio.find(want), std::string::npos);

  const std::string epochs = read_file(out + "/epochs_S1_0.5.tsv");
  int lines = 0;
  for (char c : epochs) lines += c == '\n' ? 1 : 0;
  EXPECT_EQ(lines, 1 + 6);  // header + one row per epoch

  std::filesystem::remove_all(out);
}

TEST(Experiment, RerunIsBitIdenticalExceptWallTime) {
  const std::string out1 = scratch_dir("ampgrad_exp_det1");
  const std::string out2 = scratch_dir("ampgrad_exp_det2");
  std::ostringstream log;
  {
    ExperimentConfig cfg = parse_experiment_config(tiny_config(out1));
    ASSERT_EQ(run_experiment(cfg, log), 0);
  }
  {
    ExperimentConfig cfg = parse_experiment_config(tiny_config(out2));
    ASSERT_EQ(run_experiment(cfg, log), 0);
  }
  for (const auto label : {"baseline", "S1_0.5"})
    for (int seed : {1, 2}) {
      const auto a = read_file(run_stem(out1, label, static_cast<uint64_t>(seed)) + ".csv");
      const auto b = read_file(run_stem(out2, label, static_cast<uint64_t>(seed)) + ".csv");
      EXPECT_EQ(strip_wall(a), strip_wall(b)) << label << " seed " << seed;
    }
  std::filesystem::remove_all(out1);
  std::filesystem::remove_all(out2);
}

TEST(Experiment, FailedRunReportsNonZero) {
  const std::string out = scratch_dir("ampgrad_exp_fail");
  // cnn-small on 4-dim vector data cannot build: every run fails
  ExperimentConfig cfg = parse_experiment_config(R"({
    "arch": "cnn-small",
    "dataset": {"kind": "synth-gaussians", "n": 64, "test_n": 32, "classes": 2, "dim": 4},
    "schedule": "[(2,0.1,0,1)]",
    "seeds": [1],
    "out_dir": ")" + out + R"("
  })");
  std::ostringstream log;
  EXPECT_EQ(run_experiment(cfg, log), 1);
  EXPECT_NE(log.str().find("[fail]"), std::string::npos);
  std::filesystem::remove_all(out);
}

TEST(PlotData, MissingRunsAreListed) {
  const std::string out = scratch_dir("ampgrad_exp_missing");
  std::vector<SummaryRow> rows;
  SummaryRow r;
  r.label = "S1_0.5";
  r.runs = 1;
  rows.push_back(r);
  atomic_write_text(out + "/summary.csv", summary_to_csv(rows));
  try {
    emit_plot_data(out);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("S1_0.5"), std::string::npos);
  }
  std::filesystem::remove_all(out);
}
