#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ampgrad/trainer.hpp"

namespace ampgrad {

// ---------------------------------------------------------------------------
// Sweep generators mirroring the three-phase protocol: an 11-point beta scan
// of the second phase (step-1), the same scan of the third phase for chosen
// step-1 ratios (step-2), then a factor scan on a fixed schedule.
// ---------------------------------------------------------------------------

inline const std::vector<double>& ratio_grid() {
  static const std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  return grid;
}

inline std::vector<Schedule> sweep_step1(const Schedule& base) {
  if (!has_step_shape(base))
    throw ConfigError("sweep step1: base schedule must have the 4-phase step shape");
  for (const auto& p : base.phases)
    if (p.amplified())
      throw ConfigError("sweep step1: base schedule must be a baseline (no amplified phase)");
  std::vector<Schedule> out;
  for (double xx : ratio_grid()) out.push_back(make_s1(base, xx));
  return out;
}

// Default mm values: the step-1 ratios the protocol carries into step-2.
inline const std::vector<double>& default_step2_ratios() {
  static const std::vector<double> mm = {0.1, 0.3, 0.5, 0.6};
  return mm;
}

inline std::vector<Schedule> sweep_step2(const Schedule& base, const std::vector<double>& mm_list) {
  if (!has_step_shape(base))
    throw ConfigError("sweep step2: base schedule must have the 4-phase step shape");
  if (mm_list.empty()) throw ConfigError("sweep step2: mm list is empty");
  std::vector<Schedule> out;
  for (double mm : mm_list)
    for (double xx : ratio_grid()) out.push_back(make_s2(base, mm, xx));
  return out;
}

inline std::vector<double> gamma_grid_coarse() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(i);
  return g;
}
inline std::vector<double> gamma_grid_fine() {
  std::vector<double> g;
  for (int i = 11; i <= 30; ++i) g.push_back(static_cast<double>(i) / 10.0);
  return g;
}

inline std::vector<Schedule> sweep_gamma(const Schedule& best, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("sweep gamma: grid is empty");
  std::vector<Schedule> out;
  for (double g : grid) {
    if (!(g >= 1.0))
      throw ConfigError("sweep gamma: factors below 1 are not explored (got " +
                        detail::format_compact(g) + ")");
    out.push_back(with_gamma(best, g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::string kind = "synth-images";  // cifar10 | synth-images | synth-gaussians
  std::string dir;                    // cifar10 batch directory
  int64_t train_subset = 0;           // 0 = use everything
  int64_t test_subset = 0;
  bool stratified = true;
  uint64_t seed = 1;  // generation + subsetting seed
  int64_t n = 5000, test_n = 1000;
  int64_t classes = 10, dim = 16;
  double separation = 6.0;
};

struct ExperimentConfig {
  std::string arch = "cnn-small";
  DatasetSpec dataset;
  std::vector<Schedule> schedules;  // expanded sweep points, at least one
  LayerTypeSet layer_types = {.batchnorm = true};
  GroupOptions group_options;
  std::vector<uint64_t> seeds = {1};
  std::string out_dir = "out";
  int batch_size = 128;
  AmpPoint amp_point = AmpPoint::kInputSide;
  std::string base_scale = "desk";
  bool write_checkpoints = true;
};

inline ExperimentConfig parse_experiment_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: invalid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  try {
    cfg.arch = j.value("arch", cfg.arch);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
      cfg.dataset.dir = d.value("dir", cfg.dataset.dir);
      cfg.dataset.train_subset = d.value("train_subset", cfg.dataset.train_subset);
      cfg.dataset.test_subset = d.value("test_subset", cfg.dataset.test_subset);
      cfg.dataset.stratified = d.value("stratified", cfg.dataset.stratified);
      cfg.dataset.seed = d.value("seed", cfg.dataset.seed);
      cfg.dataset.n = d.value("n", cfg.dataset.n);
      cfg.dataset.test_n = d.value("test_n", cfg.dataset.test_n);
      cfg.dataset.classes = d.value("classes", cfg.dataset.classes);
      cfg.dataset.dim = d.value("dim", cfg.dataset.dim);
      cfg.dataset.separation = d.value("separation", cfg.dataset.separation);
    }
    cfg.base_scale = j.value("base", cfg.base_scale);
    if (j.contains("layer_types"))
      cfg.layer_types = LayerTypeSet::parse(j.at("layer_types").get<std::vector<std::string>>());
    if (j.contains("group_options")) {
      const auto& g = j.at("group_options");
      cfg.group_options.use_second_bn = g.value("use_second_bn", false);
      cfg.group_options.include_downsample_bn = g.value("include_downsample_bn", false);
    }
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    if (j.contains("amp_point")) cfg.amp_point = amp_point_from_string(j.at("amp_point"));
    cfg.write_checkpoints = j.value("write_checkpoints", cfg.write_checkpoints);

    const Schedule base = baseline_schedule(cfg.base_scale);
    const bool has_schedule = j.contains("schedule");
    const bool has_sweep = j.contains("sweep");
    if (has_schedule == has_sweep)
      throw ConfigError("config: exactly one of 'schedule' or 'sweep' is required");
    if (has_schedule) {
      const auto& s = j.at("schedule");
      if (s.is_string()) {
        cfg.schedules = {schedule_from_label(s.get<std::string>(), base)};
      } else if (s.is_array()) {
        for (const auto& item : s)
          cfg.schedules.push_back(schedule_from_label(item.get<std::string>(), base));
      } else {
        throw ConfigError("config: 'schedule' must be a label string or list of labels");
      }
    } else {
      const auto& sweep = j.at("sweep");
      const std::vector<std::string> known = {"beta_step1", "beta_step2", "gamma"};
      int found = 0;
      for (const auto& k : known) found += sweep.contains(k) ? 1 : 0;
      if (found != 1)
        throw ConfigError("config: sweep must name exactly one swept parameter "
                          "(beta_step1, beta_step2 or gamma), found " + std::to_string(found));
      if (sweep.contains("beta_step1")) {
        cfg.schedules = sweep_step1(base);
      } else if (sweep.contains("beta_step2")) {
        std::vector<double> mm = default_step2_ratios();
        if (sweep.at("beta_step2").contains("mm"))
          mm = sweep.at("beta_step2").at("mm").get<std::vector<double>>();
        cfg.schedules = sweep_step2(base, mm);
      } else {
        const auto& g = sweep.at("gamma");
        const Schedule best = schedule_from_label(g.at("schedule").get<std::string>(), base);
        std::vector<double> grid;
        const std::string grid_name = g.value("grid", "coarse");
        if (g.contains("values"))
          grid = g.at("values").get<std::vector<double>>();
        else if (grid_name == "coarse")
          grid = gamma_grid_coarse();
        else if (grid_name == "fine")
          grid = gamma_grid_fine();
        else
          throw ConfigError("config: unknown gamma grid '" + grid_name + "'");
        cfg.schedules = sweep_gamma(best, grid);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (cfg.seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (cfg.schedules.empty()) throw ConfigError("config: no schedules to run");
  if (cfg.batch_size <= 0) throw ConfigError("config: batch_size must be positive");
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment_config(ss.str());
}

// ---------------------------------------------------------------------------
// Data assembly: load or generate, subset, standardize with train statistics.
// ---------------------------------------------------------------------------
inline std::pair<Dataset, Dataset> prepare_data(const DatasetSpec& spec) {
  Dataset train, test;
  if (spec.kind == "cifar10") {
    auto [tr, te] = load_cifar10(spec.dir.empty() ? "data/cifar-10-batches-bin" : spec.dir);
    train = std::move(tr);
    test = std::move(te);
  } else if (spec.kind == "synth-images") {
    train = synth_images(spec.seed, spec.n, spec.classes);
    test = synth_images(spec.seed + 0x9e37, spec.test_n, spec.classes);
  } else if (spec.kind == "synth-gaussians") {
    train = synth_gaussians(spec.seed, spec.n, spec.classes, spec.dim, spec.separation);
    test = synth_gaussians(spec.seed + 0x9e37, spec.test_n, spec.classes, spec.dim, spec.separation);
  } else {
    throw ConfigError("unknown dataset kind '" + spec.kind + "'");
  }
  if (spec.train_subset > 0) train = subset(train, spec.train_subset, spec.seed, spec.stratified);
  if (spec.test_subset > 0) test = subset(test, spec.test_subset, spec.seed + 1, spec.stratified);
  auto [train_normed, stats] = normalize(train);
  auto [test_normed, _] = normalize(test, &stats);
  return {std::move(train_normed), std::move(test_normed)};
}

inline ArchConfig arch_for(const ExperimentConfig& cfg, const Dataset& train) {
  if (cfg.arch == "mlp-tiny")
    return make_mlp_tiny(train.sample_numel(), train.num_classes);
  return make_preset(cfg.arch, train.num_classes);
}

// ---------------------------------------------------------------------------
// Runner: every (schedule, seed) pair is one independent run executed by a
// small worker pool (AMPGRAD_THREADS caps the size). All outputs are written
// atomically via temp + rename.
// ---------------------------------------------------------------------------

struct RunOutcome {
  std::string label;
  uint64_t seed = 0;
  std::string csv_path;
  bool ok = false;
  std::string error;
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
};

inline std::string run_stem(const std::string& out_dir, const std::string& label, uint64_t seed) {
  return out_dir + "/" + label + "_seed" + std::to_string(seed);
}

inline int worker_count(size_t runs) {
  if (const char* env = std::getenv("AMPGRAD_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<int>(std::min<size_t>(static_cast<size_t>(v), runs));
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min<size_t>(hw == 0 ? 1 : hw, runs));
}

inline std::vector<RunOutcome> execute_runs(const ExperimentConfig& cfg, const Dataset& train_set,
                                            const Dataset& test_set, std::ostream& log) {
  struct RunSpec {
    const Schedule* schedule;
    uint64_t seed;
  };
  std::vector<RunSpec> specs;
  for (const auto& sched : cfg.schedules)
    for (uint64_t seed : cfg.seeds) specs.push_back({&sched, seed});

  std::filesystem::create_directories(cfg.out_dir);
  std::vector<RunOutcome> outcomes(specs.size());
  std::atomic<size_t> next{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) {
      const RunSpec& spec = specs[i];
      RunOutcome& out = outcomes[i];
      out.label = spec.schedule->label;
      out.seed = spec.seed;
      const std::string stem = run_stem(cfg.out_dir, out.label, out.seed);
      out.csv_path = stem + ".csv";
      try {
        const ArchConfig arch = arch_for(cfg, train_set);
        auto model = build_model<float>(arch, spec.seed);
        TrainOptions opts;
        opts.batch_size = cfg.batch_size;
        opts.layer_types = cfg.layer_types;
        opts.group_options = cfg.group_options;
        opts.amp_point = cfg.amp_point;
        if (cfg.write_checkpoints) opts.checkpoint_path = stem + ".ckpt";
        bool any_amp = false;
        for (const auto& p : spec.schedule->phases) any_amp |= p.amplified();
        if (any_amp) opts.selection_dump_path = stem + ".amp";

        auto records = train(model, *spec.schedule, train_set, test_set, spec.seed, opts);
        atomic_write_text(out.csv_path, metrics_to_csv(records));
        out.final_train_acc = records.back().train_acc;
        out.final_test_acc = records.back().test_acc;
        out.ok = true;
        std::lock_guard<std::mutex> lock(log_mutex);
        log << "[done] " << out.label << " seed=" << out.seed << " train=" << out.final_train_acc
            << "% test=" << out.final_test_acc << "%\n";
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
        std::lock_guard<std::mutex> lock(log_mutex);
        log << "[fail] " << out.label << " seed=" << out.seed << ": " << out.error << "\n";
      }
    }
  };

  const int workers = worker_count(specs.size());
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return outcomes;
}

// ---------------------------------------------------------------------------
// Summary: per sweep point, mean and best final accuracy across seeds plus
// the improvement of the best amplified run over the baseline mean.
// ---------------------------------------------------------------------------

struct SummaryRow {
  std::string label;
  int runs = 0;
  double mean_train_acc = 0.0, best_train_acc = 0.0;
  double mean_test_acc = 0.0, best_test_acc = 0.0;
  bool has_improvement = false;
  double improve_train = 0.0, improve_test = 0.0;  // best vs baseline mean
};

inline constexpr const char* kSummaryHeader =
    "label,runs,mean_train_acc,best_train_acc,mean_test_acc,best_test_acc,improve_train,"
    "improve_test";

inline std::vector<SummaryRow> summarize(const std::vector<RunOutcome>& outcomes) {
  std::map<std::string, std::vector<const RunOutcome*>> by_label;
  std::vector<std::string> order;  // first-appearance order
  for (const auto& o : outcomes) {
    if (!o.ok) continue;
    if (by_label.find(o.label) == by_label.end()) order.push_back(o.label);
    by_label[o.label].push_back(&o);
  }
  double baseline_mean_train = 0.0, baseline_mean_test = 0.0;
  bool have_baseline = false;
  if (auto it = by_label.find("baseline"); it != by_label.end()) {
    for (const auto* o : it->second) {
      baseline_mean_train += o->final_train_acc;
      baseline_mean_test += o->final_test_acc;
    }
    baseline_mean_train /= static_cast<double>(it->second.size());
    baseline_mean_test /= static_cast<double>(it->second.size());
    have_baseline = true;
  }

  std::vector<SummaryRow> rows;
  for (const auto& label : order) {
    const auto& runs = by_label[label];
    SummaryRow row;
    row.label = label;
    row.runs = static_cast<int>(runs.size());
    for (const auto* o : runs) {
      row.mean_train_acc += o->final_train_acc;
      row.mean_test_acc += o->final_test_acc;
      row.best_train_acc = std::max(row.best_train_acc, o->final_train_acc);
      row.best_test_acc = std::max(row.best_test_acc, o->final_test_acc);
    }
    row.mean_train_acc /= row.runs;
    row.mean_test_acc /= row.runs;
    if (have_baseline && label != "baseline") {
      row.has_improvement = true;
      row.improve_train = row.best_train_acc - baseline_mean_train;
      row.improve_test = row.best_test_acc - baseline_mean_test;
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::string out = kSummaryHeader;
  out += "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6g,%.6g,%.6g,%.6g,", r.label.c_str(), r.runs,
                  r.mean_train_acc, r.best_train_acc, r.mean_test_acc, r.best_test_acc);
    out += buf;
    if (r.has_improvement) {
      std::snprintf(buf, sizeof(buf), "%.6g,%.6g", r.improve_train, r.improve_test);
      out += buf;
    } else {
      out += ",";
    }
    out += "\n";
  }
  return out;
}

// Full experiment entry point. Returns a process exit code: 0 when every run
// succeeded, 1 when any failed.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  auto [train_set, test_set] = prepare_data(cfg.dataset);
  log << "dataset: " << cfg.dataset.kind << " train=" << train_set.size()
      << " test=" << test_set.size() << "; arch=" << cfg.arch << "; " << cfg.schedules.size()
      << " schedule(s) x " << cfg.seeds.size() << " seed(s)\n";
  auto outcomes = execute_runs(cfg, train_set, test_set, log);
  atomic_write_text(cfg.out_dir + "/summary.csv", summary_to_csv(summarize(outcomes)));

  int failures = 0;
  for (const auto& o : outcomes)
    if (!o.ok) ++failures;
  if (failures > 0) {
    log << failures << " run(s) failed:\n";
    for (const auto& o : outcomes)
      if (!o.ok) log << "  " << o.label << " seed=" << o.seed << ": " << o.error << "\n";
    return 1;
  }
  log << "summary: " << cfg.out_dir << "/summary.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Plot-ready data: tab-separated files derived from the run CSVs.
//   ratio_<family>.tsv  accuracy vs beta, with a baseline-mean column
//   gamma_<label>.tsv   accuracy vs gamma
//   epochs_<label>.tsv  accuracy vs epoch for the best amplified point
// ---------------------------------------------------------------------------

struct ParsedLabel {
  enum Kind { kBaseline, kS1, kS2, kOther } kind = kOther;
  double mm = 0.0, nn = 0.0;
  double gamma = 2.0;
  bool has_gamma_suffix = false;
  std::string family;  // "S1" or "S2_<mm>"
};

inline ParsedLabel parse_label_fields(const std::string& label) {
  ParsedLabel p;
  std::string body = label;
  if (const size_t gpos = body.rfind("_g"); gpos != std::string::npos) {
    try {
      size_t used = 0;
      const double g = std::stod(body.substr(gpos + 2), &used);
      if (used == body.size() - gpos - 2) {
        p.gamma = g;
        p.has_gamma_suffix = true;
        body = body.substr(0, gpos);
      }
    } catch (const std::exception&) {
    }
  }
  if (body == "baseline") {
    p.kind = ParsedLabel::kBaseline;
    return p;
  }
  auto grab = [&](size_t from, double& dst, size_t& next) {
    const size_t us = body.find('_', from);
    const std::string tok = body.substr(from, us == std::string::npos ? us : us - from);
    dst = std::stod(tok);
    next = us;
  };
  try {
    if (body.rfind("S1_", 0) == 0) {
      size_t next = 0;
      grab(3, p.mm, next);
      if (next == std::string::npos) {
        p.kind = ParsedLabel::kS1;
        p.family = "S1";
      }
    } else if (body.rfind("S2_", 0) == 0) {
      size_t next = 0;
      grab(3, p.mm, next);
      if (next != std::string::npos) {
        size_t next2 = 0;
        grab(next + 1, p.nn, next2);
        if (next2 == std::string::npos) {
          p.kind = ParsedLabel::kS2;
          p.family = "S2_" + detail::format_ratio(p.mm);
        }
      }
    }
  } catch (const std::exception&) {
    p.kind = ParsedLabel::kOther;
  }
  return p;
}

// Reads the per-run CSVs for every summary label back in, discovering seeds
// from the <label>_seed<k>.csv files; throws IoError listing labels with no
// runs on disk.
inline std::map<std::string, std::vector<std::vector<MetricsRecord>>> collect_runs(
    const std::string& out_dir, const std::vector<SummaryRow>& rows) {
  std::map<std::string, std::vector<std::vector<MetricsRecord>>> runs;
  std::string missing;
  for (const auto& row : rows) {
    std::vector<std::pair<uint64_t, std::string>> found;  // (seed, path), sorted by seed
    const std::string prefix = row.label + "_seed";
    for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind(prefix, 0) != 0 || entry.path().extension() != ".csv") continue;
      const std::string seed_part =
          name.substr(prefix.size(), name.size() - prefix.size() - 4);
      try {
        size_t used = 0;
        const uint64_t seed = std::stoull(seed_part, &used);
        if (used == seed_part.size()) found.emplace_back(seed, entry.path().string());
      } catch (const std::exception&) {
      }
    }
    if (found.empty()) {
      missing += missing.empty() ? row.label : (", " + row.label);
      continue;
    }
    std::sort(found.begin(), found.end());
    for (const auto& [seed, path] : found) runs[row.label].push_back(read_metrics(path));
  }
  if (!missing.empty()) throw IoError("plot: no run files found for: " + missing);
  return runs;
}

inline std::vector<SummaryRow> read_summary(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open summary: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kSummaryHeader)
    throw ParseError("summary " + path + ": unexpected header");
  std::vector<SummaryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    SummaryRow r;
    std::stringstream ss(line);
    std::string field;
    auto next = [&] {
      if (!std::getline(ss, field, ',')) throw ParseError("summary: short row '" + line + "'");
      return field;
    };
    r.label = next();
    r.runs = std::stoi(next());
    r.mean_train_acc = std::stod(next());
    r.best_train_acc = std::stod(next());
    r.mean_test_acc = std::stod(next());
    r.best_test_acc = std::stod(next());
    std::string it = next();
    if (!it.empty()) {
      r.has_improvement = true;
      r.improve_train = std::stod(it);
      std::getline(ss, field, ',');
      r.improve_test = std::stod(field);
    }
    rows.push_back(r);
  }
  return rows;
}

// Emits the plot files for one experiment directory; returns the paths written.
inline std::vector<std::string> emit_plot_data(const std::string& out_dir) {
  const auto rows = read_summary(out_dir + "/summary.csv");
  const auto runs = collect_runs(out_dir, rows);
  std::vector<std::string> written;

  double baseline_mean_test = 0.0;
  bool have_baseline = false;
  std::vector<double> baseline_epoch_mean;  // per-epoch mean test accuracy
  if (auto it = runs.find("baseline"); it != runs.end()) {
    have_baseline = true;
    for (const auto& run : it->second) baseline_mean_test += run.back().test_acc;
    baseline_mean_test /= static_cast<double>(it->second.size());
    const size_t epochs = it->second.front().size();
    baseline_epoch_mean.assign(epochs, 0.0);
    for (const auto& run : it->second)
      for (size_t e = 0; e < epochs; ++e) baseline_epoch_mean[e] += run[e].test_acc;
    for (auto& v : baseline_epoch_mean) v /= static_cast<double>(it->second.size());
  }

  char buf[256];
  // accuracy vs ratio, one file per family
  std::map<std::string, std::string> family_files;
  for (const auto& row : rows) {
    const ParsedLabel p = parse_label_fields(row.label);
    if ((p.kind != ParsedLabel::kS1 && p.kind != ParsedLabel::kS2) || p.has_gamma_suffix) continue;
    const double ratio = p.kind == ParsedLabel::kS1 ? p.mm : p.nn;
    auto& body = family_files[p.family];
    if (body.empty()) body = "ratio\tmean_test_acc\tbest_test_acc\tbaseline_mean_test\n";
    std::snprintf(buf, sizeof(buf), "%.6g\t%.6g\t%.6g\t%.6g\n", ratio, row.mean_test_acc,
                  row.best_test_acc, baseline_mean_test);
    body += buf;
  }
  for (const auto& [family, body] : family_files) {
    const std::string path = out_dir + "/ratio_" + family + ".tsv";
    atomic_write_text(path, body);
    written.push_back(path);
  }

  // accuracy vs gamma
  std::map<std::string, std::string> gamma_files;
  for (const auto& row : rows) {
    const ParsedLabel p = parse_label_fields(row.label);
    if (!p.has_gamma_suffix) continue;
    const std::string base_label = row.label.substr(0, row.label.rfind("_g"));
    auto& body = gamma_files[base_label];
    if (body.empty()) body = "gamma\tmean_test_acc\tbest_test_acc\tbaseline_mean_test\n";
    std::snprintf(buf, sizeof(buf), "%.6g\t%.6g\t%.6g\t%.6g\n", p.gamma, row.mean_test_acc,
                  row.best_test_acc, baseline_mean_test);
    body += buf;
  }
  for (const auto& [base_label, body] : gamma_files) {
    const std::string path = out_dir + "/gamma_" + base_label + ".tsv";
    atomic_write_text(path, body);
    written.push_back(path);
  }

  // accuracy vs epoch for the best amplified sweep point
  const SummaryRow* best = nullptr;
  for (const auto& row : rows) {
    if (row.label == "baseline") continue;
    if (best == nullptr || row.best_test_acc > best->best_test_acc) best = &row;
  }
  if (best != nullptr && have_baseline) {
    const auto& best_runs = runs.at(best->label);
    const size_t epochs = best_runs.front().size();
    std::string body = "epoch\ttrain_acc\ttest_acc\tbaseline_mean_test\n";
    for (size_t e = 0; e < epochs; ++e) {
      double train_acc = 0.0, test_acc = 0.0;
      for (const auto& run : best_runs) {
        train_acc += run[e].train_acc;
        test_acc += run[e].test_acc;
      }
      train_acc /= static_cast<double>(best_runs.size());
      test_acc /= static_cast<double>(best_runs.size());
      const double base_e = e < baseline_epoch_mean.size() ? baseline_epoch_mean[e] : 0.0;
      std::snprintf(buf, sizeof(buf), "%zu\t%.6g\t%.6g\t%.6g\n", e + 1, train_acc, test_acc, base_e);
      body += buf;
    }
    const std::string path = out_dir + "/epochs_" + best->label + ".tsv";
    atomic_write_text(path, body);
    written.push_back(path);
  }
  return written;
}

}  // namespace ampgrad
