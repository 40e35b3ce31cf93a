#pragma once

// The `selftune` command line: train, ablate, sweep, report.
// Exit codes: 0 success, 2 invalid configuration or usage, 1 runtime failure.

#include "selftune/experiment.hpp"
#include "selftune/plot.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace selftune::cli {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

/// Config file, then overrides, then `--seed` and `--out`.
inline ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = load_experiment(o.config, o.overrides);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.seeds = {*o.seed};
  }
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

inline fs::path prepare_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

/// test_accuracy - pseudo_label_accuracy per epoch.
inline std::vector<double> gap_series(const std::vector<EpochRow>& rows) {
  std::vector<double> g;
  for (const auto& r : rows) g.push_back(r.tolerance_gap());
  return g;
}

/// Writes curves.png (both accuracies) and gap.png (their difference).
inline std::vector<fs::path> render_report(const std::vector<EpochRow>& rows, const fs::path& dir) {
  std::vector<double> epochs, test, pseudo;
  for (const auto& r : rows) {
    epochs.push_back(r.epoch);
    test.push_back(r.test_accuracy);
    pseudo.push_back(r.pseudo_label_accuracy);
  }
  const fs::path curves = dir / "curves.png", gap = dir / "gap.png";
  plot::line_chart("accuracy", "epoch", "accuracy",
                   {{"test", epochs, test}, {"pseudo-label", epochs, pseudo}}, plot::AxisRange{0.0, 1.0})
      .write_png(curves.string());
  plot::line_chart("test - pseudo-label accuracy", "epoch", "gap", {{"gap", epochs, gap_series(rows)}})
      .write_png(gap.string());
  return {curves, gap};
}

inline int cmd_train(const CommonOptions& o, std::ostream& out) {
  const ExperimentConfig c = resolve(o);
  const fs::path dir = prepare_dir(c.output_dir);
  const Split split = make_split(c, c.train.seed);
  std::optional<ModelBundle> pre;
  if (auto source = pretrain_source_fn(c)) pre = source(c.train);
  ModelBundle final_bundle;
  const TrainReport report = train(c.train, split, pre ? &*pre : nullptr, &final_bundle);

  write_text(dir / "report.csv", report_csv(report));
  save_checkpoint((dir / "checkpoint.bin").string(), final_bundle);
  write_json(dir / "config.json", to_json(c));
  write_json(dir / "summary.json",
             Json{{"command", "train"},
                  {"method", to_string(report.method)},
                  {"seed", report.seed},
                  {"epochs", report.rows.size()},
                  {"labeled", split.labeled.size()},
                  {"unlabeled", split.unlabeled.size()},
                  {"test", split.test.size()},
                  {"final_test_accuracy", number(report.final_test_accuracy())},
                  {"final_pseudo_label_accuracy", number(report.final_pseudo_label_accuracy())},
                  {"mean_tolerance_gap", number(report.mean_tolerance_gap())}});
  render_report(report.rows, dir);
  out << to_string(report.method) << " seed " << report.seed << ": test accuracy " << report.final_test_accuracy()
      << " -> " << dir.string() << '\n';
  return 0;
}

inline int cmd_ablate(const CommonOptions& o, std::ostream& out) {
  const ExperimentConfig c = resolve(o);
  const fs::path dir = prepare_dir(c.output_dir);
  const AblationTable table = run_ablation_suite(c.train, data_source(c), c.seeds, pretrain_source_fn(c));

  std::ostringstream csv;
  write_ablation_csv(table, csv);
  write_text(dir / "ablation.csv", csv.str());
  write_json(dir / "config.json", to_json(c));

  Json rows = Json::array();
  std::vector<std::string> names;
  std::vector<double> means, sds;
  for (const auto& r : table.rows) {
    const Summary a = r.accuracy(), g = r.tolerance_gap();
    rows.push_back({{"variant", r.variant},
                    {"mean_test_accuracy", number(a.mean)},
                    {"std_test_accuracy", number(a.stddev)},
                    {"mean_tolerance_gap", number(g.mean)},
                    {"std_tolerance_gap", number(g.stddev)}});
    names.push_back(r.variant);
    means.push_back(a.mean);
    sds.push_back(a.stddev);
    out << r.variant << ": " << a.mean << " +- " << a.stddev << '\n';
  }
  write_json(dir / "summary.json", Json{{"command", "ablate"}, {"seeds", c.seeds}, {"variants", rows}});
  plot::bar_chart("ablation", "test accuracy", names, means, sds).write_png((dir / "ablation.png").string());
  return 0;
}

struct Grid {
  std::vector<int> projector_dims;
  std::vector<int> keys_per_category;
};

/// "L=16,32;D=8,16". A missing axis keeps the configured value.
inline Grid parse_grid(const std::string& spec, const TrainConfig& base) {
  Grid g;
  std::stringstream parts(spec);
  std::string part;
  while (std::getline(parts, part, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("grid part '" + part + "' is not AXIS=v1,v2,...");
    const std::string axis = part.substr(0, eq);
    std::vector<int>* target = axis == "L" ? &g.projector_dims : axis == "D" ? &g.keys_per_category : nullptr;
    if (!target) throw ConfigError("grid axis '" + axis + "' is not L or D");
    if (!target->empty()) throw ConfigError("grid axis '" + axis + "' given twice");
    std::stringstream values(part.substr(eq + 1));
    std::string v;
    while (std::getline(values, v, ',')) {
      std::size_t used = 0;
      int x = 0;
      try {
        x = std::stoi(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != v.size() || x < 1) throw ConfigError("grid value '" + v + "' for " + axis + " is not a positive integer");
      target->push_back(x);
    }
    if (target->empty()) throw ConfigError("grid axis '" + axis + "' has no values");
  }
  if (g.projector_dims.empty() && g.keys_per_category.empty()) throw ConfigError("grid spec '" + spec + "' is empty");
  if (g.projector_dims.empty()) g.projector_dims = {base.projector_dim};
  if (g.keys_per_category.empty()) g.keys_per_category = {base.keys_per_category};
  return g;
}

inline int cmd_sweep(const CommonOptions& o, const std::string& grid_spec, std::ostream& out) {
  const ExperimentConfig c = resolve(o);
  const Grid grid = parse_grid(grid_spec, c.train);
  const fs::path dir = prepare_dir(c.output_dir);
  const SweepResult r = run_sensitivity_sweep(c.train, data_source(c), grid.projector_dims, grid.keys_per_category,
                                              c.seeds, pretrain_source_fn(c));
  std::ostringstream csv;
  write_sweep_csv(r, csv);
  write_text(dir / "sweep.csv", csv.str());
  write_json(dir / "config.json", to_json(c));

  Json matrix = Json::array();
  for (Eigen::Index i = 0; i < r.accuracy.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < r.accuracy.cols(); ++j) row.push_back(number(r.accuracy(i, j)));
    matrix.push_back(row);
  }
  write_json(dir / "summary.json", Json{{"command", "sweep"},
                                        {"seeds", c.seeds},
                                        {"projector_dims", r.projector_dims},
                                        {"keys_per_category", r.keys_per_category},
                                        {"mean_test_accuracy", matrix},
                                        {"spread", number(r.spread())}});
  std::vector<std::string> rows, cols;
  for (int l : r.projector_dims) rows.push_back(std::to_string(l));
  for (int d : r.keys_per_category) cols.push_back(std::to_string(d));
  plot::heat_map("test accuracy", "L", "D", rows, cols, r.accuracy).write_png((dir / "sweep.png").string());
  out << "sweep spread " << r.spread() << " -> " << dir.string() << '\n';
  return 0;
}

inline int cmd_report(const std::string& run_dir, std::ostream& out) {
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir)) throw ConfigError("run directory " + run_dir + " does not exist");
  const fs::path csv = dir / "report.csv";
  if (!fs::is_regular_file(csv)) throw ConfigError("run directory " + run_dir + " has no report.csv");
  std::ifstream is(csv);
  const auto rows = read_report_csv(is);
  if (rows.empty()) throw ConfigError(csv.string() + " has no epochs");
  for (const auto& p : render_report(rows, dir)) out << p.string() << '\n';
  return 0;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Semi-supervised fine-tuning with a class-partitioned key queue"};
  app.require_subcommand(1);
  CommonOptions opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "experiment JSON")->required();
    sub->add_option("--seed", opts.seed, "override the seed (and the seed list)");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--override", opts.overrides, "dotted KEY=VALUE, repeatable")->take_all();
  };
  CLI::App* train_cmd = app.add_subcommand("train", "train one configuration");
  add_common(train_cmd);
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the seven ablation variants");
  add_common(ablate_cmd);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "sweep projector size L and keys per category D");
  add_common(sweep_cmd);
  std::string grid;
  sweep_cmd->add_option("--grid", grid, "e.g. \"L=16,32;D=8,16\"")->required();
  CLI::App* report_cmd = app.add_subcommand("report", "render plots from a run directory");
  std::string run_dir;
  report_cmd->add_option("run_dir", run_dir, "directory holding report.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(opts, out);
    if (*ablate_cmd) return cmd_ablate(opts, out);
    if (*sweep_cmd) return cmd_sweep(opts, grid, out);
    return cmd_report(run_dir, out);
  } catch (const ArgumentError& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace selftune::cli
