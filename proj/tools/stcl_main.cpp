// stcl: grid traffic-flow forecasting pipeline.
//
// Exit codes: 0 ok, 2 input error, 3 data-quality error, 4 numerical
// failure, 5 checkpoint/config compatibility error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "stcl/config.hpp"
#include "stcl/pipeline.hpp"
#include "stcl/serialize.hpp"
#include "stcl/synthgen.hpp"

namespace fs = std::filesystem;
using namespace stcl;

namespace {

struct CompatibilityError : std::runtime_error {
  explicit CompatibilityError(const std::string& msg) : std::runtime_error(msg) {}
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.txt", serialize_config(cfg));
}

struct LoadedCubes {
  FlowCube flow;
  TransitionCube transitions;
  AccidentCube accidents;
};

LoadedCubes load_cubes(const fs::path& dir, const RunConfig& cfg) {
  LoadedCubes c;
  c.flow.values = load_cube((dir / "flow.stcb").string());
  c.transitions.values = load_cube((dir / "transitions.stcb").string());
  c.transitions.m_span = cfg.m_span;
  c.accidents.values = load_cube((dir / "accidents.stcb").string());
  Shape want{cfg.grid.x_cells, cfg.grid.y_cells, cfg.grid.num_intervals, 2};
  if (c.flow.values.shape() != want)
    throw CompatibilityError("flow cube shape " + shape_str(c.flow.values.shape()) +
                             " does not match config key grid.x_cells/y_cells/num_intervals");
  return c;
}

void write_metrics_csv(const fs::path& path,
                       const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "variant,channel,rmse,mae,regions\n";
  f.precision(10);
  for (const auto& [variant, rep] : rows) {
    f << variant << ",in," << rep.rmse_in << "," << rep.mae_in << ","
      << rep.regions_evaluated << "\n";
    f << variant << ",out," << rep.rmse_out << "," << rep.mae_out << ","
      << rep.regions_evaluated << "\n";
  }
}

void write_loss_trace(const fs::path& path, const std::vector<LossTraceRow>& trace) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "step,lr,loss\n";
  f.precision(10);
  for (const auto& row : trace)
    f << row.step << "," << row.lr << "," << row.loss << "\n";
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  cfg.grid = cfg.synth.grid();  // the synthetic city defines the grid
  fs::create_directories(out_dir);
  SynthOutput out = generate(cfg.synth);
  write_trips_csv((fs::path(out_dir) / "trips.csv").string(), out.trips);
  write_accidents_csv((fs::path(out_dir) / "accidents.csv").string(), out.accidents);
  save_cube((fs::path(out_dir) / "truth.stcb").string(), out.rate_cube);
  echo_config(out_dir, cfg);
  std::cout << "synth: " << out.trips.size() << " trips, " << out.accidents.size()
            << " accidents, " << cfg.grid.num_intervals << " intervals\n";
  return 0;
}

int cmd_ingest(const std::string& trips_path, const std::string& accidents_path,
               const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  cfg.grid.validate();
  fs::create_directories(out_dir);
  auto [trips, trip_report] = ingest_trips(trips_path, cfg.grid);
  FlowCube flow = compute_flow(trips, cfg.grid);
  TransitionCube transitions = compute_transitions(trips, cfg.grid, cfg.m_span);
  auto [accidents, acc_report] = ingest_accidents(accidents_path, cfg.grid);
  save_cube((fs::path(out_dir) / "flow.stcb").string(), flow.values);
  save_cube((fs::path(out_dir) / "transitions.stcb").string(), transitions.values);
  save_cube((fs::path(out_dir) / "accidents.stcb").string(), accidents.values);
  echo_config(out_dir, cfg);
  std::ostringstream report;
  report << "trips_total=" << trip_report.total_rows << "\n"
         << "trips_accepted=" << trip_report.accepted << "\n"
         << "trips_rejected_parse=" << trip_report.rejected_parse << "\n"
         << "trips_rejected_bounds=" << trip_report.rejected_bounds << "\n"
         << "trips_rejected_order=" << trip_report.rejected_order << "\n"
         << "trips_counted_cross_cell=" << flow.counted_trips << "\n"
         << "transitions_counted=" << transitions.counted_trips << "\n"
         << "transitions_skipped_span=" << transitions.skipped_span << "\n"
         << "accidents_total=" << acc_report.total_rows << "\n"
         << "accidents_accepted=" << acc_report.accepted << "\n"
         << "accidents_rejected=" << acc_report.rejected() << "\n";
  write_text(fs::path(out_dir) / "report.txt", report.str());
  std::cout << report.str();
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  cfg.model.validate();
  cfg.train.validate();
  fs::create_directories(out_dir);
  LoadedCubes cubes = load_cubes(data_dir, cfg);
  Dataset ds = build_dataset(cfg, cubes.flow, cubes.transitions, cubes.accidents);
  RngStream init_rng(cfg.train.seed, 400);
  ParamStore params = init_params(cfg.model, init_rng);
  TrainResult result = train(params, ds.train_windows, cfg.model, cfg.train, ds.val_windows);
  std::string config_text = serialize_config(cfg);
  save_checkpoint((fs::path(out_dir) / "checkpoint.stcl").string(), config_text, params);
  write_loss_trace(fs::path(out_dir) / "loss_trace.csv", result.trace);
  EvalReport rep = evaluate(make_stcl_predictor(params, cfg.model, cfg.train.seed), true,
                            ds.test_windows, ds.flow_scaler, ds.region_means,
                            cfg.train.eval_region_threshold);
  write_metrics_csv(fs::path(out_dir) / "metrics.csv", {{"stcl", rep}});
  echo_config(out_dir, cfg);
  std::cout << "train: " << result.steps << " steps, test rmse in/out " << rep.rmse_in
            << "/" << rep.rmse_out << "\n";
  return 0;
}

RunConfig load_and_check_checkpoint(const std::string& ckpt_path,
                                    const std::string& config_path, Checkpoint& ckpt) {
  RunConfig cfg = load_config(config_path);
  ckpt = load_checkpoint(ckpt_path);
  std::string key = first_incompatible_key(ckpt.config_text, serialize_config(cfg));
  if (!key.empty())
    throw CompatibilityError("checkpoint " + ckpt_path +
                             " incompatible with config: key " + key + " differs");
  return cfg;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& config_path, const std::string& out_path) {
  Checkpoint ckpt;
  RunConfig cfg = load_and_check_checkpoint(ckpt_path, config_path, ckpt);
  LoadedCubes cubes = load_cubes(data_dir, cfg);
  Dataset ds = build_dataset(cfg, cubes.flow, cubes.transitions, cubes.accidents);
  EvalReport rep = evaluate(make_stcl_predictor(ckpt.params, cfg.model, cfg.train.seed),
                            true, ds.test_windows, ds.flow_scaler, ds.region_means,
                            cfg.train.eval_region_threshold);
  HaBaseline ha(ds.flow_raw, ds.grid, ds.train_range);
  EvalReport ha_rep = evaluate(
      [&](const SampleWindow& w) { return ha.predict(w.region, w.target_interval); },
      false, ds.test_windows, ds.flow_scaler, ds.region_means,
      cfg.train.eval_region_threshold);
  write_metrics_csv(out_path, {{"stcl", rep}, {"ha", ha_rep}});
  std::cout << "eval: stcl rmse in/out " << rep.rmse_in << "/" << rep.rmse_out
            << "; ha rmse in/out " << ha_rep.rmse_in << "/" << ha_rep.rmse_out << "\n";
  return 0;
}

int cmd_ablate(const std::string& suite, const std::string& data_dir,
               const std::string& config_path, const std::string& out_path) {
  RunConfig cfg = load_config(config_path);
  LoadedCubes cubes = load_cubes(data_dir, cfg);
  Dataset ds = build_dataset(cfg, cubes.flow, cubes.transitions, cubes.accidents);
  AblationData data{ds.train_windows, ds.val_windows, ds.test_windows, ds.flow_scaler,
                    ds.region_means};
  AblationPair pair = run_ablation(suite, data, cfg.model, cfg.train);
  write_metrics_csv(out_path, {{pair.variant_on, pair.report_on},
                               {pair.variant_off, pair.report_off}});
  std::cout << "ablate " << suite << ": on rmse in/out " << pair.report_on.rmse_in << "/"
            << pair.report_on.rmse_out << "; off rmse in/out " << pair.report_off.rmse_in
            << "/" << pair.report_off.rmse_out << "\n";
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& data_dir,
                const std::string& config_path, size_t region,
                const std::string& out_path) {
  Checkpoint ckpt;
  RunConfig cfg = load_and_check_checkpoint(ckpt_path, config_path, ckpt);
  LoadedCubes cubes = load_cubes(data_dir, cfg);
  Dataset ds = build_dataset(cfg, cubes.flow, cubes.transitions, cubes.accidents);
  if (region >= ds.grid.regions())
    throw ConfigError("region " + std::to_string(region) + " out of range");
  Predictor predict = make_stcl_predictor(ckpt.params, cfg.model, cfg.train.seed);
  std::ofstream f(out_path);
  if (!f) throw DataError("cannot write " + out_path);
  f << "interval,true_in,true_out,pred_in,pred_out\n";
  f.precision(10);
  const auto& raw = ds.flow_raw.data();
  const size_t T = ds.grid.num_intervals;
  for (const auto& w : ds.test_windows) {
    if (w.region != region) continue;
    auto yhat = predict(w);
    f << w.target_interval << "," << raw[(region * T + w.target_interval) * 2] << ","
      << raw[(region * T + w.target_interval) * 2 + 1] << ","
      << minmax_invert_value(yhat[0], ds.flow_scaler, 0) << ","
      << minmax_invert_value(yhat[1], ds.flow_scaler, 1) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STCL traffic-flow forecasting pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", trips_path, accidents_path, data_dir;
  std::string ckpt_path, suite, out_path = "metrics.csv";
  size_t region = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic city dataset");
  synth->add_option("--config", config_path)->required();
  synth->add_option("--out-dir", out_dir)->required();

  auto* ingest = app.add_subcommand("ingest", "build grid cubes from trip/accident CSVs");
  ingest->add_option("--trips", trips_path)->required();
  ingest->add_option("--accidents", accidents_path)->required();
  ingest->add_option("--config", config_path)->required();
  ingest->add_option("--out", out_dir)->required();

  auto* train_cmd = app.add_subcommand("train", "train the forecaster");
  train_cmd->add_option("--data", data_dir)->required();
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--out", out_dir)->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test range");
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--config", config_path)->required();
  eval_cmd->add_option("--out", out_path);

  auto* ablate = app.add_subcommand("ablate", "paired flag-on/off ablation runs");
  ablate->add_option("--suite", suite)->required();
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--out", out_path);

  auto* predict = app.add_subcommand("predict", "per-region truth-vs-predicted series");
  predict->add_option("--checkpoint", ckpt_path)->required();
  predict->add_option("--data", data_dir)->required();
  predict->add_option("--config", config_path)->required();
  predict->add_option("--region", region)->required();
  predict->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(config_path, out_dir);
    if (ingest->parsed()) return cmd_ingest(trips_path, accidents_path, config_path, out_dir);
    if (train_cmd->parsed()) return cmd_train(data_dir, config_path, out_dir);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_dir, config_path, out_path);
    if (ablate->parsed()) return cmd_ablate(suite, data_dir, config_path, out_path);
    if (predict->parsed()) return cmd_predict(ckpt_path, data_dir, config_path, region, out_path);
  } catch (const CompatibilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DataQualityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
