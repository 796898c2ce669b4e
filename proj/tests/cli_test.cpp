#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "stcl/serialize.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = STCL_CLI_PATH;

int run(const std::string& args) {
  int rc = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(rc);
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::path(testing::TempDir()) / "stcl_cli_fixture";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

size_t count_lines(const std::string& text) {
  size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

const char* kBaseConfig =
    "# small synthetic city, tiny model\n"
    "synth.x_cells = 3\n"
    "synth.y_cells = 3\n"
    "synth.days = 2\n"
    "synth.base_rate = 5\n"
    "synth.accident_rate = 0.01\n"
    "synth.seed = 1\n"
    "model.d_model = 8\n"
    "model.d_f = 16\n"
    "model.num_layers = 1\n"
    "model.num_heads = 2\n"
    "model.dropout = 0.0\n"
    "model.m_pool = 3\n"
    "model.stfm_channels = 8\n"
    "model.stfm_kernel = 3\n"
    "model.ft_kernel_sizes = 3\n"
    "model.attention_window = 2\n"
    "model.t_hist = 6\n"
    "train.batch_size = 16\n"
    "train.max_epochs = 1\n"
    "train.warmup = 50\n"
    "train.steps_per_epoch = 3\n"
    "train.eval_region_threshold = 0.0\n";

fs::path base_config() {
  fs::path p = work_dir() / "base_config.txt";
  if (!fs::exists(p)) write_text(p, kBaseConfig);
  return p;
}

// grid.* keys resolved by the synth step; later steps reuse this echo
fs::path synth_config() { return work_dir() / "synth" / "config.txt"; }

}  // namespace

TEST(Cli, HelpAndBadInvocations) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);                      // missing subcommand
  EXPECT_EQ(run("synth"), 2);                 // missing required flags
  EXPECT_EQ(run("frobnicate --config x"), 2); // unknown subcommand
}

TEST(Cli, SynthProducesDatasetArtifacts) {
  fs::path out = work_dir() / "synth";
  ASSERT_EQ(run("synth --config " + base_config().string() + " --out-dir " + out.string()),
            0);
  EXPECT_TRUE(fs::exists(out / "trips.csv"));
  EXPECT_TRUE(fs::exists(out / "accidents.csv"));
  EXPECT_TRUE(fs::exists(out / "truth.stcb"));
  ASSERT_TRUE(fs::exists(out / "config.txt"));
  std::string echo = read_text(out / "config.txt");
  EXPECT_NE(echo.find("grid.x_cells=3"), std::string::npos);
  EXPECT_NE(echo.find("grid.num_intervals=192"), std::string::npos);
  stcl::Tensor truth = stcl::load_cube((out / "truth.stcb").string());
  EXPECT_EQ(truth.shape(), (stcl::Shape{3, 3, 192, 2}));
}

TEST(Cli, IngestBuildsCubesAndReport) {
  fs::path synth = work_dir() / "synth";
  fs::path data = work_dir() / "data";
  ASSERT_EQ(run("ingest --trips " + (synth / "trips.csv").string() + " --accidents " +
                (synth / "accidents.csv").string() + " --config " +
                synth_config().string() + " --out " + data.string()),
            0);
  stcl::Tensor flow = stcl::load_cube((data / "flow.stcb").string());
  EXPECT_EQ(flow.shape(), (stcl::Shape{3, 3, 192, 2}));
  stcl::Tensor trans = stcl::load_cube((data / "transitions.stcb").string());
  EXPECT_EQ(trans.shape(), (stcl::Shape{3, 3, 3, 3, 192, 2}));
  stcl::Tensor acc = stcl::load_cube((data / "accidents.stcb").string());
  EXPECT_EQ(acc.shape(), (stcl::Shape{3, 3, 192, 1}));
  std::string report = read_text(data / "report.txt");
  EXPECT_NE(report.find("trips_accepted="), std::string::npos);
  EXPECT_NE(report.find("transitions_skipped_span="), std::string::npos);
  EXPECT_EQ(report.find("trips_rejected_parse=0"), report.find("trips_rejected_parse"));
}

TEST(Cli, IngestRejectsGarbageWithExitCode3) {
  fs::path bad = work_dir() / "garbage.csv";
  write_text(bad,
             "start_time,end_time,start_lon,start_lat,end_lon,end_lat\n"
             "nope\nstill nope\nnothing\n"
             "1704067200,1704067300,0.5,0.5,1.5,0.5\n");
  fs::path acc = work_dir() / "synth" / "accidents.csv";
  EXPECT_EQ(run("ingest --trips " + bad.string() + " --accidents " + acc.string() +
                " --config " + synth_config().string() + " --out " +
                (work_dir() / "bad_out").string()),
            3);
}

TEST(Cli, InputErrorsExitCode2) {
  EXPECT_EQ(run("ingest --trips /nonexistent.csv --accidents /nonexistent.csv --config " +
                synth_config().string() + " --out " + (work_dir() / "x").string()),
            2);
  fs::path bad_cfg = work_dir() / "bad_config.txt";
  write_text(bad_cfg, "no.such.key = 1\n");
  EXPECT_EQ(run("synth --config " + bad_cfg.string() + " --out-dir " +
                (work_dir() / "y").string()),
            2);
}

TEST(Cli, TrainWritesCheckpointTraceAndMetrics) {
  fs::path out = work_dir() / "run";
  ASSERT_EQ(run("train --data " + (work_dir() / "data").string() + " --config " +
                synth_config().string() + " --out " + out.string()),
            0);
  ASSERT_TRUE(fs::exists(out / "checkpoint.stcl"));
  std::string trace = read_text(out / "loss_trace.csv");
  EXPECT_EQ(trace.rfind("step,lr,loss\n", 0), 0u);
  EXPECT_EQ(count_lines(trace), 1u + 3u);  // header + steps_per_epoch * max_epochs
  std::string metrics = read_text(out / "metrics.csv");
  EXPECT_EQ(metrics.rfind("variant,channel,rmse,mae,regions\n", 0), 0u);
  EXPECT_NE(metrics.find("stcl,in,"), std::string::npos);
  EXPECT_NE(metrics.find("stcl,out,"), std::string::npos);
  stcl::Checkpoint ckpt = stcl::load_checkpoint((out / "checkpoint.stcl").string());
  EXPECT_GT(ckpt.params.size(), 0u);
}

TEST(Cli, EvalComparesAgainstHaBaseline) {
  fs::path metrics = work_dir() / "eval_metrics.csv";
  ASSERT_EQ(run("eval --checkpoint " + (work_dir() / "run" / "checkpoint.stcl").string() +
                " --data " + (work_dir() / "data").string() + " --config " +
                synth_config().string() + " --out " + metrics.string()),
            0);
  std::string text = read_text(metrics);
  EXPECT_NE(text.find("stcl,in,"), std::string::npos);
  EXPECT_NE(text.find("ha,in,"), std::string::npos);
  EXPECT_NE(text.find("ha,out,"), std::string::npos);
}

TEST(Cli, IncompatibleConfigExitCode5) {
  fs::path altered = work_dir() / "altered_config.txt";
  std::string cfg = read_text(synth_config());
  size_t pos = cfg.find("model.d_model=8");
  ASSERT_NE(pos, std::string::npos);
  cfg.replace(pos, 15, "model.d_model=16");
  write_text(altered, cfg);
  EXPECT_EQ(run("eval --checkpoint " + (work_dir() / "run" / "checkpoint.stcl").string() +
                " --data " + (work_dir() / "data").string() + " --config " +
                altered.string() + " --out " + (work_dir() / "m5.csv").string()),
            5);
}

TEST(Cli, CorruptCheckpointExitCode2) {
  fs::path good = work_dir() / "run" / "checkpoint.stcl";
  fs::path bad = work_dir() / "corrupt.stcl";
  std::string buf = stcl::wire::read_file(good.string());
  buf[buf.size() / 2] ^= 0x20;
  stcl::wire::write_file(bad.string(), buf);
  EXPECT_EQ(run("eval --checkpoint " + bad.string() + " --data " +
                (work_dir() / "data").string() + " --config " + synth_config().string() +
                " --out " + (work_dir() / "m6.csv").string()),
            2);
}

TEST(Cli, PredictEmitsOneRowPerTestInterval) {
  fs::path out = work_dir() / "pred.csv";
  ASSERT_EQ(run("predict --checkpoint " + (work_dir() / "run" / "checkpoint.stcl").string() +
                " --data " + (work_dir() / "data").string() + " --config " +
                synth_config().string() + " --region 4 --out " + out.string()),
            0);
  std::string text = read_text(out);
  EXPECT_EQ(text.rfind("interval,true_in,true_out,pred_in,pred_out\n", 0), 0u);
  // 192 intervals, split 0.75 -> 48 test intervals
  EXPECT_EQ(count_lines(text), 1u + 48u);
  EXPECT_EQ(run("predict --checkpoint " + (work_dir() / "run" / "checkpoint.stcl").string() +
                " --data " + (work_dir() / "data").string() + " --config " +
                synth_config().string() + " --region 99 --out " + out.string()),
            2);
}

TEST(Cli, AblateRunsPairedVariants) {
  fs::path out = work_dir() / "ablate.csv";
  ASSERT_EQ(run("ablate --suite ft_causal --data " + (work_dir() / "data").string() +
                " --config " + synth_config().string() + " --out " + out.string()),
            0);
  std::string text = read_text(out);
  EXPECT_NE(text.find("ft_causal_on,in,"), std::string::npos);
  EXPECT_NE(text.find("ft_causal_off,out,"), std::string::npos);
  EXPECT_EQ(run("ablate --suite bogus --data " + (work_dir() / "data").string() +
                " --config " + synth_config().string() + " --out " + out.string()),
            2);
}

TEST(Cli, NonFiniteDataExitCode4) {
  // hand-built data directory whose flow cube contains NaNs outside the two
  // values that establish the scaler span
  fs::path data = work_dir() / "nan_data";
  fs::create_directories(data);
  stcl::Tensor flow = stcl::Tensor::full({3, 3, 192, 2},
                                         std::numeric_limits<double>::quiet_NaN());
  flow.mutable_data()[0] = 0.0;
  flow.mutable_data()[1] = 0.0;
  flow.mutable_data()[2] = 10.0;
  flow.mutable_data()[3] = 10.0;
  stcl::save_cube((data / "flow.stcb").string(), flow);
  stcl::save_cube((data / "transitions.stcb").string(),
                  stcl::Tensor::zeros({3, 3, 3, 3, 192, 2}));
  stcl::save_cube((data / "accidents.stcb").string(), stcl::Tensor::zeros({3, 3, 192, 1}));
  EXPECT_EQ(run("train --data " + data.string() + " --config " + synth_config().string() +
                " --out " + (work_dir() / "nan_run").string()),
            4);
}
