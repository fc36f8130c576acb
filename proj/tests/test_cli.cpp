#include <gtest/gtest.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "neutral.hpp"
#include "stsx/cli.hpp"
#include "stsx/config.hpp"
#include "stsx/data_io.hpp"
#include "stsx/metrics.hpp"

using namespace stsx;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("stsx_cli_" + std::to_string(::getpid()) + "_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& rel) const { return (path / rel).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string c; std::getline(in, c, '\t');) out.push_back(c);
  return out;
}

bool single_error_line(const std::string& err, const std::string& kind) {
  return err.starts_with("error: " + kind + ": ") && err.find('\n') == err.size() - 1;
}

const char* kSmallModel =
    "[model]\n"
    "d_dec = 16\n"
    "frame_layers = 4\n"
    "[train]\n"
    "epochs = 2\n"
    "lr = 0.003\n";

std::string small_synth(const TempDir& dir, const std::string& name, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"synth", "--out", dir / name, "--videos", "4", "--classes", "3", "--frames", "40:60",
                                "--test-videos", "1", "--seed", "5"};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto r = cli(args);
  EXPECT_EQ(r.code, 0) << r.err;
  return dir / name;
}

}  // namespace

TEST(CliSynth, DefaultsLoadCleanly) {
  TempDir dir("defaults");
  const auto r = cli({"synth", "--out", dir / "d"});
  ASSERT_EQ(r.code, 0) << r.err;
  const DatasetLayout layout{dir.path / "d"};
  const auto map = read_class_map(layout.mapping());
  const auto videos = load_split(layout, read_split(layout.split("all")), map);
  EXPECT_EQ(videos.size(), 25u);
  EXPECT_EQ(map.size(), 6);
  EXPECT_TRUE(fs::exists(dir.path / "d" / "effective_config.toml"));
  EXPECT_EQ(lines(r.out).front(), "videos\tmean_T\tmean_segments\tAcc\tEdit\tF1@10\tF1@25\tF1@50");
}

TEST(CliSynth, SummaryMatchesMetricsOnTheFiles) {
  TempDir dir("summary");
  const auto r = cli({"synth", "--out", dir / "d", "--videos", "5", "--frames", "80:120", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const DatasetLayout layout{dir.path / "d"};
  const auto map = read_class_map(layout.mapping());
  std::vector<VideoMetrics> metrics;
  for (const auto& v : load_split(layout, layout.video_ids(), map)) metrics.push_back(evaluate_video(v.id, v.initial, v.gt));
  const auto row = aggregate(metrics);
  const auto values = cells(lines(r.out).at(1));
  ASSERT_EQ(values.size(), 8u);
  EXPECT_EQ(values[0], "5");
  EXPECT_NEAR(std::stod(values[3]), row.acc, 0.005);
  EXPECT_NEAR(std::stod(values[4]), row.edit, 0.005);
  EXPECT_NEAR(std::stod(values[7]), row.f1[2], 0.005);
}

TEST(CliSynth, SameSeedSameBytes) {
  TempDir dir("seed");
  const auto a = cli({"synth", "--out", dir / "a", "--videos", "3", "--frames", "30:50", "--seed", "11"});
  const auto b = cli({"synth", "--out", dir / "b", "--videos", "3", "--frames", "30:50", "--seed", "11"});
  const auto c = cli({"synth", "--out", dir / "c", "--videos", "3", "--frames", "30:50", "--seed", "12"});
  EXPECT_EQ(a.out, b.out);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "effective_config.toml") continue;  // records the root
    ++files;
    const auto rel = fs::relative(e.path(), dir.path / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir.path / "b" / rel)) << rel;
  }
  EXPECT_GT(files, 9u);
  EXPECT_NE(slurp(dir.path / "a" / "features" / "video_000.stsf"), slurp(dir.path / "c" / "features" / "video_000.stsf"));
}

TEST(CliErrors, SingleMachineParsableLine) {
  TempDir dir("errors");
  auto r = cli({"eval", "--data", dir / "nothing", "--ckpt", dir / "x.ckpt", "--split", "all"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(single_error_line(r.err, "not-found")) << r.err;
  EXPECT_TRUE(r.out.empty());

  r = cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(single_error_line(r.err, "usage")) << r.err;

  r = cli({"synth"});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(single_error_line(r.err, "usage")) << r.err;

  r = cli({"synth", "--out", dir / "s", "--frames", "10-20"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(single_error_line(r.err, "config")) << r.err;

  r = cli({"synth", "--out", dir / "s", "--flip", "1.5"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(single_error_line(r.err, "config")) << r.err;
  EXPECT_FALSE(fs::exists(dir.path / "s"));

  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(CliConfig, ParsesEverySectionAndRoundTrips) {
  RunConfig cfg;
  apply_config_text(cfg,
                    "# run\n"
                    "seed = 42\n"
                    "[model]\n"
                    "decoder_layers = 3\n"
                    "tap_layers = [5, 7, 9]\n"
                    "window = 2\n"
                    "scale_scores = true\n"
                    "embedding = \"frame\"\n"
                    "[train]\n"
                    "epochs = 7   # short\n"
                    "lr = 2.5e-4\n"
                    "[corruption]\n"
                    "jitter = 0.3\n"
                    "[data]\n"
                    "root = \"some/dir\"\n"
                    "videos = 9\n");
  cfg.finalize();
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.model.seed, 42u);
  EXPECT_EQ(cfg.train.seed, 42u);
  EXPECT_EQ(cfg.model.tap_layers, (std::vector<int>{5, 7, 9}));
  EXPECT_TRUE(cfg.model.scale_scores);
  EXPECT_EQ(cfg.model.embedding, SegmentEmbedding::FrameOnly);
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 2.5e-4);
  EXPECT_DOUBLE_EQ(cfg.synthetic.corruption.jitter, 0.3);
  EXPECT_EQ(cfg.data.root, "some/dir");
  EXPECT_EQ(cfg.synthetic.videos, 9);
  EXPECT_NO_THROW(cfg.validate());

  RunConfig back;
  apply_config_text(back, cfg.to_toml());
  back.finalize();
  EXPECT_EQ(back.to_toml(), cfg.to_toml());
}

TEST(CliConfig, RejectsUnknownKeysWithLineNumbers) {
  RunConfig cfg;
  try {
    apply_config_text(cfg, "seed = 1\n[model]\nwindo = 2\n", "x.toml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.toml:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(apply_config_text(cfg, "[nope]\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[train]\nepochs = many\n"), ConfigError);
  RunConfig bad;
  apply_config_text(bad, "[model]\nwindow = 0\n");
  bad.finalize();
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(CliConfig, PrecedenceFlagsOverFileOverEnvironment) {
  TempDir dir("prec");
  write_text(dir.path / "c.toml", "seed = 5\n");
  auto seed_of = [&](const std::string& name) {
    RunConfig cfg;
    apply_config_file(cfg, (dir.path / name / "effective_config.toml").string());
    return cfg.seed;
  };
  const std::vector<std::string> base{"--videos", "2", "--frames", "20:20"};
  auto synth = [&](const std::string& name, std::vector<std::string> extra) {
    std::vector<std::string> args{"synth", "--out", dir / name};
    args.insert(args.end(), base.begin(), base.end());
    args.insert(args.end(), extra.begin(), extra.end());
    ASSERT_EQ(cli(args).code, 0);
  };
  ::setenv("STSX_SEED", "3", 1);
  synth("flag", {"--config", dir / "c.toml", "--seed", "9"});
  synth("file", {"--config", dir / "c.toml"});
  synth("env", {});
  ::unsetenv("STSX_SEED");
  synth("none", {});
  EXPECT_EQ(seed_of("flag"), 9u);
  EXPECT_EQ(seed_of("file"), 5u);
  EXPECT_EQ(seed_of("env"), 3u);
  EXPECT_EQ(seed_of("none"), 0u);
}

TEST(CliTrain, InvalidConfigFailsBeforeTraining) {
  TempDir dir("badtrain");
  const auto data = small_synth(dir, "d");
  write_text(dir.path / "bad.toml", "[model]\nwindow = 0\n");
  const auto r = cli({"train", "--data", data, "--config", dir / "bad.toml", "--out", dir / "m.ckpt"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(single_error_line(r.err, "config")) << r.err;
  EXPECT_FALSE(fs::exists(dir.path / "m.ckpt"));
  EXPECT_FALSE(fs::exists(dir.path / "m.log.tsv"));
}

TEST(CliTrain, IdempotentOutputsAndReports) {
  TempDir dir("train");
  const auto data = small_synth(dir, "d");
  write_text(dir.path / "c.toml", kSmallModel);
  auto train = [&](const std::string& stem) {
    const auto r = cli({"train", "--data", data, "--config", dir / "c.toml", "--out", dir / (stem + ".ckpt")});
    EXPECT_EQ(r.code, 0) << r.err;
    return r.out;
  };
  const auto out_a = train("a");
  const auto out_b = train("b");
  EXPECT_EQ(out_a, out_b);
  EXPECT_EQ(slurp(dir.path / "a.ckpt"), slurp(dir.path / "b.ckpt"));
  EXPECT_EQ(slurp(dir.path / "a.log.tsv"), slurp(dir.path / "b.log.tsv"));
  EXPECT_TRUE(fs::exists(dir.path / "a.config.toml"));
  EXPECT_EQ(lines(out_a).at(1), "split\tname\tF1@10\tF1@25\tF1@50\tEdit\tAcc");

  const auto r = cli({"eval", "--data", data, "--ckpt", dir / "a.ckpt", "--split", "test", "--report", dir / "rep.tsv"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "name\tF1@10\tF1@25\tF1@50\tEdit\tAcc");
  EXPECT_TRUE(rows[1].starts_with("initial\t"));
  EXPECT_TRUE(rows[2].starts_with("refined\t"));
  EXPECT_EQ(slurp(dir.path / "rep.tsv"), r.out);
  const auto json = EvalReport::from_json(slurp(dir.path / "rep.json"));
  EXPECT_EQ(json.to_tsv(), r.out);

  const auto rr = cli({"refine", "--data", data, "--ckpt", dir / "a.ckpt", "--video", "video_000", "--emit-timeline",
                       dir / "tl.tsv"});
  ASSERT_EQ(rr.code, 0) << rr.err;
  const auto map = read_class_map(fs::path(data) / "mapping.txt");
  const auto labels = lines(rr.out);
  EXPECT_EQ(labels.size(), read_label_file(fs::path(data) / "groundTruth" / "video_000.txt", map).size());
  for (const auto& l : labels) EXPECT_NO_THROW(map.id(l));
  const auto tl = lines(slurp(dir.path / "tl.tsv"));
  EXPECT_EQ(tl.front(), "track\tstart\tend\tlabel");
  for (std::size_t i = 1; i < tl.size(); ++i) {
    const auto c = cells(tl[i]);
    ASSERT_EQ(c.size(), 4u);
    EXPECT_TRUE(c[0] == "gt" || c[0] == "initial" || c[0] == "refined");
  }

  const auto missing = cli({"refine", "--data", data, "--ckpt", dir / "a.ckpt", "--video", "video_999"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_TRUE(single_error_line(missing.err, "not-found")) << missing.err;
}

TEST(CliTrain, OverfitRunImprovesTrainingAccuracy) {
  TempDir dir("overfit");
  const auto data = small_synth(dir, "d");
  write_text(dir.path / "c.toml", "[model]\nd_dec = 16\nframe_layers = 4\n[train]\nepochs = 150\nlr = 0.003\nweight_decay = 0\n");
  const auto r = cli({"train", "--data", data, "--config", dir / "c.toml", "--out", dir / "m.ckpt"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = cli({"eval", "--data", data, "--ckpt", dir / "m.ckpt", "--split", "train"});
  const auto rows = lines(e.out);
  const double initial_acc = std::stod(cells(rows[1]).back());
  const double refined_acc = std::stod(cells(rows[2]).back());
  EXPECT_GE(refined_acc, initial_acc);
}

TEST(CliEval, NeutralModelOnIdentityCorruptionChangesNothing) {
  TempDir dir("neutral");
  const auto data = small_synth(dir, "d", {"--jitter", "0", "--flip", "0"});
  ModelConfig mc;
  mc.num_classes = 3;
  mc.d_frame = 64;
  mc.d_dec = 16;
  mc.frame_layers = 4;
  mc.tap_layers = {2, 3};
  Model model(mc);
  stsx::testing::make_neutral(model);
  save_checkpoint(model, dir / "n.ckpt");
  const auto r = cli({"eval", "--data", data, "--ckpt", dir / "n.ckpt", "--split", "all"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  auto numbers = [](const std::string& row) {
    auto c = cells(row);
    c.erase(c.begin());
    return c;
  };
  EXPECT_EQ(numbers(rows[1]), numbers(rows[2]));
}

TEST(CliAblate, TableHasInitialRowAndOneRowPerValue) {
  TempDir dir("ablate");
  const auto data = small_synth(dir, "d");
  write_text(dir.path / "c.toml", kSmallModel);
  const auto r = cli({"ablate", "--data", data, "--config", dir / "c.toml", "--axis", "window", "--values", "1,2",
                      "--out", dir / "ab"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "window\tF1@10\tF1@25\tF1@50\tEdit\tAcc");
  EXPECT_TRUE(rows[1].starts_with("initial\t"));
  EXPECT_TRUE(rows[2].starts_with("1\t"));
  EXPECT_TRUE(rows[3].starts_with("2\t"));
  EXPECT_EQ(slurp(dir.path / "ab" / "ablation_window.tsv"), r.out);

  const auto bad = cli({"ablate", "--data", data, "--axis", "depth", "--values", "1"});
  EXPECT_EQ(bad.code, 2);
}
