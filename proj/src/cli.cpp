#include "stsx/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "stsx/config.hpp"
#include "stsx/data_io.hpp"
#include "stsx/metrics.hpp"
#include "stsx/model.hpp"
#include "stsx/training.hpp"

namespace fs = std::filesystem;

namespace stsx {
namespace {

// Flags shared by every command that builds a RunConfig. Unset optionals
// leave the config file (or default) value alone.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> decoder_layers;
  std::optional<int> window;
  std::optional<std::string> embedding;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "TOML-style config file");
  cmd->add_option("--seed", o.seed, "global seed (falls back to STSX_SEED)");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--decoder-layers", o.decoder_layers, "decoder layers");
  cmd->add_option("--window", o.window, "local attention window");
  cmd->add_option("--embedding", o.embedding, "segment embedding: both, frame or category");
}

RunConfig build_config(const Overrides& o) {
  RunConfig cfg;
  if (auto env = seed_from_environment()) cfg.seed = *env;
  if (!o.config_path.empty()) apply_config_file(cfg, o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.decoder_layers) cfg.model.decoder_layers = *o.decoder_layers;
  if (o.window) cfg.model.window = *o.window;
  if (o.embedding) cfg.model.embedding = segment_embedding_from_string(*o.embedding);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

fs::path resolve_split(const DatasetLayout& layout, const std::string& split) {
  if (fs::is_regular_file(split)) return split;
  const auto named = layout.split(split);
  if (fs::is_regular_file(named)) return named;
  throw NotFoundError("no split '" + split + "' (neither a file nor " + named.string() + ")");
}

std::vector<Video> load_named_split(const DatasetLayout& layout, const ClassMap& map, const std::string& split) {
  auto videos = load_split(layout, read_split(resolve_split(layout, split)), map);
  if (videos.empty()) throw IntegrityError("split '" + split + "' lists no videos");
  return videos;
}

// Model dimensions that come from the data rather than the config.
void bind_to_data(RunConfig& cfg, const ClassMap& map, const std::vector<Video>& videos) {
  cfg.model.num_classes = map.size();
  cfg.model.d_frame = videos.front().features.cols();
  for (const auto& v : videos) {
    if (v.features.cols() != cfg.model.d_frame) {
      throw IntegrityError("video '" + v.id + "' has feature width " + std::to_string(v.features.cols()) +
                           ", expected " + std::to_string(cfg.model.d_frame));
    }
  }
}

std::string metric_line(const std::string& name, const MetricRow& r) {
  std::string line = name;
  for (double f : r.f1) line += "\t" + fixed(f);
  return line + "\t" + fixed(r.edit) + "\t" + fixed(r.acc) + "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::optional<int> videos;
  std::optional<int> classes;
  std::string frames;
  std::optional<double> jitter;
  std::optional<double> flip;
  std::optional<double> split;
  std::optional<double> merge;
  std::optional<int> test_videos;
  Overrides common;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  RunConfig cfg = build_config(a.common);
  if (a.videos) cfg.synthetic.videos = *a.videos;
  if (a.classes) cfg.synthetic.num_classes = *a.classes;
  if (a.jitter) cfg.synthetic.corruption.jitter = *a.jitter;
  if (a.flip) cfg.synthetic.corruption.flip = *a.flip;
  if (a.split) cfg.synthetic.corruption.split = *a.split;
  if (a.merge) cfg.synthetic.corruption.merge = *a.merge;
  if (a.test_videos) cfg.synthetic.test_videos = *a.test_videos;
  if (!a.frames.empty()) {
    const auto colon = a.frames.find(':');
    if (colon == std::string::npos) throw ConfigError("--frames expects LO:HI, got '" + a.frames + "'");
    try {
      cfg.synthetic.min_frames = std::stoll(a.frames.substr(0, colon));
      cfg.synthetic.max_frames = std::stoll(a.frames.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("--frames expects LO:HI, got '" + a.frames + "'");
    }
  }
  cfg.data.root = a.out;
  cfg.finalize();
  cfg.validate();

  const auto layout = make_synthetic_dataset(cfg.synthetic, a.out);
  write_text(fs::path(a.out) / "effective_config.toml", cfg.to_toml());

  // Summary from the files on disk, through the regular loaders.
  const auto map = read_class_map(layout.mapping());
  const auto videos = load_split(layout, read_split(layout.split("all")), map);
  std::vector<VideoMetrics> metrics;
  double frames = 0.0;
  double segments = 0.0;
  for (const auto& v : videos) {
    metrics.push_back(evaluate_video(v.id, v.initial, v.gt));
    frames += static_cast<double>(v.frames());
    segments += static_cast<double>(extract_segments(v.gt).size());
  }
  const auto row = aggregate(metrics);
  const auto n = static_cast<double>(videos.size());
  out << "videos\tmean_T\tmean_segments\tAcc\tEdit\tF1@10\tF1@25\tF1@50\n"
      << videos.size() << "\t" << fixed(frames / n, 1) << "\t" << fixed(segments / n, 1) << "\t" << fixed(row.acc)
      << "\t" << fixed(row.edit) << "\t" << fixed(row.f1[0]) << "\t" << fixed(row.f1[1]) << "\t" << fixed(row.f1[2])
      << "\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string split;
  std::string validation;
  std::string out;
  Overrides common;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = build_config(a.common);
  if (!a.data.empty()) cfg.data.root = a.data;
  if (!a.split.empty()) cfg.data.split = a.split;
  if (!a.validation.empty()) cfg.data.validation = a.validation;
  if (cfg.data.root.empty()) throw ConfigError("--data is required");
  if (cfg.data.split.empty()) cfg.data.split = "train";
  cfg.finalize();
  cfg.validate();

  const DatasetLayout layout{cfg.data.root};
  const auto map = read_class_map(layout.mapping());
  const auto train_set = load_named_split(layout, map, cfg.data.split);
  std::vector<Video> validation;
  if (!cfg.data.validation.empty()) validation = load_named_split(layout, map, cfg.data.validation);
  bind_to_data(cfg, map, train_set);
  cfg.model.validate();

  const fs::path ckpt(a.out);
  const fs::path stem = ckpt.parent_path() / ckpt.stem();
  write_text(stem.string() + ".config.toml", cfg.to_toml());

  Model model(cfg.model);
  std::ostringstream log;
  const auto result = train(model, train_set, validation, cfg.train, &log);
  save_checkpoint(model, ckpt.string());
  write_text(stem.string() + ".log.tsv", log.str());

  out << "best_epoch\t" << result.best_epoch << "\n";
  out << "split\tname\tF1@10\tF1@25\tF1@50\tEdit\tAcc\n";
  for (const auto& e : evaluate_refinement(model, train_set).entries) out << "train\t" << metric_line(e.name, e.corpus);
  if (!validation.empty())
    for (const auto& e : evaluate_refinement(model, validation).entries)
      out << "validation\t" << metric_line(e.name, e.corpus);
}

// ---------------------------------------------------------------------------

struct RefineArgs {
  std::string data;
  std::string ckpt;
  std::string video;
  std::string out;
  std::string timeline;
};

void append_track(std::string& text, const std::string& track, std::span<const int> labels, const ClassMap& map) {
  for (const auto& s : extract_segments(labels))
    text += track + "\t" + std::to_string(s.start) + "\t" + std::to_string(s.end) + "\t" + map.name(s.label) + "\n";
}

void cmd_refine(const RefineArgs& a, std::ostream& out) {
  const DatasetLayout layout{a.data};
  const auto map = read_class_map(layout.mapping());
  const Model model = load_checkpoint(a.ckpt);
  if (model.config().num_classes != map.size()) {
    throw IntegrityError("checkpoint has " + std::to_string(model.config().num_classes) + " classes, dataset has " +
                         std::to_string(map.size()));
  }
  const Video video = load_video(layout, a.video, map);
  const auto refined = model.infer(video.features, video.initial);

  std::string labels;
  for (int l : refined.labels) labels += map.name(l) + "\n";
  if (a.out.empty()) {
    out << labels;
  } else {
    write_text(a.out, labels);
  }
  if (!a.timeline.empty()) {
    std::string text = "track\tstart\tend\tlabel\n";
    if (!video.gt.empty()) append_track(text, "gt", video.gt, map);
    append_track(text, "initial", video.initial, map);
    append_track(text, "refined", refined.labels, map);
    write_text(a.timeline, text);
  }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string split;
  std::string report;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const DatasetLayout layout{a.data};
  const auto map = read_class_map(layout.mapping());
  const Model model = load_checkpoint(a.ckpt);
  if (model.config().num_classes != map.size()) {
    throw IntegrityError("checkpoint has " + std::to_string(model.config().num_classes) + " classes, dataset has " +
                         std::to_string(map.size()));
  }
  const auto videos = load_named_split(layout, map, a.split);
  const auto report = evaluate_refinement(model, videos);
  const std::string tsv = report.to_tsv();
  if (!a.report.empty()) {
    fs::path tsv_path(a.report);
    fs::path json_path = tsv_path;
    json_path.replace_extension(".json");
    if (tsv_path.extension() == ".json") tsv_path.replace_extension(".tsv");
    write_text(tsv_path, tsv);
    write_text(json_path, report.to_json());
  }
  out << tsv;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string data;
  std::string axis;
  std::vector<std::string> values;
  std::string split = "train";
  std::string test_split = "test";
  std::string out;
  Overrides common;
};

void cmd_ablate(const AblateArgs& a, std::ostream& out) {
  RunConfig base = build_config(a.common);
  base.data.root = a.data;
  const DatasetLayout layout{a.data};
  const auto map = read_class_map(layout.mapping());
  const auto train_set = load_named_split(layout, map, a.split);
  const auto test_set = load_named_split(layout, map, a.test_split);

  std::vector<RunConfig> runs;
  for (const auto& value : a.values) {
    RunConfig cfg = base;
    try {
      if (a.axis == "layers") cfg.model.decoder_layers = std::stoi(value);
      else if (a.axis == "window") cfg.model.window = std::stoi(value);
      else cfg.model.embedding = segment_embedding_from_string(value);
    } catch (const std::logic_error&) {
      throw ConfigError("bad " + a.axis + " value '" + value + "'");
    }
    cfg.finalize();
    cfg.validate();
    bind_to_data(cfg, map, train_set);
    cfg.model.validate();
    runs.push_back(std::move(cfg));
  }

  const std::string heading = a.axis == "layers" ? "decoder_layers" : a.axis == "window" ? "window" : "embedding";
  std::string table = heading + "\tF1@10\tF1@25\tF1@50\tEdit\tAcc\n";
  bool first = true;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    Model model(runs[i].model);
    train(model, train_set, {}, runs[i].train);
    const auto report = evaluate_refinement(model, test_set);
    if (first) table += metric_line("initial", report.entries[0].corpus);
    first = false;
    table += metric_line(a.values[i], report.entries[1].corpus);
  }
  if (!a.out.empty()) {
    write_text(fs::path(a.out) / ("ablation_" + a.axis + ".tsv"), table);
    write_text(fs::path(a.out) / "effective_config.toml", base.to_toml());
  }
  out << table;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"stsx: segment-level refinement of frame-wise action segmentations"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--videos", synth.videos, "number of videos");
  s->add_option("--classes", synth.classes, "number of action classes");
  s->add_option("--frames", synth.frames, "frame count range LO:HI");
  s->add_option("--jitter", synth.jitter, "boundary jitter, fraction of segment length");
  s->add_option("--flip", synth.flip, "segment label flip probability");
  s->add_option("--split-prob", synth.split, "over-segmentation probability");
  s->add_option("--merge", synth.merge, "merge probability");
  s->add_option("--test-videos", synth.test_videos, "also write train/test splits with this many test videos");
  add_overrides(s, synth.common);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a refinement model");
  t->add_option("--data", tr.data, "dataset root");
  t->add_option("--split", tr.split, "training split (name or file)");
  t->add_option("--val-split", tr.validation, "validation split for best-epoch selection");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  add_overrides(t, tr.common);

  RefineArgs rf;
  auto* r = app.add_subcommand("refine", "refine one video");
  r->add_option("--data", rf.data, "dataset root")->required();
  r->add_option("--ckpt", rf.ckpt, "checkpoint")->required();
  r->add_option("--video", rf.video, "video id")->required();
  r->add_option("--out", rf.out, "refined label file (stdout when omitted)");
  r->add_option("--emit-timeline", rf.timeline, "timeline TSV for plotting");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate initial vs refined predictions");
  e->add_option("--data", ev.data, "dataset root")->required();
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--split", ev.split, "split (name or file)")->required();
  e->add_option("--report", ev.report, "report path; a .json sibling is written too");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train and evaluate one model per value");
  a->add_option("--data", ab.data, "dataset root")->required();
  a->add_option("--axis", ab.axis, "layers, window or encoder-embedding")
      ->required()
      ->check(CLI::IsMember({"layers", "window", "encoder-embedding"}));
  a->add_option("--values", ab.values, "comma-separated values")->required()->delimiter(',');
  a->add_option("--split", ab.split, "training split");
  a->add_option("--test-split", ab.test_split, "evaluation split");
  a->add_option("--out", ab.out, "output directory for the table");
  add_overrides(a, ab.common);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: usage: " << one_line(ex.what()) << "\n";
    return 2;
  }

  try {
    if (s->parsed()) cmd_synth(synth, out);
    else if (t->parsed()) cmd_train(tr, out);
    else if (r->parsed()) cmd_refine(rf, out);
    else if (e->parsed()) cmd_eval(ev, out);
    else cmd_ablate(ab, out);
  } catch (const Error& ex) {
    err << "error: " << ex.kind() << ": " << one_line(ex.what()) << "\n";
    return 1;
  } catch (const fs::filesystem_error& ex) {
    err << "error: io: " << one_line(ex.what()) << "\n";
    return 1;
  } catch (const std::exception& ex) {
    err << "error: internal: " << one_line(ex.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace stsx
