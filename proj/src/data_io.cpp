#include "stsx/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace fs = std::filesystem;

namespace stsx {
namespace {

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int other_class(int label, int num_classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, num_classes - 2);
  const int k = dist(rng);
  return k >= label ? k + 1 : k;
}

}  // namespace

int ClassMap::id(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw IntegrityError("unknown action name '" + name + "'");
  return static_cast<int>(it - names.begin());
}

const std::string& ClassMap::name(int id) const {
  if (id < 0 || id >= size()) throw BoundsError("class id " + std::to_string(id) + " not in mapping");
  return names[static_cast<std::size_t>(id)];
}

ClassMap read_class_map(const fs::path& path) {
  auto in = open_input(path);
  std::map<int, std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    std::istringstream ls(line);
    int id = -1;
    std::string name;
    if (!(ls >> id >> name)) throw IntegrityError(path.string() + ": malformed mapping line '" + line + "'");
    if (!entries.emplace(id, name).second) throw IntegrityError(path.string() + ": duplicate class id " + std::to_string(id));
  }
  ClassMap map;
  for (const auto& [id, name] : entries) {
    if (id != map.size()) throw IntegrityError(path.string() + ": class ids must be 0..C-1 without gaps");
    map.names.push_back(name);
  }
  if (map.names.empty()) throw IntegrityError(path.string() + ": empty class mapping");
  return map;
}

void write_class_map(const ClassMap& map, const fs::path& path) {
  auto out = open_output(path);
  for (int i = 0; i < map.size(); ++i) out << i << " " << map.name(i) << "\n";
}

LabelSequence read_label_file(const fs::path& path, const ClassMap& map) {
  auto in = open_input(path);
  LabelSequence labels;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    try {
      labels.push_back(map.id(line));
    } catch (const IntegrityError& e) {
      throw IntegrityError(path.string() + ": " + e.what());
    }
  }
  return labels;
}

void write_label_file(std::span<const int> labels, const ClassMap& map, const fs::path& path) {
  auto out = open_output(path);
  for (int l : labels) out << map.name(l) << "\n";
}

Matrix read_feature_file(const fs::path& path) {
  auto in = open_input(path);
  const std::string where = path.string();
  if (path.extension() == ".stsf") {
    if (binary::read_bytes(in, 4, where) != "STSF") throw IntegrityError(where + ": bad magic, not a feature file");
    const auto version = binary::read<std::uint32_t>(in, where);
    if (version != kFeatureFileVersion) throw IntegrityError(where + ": unsupported version " + std::to_string(version));
    const auto rows = binary::read<std::uint64_t>(in, where);
    const auto cols = binary::read<std::uint64_t>(in, where);
    const auto header = static_cast<std::uintmax_t>(in.tellg());
    const auto size = fs::file_size(path);
    if (size != header + rows * cols * sizeof(float)) {
      throw IntegrityError(where + ": declared " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " does not match a payload of " + std::to_string(size - header) + " bytes");
    }
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(binary::read<float>(in, where));
    return m;
  }

  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      const std::string cell = trim(line.substr(pos, next - pos));
      float v = 0.0f;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw IntegrityError(where + ": bad number '" + cell + "' on row " + std::to_string(rows.size() + 1));
      }
      row.push_back(static_cast<double>(v));
      pos = next + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IntegrityError(where + ": row " + std::to_string(rows.size() + 1) + " has " + std::to_string(row.size()) +
                           " columns, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

void write_feature_file(const Matrix& m, const fs::path& path) {
  if (path.extension() != ".stsf") {
    write_feature_csv(m, path);
    return;
  }
  auto out = open_output(path);
  binary::write_bytes(out, "STSF");
  binary::write<std::uint32_t>(out, kFeatureFileVersion);
  binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) binary::write<float>(out, static_cast<float>(m.data()[i]));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_feature_csv(const Matrix& m, const fs::path& path) {
  auto out = open_output(path);
  char buf[32];
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(m(r, c))));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

std::vector<std::string> read_split(const fs::path& path) {
  auto in = open_input(path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void write_split(const std::vector<std::string>& ids, const fs::path& path) {
  auto out = open_output(path);
  for (const auto& id : ids) out << id << "\n";
}

fs::path DatasetLayout::features(const std::string& id) const {
  for (const char* ext : {".stsf", ".csv"}) {
    auto p = root / "features" / (id + ext);
    if (fs::exists(p)) return p;
  }
  throw NotFoundError("no feature file for video '" + id + "' under " + (root / "features").string());
}

std::optional<fs::path> DatasetLayout::probs(const std::string& id) const {
  for (const char* ext : {".stsf", ".csv"}) {
    auto p = root / "probs" / (id + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::vector<std::string> DatasetLayout::video_ids() const {
  std::vector<std::string> ids;
  const auto dir = root / "groundTruth";
  if (!fs::exists(dir)) throw NotFoundError("no groundTruth directory under " + root.string());
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".txt") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

Video load_video(const DatasetLayout& layout, const std::string& id, const ClassMap& map) {
  const auto gt_path = layout.ground_truth(id);
  const bool has_gt = fs::exists(gt_path);
  const bool has_features = fs::exists(layout.root / "features" / (id + ".stsf")) ||
                            fs::exists(layout.root / "features" / (id + ".csv"));
  if (!has_gt && !has_features) throw NotFoundError("unknown video id '" + id + "'");

  Video v;
  v.id = id;
  v.features = read_feature_file(layout.features(id));
  const auto frames = static_cast<std::size_t>(v.features.rows());
  if (has_gt) {
    v.gt = read_label_file(gt_path, map);
    if (v.gt.size() != frames) {
      throw IntegrityError("video '" + id + "': features have " + std::to_string(frames) + " frames but " +
                           gt_path.string() + " has " + std::to_string(v.gt.size()) + " labels");
    }
  }
  const auto probs_path = layout.probs(id);
  if (!probs_path) throw NotFoundError("no backbone probabilities for video '" + id + "'");
  v.probs = read_feature_file(*probs_path);
  if (static_cast<std::size_t>(v.probs.rows()) != frames) {
    throw IntegrityError("video '" + id + "': features have " + std::to_string(frames) + " frames but " +
                         probs_path->string() + " has " + std::to_string(v.probs.rows()));
  }
  if (v.probs.cols() != map.size()) {
    throw IntegrityError(probs_path->string() + ": " + std::to_string(v.probs.cols()) + " classes, mapping has " +
                         std::to_string(map.size()));
  }
  v.initial.resize(frames);
  for (std::size_t t = 0; t < frames; ++t) v.initial[t] = static_cast<int>(argmax_row(v.probs.row(static_cast<Index>(t))));
  return v;
}

std::vector<Video> load_split(const DatasetLayout& layout, const std::vector<std::string>& ids, const ClassMap& map) {
  std::vector<Video> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(load_video(layout, id, map));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

void CorruptionConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(jitter >= 0.0)) throw ConfigError("corruption: jitter must be >= 0");
  if (!prob(flip) || !prob(split) || !prob(merge)) throw ConfigError("corruption: probabilities must lie in [0, 1]");
  if (!(confidence > 0.5 && confidence <= 1.0)) throw ConfigError("corruption: confidence must lie in (0.5, 1]");
  if (!(feature_noise >= 0.0)) throw ConfigError("corruption: feature_noise must be >= 0");
  if (feature_dim < 1) throw ConfigError("corruption: feature_dim must be >= 1");
}

void SyntheticConfig::validate() const {
  corruption.validate();
  if (videos < 1) throw ConfigError("synth: need at least one video");
  if (min_frames < 1 || max_frames < min_frames) throw ConfigError("synth: bad frame range");
  if (num_classes < 1) throw ConfigError("synth: need at least one class");
  if (!(mean_segment_length >= 1.0)) throw ConfigError("synth: mean segment length must be >= 1");
  if (test_videos < 0 || test_videos >= videos) throw ConfigError("synth: test videos must leave a training set");
}

Matrix class_means(int num_classes, Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xC1A55ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(num_classes, dim);
  for (Index i = 0; i < means.size(); ++i) means.data()[i] = normal(rng);
  return means;
}

BackboneOutput synth_backbone(std::span<const int> gt, int num_classes, const CorruptionConfig& cfg,
                              std::uint64_t video_seed) {
  cfg.validate();
  validate_labels(gt, num_classes);
  std::mt19937_64 rng(video_seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto frames = static_cast<Index>(gt.size());
  const auto segs = extract_segments(gt);
  const std::size_t n = segs.size();
  std::vector<int> labels;
  for (const auto& s : segs) labels.push_back(s.label);

  for (auto& l : labels)
    if (uniform(rng) < cfg.flip && num_classes > 1) l = other_class(l, num_classes, rng);
  for (std::size_t i = 1; i < n; ++i)
    if (uniform(rng) < cfg.merge) labels[i] = labels[i - 1];

  BackboneOutput out;
  // Boundary j separates segment j from j + 1 and sits at the start of j + 1.
  std::vector<Index> bounds;
  for (std::size_t j = 1; j < n; ++j) bounds.push_back(segs[j].start);
  for (std::size_t j = 0; j < bounds.size(); ++j) {
    const double scale = cfg.jitter * 0.5 * static_cast<double>(segs[j].length() + segs[j + 1].length());
    const Index lower = j == 0 ? 1 : bounds[j - 1] + 1;
    const Index upper = j + 1 < bounds.size() ? bounds[j + 1] - 1 : frames - 1;
    const auto shift = static_cast<Index>(std::llround(normal(rng) * scale));
    const Index moved = std::clamp(bounds[j] + shift, lower, upper);
    out.boundary_shifts.push_back(moved - bounds[j]);
    out.boundary_scales.push_back(scale);
    bounds[j] = moved;
  }

  out.initial.assign(gt.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Index start = i == 0 ? 0 : bounds[i - 1];
    const Index end = i + 1 < n ? bounds[i] : frames;
    std::fill(out.initial.begin() + start, out.initial.begin() + end, labels[i]);
  }

  if (cfg.split > 0.0 && num_classes > 1) {
    for (const auto& s : extract_segments(out.initial)) {
      if (s.length() < 3 || uniform(rng) >= cfg.split) continue;
      const double fraction = 0.1 + 0.2 * uniform(rng);
      const Index len = std::clamp<Index>(std::llround(fraction * static_cast<double>(s.length())), 1, s.length() - 2);
      std::uniform_int_distribution<Index> at(s.start + 1, s.end - len);
      const Index start = at(rng);
      const int label = other_class(s.label, num_classes, rng);
      std::fill(out.initial.begin() + start, out.initial.begin() + start + len, label);
    }
  }

  // Any enabled corruption must leave at least one wrong frame.
  if (cfg.any_corruption() && num_classes > 1 && std::equal(out.initial.begin(), out.initial.end(), gt.begin())) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const auto& s = segs[pick(rng)];
    const int label = other_class(s.label, num_classes, rng);
    std::fill(out.initial.begin() + s.start, out.initial.begin() + s.end + 1, label);
  }

  out.probs.resize(frames, num_classes);
  for (Index t = 0; t < frames; ++t) {
    const int label = out.initial[static_cast<std::size_t>(t)];
    if (num_classes == 1) {
      out.probs(t, 0) = 1.0;
      continue;
    }
    double total = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      out.probs(t, c) = c == label ? 0.0 : 0.5 + uniform(rng);
      total += out.probs(t, c);
    }
    for (int c = 0; c < num_classes; ++c) out.probs(t, c) *= (1.0 - cfg.confidence) / total;
    out.probs(t, label) = cfg.confidence;
  }

  const Matrix means = class_means(num_classes, cfg.feature_dim, cfg.seed);
  out.features.resize(frames, cfg.feature_dim);
  for (Index t = 0; t < frames; ++t)
    for (Index d = 0; d < cfg.feature_dim; ++d)
      out.features(t, d) = means(gt[static_cast<std::size_t>(t)], d) + cfg.feature_noise * normal(rng);
  return out;
}

LabelSequence synth_ground_truth(Index frames, int num_classes, double mean_segment_length, std::mt19937_64& rng,
                                 const Matrix& transitions) {
  const auto lo = std::max<Index>(1, std::llround(0.5 * mean_segment_length));
  const auto hi = std::max<Index>(lo, std::llround(1.5 * mean_segment_length));
  std::uniform_int_distribution<Index> length(lo, hi);
  std::uniform_int_distribution<int> first(0, num_classes - 1);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  LabelSequence labels;
  int label = first(rng);
  while (static_cast<Index>(labels.size()) < frames) {
    const Index len = std::min(length(rng), frames - static_cast<Index>(labels.size()));
    labels.insert(labels.end(), static_cast<std::size_t>(len), label);
    if (num_classes > 1) {
      double u = uniform(rng);
      int next = num_classes - 1;
      for (int c = 0; c < num_classes; ++c) {
        u -= transitions(label, c);
        if (u < 0.0) {
          next = c;
          break;
        }
      }
      if (next == label) next = other_class(label, num_classes, rng);
      label = next;
    }
  }
  return labels;
}

DatasetLayout make_synthetic_dataset(const SyntheticConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  DatasetLayout layout{out_dir};
  const int classes = cfg.num_classes;
  std::mt19937_64 rng(mix_seed(cfg.corruption.seed, 0x6A7AULL));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // Random row-stochastic transitions without self loops.
  Matrix transitions = Matrix::Zero(classes, classes);
  for (int a = 0; a < classes; ++a) {
    double total = 0.0;
    for (int b = 0; b < classes; ++b) {
      if (a == b) continue;
      transitions(a, b) = 0.2 + uniform(rng);
      total += transitions(a, b);
    }
    if (total > 0.0) transitions.row(a) /= total;
  }

  ClassMap map;
  for (int c = 0; c < classes; ++c) map.names.push_back("action_" + std::to_string(c));
  write_class_map(map, layout.mapping());

  std::uniform_int_distribution<Index> frames(cfg.min_frames, cfg.max_frames);
  std::vector<std::string> ids;
  for (int v = 0; v < cfg.videos; ++v) {
    char name[32];
    std::snprintf(name, sizeof(name), "video_%03d", v);
    const std::string id = name;
    const auto gt = synth_ground_truth(frames(rng), classes, cfg.mean_segment_length, rng, transitions);
    const auto backbone = synth_backbone(gt, classes, cfg.corruption, mix_seed(cfg.corruption.seed, static_cast<std::uint64_t>(v) + 1));
    write_label_file(gt, map, layout.ground_truth(id));
    write_feature_file(backbone.features, layout.root / "features" / (id + ".stsf"));
    write_feature_file(backbone.probs, layout.root / "probs" / (id + ".stsf"));
    ids.push_back(id);
  }
  write_split(ids, layout.split("all"));
  if (cfg.test_videos > 0) {
    const auto cut = ids.end() - cfg.test_videos;
    write_split({ids.begin(), cut}, layout.split("train"));
    write_split({cut, ids.end()}, layout.split("test"));
  }
  return layout;
}

}  // namespace stsx
