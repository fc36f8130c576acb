#pragma once

// Dataset files, the synthetic corruption backbone and the synthetic dataset
// generator.
//
// Directory layout under a dataset root:
//   mapping.txt               "id name" per line
//   groundTruth/<id>.txt      one action name per frame
//   features/<id>.stsf|.csv   T x D frame features
//   probs/<id>.stsf|.csv      optional T x C backbone probabilities
//   splits/<name>.split       newline-separated video ids

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stsx/video.hpp"

namespace stsx {

inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct ClassMap {
  std::vector<std::string> names;  // indexed by class id

  int size() const { return static_cast<int>(names.size()); }
  int id(const std::string& name) const;
  const std::string& name(int id) const;
};

ClassMap read_class_map(const std::filesystem::path& path);
void write_class_map(const ClassMap& map, const std::filesystem::path& path);

LabelSequence read_label_file(const std::filesystem::path& path, const ClassMap& map);
void write_label_file(std::span<const int> labels, const ClassMap& map, const std::filesystem::path& path);

/// Binary "STSF" container (u32 version, u64 T, u64 D, f32 row-major) when
/// the extension is .stsf, comma-separated text otherwise.
Matrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const Matrix& m, const std::filesystem::path& path);
void write_feature_csv(const Matrix& m, const std::filesystem::path& path);

std::vector<std::string> read_split(const std::filesystem::path& path);
void write_split(const std::vector<std::string>& ids, const std::filesystem::path& path);

struct DatasetLayout {
  std::filesystem::path root;

  std::filesystem::path mapping() const { return root / "mapping.txt"; }
  std::filesystem::path ground_truth(const std::string& id) const { return root / "groundTruth" / (id + ".txt"); }
  /// Existing feature file for `id`, preferring .stsf over .csv.
  std::filesystem::path features(const std::string& id) const;
  std::optional<std::filesystem::path> probs(const std::string& id) const;
  std::filesystem::path split(const std::string& name) const { return root / "splits" / (name + ".split"); }
  /// All ids that have a ground-truth file, sorted.
  std::vector<std::string> video_ids() const;
};

/// Loads features, ground truth (when present) and backbone probabilities;
/// the initial prediction is the per-frame argmax of the probabilities.
/// Throws NotFoundError / IntegrityError on missing files or length
/// mismatches.
Video load_video(const DatasetLayout& layout, const std::string& id, const ClassMap& map);

std::vector<Video> load_split(const DatasetLayout& layout, const std::vector<std::string>& ids, const ClassMap& map);

struct CorruptionConfig {
  double jitter = 0.15;      // boundary shift std-dev, fraction of the local segment length
  double flip = 0.15;        // probability a segment's label is replaced by another class
  double split = 0.0;        // probability a segment gets a wrong-label fragment inserted
  double merge = 0.0;        // probability a segment takes its predecessor's label
  double confidence = 0.7;   // probability mass on the predicted class
  double feature_noise = 1.0;  // std-dev of per-frame feature noise around the class mean
  Index feature_dim = 64;
  std::uint64_t seed = 0;

  bool any_corruption() const { return jitter > 0 || flip > 0 || split > 0 || merge > 0; }
  void validate() const;
};

struct BackboneOutput {
  LabelSequence initial;
  Matrix probs;     // T x C
  Matrix features;  // T x D
  std::vector<Index> boundary_shifts;  // signed shift applied to each internal gt boundary
  std::vector<double> boundary_scales;  // jitter scale (frames) used for each boundary
};

/// Per-class feature means shared by every video generated from one seed.
Matrix class_means(int num_classes, Index dim, std::uint64_t seed);

/// Corrupts `gt` into an initial prediction and draws probabilities and
/// class-conditioned features. Deterministic in (gt, cfg, video_seed).
BackboneOutput synth_backbone(std::span<const int> gt, int num_classes, const CorruptionConfig& cfg,
                              std::uint64_t video_seed);

struct SyntheticConfig {
  int videos = 25;
  Index min_frames = 270;
  Index max_frames = 330;
  int num_classes = 6;
  double mean_segment_length = 30.0;
  int test_videos = 0;  // when > 0 also write train.split / test.split
  CorruptionConfig corruption;

  void validate() const;
};

/// Ground truth from a Markov chain over classes (no self transitions) with
/// uniform segment lengths in [0.5, 1.5] x mean.
LabelSequence synth_ground_truth(Index frames, int num_classes, double mean_segment_length, std::mt19937_64& rng,
                                 const Matrix& transitions);

DatasetLayout make_synthetic_dataset(const SyntheticConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace stsx
