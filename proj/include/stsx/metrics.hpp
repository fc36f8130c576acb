#pragma once

// Frame accuracy, segmental edit score and segmental F1@k, plus corpus
// aggregation into an EvalReport.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "stsx/segments.hpp"

namespace stsx {

inline constexpr std::array<double, 3> kF1Thresholds{0.10, 0.25, 0.50};

/// 100 * correct / T.
double frame_accuracy(std::span<const int> pred, std::span<const int> gt);

/// Levenshtein distance between two label strings, unit costs.
std::size_t levenshtein(std::span<const int> a, std::span<const int> b);

/// 100 * (1 - lev(seg labels) / max(#pred segs, #gt segs)). Segments whose
/// label is in `ignored` are dropped first.
double edit_score(std::span<const int> pred, std::span<const int> gt, std::span<const int> ignored = {});

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const;
  double recall() const;
  /// Percent; 0 when precision + recall is 0.
  double f1() const;
};

/// Predicted segments in temporal order claim the best same-class gt
/// segment not yet matched (earliest on ties); a claim with tIoU > k is a
/// true positive, anything else a false positive.
F1Counts f1_counts(std::span<const int> pred, std::span<const int> gt, double threshold,
                   std::span<const int> ignored = {});

struct MetricRow {
  std::array<double, 3> f1{};  // at kF1Thresholds, percent
  double edit = 0.0;
  double acc = 0.0;
};

struct VideoMetrics {
  std::string video;
  MetricRow row;
  std::array<F1Counts, 3> counts{};
  std::size_t frames = 0;
  std::size_t correct = 0;
};

VideoMetrics evaluate_video(const std::string& id, std::span<const int> pred, std::span<const int> gt,
                            std::span<const int> ignored = {});

/// Corpus aggregation: F1 pools TP/FP/FN, Acc pools frames, Edit averages
/// per-video scores.
MetricRow aggregate(std::span<const VideoMetrics> videos);

struct EvalReport {
  struct Entry {
    std::string name;  // e.g. "initial", "refined"
    MetricRow corpus;
    std::vector<VideoMetrics> videos;
  };
  std::vector<Entry> entries;

  /// Header "name F1@10 F1@25 F1@50 Edit Acc", one row per entry.
  std::string to_tsv() const;
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

}  // namespace stsx
