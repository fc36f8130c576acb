#pragma once

// Segment algebra: run extraction, temporal IoU, the boundary offset codec,
// binary segment masks and mask voting. Frame indices are inclusive.

#include <cstdint>
#include <span>
#include <vector>

#include "stsx/tensor.hpp"

namespace stsx {

using LabelSequence = std::vector<int>;

struct Segment {
  int label = 0;
  Index start = 0;
  Index end = 0;

  /// Frame count, end - start + 1.
  Index length() const { return end - start + 1; }
  double center() const { return 0.5 * static_cast<double>(start + end); }

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Checks 0 <= id < num_classes for every frame and that the sequence is
/// non-empty.
void validate_labels(std::span<const int> labels, int num_classes);

/// Maximal runs of equal labels, in temporal order.
std::vector<Segment> extract_segments(std::span<const int> labels);

/// Inverse of extract_segments. Segments must tile [0, T) in order.
LabelSequence expand_segments(std::span<const Segment> segments);

/// |a n b| / |a u b| counted in frames.
double tiou(const Segment& a, const Segment& b);

struct BoundaryOffsets {
  double center = 0.0;      // (center(pred) - center(gt)) / length(pred)
  double log_length = 0.0;  // log(length(pred) / length(gt))
};

BoundaryOffsets encode_offsets(const Segment& pred, const Segment& gt);

/// Refined segment in continuous frame coordinates, before rounding.
struct ContinuousSpan {
  double center = 0.0;
  double length = 0.0;
};

ContinuousSpan apply_offsets(const Segment& pred, const BoundaryOffsets& offsets);

/// Applies offsets, rounds the endpoints to frames and clips to [0, T-1].
/// Spans shorter than one frame collapse to the frame at the decoded center.
Segment decode_offsets(const Segment& pred, const BoundaryOffsets& offsets, Index num_frames);

using SegmentMask = Eigen::Matrix<double, 1, Eigen::Dynamic>;

SegmentMask segment_to_mask(const Segment& segment, Index num_frames);

/// The single run of ones in `mask`; throws ContractError otherwise.
Segment mask_to_segment(const SegmentMask& mask, int label);

struct VoteResult {
  Matrix frame_scores;  // T x C
  LabelSequence labels;
  Index uncovered_frames = 0;
};

/// frame_scores = masks^T * probs. Labels are the per-frame argmax (lowest
/// class id on ties); frames no mask covers take `fallback[t]` when a
/// fallback is given.
VoteResult mask_vote(const Matrix& masks, const Matrix& probs, std::span<const int> fallback = {});

/// Index of the largest entry, lowest index on ties.
Index argmax_row(const Eigen::Ref<const Eigen::Matrix<double, 1, Eigen::Dynamic>>& row);

}  // namespace stsx
