#include "stsx/segments.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stsx {

void validate_labels(std::span<const int> labels, int num_classes) {
  if (labels.empty()) throw ContractError("label sequence is empty");
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] < 0 || labels[t] >= num_classes) {
      throw ContractError("label " + std::to_string(labels[t]) + " at frame " + std::to_string(t) +
                          " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

std::vector<Segment> extract_segments(std::span<const int> labels) {
  std::vector<Segment> segments;
  const auto n = static_cast<Index>(labels.size());
  Index start = 0;
  for (Index t = 1; t <= n; ++t) {
    if (t == n || labels[static_cast<std::size_t>(t)] != labels[static_cast<std::size_t>(start)]) {
      segments.push_back({labels[static_cast<std::size_t>(start)], start, t - 1});
      start = t;
    }
  }
  return segments;
}

LabelSequence expand_segments(std::span<const Segment> segments) {
  LabelSequence labels;
  Index next = 0;
  for (const auto& s : segments) {
    if (s.start != next || s.end < s.start) {
      throw ContractError("segments do not tile the sequence at frame " + std::to_string(next));
    }
    labels.insert(labels.end(), static_cast<std::size_t>(s.length()), s.label);
    next = s.end + 1;
  }
  return labels;
}

double tiou(const Segment& a, const Segment& b) {
  const Index inter = std::min(a.end, b.end) - std::max(a.start, b.start) + 1;
  if (inter <= 0) return 0.0;
  const Index uni = std::max(a.end, b.end) - std::min(a.start, b.start) + 1;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

BoundaryOffsets encode_offsets(const Segment& pred, const Segment& gt) {
  if (pred.length() < 1 || gt.length() < 1) throw ContractError("encode_offsets: empty segment");
  const auto len_pred = static_cast<double>(pred.length());
  const auto len_gt = static_cast<double>(gt.length());
  return {(pred.center() - gt.center()) / len_pred, std::log(len_pred / len_gt)};
}

ContinuousSpan apply_offsets(const Segment& pred, const BoundaryOffsets& offsets) {
  const auto len = static_cast<double>(pred.length());
  return {pred.center() - offsets.center * len, len * std::exp(-offsets.log_length)};
}

Segment decode_offsets(const Segment& pred, const BoundaryOffsets& offsets, Index num_frames) {
  if (num_frames < 1) throw ContractError("decode_offsets: sequence has no frames");
  if (!std::isfinite(offsets.center) || std::isnan(offsets.log_length)) {
    throw NumericError("decode_offsets: non-finite offsets");
  }
  auto span = apply_offsets(pred, offsets);
  double half = 0.5 * (std::max(span.length, 1.0) - 1.0);
  const double last = static_cast<double>(num_frames - 1);
  const double lo = std::clamp(std::round(span.center - half), 0.0, last);
  const double hi = std::clamp(std::round(span.center + half), 0.0, last);
  Segment out{pred.label, static_cast<Index>(lo), static_cast<Index>(hi)};
  if (out.start > out.end) std::swap(out.start, out.end);
  return out;
}

SegmentMask segment_to_mask(const Segment& segment, Index num_frames) {
  if (segment.start < 0 || segment.end >= num_frames || segment.start > segment.end) {
    throw BoundsError("segment [" + std::to_string(segment.start) + ", " + std::to_string(segment.end) +
                      "] outside a sequence of " + std::to_string(num_frames) + " frames");
  }
  SegmentMask mask = SegmentMask::Zero(num_frames);
  mask.segment(segment.start, segment.length()).setOnes();
  return mask;
}

Segment mask_to_segment(const SegmentMask& mask, int label) {
  Index start = -1;
  Index end = -1;
  for (Index t = 0; t < mask.size(); ++t) {
    const double v = mask(t);
    if (v != 0.0 && v != 1.0) throw ContractError("mask is not binary");
    if (v == 1.0) {
      if (start < 0) {
        start = t;
      } else if (end != t - 1) {
        throw ContractError("mask holds more than one run");
      }
      end = t;
    }
  }
  if (start < 0) throw ContractError("mask is empty");
  return {label, start, end};
}

Index argmax_row(const Eigen::Ref<const Eigen::Matrix<double, 1, Eigen::Dynamic>>& row) {
  Index best = 0;
  for (Index c = 1; c < row.size(); ++c)
    if (row(c) > row(best)) best = c;
  return best;
}

VoteResult mask_vote(const Matrix& masks, const Matrix& probs, std::span<const int> fallback) {
  if (masks.rows() != probs.rows()) {
    throw ContractError("mask_vote: " + std::to_string(masks.rows()) + " masks but " + std::to_string(probs.rows()) +
                        " probability rows");
  }
  const Index frames = masks.cols();
  if (!fallback.empty() && static_cast<Index>(fallback.size()) != frames) {
    throw ContractError("mask_vote: fallback length differs from mask length");
  }
  VoteResult out;
  out.frame_scores = masks.transpose() * probs;
  out.labels.resize(static_cast<std::size_t>(frames));
  for (Index t = 0; t < frames; ++t) {
    const bool covered = (masks.col(t).array() != 0.0).any();
    if (!covered) ++out.uncovered_frames;
    if (!covered && !fallback.empty()) {
      out.labels[static_cast<std::size_t>(t)] = fallback[static_cast<std::size_t>(t)];
    } else {
      out.labels[static_cast<std::size_t>(t)] = static_cast<int>(argmax_row(out.frame_scores.row(t)));
    }
  }
  return out;
}

}  // namespace stsx
