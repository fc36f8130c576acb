#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stsx/segments.hpp"
#include "support.hpp"

using namespace stsx;
using stsx::testing::random_labels;
using stsx::testing::random_segment;
using stsx::testing::uniform_int;

TEST(Segments, ExtractRuns) {
  const std::vector<int> labels{0, 0, 1, 1, 0};
  const std::vector<Segment> expected{{0, 0, 1}, {1, 2, 3}, {0, 4, 4}};
  EXPECT_EQ(extract_segments(labels), expected);
  EXPECT_EQ(extract_segments(std::vector<int>{3}), (std::vector<Segment>{{3, 0, 0}}));
  EXPECT_TRUE(extract_segments(std::vector<int>{}).empty());
}

TEST(Segments, LabelsRoundTripProperty) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const auto labels = random_labels(rng, uniform_int(rng, 1, 50), uniform_int(rng, 1, 5));
    const auto segs = extract_segments(labels);
    EXPECT_EQ(expand_segments(segs), labels);
    for (std::size_t i = 1; i < segs.size(); ++i) EXPECT_NE(segs[i].label, segs[i - 1].label);
    EXPECT_EQ(extract_segments(expand_segments(segs)), segs);
  }
}

TEST(Segments, ExpandRejectsGaps) {
  const std::vector<Segment> gap{{0, 0, 1}, {1, 3, 4}};
  EXPECT_THROW(expand_segments(gap), ContractError);
}

TEST(Segments, ValidateLabels) {
  EXPECT_NO_THROW(validate_labels(std::vector<int>{0, 1}, 2));
  EXPECT_THROW(validate_labels(std::vector<int>{0, 2}, 2), ContractError);
  EXPECT_THROW(validate_labels(std::vector<int>{}, 2), ContractError);
}

TEST(Tiou, ExamplesAndOracle) {
  EXPECT_DOUBLE_EQ(tiou({0, 0, 9}, {0, 5, 14}), 5.0 / 15.0);
  EXPECT_EQ(tiou({0, 2, 4}, {0, 2, 4}), 1.0);
  EXPECT_EQ(tiou({0, 0, 4}, {0, 5, 9}), 0.0);
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_segment(rng, 30, 1), b = random_segment(rng, 30, 1);
    EXPECT_EQ(tiou(a, b), oracle::tiou(a.start, a.end, b.start, b.end));
    EXPECT_EQ(tiou(a, b), tiou(b, a));
    EXPECT_EQ(tiou(a, b) == 1.0, a.start == b.start && a.end == b.end);
  }
}

TEST(Tiou, NonIncreasingAsSegmentsSeparate) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_segment(rng, 20, 1);
    const auto b = random_segment(rng, 20, 1);
    double prev = tiou(a, b);
    for (Index shift = 1; shift < 30; ++shift) {
      const double cur = tiou(a, {0, b.start + shift, b.end + shift});
      if (b.start >= a.start) EXPECT_LE(cur, prev);
      prev = cur;
    }
  }
}

TEST(OffsetCodec, Examples) {
  const auto zero = encode_offsets({0, 3, 7}, {0, 3, 7});
  EXPECT_EQ(zero.center, 0.0);
  EXPECT_EQ(zero.log_length, 0.0);
  // Frame-count lengths: both spans have 10 frames, centers 4.5 and 6.5.
  const auto off = encode_offsets({0, 0, 9}, {0, 2, 11});
  EXPECT_DOUBLE_EQ(off.center, -0.2);
  EXPECT_EQ(off.log_length, 0.0);
  EXPECT_EQ(decode_offsets({0, 0, 9}, off, 20), (Segment{0, 2, 11}));
  EXPECT_EQ(decode_offsets({1, 4, 6}, {0.0, 0.0}, 10), (Segment{1, 4, 6}));
  // Pushed past the end: clipped to T - 1.
  EXPECT_EQ(decode_offsets({0, 5, 9}, {-1.0, 0.0}, 12).end, 11);
  // Collapsing spans keep one frame at the decoded center.
  const auto tiny = decode_offsets({0, 4, 8}, {0.0, 10.0}, 20);
  EXPECT_EQ(tiny.start, 6);
  EXPECT_EQ(tiny.end, 6);
}

TEST(OffsetCodec, ContinuousRoundTripProperty) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto pred = random_segment(rng, 400, 3);
    const auto gt = random_segment(rng, 400, 3);
    const auto span = apply_offsets(pred, encode_offsets(pred, gt));
    EXPECT_NEAR(span.center, gt.center(), 1e-9);
    EXPECT_NEAR(span.length, static_cast<double>(gt.length()), 1e-9);
    EXPECT_EQ(decode_offsets(pred, encode_offsets(pred, gt), 400), (Segment{pred.label, gt.start, gt.end}));
  }
}

TEST(OffsetCodec, DecodedSegmentsAreAlwaysValid) {
  std::mt19937_64 rng(25);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto pred = random_segment(rng, 50, 3);
    const auto s = decode_offsets(pred, {n(rng), n(rng)}, 50);
    EXPECT_LE(0, s.start);
    EXPECT_LE(s.start, s.end);
    EXPECT_LT(s.end, 50);
  }
  EXPECT_THROW(decode_offsets({0, 0, 1}, {std::nan(""), 0.0}, 5), NumericError);
}

TEST(Masks, Examples) {
  SegmentMask expected(4);
  expected << 0, 1, 1, 0;
  EXPECT_EQ(segment_to_mask({0, 1, 2}, 4), expected);
  EXPECT_EQ(segment_to_mask({0, 0, 4}, 5), SegmentMask::Ones(5));
  EXPECT_THROW(segment_to_mask({0, 2, 5}, 5), BoundsError);
  SegmentMask two_runs(4);
  two_runs << 1, 0, 1, 0;
  EXPECT_THROW(mask_to_segment(two_runs, 0), ContractError);
  EXPECT_THROW(mask_to_segment(SegmentMask::Zero(3), 0), ContractError);
}

TEST(Masks, RoundTripProperty) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 500; ++trial) {
    const auto s = random_segment(rng, 40, 4);
    EXPECT_EQ(mask_to_segment(segment_to_mask(s, 40), s.label), s);
  }
}

TEST(MaskVote, Examples) {
  Matrix masks = Matrix::Ones(1, 5);
  Matrix probs(1, 3);
  probs << 0, 0, 1;
  EXPECT_EQ(mask_vote(masks, probs).labels, (LabelSequence(5, 2)));

  Matrix two(2, 6);
  two << 1, 1, 1, 1, 0, 0,  //
      0, 0, 1, 1, 1, 1;
  Matrix p(2, 2);
  p << 0.6, 0.4,  //
      0.1, 0.9;
  EXPECT_EQ(mask_vote(two, p).labels, (LabelSequence{0, 0, 1, 1, 1, 1}));
}

TEST(MaskVote, TiesPickLowestClassAndUncoveredFallsBack) {
  Matrix masks(1, 3);
  masks << 1, 1, 0;
  Matrix probs(1, 3);
  probs << 0.5, 0.5, 0.0;
  const std::vector<int> fallback{2, 2, 2};
  auto r = mask_vote(masks, probs, fallback);
  EXPECT_EQ(r.labels, (LabelSequence{0, 0, 2}));
  EXPECT_EQ(r.uncovered_frames, 1);
  EXPECT_THROW(mask_vote(Matrix::Ones(2, 3), probs), ContractError);
}

TEST(MaskVote, MatchesDoubleLoopAndIsScaleInvariant) {
  std::mt19937_64 rng(27);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 5, frames = 20, classes = 4;
    Matrix masks(n, frames);
    Matrix probs(n, classes);
    for (Index i = 0; i < n; ++i) {
      masks.row(i) = segment_to_mask(random_segment(rng, frames, 1), frames);
      for (Index c = 0; c < classes; ++c) probs(i, c) = u(rng);
      probs.row(i) /= probs.row(i).sum();
    }
    const auto r = mask_vote(masks, probs);
    EXPECT_LE((r.frame_scores - oracle::vote(masks, probs)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(mask_vote(masks, probs * 3.5).labels, r.labels);
  }
}
