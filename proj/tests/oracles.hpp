#pragma once

// Deliberately naive reference implementations used as test oracles. None of
// them call into the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "stsx/segments.hpp"

namespace stsx::oracle {

struct Run {
  int label;
  Index start;
  Index end;
};

inline std::vector<Run> runs(const std::vector<int>& labels) {
  std::vector<Run> out;
  for (Index t = 0; t < static_cast<Index>(labels.size()); ++t) {
    const int l = labels[static_cast<std::size_t>(t)];
    if (out.empty() || out.back().label != l) out.push_back({l, t, t});
    else out.back().end = t;
  }
  return out;
}

// Frame-by-frame counting.
inline double tiou(Index a0, Index a1, Index b0, Index b1) {
  const Index lo = std::min(a0, b0), hi = std::max(a1, b1);
  int inter = 0, uni = 0;
  for (Index t = lo; t <= hi; ++t) {
    const bool in_a = t >= a0 && t <= a1, in_b = t >= b0 && t <= b1;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  int correct = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) correct += pred[t] == gt[t];
  return 100.0 * correct / static_cast<double>(gt.size());
}

// Full (n+1)x(m+1) table.
inline double edit(const std::vector<int>& pred, const std::vector<int>& gt) {
  const auto p = runs(pred), g = runs(gt);
  const std::size_t n = p.size(), m = g.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (p[i - 1].label != g[j - 1].label)});
  const double denom = static_cast<double>(std::max(n, m));
  return denom == 0 ? 100.0 : 100.0 * (1.0 - d[n][m] / denom);
}

struct F1 {
  int tp = 0, fp = 0, fn = 0;
  double score() const {
    const double p = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double r = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
    return p + r > 0 ? 200.0 * p * r / (p + r) : 0.0;
  }
};

inline F1 f1(const std::vector<int>& pred, const std::vector<int>& gt, double k) {
  const auto p = runs(pred), g = runs(gt);
  std::vector<bool> used(g.size(), false);
  F1 out;
  for (const auto& s : p) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (used[j] || g[j].label != s.label) continue;
      const double iou = tiou(s.start, s.end, g[j].start, g[j].end);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0 && best_iou > k) {
      ++out.tp;
      used[static_cast<std::size_t>(best)] = true;
    } else {
      ++out.fp;
    }
  }
  out.fn = static_cast<int>(std::count(used.begin(), used.end(), false));
  return out;
}

// scores(t, c) = sum_i masks(i, t) * probs(i, c), one entry at a time.
inline Matrix vote(const Matrix& masks, const Matrix& probs) {
  Matrix out(masks.cols(), probs.cols());
  for (Index t = 0; t < masks.cols(); ++t)
    for (Index c = 0; c < probs.cols(); ++c) {
      double s = 0.0;
      for (Index i = 0; i < masks.rows(); ++i) s += masks(i, t) * probs(i, c);
      out(t, c) = s;
    }
  return out;
}

struct Matching {
  std::vector<int> row_to_col;  // padded square assignment, lexicographically first optimum
  double total_iou = 0.0;
};

// Enumerates every permutation of the padded k x k problem (cost 1 - tIoU,
// padding cost 1); std::next_permutation visits them in lexicographic order.
inline Matching exhaustive_match(const std::vector<Segment>& preds, const std::vector<Segment>& gts) {
  const std::size_t n = preds.size(), m = gts.size(), k = std::max(n, m);
  auto cost = [&](std::size_t i, std::size_t j) {
    if (i >= n || j >= m) return 1.0;
    return 1.0 - tiou(preds[i].start, preds[i].end, gts[j].start, gts[j].end);
  };
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < k; ++i) c += cost(i, static_cast<std::size_t>(perm[i]));
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::iota(perm.begin(), perm.end(), 0);
  Matching out;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < k; ++i) c += cost(i, static_cast<std::size_t>(perm[i]));
    if (c <= best + 1e-9) {
      out.row_to_col = perm;
      break;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(out.row_to_col[i]);
    if (j < m) out.total_iou += 1.0 - cost(i, j);
  }
  return out;
}

}  // namespace stsx::oracle
