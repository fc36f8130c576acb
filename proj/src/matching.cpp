#include "stsx/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stsx {
namespace {

struct Solution {
  std::vector<int> row_to_col;
  std::vector<double> u;  // row potentials, 1-based
  std::vector<double> v;  // column potentials, 1-based
  double cost = 0.0;
};

Solution solve(const Matrix& cost) {
  const auto n = static_cast<int>(cost.rows());
  const auto m = static_cast<int>(cost.cols());
  if (n > m) throw ContractError("solve_assignment needs rows <= cols");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(m) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  Solution s;
  s.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) s.row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  for (int i = 0; i < n; ++i) s.cost += cost(i, s.row_to_col[static_cast<std::size_t>(i)]);
  s.u = std::move(u);
  s.v = std::move(v);
  return s;
}

Matrix drop_row_col(const Matrix& cost, Index row, Index col) {
  Matrix out(cost.rows() - 1, cost.cols() - 1);
  for (Index r = 0, rr = 0; r < cost.rows(); ++r) {
    if (r == row) continue;
    for (Index c = 0, cc = 0; c < cost.cols(); ++c) {
      if (c == col) continue;
      out(rr, cc++) = cost(r, c);
    }
    ++rr;
  }
  return out;
}

}  // namespace

Assignment solve_assignment(const Matrix& cost) {
  if (cost.rows() == 0) return {};
  auto s = solve(cost);
  return {std::move(s.row_to_col), s.cost};
}

Assignment solve_assignment_lexicographic(const Matrix& cost, double tolerance) {
  if (cost.rows() != cost.cols()) throw ContractError("lexicographic assignment needs a square cost matrix");
  const Index n = cost.rows();
  Assignment result;
  result.row_to_col.assign(static_cast<std::size_t>(n), -1);
  if (n == 0) return result;

  // Fix rows in order; for each, take the smallest original column that still
  // admits an optimal completion. Only columns with zero reduced cost under
  // the current optimal duals can be part of an optimal assignment.
  std::vector<Index> cols(static_cast<std::size_t>(n));
  for (Index c = 0; c < n; ++c) cols[static_cast<std::size_t>(c)] = c;
  Matrix remaining = cost;
  for (Index row = 0; row < n; ++row) {
    const auto sol = solve(remaining);
    const double optimum = sol.cost;
    Index chosen = -1;
    for (Index c = 0; c < remaining.cols() && chosen < 0; ++c) {
      const double reduced = remaining(0, c) - sol.u[1] - sol.v[static_cast<std::size_t>(c) + 1];
      if (std::abs(reduced) > tolerance) continue;
      const double rest = remaining.rows() > 1 ? solve(drop_row_col(remaining, 0, c)).cost : 0.0;
      if (std::abs(remaining(0, c) + rest - optimum) <= tolerance * std::max(1.0, std::abs(optimum))) chosen = c;
    }
    if (chosen < 0) chosen = sol.row_to_col[0];  // numerical fallback, keeps the solver's optimum
    result.row_to_col[static_cast<std::size_t>(row)] = static_cast<int>(cols[static_cast<std::size_t>(chosen)]);
    result.cost += remaining(0, chosen);
    cols.erase(cols.begin() + chosen);
    if (remaining.rows() > 1) remaining = drop_row_col(remaining, 0, chosen);
  }
  return result;
}

MatchResult hungarian_match(const std::vector<Segment>& preds, const std::vector<Segment>& gts) {
  MatchResult out;
  const auto n = static_cast<Index>(preds.size());
  const auto m = static_cast<Index>(gts.size());
  const Index k = std::max(n, m);
  // Padding rows/columns cost 1, the same as a zero-overlap pair.
  Matrix cost = Matrix::Ones(k, k);
  Matrix iou = Matrix::Zero(n, m);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) {
      iou(i, j) = tiou(preds[static_cast<std::size_t>(i)], gts[static_cast<std::size_t>(j)]);
      cost(i, j) = 1.0 - iou(i, j);
    }
  const auto assignment = solve_assignment_lexicographic(cost);
  std::vector<bool> gt_matched(static_cast<std::size_t>(m), false);
  for (Index i = 0; i < n; ++i) {
    const int j = assignment.row_to_col[static_cast<std::size_t>(i)];
    if (j < m && iou(i, j) > 0.0) {
      out.pairs.push_back({static_cast<int>(i), j, iou(i, j)});
      gt_matched[static_cast<std::size_t>(j)] = true;
    } else {
      out.unmatched_preds.push_back(static_cast<int>(i));
    }
  }
  for (Index j = 0; j < m; ++j)
    if (!gt_matched[static_cast<std::size_t>(j)]) out.unmatched_gts.push_back(static_cast<int>(j));
  return out;
}

}  // namespace stsx
