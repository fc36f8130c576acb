#pragma once

#include <vector>

#include "stsx/segments.hpp"

namespace stsx {

struct Assignment {
  std::vector<int> row_to_col;  // -1 when a row is left unassigned
  double cost = 0.0;
};

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// shortest augmenting path with dual potentials, O(rows^2 * cols).
Assignment solve_assignment(const Matrix& cost);

/// Like solve_assignment on a square matrix, but among all optimal
/// assignments returns the one whose row_to_col vector is lexicographically
/// smallest. Costs equal within `tolerance` count as ties.
Assignment solve_assignment_lexicographic(const Matrix& cost, double tolerance = 1e-9);

struct MatchPair {
  int pred = 0;
  int gt = 0;
  double tiou = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // ordered by pred index
  std::vector<int> unmatched_preds;
  std::vector<int> unmatched_gts;
};

/// One-to-one matching maximising total tIoU (cost 1 - tIoU); pairs whose
/// tIoU is 0 are dropped after solving.
MatchResult hungarian_match(const std::vector<Segment>& preds, const std::vector<Segment>& gts);

}  // namespace stsx
