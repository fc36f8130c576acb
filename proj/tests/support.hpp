#pragma once

// Shared test helpers: central-difference gradient checks and small random
// generators for labels, segments and matrices.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "stsx/segments.hpp"
#include "stsx/tensor.hpp"

namespace stsx::testing {

struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
};

// Compares analytic gradients of `loss(inputs)` with central differences for
// every entry of every input. Entries whose analytic and numeric values are
// both below `floor` count as agreeing.
inline GradCheck check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& loss,
                                 std::vector<Matrix> inputs, double h = 1e-5, double floor = 1e-8) {
  std::vector<Tensor> leaves;
  for (const auto& m : inputs) leaves.emplace_back(m, true);
  backward(loss(leaves));

  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = leaves[k].grad();
    for (Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Matrix m = inputs[j];
          if (j == k) m.data()[i] += delta;
          probe.emplace_back(std::move(m), false);
        }
        return loss(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      const double a = analytic.data()[i];
      const double diff = std::abs(a - numeric);
      out.max_abs = std::max(out.max_abs, diff);
      if (diff <= floor) continue;
      out.max_rel = std::max(out.max_rel, diff / std::max(std::abs(a), std::abs(numeric)));
    }
  }
  return out;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Labels built from runs of random length, so segment structure is typical.
inline LabelSequence random_labels(std::mt19937_64& rng, Index frames, int classes, int max_run = 6) {
  LabelSequence out;
  while (static_cast<Index>(out.size()) < frames) {
    const int label = uniform_int(rng, 0, classes - 1);
    const int run = uniform_int(rng, 1, max_run);
    for (int i = 0; i < run && static_cast<Index>(out.size()) < frames; ++i) out.push_back(label);
  }
  return out;
}

inline Segment random_segment(std::mt19937_64& rng, Index frames, int classes) {
  Index a = uniform_int(rng, 0, static_cast<int>(frames) - 1);
  Index b = uniform_int(rng, 0, static_cast<int>(frames) - 1);
  if (a > b) std::swap(a, b);
  return {uniform_int(rng, 0, classes - 1), a, b};
}

}  // namespace stsx::testing
