#pragma once

#include <string>

#include "stsx/segments.hpp"

namespace stsx {

/// One video as seen by the refinement model: frozen backbone features and
/// probabilities, the initial per-frame prediction derived from them, and
/// the ground truth when known.
struct Video {
  std::string id;
  Matrix features;       // T x D
  Matrix probs;          // T x C, may be empty
  LabelSequence initial;  // argmax of probs
  LabelSequence gt;       // may be empty at inference time

  Index frames() const { return features.rows(); }
};

}  // namespace stsx
