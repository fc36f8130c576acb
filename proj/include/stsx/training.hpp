#pragma once

// Supervised training of the refinement model: Hungarian-matched targets,
// cross-entropy + smooth-L1 loss, and AdamW-style updates.

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "stsx/matching.hpp"
#include "stsx/metrics.hpp"
#include "stsx/model.hpp"
#include "stsx/video.hpp"

namespace stsx {

struct SegmentTargets {
  std::vector<int> classes;                            // gt class, or num_classes (junk)
  std::vector<std::optional<BoundaryOffsets>> offsets;  // present for matched segments only

  std::size_t matched() const;
};

SegmentTargets build_targets(const MatchResult& match, const std::vector<Segment>& preds,
                             const std::vector<Segment>& gts, int num_classes);

/// Mean cross entropy of row-wise logits against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Mean over rows with a target of the summed smooth-L1 (transition 1) error;
/// rows without a target contribute nothing, including no gradient. Zero
/// when no row has a target.
Tensor smooth_l1(const Tensor& predicted, const std::vector<std::optional<BoundaryOffsets>>& targets);

struct LossTerms {
  Tensor total;
  double ce = 0.0;
  double reg = 0.0;
};

LossTerms segment_loss(const Tensor& logits, const Tensor& offsets, const SegmentTargets& targets,
                       double lambda_ce, double lambda_reg);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamMoments {
  Matrix m;
  Matrix v;
};

/// One update of a single tensor at step `t` (1-based). Decay, when enabled,
/// subtracts lr * weight_decay * param before the adaptive step.
void adam_step(Matrix& param, const Matrix& grad, AdamMoments& state, long t, const AdamOptions& opts, bool decay);

class Adam {
 public:
  Adam(ParamList<double> params, AdamOptions opts);

  /// Applies one update using the gradients currently held by the params.
  void step();
  void zero_grad();
  long steps() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  ParamList<double> params_;
  AdamOptions opts_;
  std::vector<AdamMoments> state_;
  long t_ = 0;
};

struct TrainConfig {
  int epochs = 60;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double lambda_ce = 1.0;
  double lambda_reg = 1.0;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

struct EpochSummary {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double ce = 0.0;
  double reg = 0.0;
  std::optional<double> validation_edit;
};

struct TrainResult {
  std::vector<EpochSummary> epochs;
  int best_epoch = 0;  // epoch whose weights the model holds on return
};

/// Per-video targets are computed once up front; they depend only on the
/// initial and ground-truth segmentations.
struct PreparedVideo {
  const Video* video = nullptr;
  std::vector<Segment> segments;
  SegmentTargets targets;
};

PreparedVideo prepare_video(const Video& video, int num_classes);

/// One optimisation step on one video; returns the loss terms.
LossTerms train_step(Model& model, Adam& optimizer, const PreparedVideo& video, const TrainConfig& config);

/// Trains for `config.epochs` epochs, one video per step. With a non-empty
/// validation set the weights with the best mean validation edit score are
/// restored at the end. Writes the TSV log (epoch, video, loss_ce, loss_reg,
/// total) to `log` when given.
TrainResult train(Model& model, std::span<const Video> train_set, std::span<const Video> validation,
                  const TrainConfig& config, std::ostream* log = nullptr);

/// Report with an "initial" and a "refined" entry over `videos`, which must
/// all carry ground truth.
EvalReport evaluate_refinement(const Model& model, std::span<const Video> videos);

}  // namespace stsx
