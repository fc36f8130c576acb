#include "stsx/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "stsx/metrics.hpp"

namespace stsx {

std::size_t SegmentTargets::matched() const {
  return static_cast<std::size_t>(std::count_if(offsets.begin(), offsets.end(), [](const auto& o) { return o.has_value(); }));
}

SegmentTargets build_targets(const MatchResult& match, const std::vector<Segment>& preds,
                             const std::vector<Segment>& gts, int num_classes) {
  SegmentTargets t;
  t.classes.assign(preds.size(), num_classes);
  t.offsets.assign(preds.size(), std::nullopt);
  for (const auto& p : match.pairs) {
    const auto& pred = preds.at(static_cast<std::size_t>(p.pred));
    const auto& gt = gts.at(static_cast<std::size_t>(p.gt));
    t.classes[static_cast<std::size_t>(p.pred)] = gt.label;
    t.offsets[static_cast<std::size_t>(p.pred)] = encode_offsets(pred, gt);
  }
  return t;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const Index n = logits.rows();
  const Index k = logits.cols();
  if (static_cast<Index>(targets.size()) != n) throw DimensionError("cross_entropy: target count differs from rows");
  if (n == 0) throw ContractError("cross_entropy over zero rows");
  const Matrix& z = logits.value();
  Matrix probs(n, k);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int target = targets[static_cast<std::size_t>(i)];
    if (target < 0 || target >= k) throw ContractError("cross_entropy: target out of range");
    const double m = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - m).exp().matrix();
    const double s = probs.row(i).sum();
    probs.row(i) /= s;
    total += -(z(i, target) - m - std::log(s));
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_op<double>("cross_entropy", std::move(out), {}, {logits},
                         [probs = std::move(probs), tgt = std::move(tgt)](detail::Node<double>& self) {
                           Matrix g = probs;
                           for (std::size_t i = 0; i < tgt.size(); ++i) g(static_cast<Index>(i), tgt[i]) -= 1.0;
                           g *= self.grad(0, 0) / static_cast<double>(tgt.size());
                           detail::accumulate(*self.inputs[0], g);
                         });
}

Tensor smooth_l1(const Tensor& predicted, const std::vector<std::optional<BoundaryOffsets>>& targets) {
  const Index n = predicted.rows();
  if (predicted.cols() != 2 || static_cast<Index>(targets.size()) != n) {
    throw DimensionError("smooth_l1: expected " + std::to_string(targets.size()) + "x2 offsets");
  }
  Matrix slope = Matrix::Zero(n, 2);  // d loss / d prediction before averaging
  double total = 0.0;
  std::size_t matched = 0;
  for (Index i = 0; i < n; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    if (!t) continue;
    ++matched;
    const double target[2] = {t->center, t->log_length};
    for (Index c = 0; c < 2; ++c) {
      const double d = predicted.value()(i, c) - target[c];
      if (std::abs(d) < 1.0) {
        total += 0.5 * d * d;
        slope(i, c) = d;
      } else {
        total += std::abs(d) - 0.5;
        slope(i, c) = d > 0 ? 1.0 : -1.0;
      }
    }
  }
  const double scale = matched == 0 ? 0.0 : 1.0 / static_cast<double>(matched);
  Matrix out(1, 1);
  out(0, 0) = total * scale;
  return make_op<double>("smooth_l1", std::move(out), {}, {predicted},
                         [slope = std::move(slope), scale](detail::Node<double>& self) {
                           detail::accumulate(*self.inputs[0], Matrix(slope * (scale * self.grad(0, 0))));
                         });
}

LossTerms segment_loss(const Tensor& logits, const Tensor& offsets, const SegmentTargets& targets,
                       double lambda_ce, double lambda_reg) {
  LossTerms out;
  const Tensor ce = cross_entropy(logits, targets.classes);
  const Tensor reg = smooth_l1(offsets, targets.offsets);
  out.ce = ce.item();
  out.reg = reg.item();
  out.total = add(mul_scalar(ce, lambda_ce), mul_scalar(reg, lambda_reg));
  return out;
}

void adam_step(Matrix& param, const Matrix& grad, AdamMoments& state, long t, const AdamOptions& opts, bool decay) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) throw DimensionError("adam_step: shape mismatch");
  if (state.m.size() == 0) {
    state.m = Matrix::Zero(param.rows(), param.cols());
    state.v = Matrix::Zero(param.rows(), param.cols());
  }
  state.m = opts.beta1 * state.m + (1.0 - opts.beta1) * grad;
  state.v = opts.beta2 * state.v + (1.0 - opts.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(t));
  if (decay) param -= (opts.lr * opts.weight_decay) * param;
  param.array() -= opts.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + opts.eps);
}

Adam::Adam(ParamList<double> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts), state_(params_.size()) {}

void Adam::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const Matrix g = p.tensor.grad();
    adam_step(p.tensor.mutable_value(), g, state_[i], t_, opts_, p.decay);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("train: lr and weight_decay must be >= 0");
  if (!(lambda_ce >= 0.0) || !(lambda_reg >= 0.0)) throw ConfigError("train: loss weights must be >= 0");
}

PreparedVideo prepare_video(const Video& video, int num_classes) {
  if (video.gt.size() != video.initial.size() || static_cast<Index>(video.gt.size()) != video.frames()) {
    throw IntegrityError("video '" + video.id + "': feature, prediction and label lengths differ");
  }
  PreparedVideo p;
  p.video = &video;
  p.segments = extract_segments(video.initial);
  const auto gts = extract_segments(video.gt);
  p.targets = build_targets(hungarian_match(p.segments, gts), p.segments, gts, num_classes);
  return p;
}

LossTerms train_step(Model& model, Adam& optimizer, const PreparedVideo& video, const TrainConfig& config) {
  const auto fwd = model.forward(video.video->features, video.video->initial);
  auto terms = segment_loss(fwd.logits, fwd.offsets, video.targets, config.lambda_ce, config.lambda_reg);
  optimizer.zero_grad();
  backward(terms.total);
  optimizer.step();
  return terms;
}

namespace {

double mean_edit(const Model& model, std::span<const Video> videos) {
  double total = 0.0;
  for (const auto& v : videos) total += edit_score(model.infer(v.features, v.initial).labels, v.gt);
  return total / static_cast<double>(videos.size());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

TrainResult train(Model& model, std::span<const Video> train_set, std::span<const Video> validation,
                  const TrainConfig& config, std::ostream* log) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  const int classes = model.config().num_classes;
  std::vector<PreparedVideo> prepared;
  std::size_t total_segments = 0;
  for (const auto& v : train_set) {
    if (v.frames() == 0) continue;
    prepared.push_back(prepare_video(v, classes));
    total_segments += prepared.back().segments.size();
  }
  if (total_segments == 0) throw ConfigError("no video in the training set has any segment");

  Adam optimizer(model.parameters(), {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::vector<Matrix> best_weights;
  double best_edit = -1.0;
  if (log) *log << "epoch\tvideo\tloss_ce\tloss_reg\ttotal\n";
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    EpochSummary summary;
    summary.epoch = epoch;
    for (std::size_t idx : order) {
      const auto terms = train_step(model, optimizer, prepared[idx], config);
      const double total = terms.total.item();
      summary.loss += total;
      summary.ce += terms.ce;
      summary.reg += terms.reg;
      if (log) {
        *log << epoch << "\t" << prepared[idx].video->id << "\t" << fmt(terms.ce) << "\t" << fmt(terms.reg) << "\t"
             << fmt(total) << "\n";
      }
    }
    const auto count = static_cast<double>(prepared.size());
    summary.loss /= count;
    summary.ce /= count;
    summary.reg /= count;
    if (!validation.empty()) {
      summary.validation_edit = mean_edit(model, validation);
      if (*summary.validation_edit > best_edit) {
        best_edit = *summary.validation_edit;
        result.best_epoch = epoch;
        best_weights.clear();
        for (const auto& p : model.parameters()) best_weights.push_back(p.tensor.value());
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(summary);
  }
  if (!best_weights.empty()) {
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) model.set_parameter(params[i].name, best_weights[i]);
  }
  return result;
}

EvalReport evaluate_refinement(const Model& model, std::span<const Video> videos) {
  EvalReport report;
  report.entries.resize(2);
  report.entries[0].name = "initial";
  report.entries[1].name = "refined";
  for (const auto& v : videos) {
    if (v.gt.empty()) throw NotFoundError("video '" + v.id + "' has no ground truth to evaluate against");
    report.entries[0].videos.push_back(evaluate_video(v.id, v.initial, v.gt));
    report.entries[1].videos.push_back(evaluate_video(v.id, model.infer(v.features, v.initial).labels, v.gt));
  }
  for (auto& e : report.entries) e.corpus = aggregate(e.videos);
  return report;
}

}  // namespace stsx
