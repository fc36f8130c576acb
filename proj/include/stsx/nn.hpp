#pragma once

// Learnable building blocks: affine layers, MLPs, sinusoidal positional
// encodings, masked attention and the dilated residual temporal layer.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "stsx/tensor.hpp"

namespace stsx {

template <typename Scalar>
struct NamedParam {
  std::string name;
  BasicTensor<Scalar> tensor;
  bool decay = true;  // whether weight decay applies
};

template <typename Scalar>
using ParamList = std::vector<NamedParam<Scalar>>;

/// uniform(-a, a) with a = 1/sqrt(fan_in).
template <typename Scalar>
Mat<Scalar> uniform_init(Index rows, Index cols, Index fan_in, std::mt19937_64& rng) {
  const Scalar a = Scalar(1) / std::sqrt(static_cast<Scalar>(fan_in));
  std::uniform_real_distribution<Scalar> dist(-a, a);
  Mat<Scalar> m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

template <typename Scalar>
class Linear {
 public:
  Linear() = default;

  Linear(Index in, Index out, std::mt19937_64& rng, bool with_bias = true)
      : weight_(uniform_init<Scalar>(in, out, in, rng), true) {
    if (with_bias) bias_ = BasicTensor<Scalar>(uniform_init<Scalar>(1, out, in, rng), Shape{out}, true);
  }

  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }

  BasicTensor<Scalar> forward(const BasicTensor<Scalar>& x) const {
    if (x.cols() != in_features()) {
      throw DimensionError("linear: input width " + std::to_string(x.cols()) + ", expected " +
                           std::to_string(in_features()));
    }
    auto y = matmul(x, weight_);
    return bias_.defined() ? add_row(y, bias_) : y;
  }

  void collect(ParamList<Scalar>& out, const std::string& prefix, bool decay_weight = true) const {
    out.push_back({prefix + ".weight", weight_, decay_weight});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_, false});
  }

  const BasicTensor<Scalar>& weight() const { return weight_; }
  const BasicTensor<Scalar>& bias() const { return bias_; }

 private:
  BasicTensor<Scalar> weight_;
  BasicTensor<Scalar> bias_;
};

/// Affine layers with ReLU between them and none after the last.
template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;

  /// `widths` = {in, hidden..., out}; needs at least two entries.
  Mlp(const std::vector<Index>& widths, std::mt19937_64& rng) {
    if (widths.size() < 2) throw ContractError("mlp needs at least an input and an output width");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers_.emplace_back(widths[i], widths[i + 1], rng);
  }

  BasicTensor<Scalar> forward(const BasicTensor<Scalar>& x) const {
    BasicTensor<Scalar> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h);
      if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
  }

  Index in_features() const { return layers_.front().in_features(); }
  Index out_features() const { return layers_.back().out_features(); }
  std::size_t depth() const { return layers_.size(); }
  const Linear<Scalar>& layer(std::size_t i) const { return layers_.at(i); }

  void collect(ParamList<Scalar>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "." + std::to_string(i));
  }

  /// Same, but the first layer's weight is exempt from weight decay (used
  /// for embedding tables fed by one-hot inputs).
  void collect_as_embedding(ParamList<Scalar>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(out, prefix + "." + std::to_string(i), /*decay_weight=*/i != 0);
  }

 private:
  std::vector<Linear<Scalar>> layers_;
};

/// Sinusoidal table: column 2i holds sin(p / 10000^(2i/D)), column 2i+1 the
/// matching cosine.
template <typename Scalar>
class PositionalEncoding {
 public:
  PositionalEncoding(Index max_length, Index dim) : table_(max_length, dim) {
    if (dim % 2 != 0) throw ContractError("positional encoding width must be even, got " + std::to_string(dim));
    for (Index p = 0; p < max_length; ++p) {
      for (Index i = 0; 2 * i < dim; ++i) {
        const Scalar angle =
            static_cast<Scalar>(p) / std::pow(Scalar(10000), static_cast<Scalar>(2 * i) / static_cast<Scalar>(dim));
        table_(p, 2 * i) = std::sin(angle);
        table_(p, 2 * i + 1) = std::cos(angle);
      }
    }
  }

  Index max_length() const { return table_.rows(); }
  Index dim() const { return table_.cols(); }
  const Mat<Scalar>& table() const { return table_; }

  /// First `count` rows as a constant tensor.
  BasicTensor<Scalar> rows(Index count) const {
    if (count > max_length()) throw BoundsError("positional encoding has only " + std::to_string(max_length()) + " rows");
    return BasicTensor<Scalar>(Mat<Scalar>(table_.topRows(count)));
  }

 private:
  Mat<Scalar> table_;
};

struct AttentionOptions {
  Index heads = 1;
  bool scale_scores = false;  // divide scores by sqrt(head width)
};

template <typename Scalar>
struct AttentionResult {
  BasicTensor<Scalar> output;     // N x Dv
  std::vector<Index> empty_rows;  // queries whose mask left nothing open
};

/// Additive attention mask: 0 where attention is allowed, -inf elsewhere.
template <typename Scalar>
void validate_attention_mask(const Mat<Scalar>& mask) {
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  for (Index r = 0; r < mask.rows(); ++r)
    for (Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c) != Scalar(0) && mask(r, c) != neg_inf) throw ContractError("attention mask entries must be 0 or -inf");
}

/// softmax(mask + Q K^T) V for N queries against S keys. `mask` may be null
/// (everything open). Multi-head splits the feature columns evenly.
template <typename Scalar>
AttentionResult<Scalar> masked_attention(const BasicTensor<Scalar>& queries, const BasicTensor<Scalar>& keys,
                                         const BasicTensor<Scalar>& values, const Mat<Scalar>* mask,
                                         const AttentionOptions& opts = {}) {
  if (keys.rows() < 1) throw ContractError("attention needs at least one key");
  if (queries.cols() != keys.cols()) throw DimensionError("attention: query and key widths differ");
  if (keys.rows() != values.rows()) throw DimensionError("attention: key and value counts differ");
  if (opts.heads < 1 || queries.cols() % opts.heads != 0 || values.cols() % opts.heads != 0) {
    throw ContractError("attention: widths not divisible by head count " + std::to_string(opts.heads));
  }
  BasicTensor<Scalar> mask_tensor;
  if (mask) {
    if (mask->rows() != queries.rows() || mask->cols() != keys.rows()) {
      throw DimensionError("attention mask must be " + std::to_string(queries.rows()) + "x" +
                           std::to_string(keys.rows()));
    }
    validate_attention_mask(*mask);
    mask_tensor = BasicTensor<Scalar>(*mask);
  }

  AttentionResult<Scalar> result;
  const Index qk_width = queries.cols() / opts.heads;
  const Index v_width = values.cols() / opts.heads;
  std::vector<BasicTensor<Scalar>> head_outputs;
  for (Index h = 0; h < opts.heads; ++h) {
    auto q = opts.heads == 1 ? queries : slice_cols(queries, h * qk_width, qk_width);
    auto k = opts.heads == 1 ? keys : slice_cols(keys, h * qk_width, qk_width);
    auto v = opts.heads == 1 ? values : slice_cols(values, h * v_width, v_width);
    auto scores = matmul(q, transpose(k));
    if (opts.scale_scores) scores = mul_scalar(scores, Scalar(1) / std::sqrt(static_cast<Scalar>(qk_width)));
    if (mask) scores = add(scores, mask_tensor);
    std::vector<Index> empty;
    auto weights = softmax_rows(scores, h == 0 ? &result.empty_rows : &empty);
    head_outputs.push_back(matmul(weights, v));
  }
  result.output = opts.heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
  return result;
}

/// y = x + W_1x1 * ReLU(dilated_conv(x)), kernel 3 by default, dilation
/// 2^index, zero same-padding along time (rows).
template <typename Scalar>
class DilatedResidualLayer {
 public:
  DilatedResidualLayer() = default;

  DilatedResidualLayer(int index, Index channels, std::mt19937_64& rng, int kernel = 3)
      : index_(index), kernel_(kernel), conv_(kernel * channels, channels, rng), pointwise_(channels, channels, rng) {
    if (kernel < 1 || kernel % 2 == 0) throw ContractError("dilated layer kernel must be odd");
  }

  int index() const { return index_; }
  Index dilation() const { return Index(1) << index_; }
  int kernel() const { return kernel_; }
  Index channels() const { return pointwise_.in_features(); }

  BasicTensor<Scalar> forward(const BasicTensor<Scalar>& x) const {
    if (x.rows() < 1) throw ContractError("dilated layer needs at least one frame");
    if (x.cols() != channels()) throw DimensionError("dilated layer: channel mismatch");
    std::vector<BasicTensor<Scalar>> taps;
    taps.reserve(static_cast<std::size_t>(kernel_));
    for (int k = 0; k < kernel_; ++k) taps.push_back(shift_rows(x, (k - kernel_ / 2) * dilation()));
    auto h = relu(conv_.forward(concat_cols(taps)));
    return add(x, pointwise_.forward(h));
  }

  void collect(ParamList<Scalar>& out, const std::string& prefix) const {
    conv_.collect(out, prefix + ".conv");
    pointwise_.collect(out, prefix + ".pointwise");
  }

 private:
  int index_ = 0;
  int kernel_ = 3;
  Linear<Scalar> conv_;       // (kernel*C) x C, rows grouped by tap from earliest to latest frame
  Linear<Scalar> pointwise_;  // C x C
};

}  // namespace stsx
