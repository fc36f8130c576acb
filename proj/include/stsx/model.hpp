#pragma once

// The temporal segment transformer: segment encoder, dilated temporal frame
// encoder, alternating segment-frame / inter-segment decoder, and the
// classification and boundary-regression heads whose outputs are fused by
// mask voting.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "stsx/nn.hpp"
#include "stsx/segments.hpp"

namespace stsx {

enum class SegmentEmbedding { FrameAndCategory, FrameOnly, CategoryOnly };

std::string to_string(SegmentEmbedding e);
SegmentEmbedding segment_embedding_from_string(const std::string& s);

struct ModelConfig {
  int num_classes = 0;
  Index d_frame = 64;
  Index d_dec = 256;
  int frame_layers = 10;
  int decoder_layers = 2;
  int window = 1;                 // neighbouring segments visible on each side
  std::vector<int> tap_layers{8, 9};  // 0-based frame-encoder layers feeding each decoder layer
  int head_depth = 2;
  int heads = 1;
  bool scale_scores = false;
  bool segment_positional = true;
  SegmentEmbedding embedding = SegmentEmbedding::FrameAndCategory;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// Taps on the last `decoder_layers` frame-encoder layers.
  static std::vector<int> default_taps(int frame_layers, int decoder_layers);

  /// key=value lines; `parse(serialize())` reproduces the config.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
};

struct SegmentEncoding {
  std::vector<Segment> segments;
  Tensor frame_part;     // N x d_dec, adapter(mean of segment frames)
  Tensor category_part;  // N x d_dec, MLP(one-hot(label))
  Tensor reps;           // N x d_dec
};

struct DecoderTrace {
  Matrix mask;                               // N x T local attention mask
  std::vector<Tensor> after_frame_attention;    // one per layer
  std::vector<Tensor> after_segment_attention;  // one per layer
  std::vector<Index> empty_attention_rows;
  bool no_segments = false;
};

struct ForwardResult {
  SegmentEncoding encoding;
  Tensor refined;  // N x d_dec
  Tensor logits;   // N x (C + 1), junk class last
  Tensor offsets;  // N x 2, (center, log length)
  DecoderTrace trace;
};

struct RefinedOutput {
  std::vector<Segment> segments;          // initial segments
  Matrix class_probs;                     // N x (C + 1)
  Matrix offsets;                         // N x 2
  std::vector<Segment> refined_segments;  // decoded boundaries, label = argmax over real classes
  Matrix masks;                           // N x T
  Matrix frame_scores;                    // T x C
  LabelSequence labels;
  Index uncovered_frames = 0;
};

/// M(i, t) = 0 when segments[i - w].start <= t <= segments[i + w].end (the
/// window clamped at both ends of the sequence), -inf elsewhere.
Matrix local_attention_mask(const std::vector<Segment>& segments, Index num_frames, int window);

/// Post-processing shared by inference and tests: decode boundaries, build
/// masks, drop the junk column and vote. Uncovered frames take `fallback`.
RefinedOutput refine_from_heads(const std::vector<Segment>& segments, const Matrix& class_probs,
                                const Matrix& offsets, Index num_frames, std::span<const int> fallback);

class Model {
 public:
  explicit Model(ModelConfig config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  SegmentEncoding encode_segments(const Tensor& features, std::span<const int> initial) const;
  std::vector<Tensor> encode_frames(const Tensor& features) const;
  Tensor decode(const Tensor& reps, const std::vector<Segment>& segments, const std::vector<Tensor>& taps,
                DecoderTrace* trace = nullptr) const;
  Tensor classification_logits(const Tensor& refined) const;
  Tensor classification_probs(const Tensor& refined) const;
  Tensor regression(const Tensor& refined) const;

  ForwardResult forward(const Matrix& features, std::span<const int> initial) const;
  RefinedOutput infer(const Matrix& features, std::span<const int> initial) const;

  /// Parameters in a fixed order, with names used by checkpoints.
  const ParamList<double>& parameters() const { return params_; }
  Tensor parameter(const std::string& name) const;
  void set_parameter(const std::string& name, const Matrix& value);

 private:
  struct DecoderLayer {
    Linear<double> frame_query;  // W_q, no bias
    Mlp<double> frame_key;
    Mlp<double> frame_value;
    Linear<double> segment_query;  // W_q', no bias
    Mlp<double> segment_key;
    Mlp<double> segment_value;
  };

  void check_features(const Matrix& features) const;
  Mlp<double> head(Index out, std::mt19937_64& rng) const;

  ModelConfig config_;
  Linear<double> adapter_;
  Mlp<double> category_;
  std::vector<DilatedResidualLayer<double>> frame_layers_;
  std::vector<DecoderLayer> decoder_;
  Mlp<double> cls_head_;
  Mlp<double> reg_head_;
  ParamList<double> params_;
  std::map<std::string, std::size_t> param_index_;
};

/// Binary checkpoint: "STSX", u32 version, u32 config length + config text,
/// u32 tensor count, then per tensor u32 name length, name, u32 rank, u64
/// dims, little-endian f64 payload.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace stsx
