#include "stsx/model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace stsx {

std::string to_string(SegmentEmbedding e) {
  switch (e) {
    case SegmentEmbedding::FrameAndCategory: return "both";
    case SegmentEmbedding::FrameOnly: return "frame";
    case SegmentEmbedding::CategoryOnly: return "category";
  }
  return "both";
}

SegmentEmbedding segment_embedding_from_string(const std::string& s) {
  if (s == "both") return SegmentEmbedding::FrameAndCategory;
  if (s == "frame") return SegmentEmbedding::FrameOnly;
  if (s == "category") return SegmentEmbedding::CategoryOnly;
  throw ConfigError("unknown segment embedding '" + s + "' (expected both, frame or category)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (d_frame < 1 || d_dec < 2) fail("widths must be positive");
  if (d_dec % 2 != 0) fail("d_dec must be even for positional encodings");
  if (frame_layers < 1 || frame_layers > 30) fail("frame_layers must lie in [1, 30]");
  if (decoder_layers < 1) fail("decoder_layers must be >= 1");
  if (static_cast<int>(tap_layers.size()) != decoder_layers) fail("tap layer count must equal decoder_layers");
  for (int t : tap_layers)
    if (t < 0 || t >= frame_layers) fail("tap layer " + std::to_string(t) + " outside the frame encoder");
  if (window < 1) fail("window must be >= 1");
  if (head_depth < 1) fail("head_depth must be >= 1");
  if (heads < 1 || d_dec % heads != 0) fail("d_dec must be divisible by heads");
}

std::vector<int> ModelConfig::default_taps(int frame_layers, int decoder_layers) {
  std::vector<int> taps;
  for (int i = 0; i < decoder_layers; ++i) taps.push_back(std::max(0, frame_layers - decoder_layers + i));
  return taps;
}

std::string ModelConfig::serialize() const {
  std::ostringstream out;
  out << "num_classes=" << num_classes << "\n"
      << "d_frame=" << d_frame << "\n"
      << "d_dec=" << d_dec << "\n"
      << "frame_layers=" << frame_layers << "\n"
      << "decoder_layers=" << decoder_layers << "\n"
      << "window=" << window << "\n"
      << "tap_layers=";
  for (std::size_t i = 0; i < tap_layers.size(); ++i) out << (i ? "," : "") << tap_layers[i];
  out << "\n"
      << "head_depth=" << head_depth << "\n"
      << "heads=" << heads << "\n"
      << "scale_scores=" << (scale_scores ? 1 : 0) << "\n"
      << "segment_positional=" << (segment_positional ? 1 : 0) << "\n"
      << "embedding=" << to_string(embedding) << "\n"
      << "seed=" << seed << "\n";
  return out.str();
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

}  // namespace

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed model config line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    if (key == "num_classes") c.num_classes = parse_number<int>(key, v);
    else if (key == "d_frame") c.d_frame = parse_number<Index>(key, v);
    else if (key == "d_dec") c.d_dec = parse_number<Index>(key, v);
    else if (key == "frame_layers") c.frame_layers = parse_number<int>(key, v);
    else if (key == "decoder_layers") c.decoder_layers = parse_number<int>(key, v);
    else if (key == "window") c.window = parse_number<int>(key, v);
    else if (key == "tap_layers") {
      c.tap_layers.clear();
      std::istringstream parts(v);
      std::string p;
      while (std::getline(parts, p, ',')) c.tap_layers.push_back(parse_number<int>(key, p));
    } else if (key == "head_depth") c.head_depth = parse_number<int>(key, v);
    else if (key == "heads") c.heads = parse_number<int>(key, v);
    else if (key == "scale_scores") c.scale_scores = parse_number<int>(key, v) != 0;
    else if (key == "segment_positional") c.segment_positional = parse_number<int>(key, v) != 0;
    else if (key == "embedding") c.embedding = segment_embedding_from_string(v);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  return c;
}

Matrix local_attention_mask(const std::vector<Segment>& segments, Index num_frames, int window) {
  const auto n = static_cast<Index>(segments.size());
  Matrix mask = Matrix::Constant(n, num_frames, -std::numeric_limits<double>::infinity());
  for (Index i = 0; i < n; ++i) {
    const Index lo = segments[static_cast<std::size_t>(std::max<Index>(0, i - window))].start;
    const Index hi = segments[static_cast<std::size_t>(std::min<Index>(n - 1, i + window))].end;
    mask.row(i).segment(lo, hi - lo + 1).setZero();
  }
  return mask;
}

RefinedOutput refine_from_heads(const std::vector<Segment>& segments, const Matrix& class_probs,
                                const Matrix& offsets, Index num_frames, std::span<const int> fallback) {
  const auto n = static_cast<Index>(segments.size());
  if (class_probs.rows() != n || offsets.rows() != n || offsets.cols() != 2 || class_probs.cols() < 2) {
    throw ContractError("refine_from_heads: head outputs do not match the segment count");
  }
  const Index classes = class_probs.cols() - 1;
  RefinedOutput out;
  out.segments = segments;
  out.class_probs = class_probs;
  out.offsets = offsets;
  out.masks = Matrix::Zero(n, num_frames);
  for (Index i = 0; i < n; ++i) {
    Segment refined = decode_offsets(segments[static_cast<std::size_t>(i)], {offsets(i, 0), offsets(i, 1)}, num_frames);
    refined.label = static_cast<int>(argmax_row(class_probs.row(i).head(classes)));
    out.masks.row(i) = segment_to_mask(refined, num_frames);
    out.refined_segments.push_back(refined);
  }
  auto vote = mask_vote(out.masks, class_probs.leftCols(classes), fallback);
  out.frame_scores = std::move(vote.frame_scores);
  out.labels = std::move(vote.labels);
  out.uncovered_frames = vote.uncovered_frames;
  return out;
}

Mlp<double> Model::head(Index out, std::mt19937_64& rng) const {
  std::vector<Index> widths(static_cast<std::size_t>(config_.head_depth), config_.d_dec);
  widths.push_back(out);
  return Mlp<double>(widths, rng);
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const Index d = config_.d_dec;
  adapter_ = Linear<double>(config_.d_frame, d, rng);
  category_ = Mlp<double>({config_.num_classes, d, d}, rng);
  for (int i = 0; i < config_.frame_layers; ++i) frame_layers_.emplace_back(i, config_.d_frame, rng);
  for (int l = 0; l < config_.decoder_layers; ++l) {
    DecoderLayer layer;
    layer.frame_query = Linear<double>(d, d, rng, /*with_bias=*/false);
    layer.frame_key = Mlp<double>({d, d, d}, rng);
    layer.frame_value = Mlp<double>({d, d, d}, rng);
    layer.segment_query = Linear<double>(d, d, rng, /*with_bias=*/false);
    layer.segment_key = Mlp<double>({d, d, d}, rng);
    layer.segment_value = Mlp<double>({d, d, d}, rng);
    decoder_.push_back(std::move(layer));
  }
  cls_head_ = head(config_.num_classes + 1, rng);
  reg_head_ = head(2, rng);

  adapter_.collect(params_, "adapter");
  category_.collect_as_embedding(params_, "category");
  for (std::size_t i = 0; i < frame_layers_.size(); ++i)
    frame_layers_[i].collect(params_, "frame_encoder." + std::to_string(i));
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    decoder_[l].frame_query.collect(params_, p + ".frame_query");
    decoder_[l].frame_key.collect(params_, p + ".frame_key");
    decoder_[l].frame_value.collect(params_, p + ".frame_value");
    decoder_[l].segment_query.collect(params_, p + ".segment_query");
    decoder_[l].segment_key.collect(params_, p + ".segment_key");
    decoder_[l].segment_value.collect(params_, p + ".segment_value");
  }
  cls_head_.collect(params_, "head.cls");
  reg_head_.collect(params_, "head.reg");
  for (std::size_t i = 0; i < params_.size(); ++i) param_index_[params_[i].name] = i;
}

Tensor Model::parameter(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw NotFoundError("no parameter named '" + name + "'");
  return params_[it->second].tensor;
}

void Model::set_parameter(const std::string& name, const Matrix& value) {
  Tensor t = parameter(name);
  if (t.rows() != value.rows() || t.cols() != value.cols()) {
    throw DimensionError("parameter '" + name + "' is " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) +
                         ", got " + std::to_string(value.rows()) + "x" + std::to_string(value.cols()));
  }
  t.mutable_value() = value;
}

void Model::check_features(const Matrix& features) const {
  if (features.rows() < 1) throw ContractError("video has no frames");
  if (features.cols() != config_.d_frame) {
    throw DimensionError("feature width " + std::to_string(features.cols()) + " differs from d_frame " +
                         std::to_string(config_.d_frame));
  }
}

SegmentEncoding Model::encode_segments(const Tensor& features, std::span<const int> initial) const {
  const Index frames = features.rows();
  if (frames < 1) throw ContractError("segment encoder: empty prediction");
  if (static_cast<Index>(initial.size()) != frames) {
    throw ContractError("segment encoder: prediction length " + std::to_string(initial.size()) +
                        " differs from feature length " + std::to_string(frames));
  }
  validate_labels(initial, config_.num_classes);

  SegmentEncoding enc;
  enc.segments = extract_segments(initial);
  const auto n = static_cast<Index>(enc.segments.size());
  Matrix averaging = Matrix::Zero(n, frames);
  Matrix one_hot = Matrix::Zero(n, config_.num_classes);
  for (Index i = 0; i < n; ++i) {
    const auto& s = enc.segments[static_cast<std::size_t>(i)];
    averaging.row(i).segment(s.start, s.length()).setConstant(1.0 / static_cast<double>(s.length()));
    one_hot(i, s.label) = 1.0;
  }
  enc.frame_part = adapter_.forward(matmul(Tensor(std::move(averaging)), features));
  enc.category_part = category_.forward(Tensor(std::move(one_hot)));
  switch (config_.embedding) {
    case SegmentEmbedding::FrameAndCategory: enc.reps = add(enc.frame_part, enc.category_part); break;
    case SegmentEmbedding::FrameOnly: enc.reps = enc.frame_part; break;
    case SegmentEmbedding::CategoryOnly: enc.reps = enc.category_part; break;
  }
  return enc;
}

std::vector<Tensor> Model::encode_frames(const Tensor& features) const {
  if (features.rows() < 1) throw ContractError("frame encoder: empty sequence");
  std::vector<Tensor> taps(config_.tap_layers.size());
  Tensor h = features;
  for (const auto& layer : frame_layers_) {
    h = layer.forward(h);
    for (std::size_t k = 0; k < config_.tap_layers.size(); ++k)
      if (config_.tap_layers[k] == layer.index()) taps[k] = h;
  }
  return taps;
}

Tensor Model::decode(const Tensor& reps, const std::vector<Segment>& segments, const std::vector<Tensor>& taps,
                     DecoderTrace* trace) const {
  if (taps.size() != decoder_.size()) {
    throw ContractError("decoder has " + std::to_string(decoder_.size()) + " layers but got " +
                        std::to_string(taps.size()) + " tap features");
  }
  const Index n = reps.rows();
  if (static_cast<Index>(segments.size()) != n) throw ContractError("decoder: segment count differs from reps");
  if (n == 0) {
    if (trace) trace->no_segments = true;
    return reps;
  }
  const Index frames = taps.front().rows();
  Matrix mask = local_attention_mask(segments, frames, config_.window);
  const Tensor frame_positions = PositionalEncoding<double>(frames, config_.d_dec).rows(frames);
  const Tensor segment_positions = PositionalEncoding<double>(n, config_.d_dec).rows(n);
  const AttentionOptions opts{config_.heads, config_.scale_scores};

  Tensor xi = reps;
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& layer = decoder_[l];
    // Segment-frame attention restricted to the local window.
    const Tensor frames_in = add(adapter_.forward(taps[l]), frame_positions);
    auto sf = masked_attention(layer.frame_query.forward(xi), layer.frame_key.forward(frames_in),
                               layer.frame_value.forward(frames_in), &mask, opts);
    const Tensor xi1 = add(xi, sf.output);

    // Inter-segment attention over all segments.
    const Tensor seg_in = config_.segment_positional ? add(xi1, segment_positions) : xi1;
    auto is = masked_attention(layer.segment_query.forward(seg_in), layer.segment_key.forward(seg_in),
                               layer.segment_value.forward(seg_in), static_cast<const Matrix*>(nullptr), opts);
    xi = add(xi1, is.output);

    if (trace) {
      trace->after_frame_attention.push_back(xi1);
      trace->after_segment_attention.push_back(xi);
      trace->empty_attention_rows.insert(trace->empty_attention_rows.end(), sf.empty_rows.begin(), sf.empty_rows.end());
    }
  }
  if (trace) trace->mask = std::move(mask);
  return xi;
}

Tensor Model::classification_logits(const Tensor& refined) const { return cls_head_.forward(refined); }

Tensor Model::classification_probs(const Tensor& refined) const { return softmax_rows(classification_logits(refined)); }

Tensor Model::regression(const Tensor& refined) const { return reg_head_.forward(refined); }

ForwardResult Model::forward(const Matrix& features, std::span<const int> initial) const {
  check_features(features);
  const Tensor feats(features);
  ForwardResult out;
  out.encoding = encode_segments(feats, initial);
  const auto taps = encode_frames(feats);
  out.refined = decode(out.encoding.reps, out.encoding.segments, taps, &out.trace);
  out.logits = classification_logits(out.refined);
  out.offsets = regression(out.refined);
  return out;
}

RefinedOutput Model::infer(const Matrix& features, std::span<const int> initial) const {
  NoGradGuard no_grad;
  auto fwd = forward(features, initial);
  const Matrix probs = softmax_rows(fwd.logits).value();
  return refine_from_heads(fwd.encoding.segments, probs, fwd.offsets.value(), features.rows(), initial);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  binary::write_bytes(out, "STSX");
  binary::write<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = model.config().serialize();
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  binary::write_bytes(out, config);
  const auto& params = model.parameters();
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    binary::write_bytes(out, p.name);
    const auto& shape = p.tensor.shape();
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (Index dim : shape) binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(dim));
    const Matrix& v = p.tensor.value();
    for (Index i = 0; i < v.size(); ++i) binary::write<double>(out, v.data()[i]);
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint '" + path + "' not found");
  if (binary::read_bytes(in, 4, path) != "STSX") throw IntegrityError(path + ": bad magic, not a checkpoint");
  const auto version = binary::read<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) throw IntegrityError(path + ": unsupported version " + std::to_string(version));
  const auto config_len = binary::read<std::uint32_t>(in, path);
  Model model(ModelConfig::parse(binary::read_bytes(in, config_len, path)));
  const auto count = binary::read<std::uint32_t>(in, path);
  if (count != model.parameters().size()) {
    throw IntegrityError(path + ": holds " + std::to_string(count) + " tensors, model expects " +
                         std::to_string(model.parameters().size()));
  }
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = binary::read<std::uint32_t>(in, path);
    const std::string name = binary::read_bytes(in, name_len, path);
    const auto rank = binary::read<std::uint32_t>(in, path);
    if (rank > 2) throw IntegrityError(path + ": tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(binary::read<std::uint64_t>(in, path)));
    Tensor target;
    try {
      target = model.parameter(name);
    } catch (const NotFoundError&) {
      throw IntegrityError(path + ": unknown tensor '" + name + "'");
    }
    if (target.shape() != shape) {
      throw IntegrityError(path + ": tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                           shape_string(target.shape()));
    }
    Matrix value(target.rows(), target.cols());
    for (Index i = 0; i < value.size(); ++i) value.data()[i] = binary::read<double>(in, path);
    model.set_parameter(name, value);
    if (!seen.insert(name).second) throw IntegrityError(path + ": duplicate tensor '" + name + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IntegrityError(path + ": trailing bytes after last tensor");
  return model;
}

}  // namespace stsx
