#include "stsx/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stsx {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T number(const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("not a number: '" + v + "'");
  return out;
}

bool boolean(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

std::string string_value(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::vector<int> int_array(const std::string& v) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw ConfigError("not an array: '" + v + "'");
  std::vector<int> out;
  std::istringstream parts(v.substr(1, v.size() - 2));
  std::string p;
  while (std::getline(parts, p, ',')) {
    p = trim(p);
    if (!p.empty()) out.push_back(number<int>(p));
  }
  return out;
}

// Strips a trailing comment unless the '#' sits inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = number<std::uint64_t>(v); }},

      {"model.d_frame", [](RunConfig& c, const std::string& v) { c.model.d_frame = number<Index>(v); }},
      {"model.d_dec", [](RunConfig& c, const std::string& v) { c.model.d_dec = number<Index>(v); }},
      {"model.frame_layers", [](RunConfig& c, const std::string& v) { c.model.frame_layers = number<int>(v); }},
      {"model.decoder_layers", [](RunConfig& c, const std::string& v) { c.model.decoder_layers = number<int>(v); }},
      {"model.window", [](RunConfig& c, const std::string& v) { c.model.window = number<int>(v); }},
      {"model.tap_layers",
       [](RunConfig& c, const std::string& v) {
         c.model.tap_layers = int_array(v);
         c.taps_explicit = true;
       }},
      {"model.head_depth", [](RunConfig& c, const std::string& v) { c.model.head_depth = number<int>(v); }},
      {"model.heads", [](RunConfig& c, const std::string& v) { c.model.heads = number<int>(v); }},
      {"model.scale_scores", [](RunConfig& c, const std::string& v) { c.model.scale_scores = boolean(v); }},
      {"model.segment_positional", [](RunConfig& c, const std::string& v) { c.model.segment_positional = boolean(v); }},
      {"model.embedding",
       [](RunConfig& c, const std::string& v) { c.model.embedding = segment_embedding_from_string(string_value(v)); }},

      {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = number<int>(v); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = number<double>(v); }},
      {"train.weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = number<double>(v); }},
      {"train.lambda_ce", [](RunConfig& c, const std::string& v) { c.train.lambda_ce = number<double>(v); }},
      {"train.lambda_reg", [](RunConfig& c, const std::string& v) { c.train.lambda_reg = number<double>(v); }},
      {"train.shuffle", [](RunConfig& c, const std::string& v) { c.train.shuffle = boolean(v); }},

      {"corruption.jitter", [](RunConfig& c, const std::string& v) { c.synthetic.corruption.jitter = number<double>(v); }},
      {"corruption.flip", [](RunConfig& c, const std::string& v) { c.synthetic.corruption.flip = number<double>(v); }},
      {"corruption.split", [](RunConfig& c, const std::string& v) { c.synthetic.corruption.split = number<double>(v); }},
      {"corruption.merge", [](RunConfig& c, const std::string& v) { c.synthetic.corruption.merge = number<double>(v); }},
      {"corruption.confidence",
       [](RunConfig& c, const std::string& v) { c.synthetic.corruption.confidence = number<double>(v); }},
      {"corruption.feature_noise",
       [](RunConfig& c, const std::string& v) { c.synthetic.corruption.feature_noise = number<double>(v); }},
      {"corruption.feature_dim",
       [](RunConfig& c, const std::string& v) { c.synthetic.corruption.feature_dim = number<Index>(v); }},

      {"data.root", [](RunConfig& c, const std::string& v) { c.data.root = string_value(v); }},
      {"data.split", [](RunConfig& c, const std::string& v) { c.data.split = string_value(v); }},
      {"data.validation", [](RunConfig& c, const std::string& v) { c.data.validation = string_value(v); }},
      {"data.videos", [](RunConfig& c, const std::string& v) { c.synthetic.videos = number<int>(v); }},
      {"data.classes", [](RunConfig& c, const std::string& v) { c.synthetic.num_classes = number<int>(v); }},
      {"data.min_frames", [](RunConfig& c, const std::string& v) { c.synthetic.min_frames = number<Index>(v); }},
      {"data.max_frames", [](RunConfig& c, const std::string& v) { c.synthetic.max_frames = number<Index>(v); }},
      {"data.mean_segment_length",
       [](RunConfig& c, const std::string& v) { c.synthetic.mean_segment_length = number<double>(v); }},
      {"data.test_videos", [](RunConfig& c, const std::string& v) { c.synthetic.test_videos = number<int>(v); }},
  };
  return table;
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

// Shortest text that reads back to the same double.
std::string real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::finalize() {
  model.seed = seed;
  train.seed = seed;
  synthetic.corruption.seed = seed;
  if (!taps_explicit) model.tap_layers = ModelConfig::default_taps(model.frame_layers, model.decoder_layers);
}

void RunConfig::validate() const {
  ModelConfig m = model;
  if (m.num_classes <= 0) m.num_classes = 1;
  m.validate();
  train.validate();
  synthetic.validate();
}

std::string RunConfig::to_toml() const {
  std::ostringstream out;
  out << "seed = " << seed << "\n\n[model]\n"
      << "d_frame = " << model.d_frame << "\n"
      << "d_dec = " << model.d_dec << "\n"
      << "frame_layers = " << model.frame_layers << "\n"
      << "decoder_layers = " << model.decoder_layers << "\n"
      << "window = " << model.window << "\n"
      << "tap_layers = [";
  for (std::size_t i = 0; i < model.tap_layers.size(); ++i) out << (i ? ", " : "") << model.tap_layers[i];
  out << "]\n"
      << "head_depth = " << model.head_depth << "\n"
      << "heads = " << model.heads << "\n"
      << "scale_scores = " << (model.scale_scores ? "true" : "false") << "\n"
      << "segment_positional = " << (model.segment_positional ? "true" : "false") << "\n"
      << "embedding = " << quoted(to_string(model.embedding)) << "\n\n[train]\n"
      << "epochs = " << train.epochs << "\n"
      << "lr = " << real(train.lr) << "\n"
      << "weight_decay = " << real(train.weight_decay) << "\n"
      << "lambda_ce = " << real(train.lambda_ce) << "\n"
      << "lambda_reg = " << real(train.lambda_reg) << "\n"
      << "shuffle = " << (train.shuffle ? "true" : "false") << "\n\n[corruption]\n";
  const auto& k = synthetic.corruption;
  out << "jitter = " << real(k.jitter) << "\n"
      << "flip = " << real(k.flip) << "\n"
      << "split = " << real(k.split) << "\n"
      << "merge = " << real(k.merge) << "\n"
      << "confidence = " << real(k.confidence) << "\n"
      << "feature_noise = " << real(k.feature_noise) << "\n"
      << "feature_dim = " << k.feature_dim << "\n\n[data]\n"
      << "root = " << quoted(data.root) << "\n"
      << "split = " << quoted(data.split) << "\n"
      << "validation = " << quoted(data.validation) << "\n"
      << "videos = " << synthetic.videos << "\n"
      << "classes = " << synthetic.num_classes << "\n"
      << "min_frames = " << synthetic.min_frames << "\n"
      << "max_frames = " << synthetic.max_frames << "\n"
      << "mean_segment_length = " << real(synthetic.mean_segment_length) << "\n"
      << "test_videos = " << synthetic.test_videos << "\n";
  return out.str();
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int number_of_line = 0;
  while (std::getline(in, line)) {
    ++number_of_line;
    const std::string where = origin + ":" + std::to_string(number_of_line) + ": ";
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "corruption" && section != "data") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    auto it = setters().find(full);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + full + "'");
    try {
      it->second(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + full + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open config '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(cfg, text.str(), path);
}

std::optional<std::uint64_t> seed_from_environment() {
  const char* env = std::getenv("STSX_SEED");
  if (!env || !*env) return std::nullopt;
  try {
    return number<std::uint64_t>(env);
  } catch (const ConfigError&) {
    throw ConfigError("STSX_SEED is not an unsigned integer: '" + std::string(env) + "'");
  }
}

}  // namespace stsx
