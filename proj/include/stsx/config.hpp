#pragma once

// Run configuration read from a small TOML subset:
//
//   seed = 7
//   [model]
//   decoder_layers = 2
//   tap_layers = [8, 9]
//   [train]
//   epochs = 60
//   [corruption]
//   jitter = 0.15
//   [data]
//   root = "data/synth"
//
// Only `key = value` pairs, `[section]` headers, `#` comments, quoted
// strings, booleans, numbers and flat integer arrays are understood.

#include <optional>
#include <string>

#include "stsx/data_io.hpp"
#include "stsx/model.hpp"
#include "stsx/training.hpp"

namespace stsx {

struct DataConfig {
  std::string root;
  std::string split;       // split name or path for training / evaluation
  std::string validation;  // optional validation split
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  bool taps_explicit = false;  // otherwise taps follow frame_layers / decoder_layers
  TrainConfig train;
  SyntheticConfig synthetic;   // corruption lives in synthetic.corruption
  DataConfig data;

  /// Pushes the global seed into every module and derives default taps.
  void finalize();
  /// Validates every module; num_classes is only checked when known (> 0).
  void validate() const;
  std::string to_toml() const;
};

/// Applies `text` on top of `cfg`. Unknown sections or keys and malformed
/// values raise ConfigError with the line number.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& cfg, const std::string& path);

/// STSX_SEED when set and numeric.
std::optional<std::uint64_t> seed_from_environment();

}  // namespace stsx
