#pragma once

// Run configuration: an INI-style text file (`[section]` headers, one
// `key = value` per line, `#` or `;` comment lines). Every key is optional;
// unknown sections and keys, duplicates and malformed values are errors.
//
//   [run]      seed                      master seed: dataset generation,
//                                        network init and shuffling
//   [data]     count pair                scenes for gen-data; training pair
//                                        (lc = (I^l, I^c), cr = (I^c, I^r))
//   [scene]    SceneSpec fields          height/width also fix the network
//   [network]  encoder_channels decoder_channels dmax_frac single_decoder
//   [train]    TrainPlan fields, flip, color_jitter
//   [loss]     LossWeights fields
//   [sgm]      SgmParams fields
//   [eval]     cap post_process focal baseline
//   [paths]    data val out checkpoint   defaults for the matching flags

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "trinet/losses.hpp"
#include "trinet/metrics.hpp"
#include "trinet/model.hpp"
#include "trinet/synthdata.hpp"
#include "trinet/trainer.hpp"
#include "trinet/viewsynth.hpp"

namespace trinet::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataOptions {
  std::size_t count = 100;
  synth::PairMode pair = synth::PairMode::lc;
};

struct EvalOptions {
  double cap = 80.0;
  bool post_process = true;
  metrics::CameraModel camera = synth::synthetic_camera();
};

struct Paths {
  std::filesystem::path data;
  std::filesystem::path val;
  std::filesystem::path out;
  std::filesystem::path checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DataOptions data;
  synth::SceneSpec scene;
  model::NetworkConfig network;
  train::TrainPlan plan;
  loss::LossWeights loss;
  viewsynth::SgmParams sgm;
  EvalOptions eval;
  Paths paths;

  /// Copies the shared values into the module structs: scene extents and
  /// dmax_frac into the network, the master seed into network and plan.
  void resolve();
  /// resolve() then every module's own validation; throws ConfigError.
  void validate();
};

/// Parses config text; `source` names the input in error messages.
RunConfig parse(std::istream& in, const std::string& source = "config");
RunConfig load(const std::filesystem::path& path);

/// The fully-resolved config in the same format; parsing it reproduces the
/// config exactly (numbers are written in shortest round-trip form).
std::string to_text(const RunConfig& config);

/// Writes to_text(config) to dir/config.ini.
void echo(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace trinet::config
