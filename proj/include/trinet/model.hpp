#pragma once

// Miniature shared-encoder / dual-decoder disparity network.
//
// Encoder: four stages with ELU. Stages 0-2 are a stride-2 3x3 conv followed
// by a stride-1 3x3 conv (1/2, 1/4, 1/8 resolution); stage 3 is a single
// stride-1 conv that widens the 1/8 features, so the deepest feature aligns
// with the coarsest output. Each decoder mirrors it: at output scale s it
// convolves the coarser features, upsamples them 2x (except at 1/8),
// concatenates the encoder skip at the same resolution plus the upsampled
// coarser head, convolves again and emits a sigmoid head. Head channel 0 is
// the centre-aligned map (cl or cr), channel 1 the side-aligned one (lc or
// rc), scaled to pixels of that level.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "trinet/autodiff.hpp"
#include "trinet/warp.hpp"

namespace trinet::model {

struct NetworkConfig {
  int height = 64;
  int width = 128;
  /// One width per encoder stage; exactly four stages.
  std::vector<int> encoder_channels{16, 32, 64, 128};
  /// One width per decoder stage, coarsest (1/8 scale) first.
  std::vector<int> decoder_channels{64, 32, 16, 16};
  double dmax_frac = 0.3;
  std::uint64_t seed = 1;
  /// Ablation: one decoder emits all four maps.
  bool single_decoder = false;

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

enum class ParamGroup { encoder, left_decoder, right_decoder };
std::string_view to_string(ParamGroup g);

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor<float> value;
};

/// Ordered parameter store. The order and names are fixed by the config.
class NetworkParams {
 public:
  NetworkParams() = default;
  NetworkParams(NetworkConfig config, std::vector<NamedParam> entries);

  const NetworkConfig& config() const { return config_; }
  const std::vector<NamedParam>& entries() const { return entries_; }
  std::vector<NamedParam>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Index of a parameter by name; throws if absent.
  std::size_t index(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const { return entries_[index(name)].value; }
  Tensor<float>& get(const std::string& name) { return entries_[index(name)].value; }

  /// Total scalar count, optionally restricted to one group.
  std::size_t scalar_count() const;
  std::size_t scalar_count(ParamGroup g) const;

  bool operator==(const NetworkParams& other) const;

 private:
  NetworkConfig config_;
  std::vector<NamedParam> entries_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Deterministic initialisation: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// biases zero.
NetworkParams init_network(const NetworkConfig& config);

/// Scalar parameter count implied by a config, computed from layer arithmetic
/// alone (no allocation).
std::size_t expected_parameter_count(const NetworkConfig& config);

struct ParamPartition {
  std::set<std::string> encoder;
  std::set<std::string> left;
  std::set<std::string> right;
};
ParamPartition param_partition(const NetworkParams& params);

/// Parameters bound to a tape, aligned with NetworkParams::entries().
struct BoundParams {
  std::vector<ad::Var<float>> vars;
};
/// trainable = true records leaves (gradients available), else constants.
BoundParams bind_params(ad::Tape<float>& tape, const NetworkParams& params, bool trainable);

enum class Decoders { both, left, right };

/// Differentiable forward on a [B,3,H,W] image. `which` selects the decoders
/// evaluated; unevaluated pyramids stay empty (the single-decoder ablation
/// always fills all four).
DisparityOutputs<ad::Var<float>> forward(const NetworkParams& params, const BoundParams& bound,
                                         ad::Var<float> image, Decoders which = Decoders::both);

/// Inference forward producing all four tagged pyramids.
DisparityOutputs<Tensor<float>> forward(const NetworkParams& params, const Tensor<float>& image);

/// Number of network forwards (encoder evaluations) since process start.
std::uint64_t forward_count();

/// Checkpoint: `model.manifest` (text: config, then name, group, shape, byte
/// offset per parameter) and `model.bin` (little-endian binary32 blob).
void save_checkpoint(const NetworkParams& params, const std::filesystem::path& dir);
NetworkParams load_checkpoint(const std::filesystem::path& dir);

}  // namespace trinet::model
