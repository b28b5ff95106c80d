#pragma once

// Deterministic rectified trinocular scenes with exact ground truth.
//
// A scene is a stack of textured layers seen by three cameras with equal
// baselines. Each layer is a rectangle in centre-view coordinates whose
// disparity is constant or varies linearly with the row (slanted). Layer
// textures live in layer coordinates, so a side view samples them at the
// shifted position: I^l(x) = layer(x - d), I^r(x) = layer(x + d). Per pixel,
// the layer with the largest disparity wins (near overwrites far; ties go to
// the later layer), which matches the painter's algorithm on sorted layers.
//
// The background is two full-width layers: a far fronto-parallel wall above
// the horizon and a ground plane below it whose disparity grows linearly
// towards the bottom row and whose texture is perspective-mapped. Objects
// stand on the ground (their bottom-row disparity equals the ground's) and
// their size and texture period grow with disparity, giving monocular cues.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "trinet/metrics.hpp"
#include "trinet/tensor.hpp"
#include "trinet/trainer.hpp"

namespace trinet::synth {

struct SceneSpec {
  int height = 64;
  int width = 128;
  /// Number of object layers in front of the background.
  int layers = 3;
  double d_min = 2.0;
  double d_max = 24.0;
  /// Must be >= d_max / width; the network cannot represent larger values.
  double dmax_frac = 0.3;
  /// Round layer disparities to integers (exact warp oracles).
  bool integer_disparity = true;
  /// Allow objects whose disparity varies with the row.
  bool slanted = true;
  /// Zero-mean uniform noise in [-a, a] added per view.
  double noise = 0.0;

  void validate() const;
};

enum class TextureKind { planar, ground };

struct Layer {
  /// Centre-view extent, half-open. Background layers use +-infinity columns.
  double x0 = -std::numeric_limits<double>::infinity();
  double x1 = std::numeric_limits<double>::infinity();
  int y0 = 0;
  int y1 = 0;
  /// Disparity at row `y_ref`, changing by `slope` per row.
  double d_ref = 1.0;
  int y_ref = 0;
  double slope = 0.0;
  TextureKind texture = TextureKind::planar;
  std::uint64_t texture_seed = 0;
  /// Texture feature period in pixels (planar) or world units (ground).
  double period = 4.0;
  double color[3] = {0.5, 0.5, 0.5};
  double contrast = 0.3;

  double disparity(int y, bool integer) const;
};

/// Geometry and appearance of a scene; render() turns it into images.
struct SceneLayout {
  int height = 64;
  int width = 128;
  bool integer_disparity = true;
  /// Texture x coordinates are mirrored (x -> W-1-x) when set.
  bool mirrored = false;
  std::vector<Layer> layers;  // background first
};

struct TrinocularSample {
  Tensor<float> il, ic, ir;  // [1,3,H,W]
  /// Centre-aligned ground truth (equal baselines: identical).
  Tensor<float> gt_cl, gt_cr;  // [1,1,H,W]
  /// Side-aligned ground truth (visible surface in the left / right view).
  Tensor<float> gt_lc, gt_rc;
  /// 1 where a centre pixel has no match in the left / right view
  /// (hidden by a nearer layer or outside the image).
  Tensor<float> occ_cl, occ_cr;
};

/// Random layout for a seed (far-to-near object order).
SceneLayout generate_layout(const SceneSpec& spec, std::uint64_t seed);

/// Renders all three views. Noise is drawn from `noise_seed` when amplitude > 0.
/// Throws if a layer disparity lies outside [d_min, d_max] of `spec`.
TrinocularSample render(const SceneLayout& layout, const SceneSpec& spec, std::uint64_t noise_seed);

/// generate_layout + render.
TrinocularSample generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Mirror of a layout: rendering it gives reflect(render(layout)).
SceneLayout reflect(const SceneLayout& layout);

/// Mirror of a sample: l and r swap, every map is flipped, tags swap sides.
TrinocularSample reflect(const TrinocularSample& sample);

enum class PairMode { lc, cr };

/// (I^l, I^c) or (I^c, I^r). Ground truth stays behind.
train::StereoPair to_binocular(const TrinocularSample& sample, PairMode mode);

/// Per-sample seed derived from the dataset seed by counter.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index);

/// Camera used for synthetic depth: depth = focal * baseline / disparity.
metrics::CameraModel synthetic_camera();

/// Writes scene_%06d/{il,ic,ir}.ppm, {gt_cl,gt_cr}.pfm, {occ_cl,occ_cr}.pgm
/// and meta.txt for `count` scenes.
void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, std::size_t count,
                   std::uint64_t seed);

/// Reads a dataset directory back in scene order. The side-aligned maps are
/// not stored and stay empty.
std::vector<TrinocularSample> read_dataset(const std::filesystem::path& dir);

/// Text echo of a spec, one `key = value` per line.
std::string describe(const SceneSpec& spec);

}  // namespace trinet::synth
