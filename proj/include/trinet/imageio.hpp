#pragma once

// PPM (P6), PGM (P5) and PFM image files.
//
// Images are [1,C,H,W] float tensors. P6/P5 store 8-bit samples scaled to
// [0,1] (values are clamped and rounded on write). PFM stores binary32
// samples exactly; it is written little-endian (scale -1.0) with rows
// bottom-to-top as the format prescribes.

#include <filesystem>
#include <stdexcept>

#include "trinet/tensor.hpp"

namespace trinet::io {

/// Malformed or truncated file; the message carries path and byte offset.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Format chosen by extension: .ppm (3 channels), .pgm (1), .pfm (1 or 3).
void write_image(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> read_image(const std::filesystem::path& path);

/// Renders a [1,1,H,W] disparity map as a [1,3,H,W] colour image on a fixed
/// ramp (dark blue -> cyan -> yellow -> red -> dark red) over [0, max_value];
/// max_value <= 0 uses the map's maximum. Negative (invalid) pixels are black.
Tensor<float> heatmap(const Tensor<float>& disparity, float max_value = 0.0f);

}  // namespace trinet::io
