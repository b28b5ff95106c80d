#pragma once

#include <functional>

#include "trinet/model.hpp"
#include "trinet/warp.hpp"

namespace trinet::fusion {

/// Column weight of d_cr: 0 for j <= 0.05, 1 for j > 0.95, 0.5 otherwise.
/// j = column / (W - 1). Throws outside [0, 1].
double omega(double j);

using OmegaFn = std::function<double(double)>;

/// d_c = w * d_cr + (1 - w) * d_cl per column; tags must be cl and cr.
DisparityMap fuse(const DisparityMap& d_cl, const DisparityMap& d_cr, const OmegaFn& w = omega);

/// Single-forward centre map: fuse of the level-0 cl and cr outputs.
DisparityMap predict(const model::NetworkParams& params, const Tensor<float>& image,
                     const OmegaFn& w = omega);

struct PostProcessed {
  DisparityMap d_c;
  DisparityMap d_cl_pp;
  DisparityMap d_cr_pp;
};

/// Two forwards (image and its mirror). Mirrored outputs are flipped back
/// (values unchanged) to give d^, then
///   d_cr_pp = w * d_cr + (1 - w) * d^_cr,  d_cl_pp = w * d^_cl + (1 - w) * d_cl,
/// and d_c = fuse(d_cl_pp, d_cr_pp).
PostProcessed post_process(const model::NetworkParams& params, const Tensor<float>& image,
                           const OmegaFn& w = omega);

}  // namespace trinet::fusion
