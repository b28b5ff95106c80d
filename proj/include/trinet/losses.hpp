#pragma once

#include <array>

#include "trinet/autodiff.hpp"
#include "trinet/warp.hpp"

namespace trinet::loss {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossWeights {
  double alpha = 0.85;
  double beta_ap = 1.0;
  double beta_ds = 0.1;
  double beta_lcr = 1.0;
  /// Smoothness at scale s is multiplied by 1/2^s when set.
  bool attenuate_smoothness = true;
  /// Center-consistency |d_cl - d_cr|; off by default.
  bool center_consistency = false;
  /// Smoothness, left-right and centre consistency measure disparity as a
  /// fraction of each level's width (the convention the default betas were
  /// set for). Off: the same terms in pixel units, which lets the
  /// regularizers outweigh the photometric term by a factor of the width.
  bool width_normalized = true;
  double beta_cc = 1.0;

  void validate() const;
};

/// Unweighted per-scale values of each term (after width normalization when
/// enabled), plus the weighted total.
struct LossTerms {
  std::array<double, kScales> appearance{};
  std::array<double, kScales> smoothness{};
  std::array<double, kScales> consistency{};
  std::array<double, kScales> center{};
  double total = 0.0;

  double appearance_sum() const;
  double smoothness_sum() const;
  double consistency_sum() const;
  double center_sum() const;
};

/// Re-assembles the weighted total from the individual terms.
double weighted_total(const LossTerms& terms, const LossWeights& w);

template <typename T>
struct LossBreakdown {
  LossTerms terms;
  ad::Var<T> total;
};

/// Per-pixel SSIM over 3x3 box statistics (border-clamped windows).
template <typename T>
ad::Var<T> ssim_map(ad::Var<T> a, ad::Var<T> b);

/// mean of alpha*(1-SSIM)/2 + (1-alpha)*|real-warped|, channel-averaged.
template <typename T>
ad::Var<T> appearance_loss(ad::Var<T> real, ad::Var<T> warped, double alpha);

/// Edge-aware smoothness: mean |dx d| e^{-|dx I|} + mean |dy d| e^{-|dy I|},
/// image gradient norm taken as channel mean of absolute differences.
template <typename T>
ad::Var<T> smoothness_loss(ad::Var<T> disp, ad::Var<T> image);

/// mean |d_ref(x) - d_tgt(x + sign * d_ref(x))|.
template <typename T>
ad::Var<T> lr_consistency_loss(ad::Var<T> d_ref, ad::Var<T> d_tgt, int sign);

/// mean |d_cl - d_cr|; both maps must be centre-aligned.
template <typename T>
ad::Var<T> center_consistency_loss(const Tagged<ad::Var<T>>& d_cl, const Tagged<ad::Var<T>>& d_cr);

/// Left/centre phase: appearance of (I~cl, I^c) and (I~l, I^l), smoothness of
/// d_cl on I^c and d_lc on I^l, consistency between d_cl and d_lc, summed
/// over all scales.
template <typename T>
LossBreakdown<T> phase1_loss(ad::Tape<T>& tape, const ImagePyramid<T>& left,
                             const ImagePyramid<T>& center,
                             const DisparityOutputs<ad::Var<T>>& outputs, const LossWeights& w);

/// Centre/right mirror of phase1_loss on (cr, rc).
template <typename T>
LossBreakdown<T> phase2_loss(ad::Tape<T>& tape, const ImagePyramid<T>& center,
                             const ImagePyramid<T>& right,
                             const DisparityOutputs<ad::Var<T>>& outputs, const LossWeights& w);

}  // namespace trinet::loss
