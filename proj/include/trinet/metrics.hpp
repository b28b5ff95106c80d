#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trinet/tensor.hpp"

namespace trinet::metrics {

/// focal (pixels) x baseline (meters) converts disparity to depth.
struct CameraModel {
  double focal = 128.0;
  double baseline = 0.54;

  void validate() const;
  double focal_baseline() const { return focal * baseline; }
};

/// Prediction floor applied before log and ratio metrics.
inline constexpr double kMinDepth = 1e-3;

struct MetricsRecord {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  /// Percentage of disparity errors strictly above 3 px; NaN when not computed.
  double d1_all = 0.0;
  /// Pixels scored by the depth metrics.
  std::size_t count = 0;
  /// Pixels scored by d1_all.
  std::size_t d1_count = 0;
  double cap = 80.0;
};

struct DepthMap {
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;
};

/// depth = focal*baseline/d; non-positive disparities are marked invalid and
/// get depth 0.
DepthMap disparity_to_depth(std::span<const float> disparity, const CameraModel& cam);

/// Standard depth metrics over pixels with mask != 0 (empty mask = all),
/// finite gt in (0, cap]. Predictions are clamped to [kMinDepth, cap].
/// Throws when no pixel survives.
MetricsRecord depth_metrics(std::span<const double> pred, std::span<const double> gt, double cap,
                            std::span<const std::uint8_t> mask = {});

/// 100 * |{|pred-gt| > 3}| / |valid| over mask != 0 (empty mask = all).
double d1_all(std::span<const float> pred_disp, std::span<const float> gt_disp,
              std::span<const std::uint8_t> mask = {});

/// Full record for one disparity prediction against gt disparity: depth
/// metrics on pixels with gt disparity > 0 and gt depth <= cap, d1_all on
/// pixels with gt disparity > 0. A non-positive predicted disparity means
/// infinite depth and is scored at the cap rather than dropped.
MetricsRecord evaluate_disparity(std::span<const float> pred_disp, std::span<const float> gt_disp,
                                 const CameraModel& cam, double cap,
                                 std::span<const std::uint8_t> mask = {});

/// Count-weighted combination: means weight by count, RMS metrics combine
/// their squares, d1_all weights by d1_count.
MetricsRecord aggregate(std::span<const MetricsRecord> records);

/// CSV column names in MetricsRecord order.
std::string csv_header();
std::string csv_row(const MetricsRecord& r);

}  // namespace trinet::metrics
