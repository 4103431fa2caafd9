#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dirm/decode.hpp"
#include "dirm/scene.hpp"

namespace dirm {

struct MetricsSettings {
  std::vector<double> ap_iou = {0.5, 0.25, 0.25};  // per-class matching IoU for AP
  double mrpe_match_iou = 0.3;                     // loose so low-quality boxes count
  double mse_split = 0.5;                          // low/high quality boundary
};

/// Evaluation summary. Metrics with no support (no GTs of a class, empty
/// partition) stay absent rather than reporting 0.
struct EvalReport {
  std::vector<std::optional<double>> ap;              // per class
  std::optional<double> map;                          // mean over classes with AP
  std::optional<double> mrpe_percent;                 // all matched pairs
  std::vector<std::optional<double>> mrpe_per_class;  // per GT class
  std::optional<double> mse_low;
  std::optional<double> mse_high;
  std::optional<double> offcenter_rate;
  std::int64_t n_frames = 0;
  std::int64_t n_gts = 0;
  std::int64_t n_dets = 0;
};

/// 101-point interpolated AP with greedy best-IoU-first matching per
/// detection; absent when the class has no GTs.
std::optional<double> compute_ap(const std::vector<Detection>& dets,
                                 const std::vector<Frame>& frames, double iou_thresh, int cls);

/// Mean relative percentage error of the center offset at the GT's center
/// pixel, over class-aware matches at match_iou. cls filters pairs by GT
/// class when set.
std::optional<double> center_mrpe(const std::vector<Detection>& dets,
                                  const std::vector<Frame>& frames, const BevGrid& grid,
                                  double match_iou, std::optional<int> cls = std::nullopt);

/// MSE of iou_pred against the best-IoU GT per detection (class-agnostic;
/// unmatched detections count with IoU_GT = 0), partitioned at the split.
std::pair<std::optional<double>, std::optional<double>> iou_mse_by_quality(
    const std::vector<Detection>& dets, const std::vector<Frame>& frames, double split);

/// Fraction of GTs whose nearest class-channel 3x3 local maximum sits at a
/// pixel other than the GT's center pixel. conf_maps align with frames.
std::optional<double> offcenter_rate(const std::vector<Eigen::MatrixXd>& conf_maps,
                                     const std::vector<Frame>& frames, const BevGrid& grid);

EvalReport evaluate(const std::vector<Frame>& frames, const std::vector<Detection>& dets,
                    const std::vector<Eigen::MatrixXd>& conf_maps, const BevGrid& grid,
                    const MetricsSettings& settings);

}  // namespace dirm
