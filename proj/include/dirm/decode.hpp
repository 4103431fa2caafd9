#pragma once

#include <cstdint>
#include <vector>

#include "dirm/geometry.hpp"
#include "dirm/grid.hpp"
#include "dirm/head.hpp"

namespace dirm {

/// Decoded box plus the scores feeding NMS and evaluation.
struct Detection {
  std::int64_t frame_id = 0;
  int cls = 0;
  Box7 box;
  double conf = 0.0;      // heatmap peak value
  double iou_pred = 0.0;  // (tanh + 1) / 2, clamped to [0, 1]
  double score = 0.0;     // rectified
};

struct Peak {
  Pixel px;
  int cls = 0;
  double conf = 0.0;
};

struct DecodeSettings {
  int max_dets = 48;
  double min_conf = 0.05;
  double nms_iou = 0.3;
  double alpha = 0.5;  // rectification exponent; 0 keeps the raw confidence
};

/// 3x3 local maxima per class channel, conf >= min_conf, top max_dets by
/// conf. Plateau ties go to the lexicographically lowest pixel.
std::vector<Peak> extract_peaks(const Eigen::MatrixXd& conf, int h, int w, int max_dets,
                                double min_conf);

/// Reads the attribute maps at one pixel: center = pixel center + d * cell
/// (d unclamped, so long-range offsets decode past the cell), sizes = exp,
/// theta = atan2 of the (sin, cos) pair.
Box7 decode_box(const HeadOutputs& out, Pixel px, const BevGrid& grid);

/// conf^(1-alpha) * iou_pred^alpha.
double rectify_score(double conf, double iou_pred, double alpha);

/// Peaks -> boxes -> rectified scores -> rotated NMS; sorted by score desc.
std::vector<Detection> decode_detections(const HeadOutputs& out, const BevGrid& grid,
                                         const DecodeSettings& settings,
                                         std::int64_t frame_id);

/// Rotated NMS over rectified scores; returns kept indices, best first.
std::vector<int> rotated_nms(std::span<const Detection> dets, double iou_thresh);

}  // namespace dirm
