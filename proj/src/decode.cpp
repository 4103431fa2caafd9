#include "dirm/decode.hpp"

#include <algorithm>
#include <cmath>

namespace dirm {

std::vector<Peak> extract_peaks(const Eigen::MatrixXd& conf, int h, int w, int max_dets,
                                double min_conf) {
  std::vector<Peak> peaks;
  for (int cls = 0; cls < conf.rows(); ++cls) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double v = conf(cls, i * w + j);
        if (v < min_conf) continue;
        bool is_peak = true;
        for (int di = -1; di <= 1 && is_peak; ++di) {
          for (int dj = -1; dj <= 1 && is_peak; ++dj) {
            if (di == 0 && dj == 0) continue;
            const int ii = i + di;
            const int jj = j + dj;
            if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
            const double u = conf(cls, ii * w + jj);
            if (u > v) is_peak = false;
            // Plateau: only the lexicographically lowest pixel survives.
            if (u == v && std::make_pair(ii, jj) < std::make_pair(i, j)) is_peak = false;
          }
        }
        if (is_peak) peaks.push_back({{i, j}, cls, v});
      }
    }
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.cls != b.cls) return a.cls < b.cls;
    return a.px < b.px;
  });
  if (static_cast<int>(peaks.size()) > max_dets) peaks.resize(max_dets);
  return peaks;
}

Box7 decode_box(const HeadOutputs& out, Pixel px, const BevGrid& grid) {
  const int idx = px.i * out.w + px.j;
  const Vec2 pc = grid.pixel_center(px);
  Box7 box;
  box.x = pc.x() + out.xy(0, idx) * grid.cell;
  box.y = pc.y() + out.xy(1, idx) * grid.cell;
  box.z = out.z(0, idx);
  box.l = std::exp(out.lwh(0, idx));
  box.w = std::exp(out.lwh(1, idx));
  box.h = std::exp(out.lwh(2, idx));
  box.theta = normalize_angle(std::atan2(out.theta(0, idx), out.theta(1, idx)));
  return box;
}

double rectify_score(double conf, double iou_pred, double alpha) {
  if (alpha == 0.0) return conf;
  return std::pow(conf, 1.0 - alpha) * std::pow(iou_pred, alpha);
}

std::vector<Detection> decode_detections(const HeadOutputs& out, const BevGrid& grid,
                                         const DecodeSettings& settings,
                                         std::int64_t frame_id) {
  const std::vector<Peak> peaks =
      extract_peaks(out.conf, out.h, out.w, settings.max_dets, settings.min_conf);

  std::vector<Detection> dets;
  dets.reserve(peaks.size());
  for (const Peak& p : peaks) {
    Detection d;
    d.frame_id = frame_id;
    d.cls = p.cls;
    d.box = decode_box(out, p.px, grid);
    d.conf = p.conf;
    d.iou_pred = std::clamp(0.5 * (out.iou(0, p.px.i * out.w + p.px.j) + 1.0), 0.0, 1.0);
    d.score = rectify_score(d.conf, d.iou_pred, settings.alpha);
    dets.push_back(d);
  }

  const std::vector<int> kept = rotated_nms(dets, settings.nms_iou);
  std::vector<Detection> out_dets;
  out_dets.reserve(kept.size());
  for (int idx : kept) out_dets.push_back(dets[idx]);
  return out_dets;
}

std::vector<int> rotated_nms(std::span<const Detection> dets, double iou_thresh) {
  std::vector<Box7> boxes;
  std::vector<double> scores;
  boxes.reserve(dets.size());
  scores.reserve(dets.size());
  for (const Detection& d : dets) {
    boxes.push_back(d.box);
    scores.push_back(d.score);
  }
  return rotated_nms(std::span<const Box7>(boxes), std::span<const double>(scores), iou_thresh);
}

}  // namespace dirm
