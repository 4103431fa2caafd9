#include "dirm/metrics.hpp"

#include "dirm/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace dirm {

namespace {

constexpr double kMrpeEps = 1e-3;  // pixels, guards near-zero true offsets

// Greedy score-descending matching. Returns per-detection matched GT index
// (within its frame) or -1. Each GT matches at most once.
std::vector<int> greedy_match(const std::vector<Detection>& dets,
                              const std::vector<Frame>& frames, double iou_thresh, int cls) {
  std::map<std::int64_t, const Frame*> by_id;
  for (const Frame& f : frames) by_id[f.frame_id] = &f;

  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(dets.size()); ++i) {
    if (dets[i].cls == cls) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });

  std::map<std::pair<std::int64_t, int>, bool> taken;
  std::vector<int> match(dets.size(), -1);
  for (int idx : order) {
    const auto it = by_id.find(dets[idx].frame_id);
    if (it == by_id.end()) continue;
    const Frame& frame = *it->second;
    double best = 0.0;
    int best_gt = -1;
    for (int g = 0; g < static_cast<int>(frame.gts.size()); ++g) {
      if (frame.gts[g].cls != cls || taken[{frame.frame_id, g}]) continue;
      const double iou = rotated_iou_bev(dets[idx].box, frame.gts[g].box);
      if (iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best_gt >= 0 && best >= iou_thresh) {
      match[idx] = best_gt;
      taken[{dets[idx].frame_id, best_gt}] = true;
    }
  }
  return match;
}

}  // namespace

std::optional<double> compute_ap(const std::vector<Detection>& dets,
                                 const std::vector<Frame>& frames, double iou_thresh, int cls) {
  std::int64_t n_gts = 0;
  for (const Frame& f : frames) {
    for (const GtBox& gt : f.gts) {
      if (gt.cls == cls) ++n_gts;
    }
  }
  if (n_gts == 0) return std::nullopt;

  const std::vector<int> match = greedy_match(dets, frames, iou_thresh, cls);

  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(dets.size()); ++i) {
    if (dets[i].cls == cls) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });

  std::vector<double> precision, recall;
  double tp = 0.0, fp = 0.0;
  for (int idx : order) {
    if (match[idx] >= 0) {
      tp += 1.0;
    } else {
      fp += 1.0;
    }
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / static_cast<double>(n_gts));
  }

  double ap = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    double best = 0.0;
    for (size_t i = 0; i < recall.size(); ++i) {
      if (recall[i] >= level) best = std::max(best, precision[i]);
    }
    ap += best;
  }
  return ap / 101.0;
}

std::optional<double> center_mrpe(const std::vector<Detection>& dets,
                                  const std::vector<Frame>& frames, const BevGrid& grid,
                                  double match_iou, std::optional<int> cls_filter) {
  std::map<std::int64_t, const Frame*> by_id;
  for (const Frame& f : frames) by_id[f.frame_id] = &f;

  int max_cls = 0;
  for (const Frame& f : frames) {
    for (const GtBox& gt : f.gts) max_cls = std::max(max_cls, gt.cls);
  }

  double sum = 0.0;
  int count = 0;
  for (int cls = 0; cls <= max_cls; ++cls) {
    if (cls_filter && *cls_filter != cls) continue;
    const std::vector<int> match = greedy_match(dets, frames, match_iou, cls);
    for (int i = 0; i < static_cast<int>(dets.size()); ++i) {
      if (match[i] < 0) continue;
      const Frame& frame = *by_id.at(dets[i].frame_id);
      const Box7& gt = frame.gts[match[i]].box;
      const auto px = center_pixel(gt, grid);
      if (!px) continue;
      const Vec2 gt_d = encode_center_offset(gt, *px, grid);
      const Vec2 pred_d = (dets[i].box.center() - grid.pixel_center(*px)) / grid.cell;
      sum += 100.0 * (pred_d - gt_d).norm() / (gt_d.norm() + kMrpeEps);
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

std::pair<std::optional<double>, std::optional<double>> iou_mse_by_quality(
    const std::vector<Detection>& dets, const std::vector<Frame>& frames, double split) {
  std::map<std::int64_t, const Frame*> by_id;
  for (const Frame& f : frames) by_id[f.frame_id] = &f;

  double low_sum = 0.0, high_sum = 0.0;
  int low_n = 0, high_n = 0;
  for (const Detection& d : dets) {
    const auto it = by_id.find(d.frame_id);
    double iou_gt = 0.0;
    if (it != by_id.end()) {
      for (const GtBox& gt : it->second->gts) {
        iou_gt = std::max(iou_gt, rotated_iou_bev(d.box, gt.box));
      }
    }
    const double err = (d.iou_pred - iou_gt) * (d.iou_pred - iou_gt);
    if (iou_gt <= split) {
      low_sum += err;
      ++low_n;
    } else {
      high_sum += err;
      ++high_n;
    }
  }
  return {low_n > 0 ? std::optional<double>(low_sum / low_n) : std::nullopt,
          high_n > 0 ? std::optional<double>(high_sum / high_n) : std::nullopt};
}

std::optional<double> offcenter_rate(const std::vector<Eigen::MatrixXd>& conf_maps,
                                     const std::vector<Frame>& frames, const BevGrid& grid) {
  if (conf_maps.size() != frames.size()) {
    throw std::invalid_argument("offcenter_rate: map/frame count mismatch");
  }
  std::int64_t total = 0;
  std::int64_t off = 0;
  for (size_t f = 0; f < frames.size(); ++f) {
    // All class-channel local maxima, no confidence floor.
    const std::vector<Peak> peaks = extract_peaks(conf_maps[f], grid.h, grid.w,
                                                  std::numeric_limits<int>::max(), 0.0);
    for (const GtBox& gt : frames[f].gts) {
      const auto px = center_pixel(gt.box, grid);
      if (!px) continue;
      double best = std::numeric_limits<double>::infinity();
      Pixel nearest{-1, -1};
      for (const Peak& p : peaks) {
        if (p.cls != gt.cls) continue;
        const double di = p.px.i - px->i;
        const double dj = p.px.j - px->j;
        const double d2 = di * di + dj * dj;
        if (d2 < best || (d2 == best && p.px < nearest)) {
          best = d2;
          nearest = p.px;
        }
      }
      if (nearest.i < 0) continue;  // channel has no maxima (flat zero map)
      ++total;
      if (!(nearest == *px)) ++off;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(off) / static_cast<double>(total);
}

EvalReport evaluate(const std::vector<Frame>& frames, const std::vector<Detection>& dets,
                    const std::vector<Eigen::MatrixXd>& conf_maps, const BevGrid& grid,
                    const MetricsSettings& settings) {
  EvalReport report;
  report.n_frames = static_cast<std::int64_t>(frames.size());
  report.n_dets = static_cast<std::int64_t>(dets.size());
  for (const Frame& f : frames) report.n_gts += static_cast<std::int64_t>(f.gts.size());

  const int num_classes = static_cast<int>(settings.ap_iou.size());
  double ap_sum = 0.0;
  int ap_n = 0;
  for (int cls = 0; cls < num_classes; ++cls) {
    report.ap.push_back(compute_ap(dets, frames, settings.ap_iou[cls], cls));
    report.mrpe_per_class.push_back(
        center_mrpe(dets, frames, grid, settings.mrpe_match_iou, cls));
    if (report.ap.back()) {
      ap_sum += *report.ap.back();
      ++ap_n;
    }
  }
  if (ap_n > 0) report.map = ap_sum / ap_n;
  report.mrpe_percent = center_mrpe(dets, frames, grid, settings.mrpe_match_iou);
  std::tie(report.mse_low, report.mse_high) = iou_mse_by_quality(dets, frames, settings.mse_split);
  if (!conf_maps.empty()) report.offcenter_rate = offcenter_rate(conf_maps, frames, grid);
  return report;
}

}  // namespace dirm
