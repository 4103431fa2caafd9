#include "dirm/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dirm {

namespace {

struct Face {
  Vec2 corner;   // starting corner of the face edge in BEV
  Vec2 edge;     // corner + edge is the other end
  Vec2 normal;   // outward unit normal
};

std::array<Face, 4> side_faces(const Box7& b) {
  const Vec2 u{std::cos(b.theta), std::sin(b.theta)};
  const Vec2 v{-u.y(), u.x()};
  const Vec2 c = b.center();
  const Vec2 hu = 0.5 * b.l * u;
  const Vec2 hv = 0.5 * b.w * v;
  // front (+u), back (-u), left (+v), right (-v)
  return {{
      {c + hu - hv, 2.0 * hv, u},
      {c - hu + hv, -2.0 * hv, -u},
      {c + hu + hv, -2.0 * hu, v},
      {c - hu - hv, 2.0 * hu, -v},
  }};
}

}  // namespace

std::vector<ClassPrior> default_class_priors() {
  return {
      {"veh", 4.4, 1.8, 1.5, 0.75},
      {"ped", 0.8, 0.7, 1.7, 0.40},
      {"cyc", 1.8, 0.6, 1.5, 0.55},
  };
}

bool SceneConfig::valid() const {
  return extent > 0.0 && boxes_min >= 0 && boxes_max >= boxes_min && max_retries >= 1 &&
         margin >= 0.0 && separation >= 0.0 && base_rate > 0.0 && min_pts >= 0 &&
         max_pts >= min_pts && clutter_pts >= 0 && !classes.empty();
}

Frame generate_scene(const SceneConfig& config, std::uint64_t seed, std::int64_t frame_id) {
  if (!config.valid()) throw std::invalid_argument("generate_scene: invalid SceneConfig");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Frame frame;
  frame.frame_id = frame_id;

  const Vec2 sensor{config.sensor_x, config.sensor_y};
  const double lo = config.margin;
  const double hi = config.extent - config.margin;

  std::uniform_int_distribution<int> n_boxes_dist(config.boxes_min, config.boxes_max);
  const int want = n_boxes_dist(rng);

  // Class mix is weighted toward the vehicle-like class.
  const std::array<double, 3> class_weights{0.5, 0.25, 0.25};

  for (int b = 0; b < want; ++b) {
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
      const double pick = unit(rng);
      int cls = 0;
      double acc = 0.0;
      for (size_t c = 0; c < config.classes.size(); ++c) {
        acc += c < class_weights.size() ? class_weights[c] : 1.0;
        if (pick <= acc) {
          cls = static_cast<int>(c);
          break;
        }
        cls = static_cast<int>(config.classes.size()) - 1;
      }
      const ClassPrior& prior = config.classes[cls];
      const double jit = 1.0 + config.size_jitter * (2.0 * unit(rng) - 1.0);

      Box7 box;
      box.l = prior.l * jit;
      box.w = prior.w * jit;
      box.h = prior.h * jit;
      box.x = lo + (hi - lo) * unit(rng);
      box.y = lo + (hi - lo) * unit(rng);
      box.z = 0.5 * box.h + 0.05 * gauss(rng);
      box.theta = normalize_angle(std::numbers::pi * (2.0 * unit(rng) - 1.0));

      // Enforce pairwise-zero BEV IoU with a clearance margin.
      Box7 inflated = box;
      inflated.l += 2.0 * config.separation;
      inflated.w += 2.0 * config.separation;
      bool clear = true;
      for (const GtBox& placed : frame.gts) {
        Box7 other = placed.box;
        other.l += 2.0 * config.separation;
        other.w += 2.0 * config.separation;
        if (rotated_iou_bev(inflated, other) > 0.0) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      frame.gts.push_back({cls, box});
      break;
    }
  }

  // Surface points on the faces visible from the sensor, count falling off
  // with the inverse square of the range.
  for (const GtBox& gt : frame.gts) {
    const Box7& box = gt.box;
    const double range = (box.center() - sensor).norm();
    const double raw = config.base_rate / std::max(1.0, range * range);
    const long n_pts = std::clamp<long>(std::lround(raw), config.min_pts, config.max_pts);

    const auto faces = side_faces(box);
    std::array<double, 4> weight{};
    double weight_sum = 0.0;
    for (size_t k = 0; k < faces.size(); ++k) {
      const Vec2 face_center = faces[k].corner + 0.5 * faces[k].edge;
      const Vec2 dir = (face_center - sensor).normalized();
      const double facing = -faces[k].normal.dot(dir);
      weight[k] = facing > 0.0 ? facing * faces[k].edge.norm() : 0.0;
      weight_sum += weight[k];
    }
    if (weight_sum <= 0.0) continue;

    const double refl_base = config.classes[gt.cls].refl;
    for (long p = 0; p < n_pts; ++p) {
      const double pick = unit(rng) * weight_sum;
      size_t k = 0;
      double acc = 0.0;
      for (; k < faces.size(); ++k) {
        acc += weight[k];
        if (pick <= acc) break;
      }
      k = std::min(k, faces.size() - 1);
      const Vec2 pos = faces[k].corner + unit(rng) * faces[k].edge +
                       0.02 * gauss(rng) * faces[k].normal;
      const double z = box.z + (unit(rng) - 0.5) * box.h;
      const double r = std::clamp(refl_base + 0.05 * gauss(rng), 0.0, 1.0);
      frame.points.emplace_back(std::clamp(pos.x(), 0.0, config.extent - 1e-9),
                                std::clamp(pos.y(), 0.0, config.extent - 1e-9), z, r);
    }
  }

  // Ground clutter.
  for (int p = 0; p < config.clutter_pts; ++p) {
    const double x = config.extent * unit(rng);
    const double y = config.extent * unit(rng);
    const double z = 0.05 * gauss(rng);
    const double r = unit(rng);
    frame.points.emplace_back(std::min(x, config.extent - 1e-9),
                              std::min(y, config.extent - 1e-9), z, r);
  }

  return frame;
}

FeatureMap rasterize_features(const Frame& frame, const BevGrid& grid, int channels,
                              RasterDiag* diag) {
  if (channels < 6) throw std::invalid_argument("rasterize_features: channels must be >= 6");
  if (!grid.valid()) throw std::invalid_argument("rasterize_features: invalid grid");

  const int hw = grid.h * grid.w;
  Eigen::ArrayXd count = Eigen::ArrayXd::Zero(hw);
  Eigen::ArrayXd sum_z = Eigen::ArrayXd::Zero(hw);
  Eigen::ArrayXd max_z = Eigen::ArrayXd::Zero(hw);
  Eigen::ArrayXd sum_r = Eigen::ArrayXd::Zero(hw);

  std::int64_t dropped = 0;
  for (const Point4& p : frame.points) {
    const int i = static_cast<int>(std::floor((p.x() - grid.origin_x) / grid.cell));
    const int j = static_cast<int>(std::floor((p.y() - grid.origin_y) / grid.cell));
    if (!grid.contains({i, j})) {
      ++dropped;
      continue;
    }
    const int idx = i * grid.w + j;
    max_z(idx) = count(idx) == 0.0 ? p.z() : std::max(max_z(idx), p.z());
    count(idx) += 1.0;
    sum_z(idx) += p.z();
    sum_r(idx) += p.w();
  }
  if (diag) diag->dropped_points += dropped;

  FeatureMap map(channels, grid.h, grid.w);
  const Eigen::ArrayXd occ = (count > 0.0).cast<double>();
  const Eigen::ArrayXd denom = count.max(1.0);
  map.data.row(0) = count.log1p();
  map.data.row(1) = (sum_z / denom) * occ;
  map.data.row(2) = max_z;
  map.data.row(3) = (sum_r / denom) * occ;
  map.data.row(4) = occ;

  const double diag_len = grid.diagonal();
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) {
      const Vec2 pc = grid.pixel_center({i, j});
      map.data(5, i * grid.w + j) = std::hypot(pc.x() - grid.origin_x, pc.y() - grid.origin_y) / diag_len;
    }
  }

  // Remaining channels: 3x3 box-filtered copies of the first six, cycled.
  for (int c = 6; c < channels; ++c) {
    const int src = (c - 6) % 6;
    for (int i = 0; i < grid.h; ++i) {
      for (int j = 0; j < grid.w; ++j) {
        double s = 0.0;
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const int ii = i + di;
            const int jj = j + dj;
            if (ii < 0 || ii >= grid.h || jj < 0 || jj >= grid.w) continue;
            s += map.data(src, ii * grid.w + jj);
          }
        }
        map.data(c, i * grid.w + j) = s / 9.0;
      }
    }
  }
  return map;
}

int range_bucket(double range_m) {
  if (range_m < 30.0) return 0;
  if (range_m < 50.0) return 1;
  return 2;
}

}  // namespace dirm
