#include "dirm/loss.hpp"

#include <cmath>
#include <stdexcept>

#include "dirm/decode.hpp"

namespace dirm {

namespace {

constexpr double kProbEps = 1e-12;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

const Eigen::MatrixXd& group_map(const HeadOutputs& out, AttributeGroup g) {
  switch (g) {
    case AttributeGroup::Rxy: return out.xy;
    case AttributeGroup::Rz: return out.z;
    case AttributeGroup::Rlwh: return out.lwh;
    case AttributeGroup::Rtheta: return out.theta;
  }
  throw std::logic_error("group_map: bad group");
}

Eigen::MatrixXd* group_grad(OutputGrads& g, AttributeGroup group) {
  switch (group) {
    case AttributeGroup::Rxy: return &g.d_xy;
    case AttributeGroup::Rz: return &g.d_z;
    case AttributeGroup::Rlwh: return &g.d_lwh;
    case AttributeGroup::Rtheta: return &g.d_theta;
  }
  return nullptr;
}

}  // namespace

double focal_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, double alpha,
                  double beta, Eigen::MatrixXd* d_pred) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("focal_loss: shape mismatch");
  }
  if (d_pred) *d_pred = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());

  double n_pos = 0.0;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const double y = target(r, c);
      const double p = std::clamp(pred(r, c), kProbEps, 1.0 - kProbEps);
      if (y >= 1.0) {
        n_pos += 1.0;
        loss -= std::pow(1.0 - p, alpha) * std::log(p);
        if (d_pred) {
          (*d_pred)(r, c) = alpha * std::pow(1.0 - p, alpha - 1.0) * std::log(p) -
                            std::pow(1.0 - p, alpha) / p;
        }
      } else {
        loss -= std::pow(1.0 - y, beta) * std::pow(p, alpha) * std::log(1.0 - p);
        if (d_pred) {
          (*d_pred)(r, c) = std::pow(1.0 - y, beta) *
                            (std::pow(p, alpha) / (1.0 - p) -
                             alpha * std::pow(p, alpha - 1.0) * std::log(1.0 - p));
        }
      }
    }
  }
  const double norm = std::max(1.0, n_pos);
  if (d_pred) *d_pred /= norm;
  return loss / norm;
}

double bce_with_logits(const Eigen::MatrixXd& logit, const Eigen::MatrixXd& target,
                       Eigen::MatrixXd* d_logit) {
  if (logit.rows() != target.rows() || logit.cols() != target.cols()) {
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  }
  const double n = static_cast<double>(logit.size());
  double loss = 0.0;
  if (d_logit) *d_logit = Eigen::MatrixXd::Zero(logit.rows(), logit.cols());
  for (Eigen::Index r = 0; r < logit.rows(); ++r) {
    for (Eigen::Index c = 0; c < logit.cols(); ++c) {
      const double x = logit(r, c);
      const double y = target(r, c);
      loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
      if (d_logit) (*d_logit)(r, c) = (1.0 / (1.0 + std::exp(-x)) - y) / n;
    }
  }
  return loss / n;
}

LossBreakdown loss_total(const HeadOutputs& out, const AssignmentPlan& plan, const Frame& frame,
                         const BevGrid& grid, const LossConfig& config, OutputGrads* grads) {
  if (plan.h != out.h || plan.w != out.w || plan.c != out.conf.rows()) {
    throw std::invalid_argument("loss_total: plan and outputs disagree on the grid");
  }
  if (grads) *grads = OutputGrads::zeros_like(out);

  LossBreakdown b;
  const double n_gts = std::max<double>(1.0, plan.centers.size());

  // Heatmap focal term.
  {
    Eigen::MatrixXd d_conf;
    b.hm = focal_loss(out.conf, plan.heatmap, config.focal_alpha, config.focal_beta,
                      grads ? &d_conf : nullptr);
    if (grads) grads->d_conf = config.w.hm * d_conf;
  }

  // Per-group weighted L1 over the planned samples, averaged per GT.
  for (int g = 0; g < kNumGroups; ++g) {
    const auto group = static_cast<AttributeGroup>(g);
    const Eigen::MatrixXd& map = group_map(out, group);
    const int dim = group_dim(group);
    double group_loss = 0.0;
    for (const GroupSample& s : plan.group(group)) {
      const int idx = s.px.i * out.w + s.px.j;
      for (int d = 0; d < dim; ++d) {
        const double diff = map(d, idx) - s.target(d);
        group_loss += s.weight * std::abs(diff);
        if (grads) {
          (*group_grad(*grads, group))(d, idx) += config.w.reg * s.weight * sign(diff) / n_gts;
        }
      }
    }
    b.reg += group_loss / n_gts;
  }

  // Class-agnostic objectness: BCE against the binarized heatmap label
  // (the exact splat peaks).
  if (out.iqp != IqpMode::Off) {
    Eigen::MatrixXd obj_target(1, out.h * out.w);
    for (Eigen::Index p = 0; p < obj_target.cols(); ++p) {
      obj_target(0, p) = plan.heatmap.col(p).maxCoeff() >= 1.0 - 1e-12 ? 1.0 : 0.0;
    }
    Eigen::MatrixXd d_obj;
    b.obj = bce_with_logits(out.obj_logit, obj_target, grads ? &d_obj : nullptr);
    if (grads) grads->d_obj_logit = config.w.obj * d_obj;
  }

  // Quality term: L1 against 2*IoU_GT - 1 at the positive pixels.
  {
    std::vector<std::pair<int, Pixel>> positives = plan.centers;
    if (config.iou_positives_extended) {
      positives.clear();
      for (const GroupSample& s : plan.group(AttributeGroup::Rxy)) {
        positives.emplace_back(s.gt, s.px);
      }
    }
    double iou_loss = 0.0;
    for (const auto& [gt_idx, px] : positives) {
      const Box7 decoded = decode_box(out, px, grid);
      const double iou_gt = rotated_iou_bev(decoded, frame.gts[gt_idx].box);
      const double label = 2.0 * iou_gt - 1.0;
      const int idx = px.i * out.w + px.j;
      const double diff = out.iou(0, idx) - label;
      iou_loss += std::abs(diff);
      if (grads) {
        grads->d_iou(0, idx) +=
            config.w.iou * sign(diff) / std::max<double>(1.0, positives.size());
      }
    }
    b.iou = iou_loss / std::max<double>(1.0, positives.size());
  }

  b.total = config.w.hm * b.hm + config.w.reg * b.reg + config.w.obj * b.obj + config.w.iou * b.iou;
  return b;
}

}  // namespace dirm
