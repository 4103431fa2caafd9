#pragma once

#include "dirm/assign.hpp"
#include "dirm/head.hpp"

namespace dirm {

struct LossWeights {
  double hm = 1.0;
  double reg = 2.0;
  double obj = 1.0;
  double iou = 1.0;
};

struct LossConfig {
  LossWeights w;
  double focal_alpha = 2.0;
  double focal_beta = 4.0;
  // When set, the quality loss also covers the multi-sample pixels instead
  // of the sparse center positives only.
  bool iou_positives_extended = false;
};

struct LossBreakdown {
  double total = 0.0;
  double hm = 0.0;
  double reg = 0.0;
  double obj = 0.0;
  double iou = 0.0;
};

/// Penalty-reduced focal loss on the post-sigmoid heatmap against Gaussian
/// targets, normalized by the positive count. Fills d_pred (w.r.t. the
/// probabilities) when non-null.
double focal_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, double alpha,
                  double beta, Eigen::MatrixXd* d_pred = nullptr);

/// Mean binary cross-entropy with logits. Fills d_logit when non-null.
double bce_with_logits(const Eigen::MatrixXd& logit, const Eigen::MatrixXd& target,
                       Eigen::MatrixXd* d_logit = nullptr);

/// Full training loss: focal heatmap + per-group weighted L1 regression +
/// objectness BCE (V1/V2) + L1 quality against 2*IoU_GT - 1 at the positive
/// pixels. IoU_GT is the measured rotated IoU of the box decoded at the
/// positive pixel against its GT, treated as a constant label. Fills the
/// upstream output gradients when grads is non-null.
LossBreakdown loss_total(const HeadOutputs& out, const AssignmentPlan& plan, const Frame& frame,
                         const BevGrid& grid, const LossConfig& config,
                         OutputGrads* grads = nullptr);

}  // namespace dirm
