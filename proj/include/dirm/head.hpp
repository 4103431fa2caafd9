#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dirm/grid.hpp"

namespace dirm {

/// Quality-interaction mode: Off reads the shared features directly, V1
/// derives objectness from the class heatmap's channel max, V2 adds an
/// independent two-conv objectness branch; V1/V2 gate the quality branch
/// input by sigmoid(objectness).
enum class IqpMode { Off, V1, V2 };

const char* iqp_name(IqpMode m);

/// One 3x3 convolution: kernel is out x (9 * in) with neighborhood taps
/// ordered (di+1)*3 + (dj+1) within each input channel block.
struct ConvParams {
  Eigen::MatrixXd kernel;
  Eigen::VectorXd bias;
  int in = 0;
  int out = 0;
};

/// Two-conv stack: 3x3 keeping the channel count, ReLU, then 3x3 to the
/// branch width.
struct BranchParams {
  ConvParams c1;
  ConvParams c2;
};

struct HeadParams {
  int f = 0;
  int c = 0;
  IqpMode iqp = IqpMode::Off;
  BranchParams conf;                  // -> c channels
  std::optional<BranchParams> obj;    // -> 1 channel, V2 only
  BranchParams xy;                    // -> 2
  BranchParams z;                     // -> 1
  BranchParams lwh;                   // -> 3
  BranchParams theta;                 // -> 2
  BranchParams iou;                   // -> 1

  std::int64_t parameter_count() const;
};

/// Branches in a fixed order, with their serialization names.
struct NamedBranch {
  const char* name;
  BranchParams* branch;
};
struct NamedBranchConst {
  const char* name;
  const BranchParams* branch;
};
std::vector<NamedBranch> named_branches(HeadParams& p);
std::vector<NamedBranchConst> named_branches(const HeadParams& p);

/// Seeded parameter initialization; the objectness branch exists only in V2.
HeadParams init_head_params(int f, int c, IqpMode iqp, std::uint64_t seed);

/// Dense head outputs over the grid (rows = channels, cols = h*w pixels).
struct HeadOutputs {
  int h = 0;
  int w = 0;
  IqpMode iqp = IqpMode::Off;
  Eigen::MatrixXd conf_logit;  // c x hw
  Eigen::MatrixXd conf;        // sigmoid(conf_logit)
  Eigen::MatrixXd obj_logit;   // 1 x hw; empty in Off mode
  Eigen::MatrixXd xy;          // 2 x hw
  Eigen::MatrixXd z;           // 1 x hw
  Eigen::MatrixXd lwh;         // 3 x hw
  Eigen::MatrixXd theta;       // 2 x hw
  Eigen::MatrixXd iou;         // 1 x hw, tanh-squashed into (-1, 1)
};

/// Intermediate activations needed by the reverse pass.
struct BranchCache {
  Eigen::MatrixXd input;   // shared X or the gated quality input
  Eigen::MatrixXd hidden;  // pre-ReLU
};

struct HeadCache {
  int h = 0;
  int w = 0;
  Eigen::MatrixXd x;
  BranchCache conf, obj, xy, z, lwh, theta, iou;
  std::vector<int> obj_argmax;  // V1: winning class row per pixel
  Eigen::RowVectorXd gate;      // sigmoid(obj_logit), V1/V2
  Eigen::MatrixXd conf_prob;    // post-sigmoid heatmap
  Eigen::MatrixXd iou_out;      // post-tanh quality map
};

/// Upstream loss gradients: conf is w.r.t. the post-sigmoid heatmap, iou
/// w.r.t. the post-tanh output, obj w.r.t. the logit; the rest are raw.
struct OutputGrads {
  Eigen::MatrixXd d_conf;
  Eigen::MatrixXd d_obj_logit;
  Eigen::MatrixXd d_xy, d_z, d_lwh, d_theta, d_iou;

  static OutputGrads zeros_like(const HeadOutputs& out);
};

struct HeadGrads {
  HeadParams params;        // same shapes as the parameters
  Eigen::MatrixXd d_input;  // f x hw
};

HeadOutputs head_forward(const FeatureMap& x, const HeadParams& params, HeadCache* cache = nullptr);

HeadGrads head_backward(const HeadCache& cache, const HeadParams& params,
                        const OutputGrads& upstream);

// Differentiable primitives, exposed for direct finite-difference checks.
Eigen::MatrixXd im2col3x3(const Eigen::MatrixXd& x, int h, int w);
Eigen::MatrixXd conv3x3_forward(const Eigen::MatrixXd& x, int h, int w, const ConvParams& p);
void conv3x3_backward(const Eigen::MatrixXd& x, int h, int w, const ConvParams& p,
                      const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_kernel,
                      Eigen::VectorXd& d_bias, Eigen::MatrixXd* d_x);

Eigen::MatrixXd relu(const Eigen::MatrixXd& x);
Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d_out);
Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x);
Eigen::MatrixXd sigmoid_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& d_out);
Eigen::MatrixXd tanh_map(const Eigen::MatrixXd& x);
Eigen::MatrixXd tanh_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& d_out);

/// Column-wise max over channels; ties go to the lowest row. argmax receives
/// the winning row per column when non-null.
Eigen::RowVectorXd channel_max(const Eigen::MatrixXd& x, std::vector<int>* argmax = nullptr);
Eigen::MatrixXd channel_max_backward(int rows, const std::vector<int>& argmax,
                                     const Eigen::RowVectorXd& d_out);

/// Broadcast per-pixel gate: out(c, p) = x(c, p) * g(p).
Eigen::MatrixXd gate_forward(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& g);
void gate_backward(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& g,
                   const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_x,
                   Eigen::RowVectorXd& d_g);

}  // namespace dirm
