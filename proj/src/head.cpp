#include "dirm/head.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dirm {

namespace {

ConvParams make_conv(int in, int out, std::mt19937_64& rng, double out_bias = 0.0) {
  ConvParams p;
  p.in = in;
  p.out = out;
  const double bound = std::sqrt(2.0 / (9.0 * in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  p.kernel = Eigen::MatrixXd::NullaryExpr(out, 9 * in, [&]() { return dist(rng); });
  p.bias = Eigen::VectorXd::Constant(out, out_bias);
  return p;
}

BranchParams make_branch(int f, int width, std::mt19937_64& rng, double out_bias = 0.0) {
  BranchParams b;
  b.c1 = make_conv(f, f, rng);
  b.c2 = make_conv(f, width, rng, out_bias);
  return b;
}

Eigen::MatrixXd branch_forward(const Eigen::MatrixXd& input, int h, int w,
                               const BranchParams& p, BranchCache* cache) {
  Eigen::MatrixXd hidden = conv3x3_forward(input, h, w, p.c1);
  Eigen::MatrixXd out = conv3x3_forward(relu(hidden), h, w, p.c2);
  if (cache) {
    cache->input = input;
    cache->hidden = std::move(hidden);
  }
  return out;
}

// Returns the gradient w.r.t. the branch input; fills parameter grads.
Eigen::MatrixXd branch_backward(const BranchCache& cache, int h, int w, const BranchParams& p,
                                const Eigen::MatrixXd& d_out, BranchParams& grads) {
  const Eigen::MatrixXd activated = relu(cache.hidden);
  Eigen::MatrixXd d_activated;
  conv3x3_backward(activated, h, w, p.c2, d_out, grads.c2.kernel, grads.c2.bias, &d_activated);
  const Eigen::MatrixXd d_hidden = relu_backward(cache.hidden, d_activated);
  Eigen::MatrixXd d_input;
  conv3x3_backward(cache.input, h, w, p.c1, d_hidden, grads.c1.kernel, grads.c1.bias, &d_input);
  return d_input;
}

BranchParams zero_branch_like(const BranchParams& p) {
  BranchParams g;
  g.c1.in = p.c1.in;
  g.c1.out = p.c1.out;
  g.c1.kernel = Eigen::MatrixXd::Zero(p.c1.kernel.rows(), p.c1.kernel.cols());
  g.c1.bias = Eigen::VectorXd::Zero(p.c1.bias.size());
  g.c2.in = p.c2.in;
  g.c2.out = p.c2.out;
  g.c2.kernel = Eigen::MatrixXd::Zero(p.c2.kernel.rows(), p.c2.kernel.cols());
  g.c2.bias = Eigen::VectorXd::Zero(p.c2.bias.size());
  return g;
}

void check_branch(const BranchParams& b, int f, int width, const char* name) {
  if (b.c1.kernel.rows() != f || b.c1.kernel.cols() != 9 * f || b.c1.bias.size() != f ||
      b.c2.kernel.rows() != width || b.c2.kernel.cols() != 9 * f || b.c2.bias.size() != width) {
    throw std::invalid_argument(std::string("head: branch shape mismatch: ") + name);
  }
}

}  // namespace

const char* iqp_name(IqpMode m) {
  switch (m) {
    case IqpMode::Off: return "off";
    case IqpMode::V1: return "v1";
    case IqpMode::V2: return "v2";
  }
  return "?";
}

std::vector<NamedBranch> named_branches(HeadParams& p) {
  std::vector<NamedBranch> v{{"conf", &p.conf}, {"xy", &p.xy},       {"z", &p.z},
                             {"lwh", &p.lwh},   {"theta", &p.theta}, {"iou", &p.iou}};
  if (p.obj) v.insert(v.begin() + 1, {"obj", &*p.obj});
  return v;
}

std::vector<NamedBranchConst> named_branches(const HeadParams& p) {
  std::vector<NamedBranchConst> v{{"conf", &p.conf}, {"xy", &p.xy},       {"z", &p.z},
                                  {"lwh", &p.lwh},   {"theta", &p.theta}, {"iou", &p.iou}};
  if (p.obj) v.insert(v.begin() + 1, {"obj", &*p.obj});
  return v;
}

std::int64_t HeadParams::parameter_count() const {
  std::int64_t n = 0;
  for (const NamedBranchConst& nb : named_branches(*this)) {
    n += nb.branch->c1.kernel.size() + nb.branch->c1.bias.size() +
         nb.branch->c2.kernel.size() + nb.branch->c2.bias.size();
  }
  return n;
}

HeadParams init_head_params(int f, int c, IqpMode iqp, std::uint64_t seed) {
  if (f < 1 || c < 1) throw std::invalid_argument("init_head_params: f and c must be >= 1");
  std::mt19937_64 rng(seed);
  HeadParams p;
  p.f = f;
  p.c = c;
  p.iqp = iqp;
  // Heatmap output bias starts at logit(0.1) so the focal loss sees a mostly
  // empty map at step zero.
  p.conf = make_branch(f, c, rng, std::log(0.1 / 0.9));
  if (iqp == IqpMode::V2) p.obj = make_branch(f, 1, rng, std::log(0.1 / 0.9));
  p.xy = make_branch(f, 2, rng);
  p.z = make_branch(f, 1, rng);
  p.lwh = make_branch(f, 3, rng);
  p.theta = make_branch(f, 2, rng);
  p.iou = make_branch(f, 1, rng);
  return p;
}

OutputGrads OutputGrads::zeros_like(const HeadOutputs& out) {
  OutputGrads g;
  g.d_conf = Eigen::MatrixXd::Zero(out.conf.rows(), out.conf.cols());
  g.d_obj_logit = Eigen::MatrixXd::Zero(out.obj_logit.rows(), out.obj_logit.cols());
  g.d_xy = Eigen::MatrixXd::Zero(out.xy.rows(), out.xy.cols());
  g.d_z = Eigen::MatrixXd::Zero(out.z.rows(), out.z.cols());
  g.d_lwh = Eigen::MatrixXd::Zero(out.lwh.rows(), out.lwh.cols());
  g.d_theta = Eigen::MatrixXd::Zero(out.theta.rows(), out.theta.cols());
  g.d_iou = Eigen::MatrixXd::Zero(out.iou.rows(), out.iou.cols());
  return g;
}

Eigen::MatrixXd im2col3x3(const Eigen::MatrixXd& x, int h, int w) {
  const int f = static_cast<int>(x.rows());
  Eigen::MatrixXd col = Eigen::MatrixXd::Zero(9 * f, h * w);
  for (int c = 0; c < f; ++c) {
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const int tap = (di + 1) * 3 + (dj + 1);
        const int row = c * 9 + tap;
        for (int i = 0; i < h; ++i) {
          const int ii = i + di;
          if (ii < 0 || ii >= h) continue;
          const int j_lo = std::max(0, -dj);
          const int j_hi = std::min(w, w - dj);
          if (j_lo >= j_hi) continue;
          col.block(row, i * w + j_lo, 1, j_hi - j_lo) =
              x.block(c, ii * w + j_lo + dj, 1, j_hi - j_lo);
        }
      }
    }
  }
  return col;
}

Eigen::MatrixXd conv3x3_forward(const Eigen::MatrixXd& x, int h, int w, const ConvParams& p) {
  if (x.rows() * 9 != p.kernel.cols() || x.cols() != h * w) {
    throw std::invalid_argument("conv3x3: input shape mismatch");
  }
  Eigen::MatrixXd out = p.kernel * im2col3x3(x, h, w);
  out.colwise() += p.bias;
  return out;
}

void conv3x3_backward(const Eigen::MatrixXd& x, int h, int w, const ConvParams& p,
                      const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_kernel,
                      Eigen::VectorXd& d_bias, Eigen::MatrixXd* d_x) {
  const Eigen::MatrixXd col = im2col3x3(x, h, w);
  d_kernel = d_out * col.transpose();
  d_bias = d_out.rowwise().sum();
  if (!d_x) return;

  const Eigen::MatrixXd d_col = p.kernel.transpose() * d_out;
  const int f = static_cast<int>(x.rows());
  *d_x = Eigen::MatrixXd::Zero(f, h * w);
  for (int c = 0; c < f; ++c) {
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const int tap = (di + 1) * 3 + (dj + 1);
        const int row = c * 9 + tap;
        for (int i = 0; i < h; ++i) {
          const int ii = i + di;
          if (ii < 0 || ii >= h) continue;
          const int j_lo = std::max(0, -dj);
          const int j_hi = std::min(w, w - dj);
          if (j_lo >= j_hi) continue;
          d_x->block(c, ii * w + j_lo + dj, 1, j_hi - j_lo) +=
              d_col.block(row, i * w + j_lo, 1, j_hi - j_lo);
        }
      }
    }
  }
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d_out) {
  return (x.array() > 0.0).cast<double>().matrix().cwiseProduct(d_out);
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
  return ((-x.array()).exp() + 1.0).inverse().matrix();
}

Eigen::MatrixXd sigmoid_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& d_out) {
  return (y.array() * (1.0 - y.array())).matrix().cwiseProduct(d_out);
}

Eigen::MatrixXd tanh_map(const Eigen::MatrixXd& x) { return x.array().tanh().matrix(); }

Eigen::MatrixXd tanh_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& d_out) {
  return (1.0 - y.array().square()).matrix().cwiseProduct(d_out);
}

Eigen::RowVectorXd channel_max(const Eigen::MatrixXd& x, std::vector<int>* argmax) {
  Eigen::RowVectorXd out(x.cols());
  if (argmax) argmax->assign(x.cols(), 0);
  for (Eigen::Index p = 0; p < x.cols(); ++p) {
    int best = 0;
    double v = x(0, p);
    for (Eigen::Index r = 1; r < x.rows(); ++r) {
      if (x(r, p) > v) {
        v = x(r, p);
        best = static_cast<int>(r);
      }
    }
    out(p) = v;
    if (argmax) (*argmax)[p] = best;
  }
  return out;
}

Eigen::MatrixXd channel_max_backward(int rows, const std::vector<int>& argmax,
                                     const Eigen::RowVectorXd& d_out) {
  Eigen::MatrixXd d_x = Eigen::MatrixXd::Zero(rows, d_out.cols());
  for (Eigen::Index p = 0; p < d_out.cols(); ++p) d_x(argmax[p], p) = d_out(p);
  return d_x;
}

Eigen::MatrixXd gate_forward(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& g) {
  return x.array().rowwise() * g.array();
}

void gate_backward(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& g,
                   const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_x,
                   Eigen::RowVectorXd& d_g) {
  d_x = d_out.array().rowwise() * g.array();
  d_g = (d_out.cwiseProduct(x)).colwise().sum();
}

HeadOutputs head_forward(const FeatureMap& x, const HeadParams& params, HeadCache* cache) {
  if (x.f != params.f) throw std::invalid_argument("head_forward: feature channels mismatch");
  if (!x.finite()) throw std::invalid_argument("head_forward: non-finite features");
  check_branch(params.conf, params.f, params.c, "conf");
  if (params.iqp == IqpMode::V2 && !params.obj) {
    throw std::invalid_argument("head_forward: V2 requires an objectness branch");
  }
  if (params.obj) check_branch(*params.obj, params.f, 1, "obj");
  check_branch(params.xy, params.f, 2, "xy");
  check_branch(params.z, params.f, 1, "z");
  check_branch(params.lwh, params.f, 3, "lwh");
  check_branch(params.theta, params.f, 2, "theta");
  check_branch(params.iou, params.f, 1, "iou");

  const int h = x.h;
  const int w = x.w;
  HeadOutputs out;
  out.h = h;
  out.w = w;
  out.iqp = params.iqp;
  if (cache) {
    cache->h = h;
    cache->w = w;
    cache->x = x.data;
  }

  out.conf_logit = branch_forward(x.data, h, w, params.conf, cache ? &cache->conf : nullptr);
  out.conf = sigmoid(out.conf_logit);
  if (cache) cache->conf_prob = out.conf;
  out.xy = branch_forward(x.data, h, w, params.xy, cache ? &cache->xy : nullptr);
  out.z = branch_forward(x.data, h, w, params.z, cache ? &cache->z : nullptr);
  out.lwh = branch_forward(x.data, h, w, params.lwh, cache ? &cache->lwh : nullptr);
  out.theta = branch_forward(x.data, h, w, params.theta, cache ? &cache->theta : nullptr);

  Eigen::MatrixXd iou_input;
  switch (params.iqp) {
    case IqpMode::Off:
      iou_input = x.data;
      break;
    case IqpMode::V1: {
      std::vector<int> argmax;
      out.obj_logit = channel_max(out.conf_logit, &argmax).matrix();
      if (cache) cache->obj_argmax = std::move(argmax);
      break;
    }
    case IqpMode::V2:
      out.obj_logit = branch_forward(x.data, h, w, *params.obj, cache ? &cache->obj : nullptr);
      break;
  }
  if (params.iqp != IqpMode::Off) {
    const Eigen::RowVectorXd gate = sigmoid(out.obj_logit).row(0);
    iou_input = gate_forward(x.data, gate);
    if (cache) cache->gate = gate;
  }
  out.iou = tanh_map(branch_forward(iou_input, h, w, params.iou, cache ? &cache->iou : nullptr));
  if (cache) cache->iou_out = out.iou;
  return out;
}

HeadGrads head_backward(const HeadCache& cache, const HeadParams& params,
                        const OutputGrads& upstream) {
  const int h = cache.h;
  const int w = cache.w;

  HeadGrads grads;
  grads.params.f = params.f;
  grads.params.c = params.c;
  grads.params.iqp = params.iqp;
  grads.params.conf = zero_branch_like(params.conf);
  if (params.obj) grads.params.obj = zero_branch_like(*params.obj);
  grads.params.xy = zero_branch_like(params.xy);
  grads.params.z = zero_branch_like(params.z);
  grads.params.lwh = zero_branch_like(params.lwh);
  grads.params.theta = zero_branch_like(params.theta);
  grads.params.iou = zero_branch_like(params.iou);
  grads.d_input = Eigen::MatrixXd::Zero(params.f, h * w);

  // Quality branch: undo tanh, then walk back through the (gated) input.
  const Eigen::MatrixXd d_iou_logit = tanh_backward(cache.iou_out, upstream.d_iou);
  const Eigen::MatrixXd d_iou_input =
      branch_backward(cache.iou, h, w, params.iou, d_iou_logit, grads.params.iou);

  Eigen::MatrixXd d_obj_logit = upstream.d_obj_logit;
  if (params.iqp == IqpMode::Off) {
    grads.d_input += d_iou_input;
  } else {
    Eigen::MatrixXd d_x_gate;
    Eigen::RowVectorXd d_gate;
    gate_backward(cache.x, cache.gate, d_iou_input, d_x_gate, d_gate);
    grads.d_input += d_x_gate;
    const Eigen::RowVectorXd d_logit_from_gate =
        (cache.gate.array() * (1.0 - cache.gate.array()) * d_gate.array()).matrix();
    if (d_obj_logit.size() == 0) d_obj_logit = Eigen::MatrixXd::Zero(1, h * w);
    d_obj_logit.row(0) += d_logit_from_gate;
  }

  // Heatmap branch plus, in V1, objectness routed through the channel max.
  Eigen::MatrixXd d_conf_logit = sigmoid_backward(cache.conf_prob, upstream.d_conf);
  if (params.iqp == IqpMode::V1 && d_obj_logit.size() > 0) {
    d_conf_logit +=
        channel_max_backward(params.c, cache.obj_argmax, d_obj_logit.row(0));
  }
  grads.d_input += branch_backward(cache.conf, h, w, params.conf, d_conf_logit, grads.params.conf);

  if (params.iqp == IqpMode::V2 && d_obj_logit.size() > 0) {
    grads.d_input +=
        branch_backward(cache.obj, h, w, *params.obj, d_obj_logit, *grads.params.obj);
  }

  grads.d_input += branch_backward(cache.xy, h, w, params.xy, upstream.d_xy, grads.params.xy);
  grads.d_input += branch_backward(cache.z, h, w, params.z, upstream.d_z, grads.params.z);
  grads.d_input += branch_backward(cache.lwh, h, w, params.lwh, upstream.d_lwh, grads.params.lwh);
  grads.d_input +=
      branch_backward(cache.theta, h, w, params.theta, upstream.d_theta, grads.params.theta);
  return grads;
}

}  // namespace dirm
