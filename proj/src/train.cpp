#include "dirm/train.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dirm/decode.hpp"

namespace dirm {

namespace {

using nlohmann::json;

void zip_branches(HeadParams& a, const HeadParams& b,
                  const std::function<void(Eigen::MatrixXd&, const Eigen::MatrixXd&)>& fk,
                  const std::function<void(Eigen::VectorXd&, const Eigen::VectorXd&)>& fb) {
  auto av = named_branches(a);
  auto bv = named_branches(b);
  for (size_t i = 0; i < av.size(); ++i) {
    fk(av[i].branch->c1.kernel, bv[i].branch->c1.kernel);
    fb(av[i].branch->c1.bias, bv[i].branch->c1.bias);
    fk(av[i].branch->c2.kernel, bv[i].branch->c2.kernel);
    fb(av[i].branch->c2.bias, bv[i].branch->c2.bias);
  }
}

HeadParams zeros_like(const HeadParams& p) {
  HeadParams z = p;
  for (NamedBranch nb : named_branches(z)) {
    nb.branch->c1.kernel.setZero();
    nb.branch->c1.bias.setZero();
    nb.branch->c2.kernel.setZero();
    nb.branch->c2.bias.setZero();
  }
  return z;
}

double grad_norm(const HeadParams& g) {
  double sq = 0.0;
  for (NamedBranchConst nb : named_branches(g)) {
    sq += nb.branch->c1.kernel.squaredNorm() + nb.branch->c1.bias.squaredNorm() +
          nb.branch->c2.kernel.squaredNorm() + nb.branch->c2.bias.squaredNorm();
  }
  return std::sqrt(sq);
}

void scale_params(HeadParams& g, double s) {
  for (NamedBranch nb : named_branches(g)) {
    nb.branch->c1.kernel *= s;
    nb.branch->c1.bias *= s;
    nb.branch->c2.kernel *= s;
    nb.branch->c2.bias *= s;
  }
}

struct FrameResult {
  LossBreakdown loss;
  HeadParams grads;
  double iou_sum = 0.0;        // measured center IoU
  double iou_pred_sum = 0.0;   // predicted center IoU
  int iou_count = 0;
  bool finite = true;
};

json tensor_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd tensor_from_json(const json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
    throw std::runtime_error("checkpoint: malformed tensor " + name);
  }
  const Eigen::Index rows = j["rows"].get<Eigen::Index>();
  const Eigen::Index cols = j["cols"].get<Eigen::Index>();
  const auto& data = j["data"];
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw std::runtime_error("checkpoint: tensor size mismatch for " + name);
  }
  Eigen::MatrixXd m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Baseline: return "baseline";
    case Strategy::Multipos: return "multipos";
    case Strategy::DarStatic: return "dar_static";
    case Strategy::DarDynamic: return "dar_dynamic";
    case Strategy::DarSwitch: return "dar_switch";
  }
  return "?";
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

double mean_center_iou(const HeadOutputs& out, const Frame& frame, const BevGrid& grid) {
  double sum = 0.0;
  int count = 0;
  for (const GtBox& gt : frame.gts) {
    const auto px = center_pixel(gt.box, grid);
    if (!px) continue;
    sum += rotated_iou_bev(decode_box(out, *px, grid), gt.box);
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

TrainResult train_run(const std::vector<Frame>& frames, const BevGrid& grid,
                      const TrainSettings& s) {
  if (frames.empty()) throw std::invalid_argument("train_run: need at least one frame");
  if (s.epochs < 0 || s.batch < 1) throw std::invalid_argument("train_run: bad epochs/batch");
  if (s.strategy == Strategy::DarSwitch && s.k != s.n) {
    throw std::invalid_argument("train_run: dar_switch requires k == n");
  }

  const int threads = s.serial ? 1 : s.threads;
  const int n_frames = static_cast<int>(frames.size());

  // Shared features are fixed per frame; rasterize once.
  std::vector<FeatureMap> features(n_frames);
  parallel_for(n_frames, threads, [&](int i) {
    features[i] = rasterize_features(frames[i], grid, s.feat_channels);
  });

  TrainResult result;
  result.params = init_head_params(s.feat_channels, s.num_classes, s.iqp, s.seed);
  result.switch_state =
      SwitchState{Phase::Static, 0.0, s.ema_decay, s.iou_th, s.strategy == Strategy::DarSwitch ? s.n : s.k};

  HeadParams velocity = zeros_like(result.params);

  const auto assign_for = [&](const Frame& frame, const HeadOutputs& out) -> AssignmentPlan {
    const SampleQualityFn quality = [&](int gt_idx, Pixel px) {
      return rotated_iou_bev(decode_box(out, px, grid), frame.gts[gt_idx].box);
    };
    switch (s.strategy) {
      case Strategy::Baseline:
        return assign_baseline(frame, grid, s.num_classes);
      case Strategy::Multipos:
        return assign_multipos(frame, grid, s.num_classes, s.multipos_radius);
      case Strategy::DarStatic:
        return assign_dar_static(frame, grid, s.num_classes, s.dar_groups, s.n);
      case Strategy::DarDynamic:
        return assign_dar_dynamic(frame, grid, s.num_classes, s.dar_groups, s.k, quality);
      case Strategy::DarSwitch:
        return assign_dar_switch(frame, grid, s.num_classes, s.dar_groups, result.switch_state,
                                 s.n, quality);
    }
    throw std::logic_error("train_run: bad strategy");
  };

  for (int epoch = 1; epoch <= s.epochs; ++epoch) {
    const Phase active_phase = result.switch_state.phase;
    LossBreakdown epoch_loss;
    double epoch_iou_sum = 0.0;
    double epoch_iou_pred_sum = 0.0;
    int epoch_iou_count = 0;

    for (int start = 0; start < n_frames; start += s.batch) {
      const int count = std::min(s.batch, n_frames - start);
      std::vector<FrameResult> results(count);

      parallel_for(count, threads, [&](int b) {
        const Frame& frame = frames[start + b];
        HeadCache cache;
        const HeadOutputs out = head_forward(features[start + b], result.params, &cache);
        const AssignmentPlan plan = assign_for(frame, out);
        OutputGrads ograds;
        FrameResult& fr = results[b];
        fr.loss = loss_total(out, plan, frame, grid, s.loss, &ograds);
        fr.finite = std::isfinite(fr.loss.total);
        if (fr.finite) {
          fr.grads = head_backward(cache, result.params, ograds).params;
        }
        for (const GtBox& gt : frame.gts) {
          const auto px = center_pixel(gt.box, grid);
          if (!px) continue;
          fr.iou_sum += rotated_iou_bev(decode_box(out, *px, grid), gt.box);
          const int idx = px->i * out.w + px->j;
          fr.iou_pred_sum += std::clamp(0.5 * (out.iou(0, idx) + 1.0), 0.0, 1.0);
          ++fr.iou_count;
        }
      });

      // Merge in frame order so threaded runs match the serial ones.
      HeadParams acc = zeros_like(result.params);
      for (int b = 0; b < count; ++b) {
        const FrameResult& fr = results[b];
        if (!fr.finite) {
          std::ostringstream msg;
          msg << "train_run: non-finite loss at epoch " << epoch << ", frame_id "
              << frames[start + b].frame_id << ", step " << result.steps;
          throw TrainError(msg.str());
        }
        zip_branches(
            acc, fr.grads, [](Eigen::MatrixXd& a, const Eigen::MatrixXd& g) { a += g; },
            [](Eigen::VectorXd& a, const Eigen::VectorXd& g) { a += g; });
        epoch_loss.total += fr.loss.total;
        epoch_loss.hm += fr.loss.hm;
        epoch_loss.reg += fr.loss.reg;
        epoch_loss.obj += fr.loss.obj;
        epoch_loss.iou += fr.loss.iou;
        epoch_iou_sum += fr.iou_sum;
        epoch_iou_pred_sum += fr.iou_pred_sum;
        epoch_iou_count += fr.iou_count;
      }
      scale_params(acc, 1.0 / count);

      const double norm = grad_norm(acc);
      if (norm > s.clip_norm && norm > 0.0) scale_params(acc, s.clip_norm / norm);

      // v = mu * v + g ; p -= lr * v
      zip_branches(
          velocity, acc,
          [&](Eigen::MatrixXd& v, const Eigen::MatrixXd& g) { v = s.momentum * v + g; },
          [&](Eigen::VectorXd& v, const Eigen::VectorXd& g) { v = s.momentum * v + g; });
      zip_branches(
          result.params, velocity,
          [&](Eigen::MatrixXd& p, const Eigen::MatrixXd& v) { p -= s.lr * v; },
          [&](Eigen::VectorXd& p, const Eigen::VectorXd& v) { p -= s.lr * v; });
      ++result.steps;
    }

    const double measured = epoch_iou_count > 0 ? epoch_iou_sum / epoch_iou_count : 0.0;
    const double predicted = epoch_iou_count > 0 ? epoch_iou_pred_sum / epoch_iou_count : 0.0;
    result.switch_state =
        switch_update(result.switch_state, s.switch_on_predicted ? predicted : measured);

    TrainLogRow row;
    row.epoch = epoch;
    row.phase = active_phase;
    row.loss.total = epoch_loss.total / n_frames;
    row.loss.hm = epoch_loss.hm / n_frames;
    row.loss.reg = epoch_loss.reg / n_frames;
    row.loss.obj = epoch_loss.obj / n_frames;
    row.loss.iou = epoch_loss.iou / n_frames;
    row.ema_center_iou = result.switch_state.ema_center_iou;
    result.log.push_back(row);
  }
  return result;
}

void save_checkpoint(const std::string& path, const HeadParams& params, const SwitchState& sw,
                     long steps, const std::string& config_hash) {
  json tensors = json::object();
  for (NamedBranchConst nb : named_branches(params)) {
    const std::string base = nb.name;
    tensors[base + ".c1.kernel"] = tensor_to_json(nb.branch->c1.kernel);
    tensors[base + ".c1.bias"] = tensor_to_json(nb.branch->c1.bias);
    tensors[base + ".c2.kernel"] = tensor_to_json(nb.branch->c2.kernel);
    tensors[base + ".c2.bias"] = tensor_to_json(nb.branch->c2.bias);
  }
  json rec{
      {"format", "dirm-checkpoint-v1"},
      {"config_hash", config_hash},
      {"f", params.f},
      {"c", params.c},
      {"iqp", iqp_name(params.iqp)},
      {"steps", steps},
      {"switch",
       {{"phase", phase_name(sw.phase)},
        {"ema_center_iou", sw.ema_center_iou},
        {"ema_decay", sw.ema_decay},
        {"iou_th", sw.iou_th},
        {"k", sw.k}}},
      {"tensors", std::move(tensors)},
  };
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << rec.dump(1) << '\n';
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json rec;
  try {
    in >> rec;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint parse error: ") + e.what());
  }
  if (rec.value("format", "") != "dirm-checkpoint-v1") {
    throw std::runtime_error("checkpoint: unknown format in " + path);
  }

  Checkpoint ck;
  ck.config_hash = rec.value("config_hash", "");
  ck.steps = rec.value("steps", 0L);
  const int f = rec.at("f").get<int>();
  const int c = rec.at("c").get<int>();
  const std::string iqp = rec.at("iqp").get<std::string>();
  IqpMode mode = IqpMode::Off;
  if (iqp == "v1") mode = IqpMode::V1;
  else if (iqp == "v2") mode = IqpMode::V2;
  else if (iqp != "off") throw std::runtime_error("checkpoint: unknown iqp mode " + iqp);

  ck.params = init_head_params(f, c, mode, 0);
  const json& tensors = rec.at("tensors");
  for (NamedBranch nb : named_branches(ck.params)) {
    const std::string base = nb.name;
    const auto load = [&](const std::string& name, Eigen::MatrixXd& dst) {
      if (!tensors.contains(name)) throw std::runtime_error("checkpoint: missing tensor " + name);
      Eigen::MatrixXd m = tensor_from_json(tensors[name], name);
      if (m.rows() != dst.rows() || m.cols() != dst.cols()) {
        throw std::runtime_error("checkpoint: shape mismatch for " + name);
      }
      dst = std::move(m);
    };
    load(base + ".c1.kernel", nb.branch->c1.kernel);
    Eigen::MatrixXd b1 = nb.branch->c1.bias;
    load(base + ".c1.bias", b1);
    nb.branch->c1.bias = b1;
    load(base + ".c2.kernel", nb.branch->c2.kernel);
    Eigen::MatrixXd b2 = nb.branch->c2.bias;
    load(base + ".c2.bias", b2);
    nb.branch->c2.bias = b2;
  }

  const json& sw = rec.at("switch");
  ck.switch_state.phase = sw.at("phase").get<std::string>() == "dynamic" ? Phase::Dynamic : Phase::Static;
  ck.switch_state.ema_center_iou = sw.at("ema_center_iou").get<double>();
  ck.switch_state.ema_decay = sw.at("ema_decay").get<double>();
  ck.switch_state.iou_th = sw.at("iou_th").get<double>();
  ck.switch_state.k = sw.at("k").get<int>();
  return ck;
}

}  // namespace dirm
