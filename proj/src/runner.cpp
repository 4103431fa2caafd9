#include "dirm/runner.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dirm/frame_io.hpp"

namespace dirm {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

std::string opt_str(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::vector<std::string> class_names_from(const RunConfig& config) {
  std::vector<std::string> names;
  for (const ClassPrior& prior : config.scene().classes) names.push_back(prior.name);
  return names;
}

std::string sanitize(const std::string& token) {
  std::string s = token;
  for (char& c : s) {
    if (c == ':' || c == '/') c = '_';
  }
  return s;
}

struct Aggregate {
  std::optional<double> mean;
  std::optional<double> sd;
};

Aggregate aggregate(const std::vector<std::optional<double>>& values) {
  std::vector<double> present;
  for (const auto& v : values) {
    if (v) present.push_back(*v);
  }
  if (present.empty()) return {};
  double mean = 0.0;
  for (double v : present) mean += v;
  mean /= static_cast<double>(present.size());
  double sd = 0.0;
  if (present.size() > 1) {
    double sq = 0.0;
    for (double v : present) sq += (v - mean) * (v - mean);
    sd = std::sqrt(sq / static_cast<double>(present.size() - 1));
  }
  return {mean, sd};
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<Frame> generate_frames(const SceneConfig& scene, int count, std::uint64_t seed,
                                   std::int64_t first_id) {
  std::vector<Frame> frames(count);
  for (int i = 0; i < count; ++i) {
    const std::int64_t id = first_id + i;
    frames[i] = generate_scene(scene, seed + static_cast<std::uint64_t>(id), id);
  }
  return frames;
}

void validate_frames(const std::vector<Frame>& frames, int num_classes) {
  for (const Frame& f : frames) {
    for (const GtBox& gt : f.gts) {
      if (gt.cls < 0 || gt.cls >= num_classes) {
        std::ostringstream msg;
        msg << "frame " << f.frame_id << ": class id " << gt.cls << " exceeds configured "
            << num_classes << " classes";
        throw std::runtime_error(msg.str());
      }
    }
  }
}

EvalArtifacts run_eval(const RunConfig& config, const HeadParams& params,
                       const std::vector<Frame>& frames) {
  const BevGrid grid = config.grid();
  const DecodeSettings decode = config.decode();
  const int f = config.feat_channels();

  EvalArtifacts arts;
  std::vector<Eigen::MatrixXd> conf_maps(frames.size());
  std::vector<std::vector<Detection>> per_frame(frames.size());

  const int threads = config.serial() ? 1 : config.threads();
  parallel_for(static_cast<int>(frames.size()), threads, [&](int i) {
    const FeatureMap features = rasterize_features(frames[i], grid, f);
    const HeadOutputs out = head_forward(features, params);
    conf_maps[i] = out.conf;
    per_frame[i] = decode_detections(out, grid, decode, frames[i].frame_id);
  });
  for (const auto& dets : per_frame) {
    arts.detections.insert(arts.detections.end(), dets.begin(), dets.end());
  }
  arts.report = evaluate(frames, arts.detections, conf_maps, grid, config.metrics());
  return arts;
}

std::vector<CellResult> run_ablation(const RunConfig& config,
                                     const std::vector<Frame>& train_frames,
                                     const std::vector<Frame>& eval_frames) {
  const std::vector<AblationCell> cells = config.ablate_cells();
  const std::vector<std::uint64_t> seeds = config.ablate_seeds();

  struct Job {
    AblationCell cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const AblationCell& cell : cells) {
    for (std::uint64_t seed : seeds) jobs.push_back({cell, seed});
  }

  std::vector<CellResult> results(jobs.size());
  const int threads = config.serial() ? 1 : config.threads();
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int idx) {
    const Job& job = jobs[idx];
    CellResult& res = results[idx];
    res.cell = job.cell.token;
    res.seed = job.seed;
    try {
      RunConfig cell_config = config;
      cell_config.set("strategy", strategy_name(job.cell.strategy));
      cell_config.set("iqp", iqp_name(job.cell.iqp));
      if (!job.cell.train_iou) cell_config.set("w_iou", "0");
      cell_config.set("seed", std::to_string(job.seed));
      // Cells run serially inside; the pool parallelizes across jobs.
      cell_config.set("threads", "1");

      TrainSettings ts = cell_config.train();
      ts.serial = true;
      const TrainResult trained = train_run(train_frames, cell_config.grid(), ts);
      res.report = run_eval(cell_config, trained.params, eval_frames).report;
      res.ok = true;
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
    }
  });
  return results;
}

std::optional<double> iou_mse_above(const std::vector<Detection>& dets,
                                    const std::vector<Frame>& frames, double threshold) {
  double sum = 0.0;
  int n = 0;
  for (const Detection& d : dets) {
    const Frame* frame = nullptr;
    for (const Frame& f : frames) {
      if (f.frame_id == d.frame_id) {
        frame = &f;
        break;
      }
    }
    double iou_gt = 0.0;
    if (frame) {
      for (const GtBox& gt : frame->gts) {
        iou_gt = std::max(iou_gt, rotated_iou_bev(d.box, gt.box));
      }
    }
    if (iou_gt < threshold) continue;
    sum += (d.iou_pred - iou_gt) * (d.iou_pred - iou_gt);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

DiagTable compute_diag(const RunConfig& config, const std::vector<Frame>& frames,
                       const EvalArtifacts& main_arts, const EvalArtifacts* baseline_arts) {
  const BevGrid grid = config.grid();
  const MetricsSettings ms = config.metrics();
  const std::vector<std::string> names = class_names_from(config);

  DiagTable table;
  table.has_baseline = baseline_arts != nullptr;

  table.mrpe_keys.push_back("overall");
  table.mrpe_main.push_back(
      center_mrpe(main_arts.detections, frames, grid, ms.mrpe_match_iou));
  table.mrpe_baseline.push_back(
      baseline_arts ? center_mrpe(baseline_arts->detections, frames, grid, ms.mrpe_match_iou)
                    : std::nullopt);
  for (int cls = 0; cls < static_cast<int>(names.size()); ++cls) {
    table.mrpe_keys.push_back(names[cls]);
    table.mrpe_main.push_back(
        center_mrpe(main_arts.detections, frames, grid, ms.mrpe_match_iou, cls));
    table.mrpe_baseline.push_back(
        baseline_arts
            ? center_mrpe(baseline_arts->detections, frames, grid, ms.mrpe_match_iou, cls)
            : std::nullopt);
  }

  for (int t = 0; t <= 5; ++t) {
    const double threshold = 0.1 * t;
    table.sweep_thresholds.push_back(threshold);
    table.mse_main.push_back(iou_mse_above(main_arts.detections, frames, threshold));
    table.mse_baseline.push_back(
        baseline_arts ? iou_mse_above(baseline_arts->detections, frames, threshold)
                      : std::nullopt);
  }
  return table;
}

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows,
                     const std::string& config_hash) {
  std::ofstream out = open_out(path);
  out << "# config_hash=" << config_hash << '\n';
  out << "epoch,phase,loss_total,loss_hm,loss_reg,loss_obj,loss_iou,ema_center_iou\n";
  for (const TrainLogRow& row : rows) {
    out << row.epoch << ',' << phase_name(row.phase) << ',' << format_double(row.loss.total)
        << ',' << format_double(row.loss.hm) << ',' << format_double(row.loss.reg) << ','
        << format_double(row.loss.obj) << ',' << format_double(row.loss.iou) << ','
        << format_double(row.ema_center_iou) << '\n';
  }
}

void write_detections(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream out = open_out(path);
  for (const Detection& d : dets) {
    json rec{{"frame_id", d.frame_id},
             {"cls", d.cls},
             {"box",
              {{"x", d.box.x},
               {"y", d.box.y},
               {"z", d.box.z},
               {"l", d.box.l},
               {"w", d.box.w},
               {"h", d.box.h},
               {"theta", d.box.theta}}},
             {"conf", d.conf},
             {"iou_pred", d.iou_pred},
             {"score", d.score}};
    out << rec.dump() << '\n';
  }
}

void write_eval_report_csv(const std::string& path, const EvalReport& report,
                           const std::vector<std::string>& class_names,
                           const std::string& config_hash) {
  std::ofstream out = open_out(path);
  out << "# config_hash=" << config_hash << '\n';
  out << "map";
  for (const std::string& name : class_names) out << ",ap_" << name;
  out << ",mrpe";
  for (const std::string& name : class_names) out << ",mrpe_" << name;
  out << ",mse_low,mse_high,offcenter_rate,n_frames,n_gts,n_dets\n";

  out << opt_str(report.map);
  for (const auto& ap : report.ap) out << ',' << opt_str(ap);
  out << ',' << opt_str(report.mrpe_percent);
  for (const auto& m : report.mrpe_per_class) out << ',' << opt_str(m);
  out << ',' << opt_str(report.mse_low) << ',' << opt_str(report.mse_high) << ','
      << opt_str(report.offcenter_rate) << ',' << report.n_frames << ',' << report.n_gts << ','
      << report.n_dets << '\n';
}

void write_eval_report_json(const std::string& path, const EvalReport& report,
                            const std::vector<std::string>& class_names,
                            const std::string& config_hash) {
  const auto opt_json = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  json per_class = json::object();
  for (size_t c = 0; c < class_names.size(); ++c) {
    per_class[class_names[c]] = {
        {"ap", c < report.ap.size() ? opt_json(report.ap[c]) : json(nullptr)},
        {"mrpe", c < report.mrpe_per_class.size() ? opt_json(report.mrpe_per_class[c])
                                                  : json(nullptr)}};
  }
  json rec{{"config_hash", config_hash},
           {"map", opt_json(report.map)},
           {"classes", per_class},
           {"mrpe", opt_json(report.mrpe_percent)},
           {"mse_low", opt_json(report.mse_low)},
           {"mse_high", opt_json(report.mse_high)},
           {"offcenter_rate", opt_json(report.offcenter_rate)},
           {"counts",
            {{"frames", report.n_frames}, {"gts", report.n_gts}, {"dets", report.n_dets}}}};
  std::ofstream out = open_out(path);
  out << rec.dump(2) << '\n';
}

void write_ablation_csv(const std::string& path, const std::vector<CellResult>& results,
                        const std::vector<std::string>& class_names,
                        const std::string& config_hash) {
  std::ofstream out = open_out(path);
  out << "# config_hash=" << config_hash << '\n';
  out << "cell,seed,status,map";
  for (const std::string& name : class_names) out << ",ap_" << name;
  out << ",mrpe,mse_low,mse_high,offcenter_rate\n";

  const auto write_metrics = [&](const EvalReport& r) {
    out << ',' << opt_str(r.map);
    for (const auto& ap : r.ap) out << ',' << opt_str(ap);
    out << ',' << opt_str(r.mrpe_percent) << ',' << opt_str(r.mse_low) << ','
        << opt_str(r.mse_high) << ',' << opt_str(r.offcenter_rate);
  };

  // Rows grouped by cell in the order produced, aggregates after each group.
  std::vector<std::string> seen;
  for (const CellResult& res : results) {
    if (std::find(seen.begin(), seen.end(), res.cell) == seen.end()) seen.push_back(res.cell);
  }
  for (const std::string& cell : seen) {
    std::vector<const CellResult*> rows;
    for (const CellResult& res : results) {
      if (res.cell == cell) rows.push_back(&res);
    }
    std::vector<std::optional<double>> maps, mrpes, lows, highs, offs;
    std::vector<std::vector<std::optional<double>>> aps(class_names.size());
    for (const CellResult* res : rows) {
      out << res->cell << ',' << res->seed << ','
          << (res->ok ? "ok" : "failed:" + res->error);
      if (res->ok) {
        write_metrics(res->report);
        maps.push_back(res->report.map);
        mrpes.push_back(res->report.mrpe_percent);
        lows.push_back(res->report.mse_low);
        highs.push_back(res->report.mse_high);
        offs.push_back(res->report.offcenter_rate);
        for (size_t c = 0; c < class_names.size(); ++c) {
          aps[c].push_back(c < res->report.ap.size() ? res->report.ap[c] : std::nullopt);
        }
      } else {
        for (size_t c = 0; c < class_names.size() + 5; ++c) out << ',';
      }
      out << '\n';
    }
    for (const char* which : {"mean", "sd"}) {
      const bool mean = std::string(which) == "mean";
      const auto pick = [&](const Aggregate& a) { return mean ? a.mean : a.sd; };
      out << cell << ',' << which << ',' << (maps.empty() ? "failed" : "ok");
      out << ',' << opt_str(pick(aggregate(maps)));
      for (size_t c = 0; c < class_names.size(); ++c) {
        out << ',' << opt_str(pick(aggregate(aps[c])));
      }
      out << ',' << opt_str(pick(aggregate(mrpes))) << ',' << opt_str(pick(aggregate(lows)))
          << ',' << opt_str(pick(aggregate(highs))) << ','
          << opt_str(pick(aggregate(offs))) << '\n';
    }
  }
}

void write_diag_csv(const std::string& path, const DiagTable& table,
                    const std::string& config_hash) {
  std::ofstream out = open_out(path);
  out << "# config_hash=" << config_hash << '\n';
  out << "kind,key,main,baseline\n";
  for (size_t i = 0; i < table.mrpe_keys.size(); ++i) {
    out << "mrpe," << table.mrpe_keys[i] << ',' << opt_str(table.mrpe_main[i]) << ','
        << opt_str(table.mrpe_baseline[i]) << '\n';
  }
  for (size_t i = 0; i < table.sweep_thresholds.size(); ++i) {
    out << "mse_sweep," << format_double(table.sweep_thresholds[i]) << ','
        << opt_str(table.mse_main[i]) << ',' << opt_str(table.mse_baseline[i]) << '\n';
  }
}

int cmd_gen(const RunConfig& config) {
  config.validate();
  const SceneConfig scene = config.scene();
  const int n_train = config.gen_train_frames();
  const int n_eval = config.gen_eval_frames();

  const std::vector<Frame> train = generate_frames(scene, n_train, config.seed(), 0);
  const std::vector<Frame> eval = generate_frames(scene, n_eval, config.seed(), n_train);

  std::filesystem::create_directories(config.out_dir());
  save_frames(train, config.train_path());
  save_frames(eval, config.eval_path());
  std::cout << "gen: wrote " << train.size() << " train + " << eval.size() << " eval frames to "
            << config.out_dir() << '\n';
  return 0;
}

int cmd_train(const RunConfig& config) {
  config.validate();
  const std::vector<Frame> frames = load_frames(config.train_path());
  validate_frames(frames, config.num_classes());
  if (frames.empty()) throw std::runtime_error("train: no frames in " + config.train_path());

  const TrainResult result = train_run(frames, config.grid(), config.train());
  std::filesystem::create_directories(config.out_dir());
  save_checkpoint(config.checkpoint_path(), result.params, result.switch_state, result.steps,
                  config.hash());
  write_train_log(config.out_dir() + "/train_log.csv", result.log, config.hash());
  std::cout << "train: " << result.steps << " steps over " << frames.size() << " frames; final "
            << (result.log.empty() ? std::string("loss n/a")
                                   : "loss " + format_double(result.log.back().loss.total))
            << '\n';
  return 0;
}

int cmd_eval(const RunConfig& config) {
  config.validate();
  const std::vector<Frame> frames = load_frames(config.eval_path());
  validate_frames(frames, config.num_classes());
  const Checkpoint ck = load_checkpoint(config.checkpoint_path());
  if (ck.params.f != config.feat_channels() || ck.params.c != config.num_classes()) {
    std::ostringstream msg;
    msg << "eval: checkpoint shapes (f=" << ck.params.f << ", c=" << ck.params.c
        << ") do not match config (f=" << config.feat_channels() << ", c="
        << config.num_classes() << ")";
    throw std::runtime_error(msg.str());
  }
  if (ck.params.iqp != config.train().iqp) {
    throw std::runtime_error(std::string("eval: checkpoint iqp mode '") +
                             iqp_name(ck.params.iqp) + "' does not match config '" +
                             iqp_name(config.train().iqp) + "'");
  }

  const EvalArtifacts arts = run_eval(config, ck.params, frames);
  const std::vector<std::string> names = class_names_from(config);
  write_detections(config.out_dir() + "/detections.jsonl", arts.detections);
  write_eval_report_csv(config.out_dir() + "/eval_report.csv", arts.report, names, config.hash());
  write_eval_report_json(config.out_dir() + "/eval_report.json", arts.report, names,
                         config.hash());
  std::cout << "eval: " << arts.detections.size() << " detections over " << frames.size()
            << " frames; map=" << opt_str(arts.report.map) << '\n';
  return 0;
}

int cmd_ablate(const RunConfig& config) {
  config.validate();
  const SceneConfig scene = config.scene();
  // Every cell trains and evaluates on this one dataset.
  const std::vector<Frame> train =
      generate_frames(scene, config.gen_train_frames(), config.seed(), 0);
  const std::vector<Frame> eval =
      generate_frames(scene, config.gen_eval_frames(), config.seed(), config.gen_train_frames());

  std::filesystem::create_directories(config.out_dir());
  save_frames(train, config.out_dir() + "/ablate_train.jsonl");
  save_frames(eval, config.out_dir() + "/ablate_eval.jsonl");

  const std::vector<CellResult> results = run_ablation(config, train, eval);
  write_ablation_csv(config.out_dir() + "/ablation.csv", results, class_names_from(config),
                     config.hash());
  int failed = 0;
  for (const CellResult& r : results) {
    if (!r.ok) ++failed;
  }
  std::cout << "ablate: " << results.size() << " runs, " << failed << " failed; wrote "
            << config.out_dir() << "/ablation.csv\n";
  return 0;
}

int cmd_diag(const RunConfig& config) {
  config.validate();
  const std::vector<Frame> frames = load_frames(config.eval_path());
  validate_frames(frames, config.num_classes());
  const Checkpoint main_ck = load_checkpoint(config.checkpoint_path());
  const EvalArtifacts main_arts = run_eval(config, main_ck.params, frames);

  std::optional<EvalArtifacts> baseline_arts;
  if (!config.baseline_checkpoint_path().empty()) {
    const Checkpoint base_ck = load_checkpoint(config.baseline_checkpoint_path());
    baseline_arts = run_eval(config, base_ck.params, frames);
  }

  const DiagTable table =
      compute_diag(config, frames, main_arts, baseline_arts ? &*baseline_arts : nullptr);
  write_diag_csv(config.out_dir() + "/diagnostics.csv", table, config.hash());
  std::cout << "diag: wrote " << config.out_dir() << "/diagnostics.csv\n";
  return 0;
}

}  // namespace dirm
