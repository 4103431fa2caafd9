#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dirm/frame_io.hpp"
#include "dirm/runner.hpp"

using namespace dirm;

namespace {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small, fast configuration shared by the pipeline tests.
RunConfig tiny_config(const std::string& out_dir) {
  RunConfig config;
  config.set("grid_h", "32");
  config.set("grid_w", "32");
  config.set("grid_cell", "1");
  config.set("scene_extent", "32");
  config.set("scene_boxes_min", "2");
  config.set("scene_boxes_max", "4");
  config.set("scene_clutter", "60");
  config.set("feat_channels", "6");
  config.set("gen_train", "6");
  config.set("gen_eval", "4");
  config.set("epochs", "3");
  config.set("batch", "2");
  config.set("out_dir", out_dir);
  config.set("serial", "true");
  return config;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool params_equal(const HeadParams& a, const HeadParams& b) {
  const auto av = named_branches(a);
  const auto bv = named_branches(b);
  if (av.size() != bv.size()) return false;
  for (size_t i = 0; i < av.size(); ++i) {
    if (av[i].branch->c1.kernel != bv[i].branch->c1.kernel) return false;
    if (av[i].branch->c1.bias != bv[i].branch->c1.bias) return false;
    if (av[i].branch->c2.kernel != bv[i].branch->c2.kernel) return false;
    if (av[i].branch->c2.bias != bv[i].branch->c2.bias) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config parsing, overrides, and hashing") {
  RunConfig config;
  CHECK_THROWS_AS(config.set("no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(config.get("no_such_key"), ConfigError);

  config.set("lr", "0.02");
  CHECK(config.get_double("lr") == doctest::Approx(0.02));

  const std::string h1 = config.hash();
  config.set("lr", "0.03");
  CHECK(config.hash() != h1);
  config.set("lr", "0.02");
  CHECK(config.hash() == h1);

  SUBCASE("validation catches bad combinations") {
    RunConfig bad;
    bad.set("strategy", "dar_switch");
    bad.set("k", "3");  // n stays 4
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    RunConfig groups;
    CHECK_THROWS_AS(groups.set("dar_groups", "z"); (void)groups.train(), ConfigError);

    RunConfig ap;
    ap.set("ap_iou", "0.5,0.5");  // three classes expected
    CHECK_THROWS_AS(ap.validate(), ConfigError);

    RunConfig grid;
    grid.set("grid_h", "4");
    CHECK_THROWS_AS(grid.validate(), ConfigError);
  }

  SUBCASE("cell tokens parse") {
    const AblationCell cell = parse_cell("dar_switch:v2");
    CHECK(cell.strategy == Strategy::DarSwitch);
    CHECK(cell.iqp == IqpMode::V2);
    CHECK(cell.train_iou);
    const AblationCell off = parse_cell("baseline:off:noiou");
    CHECK_FALSE(off.train_iou);
    CHECK_THROWS_AS(parse_cell("baseline"), ConfigError);
    CHECK_THROWS_AS(parse_cell("baseline:off:what"), ConfigError);
  }

  SUBCASE("config files round-trip through the canonical dump") {
    TempDir dir("dirm_cfg_test");
    RunConfig a = tiny_config((dir.path / "out").string());
    a.set("strategy", "dar_static");
    const std::string path = (dir.path / "run.cfg").string();
    std::ofstream(path) << a.canonical();
    const RunConfig b = RunConfig::from_file(path);
    CHECK(a.hash() == b.hash());
  }
}

TEST_CASE("checkpoint round-trip preserves every tensor") {
  TempDir dir("dirm_ckpt_test");
  const HeadParams params = init_head_params(6, 3, IqpMode::V2, 17);
  SwitchState sw;
  sw.phase = Phase::Dynamic;
  sw.ema_center_iou = 0.42;
  sw.k = 5;
  const std::string path = (dir.path / "ck.json").string();
  save_checkpoint(path, params, sw, 123, "deadbeef");

  const Checkpoint ck = load_checkpoint(path);
  CHECK(params_equal(ck.params, params));
  CHECK(ck.params.iqp == IqpMode::V2);
  CHECK(ck.switch_state.phase == Phase::Dynamic);
  CHECK(ck.switch_state.ema_center_iou == 0.42);
  CHECK(ck.switch_state.k == 5);
  CHECK(ck.steps == 123);
  CHECK(ck.config_hash == "deadbeef");
}

TEST_CASE("train_run basics") {
  TempDir dir("dirm_train_test");
  RunConfig config = tiny_config((dir.path / "out").string());
  const std::vector<Frame> frames = generate_frames(config.scene(), 5, 1, 0);
  const BevGrid grid = config.grid();

  SUBCASE("0 epochs leaves the seeded initialization untouched") {
    TrainSettings ts = config.train();
    ts.epochs = 0;
    const TrainResult result = train_run(frames, grid, ts);
    CHECK(params_equal(result.params,
                       init_head_params(ts.feat_channels, ts.num_classes, ts.iqp, ts.seed)));
    CHECK(result.log.empty());
    CHECK(result.steps == 0);
  }

  SUBCASE("serial and threaded runs produce identical logs") {
    TrainSettings serial = config.train();
    serial.serial = true;
    TrainSettings threaded = serial;
    threaded.serial = false;
    threaded.threads = 2;
    const TrainResult a = train_run(frames, grid, serial);
    const TrainResult b = train_run(frames, grid, threaded);
    CHECK(params_equal(a.params, b.params));
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].loss.total == b.log[i].loss.total);
      CHECK(a.log[i].ema_center_iou == b.log[i].ema_center_iou);
    }
  }

  SUBCASE("same settings twice give bit-identical results") {
    const TrainSettings ts = config.train();
    const TrainResult a = train_run(frames, grid, ts);
    const TrainResult b = train_run(frames, grid, ts);
    CHECK(params_equal(a.params, b.params));
    CHECK(a.log.back().loss.total == b.log.back().loss.total);
  }

  SUBCASE("dar_switch with iou_th 0 flips after the first epoch") {
    TrainSettings ts = config.train();
    ts.strategy = Strategy::DarSwitch;
    ts.iqp = IqpMode::V2;
    ts.iou_th = 0.0;
    ts.epochs = 2;
    const TrainResult result = train_run(frames, grid, ts);
    REQUIRE(result.log.size() == 2);
    CHECK(result.log[0].phase == Phase::Static);
    CHECK(result.log[1].phase == Phase::Dynamic);
    CHECK(result.switch_state.phase == Phase::Dynamic);
  }

  SUBCASE("phase sequence is monotone under dar_switch") {
    TrainSettings ts = config.train();
    ts.strategy = Strategy::DarSwitch;
    ts.iou_th = 0.35;
    ts.epochs = 8;
    const TrainResult result = train_run(frames, grid, ts);
    bool seen_dynamic = false;
    for (const TrainLogRow& row : result.log) {
      if (row.phase == Phase::Dynamic) seen_dynamic = true;
      if (seen_dynamic) CHECK(row.phase == Phase::Dynamic);
    }
  }
}

TEST_CASE("loss decreases over 50 epochs for every strategy") {
  TempDir dir("dirm_loss_decrease");
  RunConfig config = tiny_config((dir.path / "out").string());
  const std::vector<Frame> frames = generate_frames(config.scene(), 5, 3, 0);
  const BevGrid grid = config.grid();

  for (const char* strategy :
       {"baseline", "multipos", "dar_static", "dar_dynamic", "dar_switch"}) {
    CAPTURE(strategy);
    RunConfig c = config;
    c.set("strategy", strategy);
    c.set("iqp", "v2");
    TrainSettings ts = c.train();
    ts.epochs = 50;
    const TrainResult result = train_run(frames, grid, ts);
    REQUIRE(result.log.size() == 50);
    CHECK(result.log.back().loss.total < result.log.front().loss.total);
  }
}

TEST_CASE("cmd_gen writes deterministic files that load back") {
  TempDir dir("dirm_gen_test");
  RunConfig config = tiny_config((dir.path / "out").string());
  CHECK(cmd_gen(config) == 0);

  const std::vector<Frame> train = load_frames(config.train_path());
  const std::vector<Frame> eval = load_frames(config.eval_path());
  CHECK(train.size() == 6);
  CHECK(eval.size() == 4);
  CHECK(train.front().frame_id == 0);
  CHECK(eval.front().frame_id == 6);

  const std::string bytes = read_file(config.train_path());
  CHECK(cmd_gen(config) == 0);
  CHECK(read_file(config.train_path()) == bytes);

  SUBCASE("gen with zero frames writes an empty, header-free file") {
    RunConfig empty = config;
    empty.set("gen_train", "0");
    CHECK(cmd_gen(empty) == 0);
    CHECK(read_file(empty.train_path()).empty());
  }
}

TEST_CASE("cmd_train then cmd_eval round-trips a checkpoint") {
  TempDir dir("dirm_pipe_test");
  RunConfig config = tiny_config((dir.path / "out").string());
  config.set("strategy", "dar_switch");
  config.set("iqp", "v2");
  REQUIRE(cmd_gen(config) == 0);
  REQUIRE(cmd_train(config) == 0);
  REQUIRE(cmd_eval(config) == 0);

  CHECK(fs::exists(config.checkpoint_path()));
  CHECK(fs::exists(config.out_dir() + "/train_log.csv"));
  CHECK(fs::exists(config.out_dir() + "/eval_report.csv"));
  CHECK(fs::exists(config.out_dir() + "/eval_report.json"));
  CHECK(fs::exists(config.out_dir() + "/detections.jsonl"));

  // The log has one row per epoch with the documented column order.
  std::ifstream log(config.out_dir() + "/train_log.csv");
  std::string line;
  std::getline(log, line);
  CHECK(line.rfind("# config_hash=", 0) == 0);
  std::getline(log, line);
  CHECK(line == "epoch,phase,loss_total,loss_hm,loss_reg,loss_obj,loss_iou,ema_center_iou");
  int rows = 0;
  while (std::getline(log, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 3);

  SUBCASE("re-running eval reproduces the report bytes") {
    const std::string bytes = read_file(config.out_dir() + "/eval_report.csv");
    REQUIRE(cmd_eval(config) == 0);
    CHECK(read_file(config.out_dir() + "/eval_report.csv") == bytes);
  }

  SUBCASE("checkpoint incompatible with the config shapes is a named error") {
    RunConfig wrong = config;
    wrong.set("feat_channels", "8");
    try {
      cmd_eval(wrong);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("f=") != std::string::npos);
    }
  }

  SUBCASE("iqp mismatch against the checkpoint is a named error") {
    RunConfig wrong = config;
    wrong.set("iqp", "off");
    CHECK_THROWS_WITH_AS(cmd_eval(wrong),
                         doctest::Contains("does not match config"), std::runtime_error);
  }
}

TEST_CASE("eval on an empty frame set reports absent metrics and succeeds") {
  TempDir dir("dirm_eval_empty");
  RunConfig config = tiny_config((dir.path / "out").string());
  REQUIRE(cmd_gen(config) == 0);
  REQUIRE(cmd_train(config) == 0);
  RunConfig empty = config;
  empty.set("gen_eval", "0");
  save_frames({}, empty.eval_path());
  CHECK(cmd_eval(empty) == 0);
  const std::string csv = read_file(empty.out_dir() + "/eval_report.csv");
  CHECK(csv.find(",,") != std::string::npos);  // absent cells stay empty
}

TEST_CASE("an untrained random head scores near zero mAP") {
  TempDir dir("dirm_random_head");
  RunConfig config = tiny_config((dir.path / "out").string());
  const std::vector<Frame> eval = generate_frames(config.scene(), 12, 99, 0);
  const HeadParams params =
      init_head_params(config.feat_channels(), config.num_classes(), IqpMode::Off, 5);
  const EvalArtifacts arts = run_eval(config, params, eval);
  if (arts.report.map) CHECK(*arts.report.map < 0.1);
}

TEST_CASE("a 1x1 ablation matrix equals the train+eval composition") {
  TempDir dir("dirm_ablate_1x1");
  RunConfig config = tiny_config((dir.path / "out").string());
  config.set("strategy", "dar_static");
  config.set("iqp", "v1");
  config.set("seed", "5");
  config.set("threads", "1");
  config.set("ablate_cells", "dar_static:v1");
  config.set("ablate_seeds", "5");

  const std::vector<Frame> train = generate_frames(config.scene(), 6, 5, 0);
  const std::vector<Frame> eval = generate_frames(config.scene(), 4, 5, 6);

  const std::vector<CellResult> cells = run_ablation(config, train, eval);
  REQUIRE(cells.size() == 1);
  REQUIRE(cells[0].ok);

  TrainSettings ts = config.train();
  ts.serial = true;
  const TrainResult trained = train_run(train, config.grid(), ts);
  const EvalArtifacts arts = run_eval(config, trained.params, eval);

  CHECK(cells[0].report.map == arts.report.map);
  CHECK(cells[0].report.mrpe_percent == arts.report.mrpe_percent);
  CHECK(cells[0].report.mse_low == arts.report.mse_low);
}

TEST_CASE("ablation csv carries per-seed rows plus aggregates") {
  TempDir dir("dirm_ablate_csv");
  RunConfig config = tiny_config((dir.path / "out").string());
  config.set("epochs", "2");
  config.set("gen_train", "4");
  config.set("gen_eval", "3");
  config.set("ablate_cells", "baseline:off:noiou,dar_static:v2");
  config.set("ablate_seeds", "0,1");
  REQUIRE(cmd_ablate(config) == 0);

  std::ifstream csv(config.out_dir() + "/ablation.csv");
  REQUIRE(csv);
  std::string line;
  std::getline(csv, line);  // hash comment
  std::getline(csv, line);  // header
  CHECK(line.rfind("cell,seed,status,map", 0) == 0);

  int seed_rows = 0, mean_rows = 0, sd_rows = 0;
  std::vector<double> static_maps;
  std::optional<double> static_mean;
  while (std::getline(csv, line)) {
    if (line.find(",mean,") != std::string::npos) {
      ++mean_rows;
      if (line.rfind("dar_static:v2", 0) == 0) {
        const auto fields = [&] {
          std::vector<std::string> out;
          std::string cur;
          std::istringstream ss(line);
          while (std::getline(ss, cur, ',')) out.push_back(cur);
          return out;
        }();
        if (fields.size() > 3 && !fields[3].empty()) static_mean = std::stod(fields[3]);
      }
    } else if (line.find(",sd,") != std::string::npos) {
      ++sd_rows;
    } else if (!line.empty()) {
      ++seed_rows;
      if (line.rfind("dar_static:v2", 0) == 0) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream ss(line);
        while (std::getline(ss, cur, ',')) out.push_back(cur);
        if (out.size() > 3 && !out[3].empty()) static_maps.push_back(std::stod(out[3]));
      }
    }
  }
  CHECK(seed_rows == 4);
  CHECK(mean_rows == 2);
  CHECK(sd_rows == 2);
  // Aggregate equals the mean of the per-seed rows.
  REQUIRE(static_maps.size() == 2);
  REQUIRE(static_mean.has_value());
  CHECK(*static_mean ==
        doctest::Approx((static_maps[0] + static_maps[1]) / 2.0).epsilon(1e-12));
}

TEST_CASE("diag on a perfect head reports zero MRPE and zero MSE rows") {
  TempDir dir("dirm_diag_perfect");
  RunConfig config = tiny_config((dir.path / "out").string());
  const std::vector<Frame> frames = generate_frames(config.scene(), 4, 11, 0);

  EvalArtifacts perfect;
  for (const Frame& f : frames) {
    for (const GtBox& gt : f.gts) {
      Detection d;
      d.frame_id = f.frame_id;
      d.cls = gt.cls;
      d.box = gt.box;
      d.conf = 0.9;
      d.iou_pred = 1.0;
      d.score = 0.9;
      perfect.detections.push_back(d);
    }
  }

  const DiagTable table = compute_diag(config, frames, perfect, nullptr);
  REQUIRE(table.mrpe_keys.size() == 4);  // overall + three classes
  CHECK(table.mrpe_keys[0] == "overall");
  REQUIRE(table.mrpe_main[0].has_value());
  CHECK(*table.mrpe_main[0] == doctest::Approx(0.0));
  REQUIRE(table.sweep_thresholds.size() == 6);
  for (size_t i = 0; i < table.sweep_thresholds.size(); ++i) {
    REQUIRE(table.mse_main[i].has_value());
    CHECK(*table.mse_main[i] == doctest::Approx(0.0));
    CHECK_FALSE(table.mse_baseline[i].has_value());
  }

  const std::string path = (dir.path / "diag.csv").string();
  write_diag_csv(path, table, config.hash());
  std::ifstream csv(path);
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  CHECK(line == "kind,key,main,baseline");
  int mrpe_rows = 0, sweep_rows = 0;
  while (std::getline(csv, line)) {
    if (line.rfind("mrpe,", 0) == 0) ++mrpe_rows;
    if (line.rfind("mse_sweep,", 0) == 0) ++sweep_rows;
  }
  CHECK(mrpe_rows == 4);
  CHECK(sweep_rows == 6);
}

TEST_CASE("cmd_diag writes baseline columns when a second checkpoint is given") {
  TempDir dir("dirm_diag_cmd");
  RunConfig config = tiny_config((dir.path / "out").string());
  config.set("iqp", "v2");
  REQUIRE(cmd_gen(config) == 0);
  REQUIRE(cmd_train(config) == 0);

  // Reuse the same checkpoint as its own baseline.
  RunConfig with_base = config;
  with_base.set("baseline_checkpoint", "checkpoint.json");
  REQUIRE(cmd_diag(with_base) == 0);

  std::ifstream csv(config.out_dir() + "/diagnostics.csv");
  REQUIRE(csv);
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  bool saw_equal_pair = false;
  while (std::getline(csv, line)) {
    if (line.rfind("mse_sweep,", 0) != 0) continue;
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (fields.size() >= 4 && !fields[2].empty() && fields[2] == fields[3]) {
      saw_equal_pair = true;
    }
  }
  CHECK(saw_equal_pair);
}
