#include "dirm/config.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace dirm {

namespace {

const std::map<std::string, std::string>& default_kv() {
  static const std::map<std::string, std::string> defaults = {
      // scene
      {"scene_extent", "32"},
      {"scene_sensor_x", "0"},
      {"scene_sensor_y", "0"},
      {"scene_boxes_min", "3"},
      {"scene_boxes_max", "7"},
      {"scene_max_retries", "40"},
      {"scene_margin", "2.5"},
      {"scene_separation", "0.5"},
      {"scene_base_rate", "40000"},
      {"scene_min_pts", "12"},
      {"scene_max_pts", "400"},
      {"scene_clutter", "200"},
      {"scene_size_jitter", "0.15"},
      // grid
      {"grid_h", "64"},
      {"grid_w", "64"},
      {"grid_cell", "0.5"},
      {"grid_origin_x", "0"},
      {"grid_origin_y", "0"},
      // model
      {"feat_channels", "8"},
      {"classes", "3"},
      {"iqp", "off"},
      // assignment
      {"strategy", "baseline"},
      {"dar_groups", "xy"},
      {"n", "4"},
      {"k", "4"},
      {"multipos_radius", "1"},
      {"iou_th", "0.6"},
      {"ema_decay", "0.9"},
      {"switch_trigger", "measured"},
      // training
      {"epochs", "12"},
      {"batch", "4"},
      {"lr", "0.01"},
      {"momentum", "0.9"},
      {"clip_norm", "5"},
      {"w_hm", "1"},
      {"w_reg", "2"},
      {"w_obj", "1"},
      {"w_iou", "1"},
      {"iou_positives", "center"},
      // decode
      {"alpha", "0.5"},
      {"nms_iou", "0.3"},
      {"min_conf", "0.05"},
      {"max_dets", "48"},
      // eval
      {"ap_iou", "0.5,0.25,0.25"},
      {"mrpe_match_iou", "0.3"},
      {"mse_split", "0.5"},
      // data and run control
      {"gen_train", "200"},
      {"gen_eval", "60"},
      {"train_path", "train.jsonl"},
      {"eval_path", "eval.jsonl"},
      {"checkpoint", "checkpoint.json"},
      {"baseline_checkpoint", ""},
      {"seed", "0"},
      {"out_dir", "out"},
      {"serial", "false"},
      {"threads", "0"},
      // ablation
      {"ablate_cells", "baseline:off:noiou,dar_switch:off:noiou,baseline:v2,dar_switch:v2"},
      {"ablate_seeds", "0,1,2"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

std::string resolve(const std::string& out_dir, const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  return out_dir + "/" + path;
}

}  // namespace

Strategy parse_strategy(const std::string& s) {
  if (s == "baseline") return Strategy::Baseline;
  if (s == "multipos") return Strategy::Multipos;
  if (s == "dar_static") return Strategy::DarStatic;
  if (s == "dar_dynamic") return Strategy::DarDynamic;
  if (s == "dar_switch") return Strategy::DarSwitch;
  throw ConfigError("unknown strategy: " + s);
}

IqpMode parse_iqp(const std::string& s) {
  if (s == "off") return IqpMode::Off;
  if (s == "v1") return IqpMode::V1;
  if (s == "v2") return IqpMode::V2;
  throw ConfigError("unknown iqp mode: " + s);
}

AblationCell parse_cell(const std::string& token) {
  const std::vector<std::string> parts = split(token, ':');
  if (parts.size() < 2 || parts.size() > 3) {
    throw ConfigError("ablate cell must be strategy:iqp[:noiou], got: " + token);
  }
  AblationCell cell;
  cell.token = token;
  cell.strategy = parse_strategy(parts[0]);
  cell.iqp = parse_iqp(parts[1]);
  if (parts.size() == 3) {
    if (parts[2] != "noiou") throw ConfigError("ablate cell flag must be 'noiou': " + token);
    cell.train_iou = false;
  }
  return cell;
}

RunConfig::RunConfig() : kv_(default_kv()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  RunConfig config;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << "config line " << line_no << ": expected key=value";
      throw ConfigError(msg.str());
    }
    config.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (kv_.find(key) == kv_.end()) throw ConfigError("unknown config key: " + key);
  kv_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

std::string RunConfig::canonical() const {
  std::ostringstream out;
  for (const auto& [key, value] : kv_) out << key << '=' << value << '\n';
  return out.str();
}

std::string RunConfig::hash() const {
  const std::string text = canonical();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError("");
    return d;
  } catch (...) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw ConfigError("");
    return static_cast<int>(d);
  } catch (...) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

SceneConfig RunConfig::scene() const {
  SceneConfig sc;
  sc.extent = get_double("scene_extent");
  sc.sensor_x = get_double("scene_sensor_x");
  sc.sensor_y = get_double("scene_sensor_y");
  sc.boxes_min = get_int("scene_boxes_min");
  sc.boxes_max = get_int("scene_boxes_max");
  sc.max_retries = get_int("scene_max_retries");
  sc.margin = get_double("scene_margin");
  sc.separation = get_double("scene_separation");
  sc.base_rate = get_double("scene_base_rate");
  sc.min_pts = get_int("scene_min_pts");
  sc.max_pts = get_int("scene_max_pts");
  sc.clutter_pts = get_int("scene_clutter");
  sc.size_jitter = get_double("scene_size_jitter");
  sc.classes = default_class_priors();
  sc.classes.resize(num_classes());
  if (!sc.valid()) throw ConfigError("invalid scene_* configuration");
  return sc;
}

BevGrid RunConfig::grid() const {
  BevGrid g;
  g.h = get_int("grid_h");
  g.w = get_int("grid_w");
  g.cell = get_double("grid_cell");
  g.origin_x = get_double("grid_origin_x");
  g.origin_y = get_double("grid_origin_y");
  if (!g.valid()) throw ConfigError("invalid grid_* configuration (need cell > 0, h/w >= 8)");
  return g;
}

TrainSettings RunConfig::train() const {
  TrainSettings t;
  t.strategy = parse_strategy(get("strategy"));
  t.iqp = parse_iqp(get("iqp"));

  DarGroups groups;
  bool has_xy = false;
  for (const std::string& part : split(get("dar_groups"), ',')) {
    if (part == "xy") has_xy = true;
    else if (part == "z") groups.z = true;
    else if (part == "lwh") groups.lwh = true;
    else if (part == "theta") groups.theta = true;
    else throw ConfigError("dar_groups: unknown group '" + part + "'");
  }
  if (!has_xy) throw ConfigError("dar_groups must contain xy");
  t.dar_groups = groups;

  t.n = get_int("n");
  t.k = get_int("k");
  t.multipos_radius = get_int("multipos_radius");
  t.iou_th = get_double("iou_th");
  t.ema_decay = get_double("ema_decay");
  const std::string trigger = get("switch_trigger");
  if (trigger != "measured" && trigger != "predicted") {
    throw ConfigError("switch_trigger must be measured or predicted");
  }
  t.switch_on_predicted = trigger == "predicted";

  t.loss.w.hm = get_double("w_hm");
  t.loss.w.reg = get_double("w_reg");
  t.loss.w.obj = get_double("w_obj");
  t.loss.w.iou = get_double("w_iou");
  const std::string iou_pos = get("iou_positives");
  if (iou_pos != "center" && iou_pos != "dar") {
    throw ConfigError("iou_positives must be center or dar");
  }
  t.loss.iou_positives_extended = iou_pos == "dar";

  t.epochs = get_int("epochs");
  t.batch = get_int("batch");
  t.lr = get_double("lr");
  t.momentum = get_double("momentum");
  t.clip_norm = get_double("clip_norm");
  t.feat_channels = feat_channels();
  t.num_classes = num_classes();
  t.seed = seed();
  t.serial = serial();
  t.threads = threads();

  if (t.n < 1 || t.k < 1) throw ConfigError("n and k must be >= 1");
  if (t.strategy == Strategy::DarSwitch && t.k != t.n) {
    throw ConfigError("dar_switch keeps the sample count fixed: set k == n");
  }
  if (t.multipos_radius < 0) throw ConfigError("multipos_radius must be >= 0");
  if (t.iou_th < 0.0 || t.iou_th > 1.0) throw ConfigError("iou_th must lie in [0, 1]");
  if (t.ema_decay < 0.0 || t.ema_decay >= 1.0) throw ConfigError("ema_decay must lie in [0, 1)");
  if (t.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (t.batch < 1) throw ConfigError("batch must be >= 1");
  if (t.lr <= 0.0) throw ConfigError("lr must be positive");
  return t;
}

DecodeSettings RunConfig::decode() const {
  DecodeSettings d;
  d.alpha = get_double("alpha");
  d.nms_iou = get_double("nms_iou");
  d.min_conf = get_double("min_conf");
  d.max_dets = get_int("max_dets");
  if (d.alpha < 0.0 || d.alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  if (d.nms_iou < 0.0 || d.nms_iou > 1.0) throw ConfigError("nms_iou must lie in [0, 1]");
  if (d.max_dets < 1) throw ConfigError("max_dets must be >= 1");
  // An untrained quality branch cannot rectify; fall back to raw confidence.
  if (parse_iqp(get("iqp")) == IqpMode::Off && get_double("w_iou") == 0.0) d.alpha = 0.0;
  return d;
}

MetricsSettings RunConfig::metrics() const {
  MetricsSettings m;
  m.ap_iou.clear();
  for (const std::string& part : split(get("ap_iou"), ',')) {
    try {
      m.ap_iou.push_back(std::stod(part));
    } catch (...) {
      throw ConfigError("ap_iou: expected comma-separated numbers");
    }
  }
  if (static_cast<int>(m.ap_iou.size()) != num_classes()) {
    throw ConfigError("ap_iou must list one threshold per class");
  }
  m.mrpe_match_iou = get_double("mrpe_match_iou");
  m.mse_split = get_double("mse_split");
  return m;
}

std::vector<AblationCell> RunConfig::ablate_cells() const {
  std::vector<AblationCell> cells;
  for (const std::string& token : split(get("ablate_cells"), ',')) {
    if (!token.empty()) cells.push_back(parse_cell(token));
  }
  if (cells.empty()) throw ConfigError("ablate_cells is empty");
  return cells;
}

std::vector<std::uint64_t> RunConfig::ablate_seeds() const {
  std::vector<std::uint64_t> seeds;
  for (const std::string& part : split(get("ablate_seeds"), ',')) {
    if (part.empty()) continue;
    try {
      seeds.push_back(std::stoull(part));
    } catch (...) {
      throw ConfigError("ablate_seeds: expected comma-separated integers");
    }
  }
  if (seeds.empty()) throw ConfigError("ablate_seeds is empty");
  return seeds;
}

int RunConfig::gen_train_frames() const { return get_int("gen_train"); }
int RunConfig::gen_eval_frames() const { return get_int("gen_eval"); }
std::uint64_t RunConfig::seed() const { return static_cast<std::uint64_t>(get_int("seed")); }
bool RunConfig::serial() const { return get_bool("serial"); }
int RunConfig::threads() const { return get_int("threads"); }
std::string RunConfig::out_dir() const { return get("out_dir"); }
std::string RunConfig::train_path() const { return resolve(out_dir(), get("train_path")); }
std::string RunConfig::eval_path() const { return resolve(out_dir(), get("eval_path")); }
std::string RunConfig::checkpoint_path() const { return resolve(out_dir(), get("checkpoint")); }
std::string RunConfig::baseline_checkpoint_path() const {
  const std::string& p = get("baseline_checkpoint");
  return p.empty() ? p : resolve(out_dir(), p);
}

int RunConfig::num_classes() const {
  const int c = get_int("classes");
  if (c < 1 || c > 3) throw ConfigError("classes must lie in [1, 3]");
  return c;
}

int RunConfig::feat_channels() const {
  const int f = get_int("feat_channels");
  if (f < 6) throw ConfigError("feat_channels must be >= 6");
  return f;
}

void RunConfig::validate() const {
  scene();
  grid();
  train();
  decode();
  metrics();
  if (gen_train_frames() < 0 || gen_eval_frames() < 0) {
    throw ConfigError("gen_train/gen_eval must be >= 0");
  }
  if (get_int("threads") < 0) throw ConfigError("threads must be >= 0");
  ablate_cells();
  ablate_seeds();
}

}  // namespace dirm
