#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dirm/runner.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  long seed = -1;
  std::string out_dir;
  bool serial = false;
};

dirm::RunConfig build_config(const CommonOpts& opts) {
  dirm::RunConfig config =
      opts.config_path.empty() ? dirm::RunConfig() : dirm::RunConfig::from_file(opts.config_path);
  for (const std::string& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw dirm::ConfigError("--set expects key=value, got: " + kv);
    }
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed >= 0) config.set("seed", std::to_string(opts.seed));
  if (!opts.out_dir.empty()) config.set("out_dir", opts.out_dir);
  if (opts.serial) config.set("serial", "true");
  return config;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value config file");
  cmd->add_option("--set", opts.overrides, "override one config key (repeatable)");
  cmd->add_option("--seed", opts.seed, "override the run seed");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_flag("--serial", opts.serial, "bit-exact single-threaded mode");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic BEV detection-head lab: decoupled attribute regression "
               "and interactive quality prediction"};
  app.require_subcommand(1);

  CommonOpts opts;
  int (*handler)(const dirm::RunConfig&) = nullptr;

  for (const auto& [name, desc, fn] :
       std::initializer_list<std::tuple<const char*, const char*, int (*)(const dirm::RunConfig&)>>{
           {"gen", "generate a synthetic frame dataset", dirm::cmd_gen},
           {"train", "train the detection head on a frame file", dirm::cmd_train},
           {"eval", "evaluate a checkpoint on a frame file", dirm::cmd_eval},
           {"ablate", "run a strategy x iqp ablation matrix", dirm::cmd_ablate},
           {"diag", "emit MRPE and quality-MSE diagnostics", dirm::cmd_diag}}) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    add_common(cmd, opts);
    cmd->callback([&handler, fn]() { handler = fn; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    return handler(build_config(opts));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
