#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adsf/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"adSformer personalization pipeline"};
  app.require_subcommand(1);

  struct SubArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    int64_t seed = -1;
  };

  const std::vector<std::string> names = {"gen-data",  "build-vocab", "pretrain",
                                          "train",     "calibrate",   "evaluate",
                                          "ablate",    "dump"};
  std::vector<SubArgs> args(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i]);
    sub->add_option("--config", args[i].config_path, "key=value config file");
    sub->add_option("--set", args[i].sets, "inline key=value overrides");
    sub->add_option("--out-dir", args[i].out_dir, "output directory");
    sub->add_option("--seed", args[i].seed, "master seed");
  }

  CLI11_PARSE(app, argc, argv);

  for (size_t i = 0; i < names.size(); ++i) {
    if (!app.got_subcommand(names[i])) continue;
    const SubArgs& a = args[i];
    try {
      adsf::KvConfig cfg = a.config_path.empty() ? adsf::KvConfig{}
                                                 : adsf::KvConfig::load(a.config_path);
      for (const std::string& s : a.sets) {
        size_t eq = s.find('=');
        if (eq == std::string::npos) {
          std::cerr << "config error: --set expects key=value, got '" << s << "'\n";
          return 2;
        }
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
      }
      if (!a.out_dir.empty()) cfg.set("out_dir", a.out_dir);
      if (a.seed >= 0) cfg.set("seed", std::to_string(a.seed));
      return adsf::run_command(names[i], cfg, std::cout, std::cerr);
    } catch (const adsf::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 3;
    }
  }
  return 2;
}
