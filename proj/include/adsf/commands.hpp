#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "adsf/training_eval.hpp"

namespace adsf {

// User-supplied configuration problem; maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value configuration, keys namespaced by dotted prefixes
// (e.g. train.lr_max=0.002). `resolve` records defaults actually used so the
// emitted file reruns bit-identically.
class KvConfig {
 public:
  static KvConfig parse_text(const std::string& text);
  static KvConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string str(const std::string& key, const std::string& def) const;
  std::string str_required(const std::string& key) const;
  int64_t i64(const std::string& key, int64_t def) const;
  double f64(const std::string& key, double def) const;
  bool flag(const std::string& key, bool def) const;
  std::vector<std::string> list(const std::string& key,
                                const std::vector<std::string>& def) const;

  // sorted key=value lines, including every default touched through the
  // typed getters above
  std::string resolved() const;
  void save_resolved(const std::string& path) const;

 private:
  std::map<std::string, std::string> kv_;
  mutable std::map<std::string, std::string> touched_;
};

// Shared builders so the CLI and tests construct identical objects.
SyntheticWorld world_from(const KvConfig& cfg);
ImpressionConfig impressions_from(const KvConfig& cfg);
TrainConfig train_config_from(const KvConfig& cfg);
PretrainedFiles pretrained_from(const KvConfig& cfg);

// Subcommand bodies. They throw ConfigError for bad inputs and standard
// exceptions for runtime failures; run_command maps those to exit codes
// 2 and 3. All file outputs land under cfg "out_dir" with fixed names, and
// every command writes "<name>.resolved.cfg" beside its outputs.
void cmd_gen_data(const KvConfig& cfg, std::ostream& log);
void cmd_build_vocab(const KvConfig& cfg, std::ostream& log);
void cmd_pretrain(const KvConfig& cfg, std::ostream& log);
void cmd_train(const KvConfig& cfg, std::ostream& log);
void cmd_calibrate(const KvConfig& cfg, std::ostream& log);
void cmd_evaluate(const KvConfig& cfg, std::ostream& log);
void cmd_ablate(const KvConfig& cfg, std::ostream& log);
void cmd_dump(const KvConfig& cfg, std::ostream& log);

int run_command(const std::string& name, const KvConfig& cfg, std::ostream& log,
                std::ostream& err);

std::string format_metric_report(const MetricReport& m);

}  // namespace adsf
