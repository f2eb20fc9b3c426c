#include "adsf/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "adsf/io.hpp"
#include "adsf/pretrain.hpp"

namespace adsf {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

std::string out_dir_of(const KvConfig& cfg) {
  std::string dir = cfg.str_required("out_dir");
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

// ---- KvConfig ----------------------------------------------------------------

KvConfig KvConfig::parse_text(const std::string& text) {
  KvConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value, got '" + t + "'");
    c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return c;
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

void KvConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw ConfigError("empty config key");
  kv_[key] = value;
}

bool KvConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string KvConfig::str(const std::string& key, const std::string& def) const {
  auto it = kv_.find(key);
  std::string v = it == kv_.end() ? def : it->second;
  touched_[key] = v;
  return v;
}

std::string KvConfig::str_required(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
  touched_[key] = it->second;
  return it->second;
}

int64_t KvConfig::i64(const std::string& key, int64_t def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) {
    touched_[key] = std::to_string(def);
    return def;
  }
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    touched_[key] = it->second;
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not an integer: '" + it->second + "'");
  }
}

double KvConfig::f64(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) {
    touched_[key] = g17(def);
    return def;
  }
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    touched_[key] = it->second;
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
  }
}

bool KvConfig::flag(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) {
    touched_[key] = def ? "true" : "false";
    return def;
  }
  const std::string& v = it->second;
  touched_[key] = v;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<std::string> KvConfig::list(const std::string& key,
                                        const std::vector<std::string>& def) const {
  auto it = kv_.find(key);
  std::vector<std::string> out;
  if (it == kv_.end()) {
    out = def;
  } else {
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
  }
  std::string joined;
  for (size_t i = 0; i < out.size(); ++i) joined += (i ? "," : "") + out[i];
  touched_[key] = joined;
  return out;
}

std::string KvConfig::resolved() const {
  std::map<std::string, std::string> merged = touched_;
  for (const auto& [k, v] : kv_) merged[k] = v;
  std::string out;
  for (const auto& [k, v] : merged) out += k + "=" + v + "\n";
  return out;
}

void KvConfig::save_resolved(const std::string& path) const {
  write_file(path, resolved());
}

// ---- shared builders ----------------------------------------------------------

SyntheticWorld world_from(const KvConfig& cfg) {
  WorldConfig wc;
  wc.num_users = cfg.i64("world.num_users", wc.num_users);
  wc.num_listings = cfg.i64("world.num_listings", wc.num_listings);
  wc.num_shops = cfg.i64("world.num_shops", wc.num_shops);
  wc.num_taxonomies = cfg.i64("world.num_taxonomies", wc.num_taxonomies);
  wc.attr_noise = cfg.f64("world.attr_noise", wc.attr_noise);
  wc.attr_dim = cfg.i64("world.attr_dim", wc.attr_dim);
  wc.seed = static_cast<uint64_t>(cfg.i64("seed", 1));
  if (wc.num_listings < 1 || wc.num_shops < 1 || wc.num_taxonomies < 1 ||
      wc.num_users < 1 || wc.attr_dim < 1)
    throw ConfigError("world.* sizes must all be positive");
  return generate_world(wc);
}

ImpressionConfig impressions_from(const KvConfig& cfg) {
  ImpressionConfig ic;
  ic.num_impressions = cfg.i64("data.num_impressions", ic.num_impressions);
  ic.history_len = cfg.i64("data.history_len", ic.history_len);
  ic.alpha = cfg.f64("data.alpha", ic.alpha);
  ic.beta = cfg.f64("data.beta", ic.beta);
  ic.gamma = cfg.f64("data.gamma", ic.gamma);
  ic.recency_decay = cfg.f64("data.recency_decay", ic.recency_decay);
  ic.revisit_bonus = cfg.f64("data.revisit_bonus", ic.revisit_bonus);
  ic.listing_bias = cfg.f64("data.listing_bias", ic.listing_bias);
  ic.favorite_value = cfg.f64("data.favorite_value", ic.favorite_value);
  ic.target_click_rate = cfg.f64("data.target_click_rate", ic.target_click_rate);
  ic.target_purchase_rate = cfg.f64("data.target_purchase_rate", ic.target_purchase_rate);
  ic.max_len = cfg.i64("data.max_len", ic.max_len);
  ic.window_seconds = cfg.i64("data.window_seconds", ic.window_seconds);
  if (ic.num_impressions < 1) throw ConfigError("data.num_impressions must be positive");
  if (ic.target_click_rate <= 0.0 || ic.target_click_rate >= 1.0)
    throw ConfigError("data.target_click_rate must lie in (0, 1)");
  return ic;
}

TrainConfig train_config_from(const KvConfig& cfg) {
  TrainConfig tc;
  std::string task = cfg.str("train.task", "ctr");
  if (task == "ctr")
    tc.task = RankingTask::ctr;
  else if (task == "pccvr")
    tc.task = RankingTask::pccvr;
  else
    throw ConfigError("train.task must be ctr or pccvr, got '" + task + "'");

  tc.use_adpm = cfg.flag("train.use_adpm", true);
  tc.use_cross = cfg.flag("train.use_cross", true);
  tc.serial_dcn = cfg.flag("train.serial_dcn", false);
  tc.lr_max = cfg.f64("train.lr_max", 0.002);
  tc.epochs = cfg.i64("train.epochs", tc.task == RankingTask::ctr ? 1 : 2);
  tc.batch_size = cfg.i64("train.batch_size", 256);
  tc.width_divisor = cfg.f64("train.width_divisor", 50.0);
  tc.seed = static_cast<uint64_t>(cfg.i64("seed", 1));
  tc.listing_vocab_k = cfg.i64("vocab.listing_k", 750);
  tc.shop_vocab_k = cfg.i64("vocab.shop_k", 200);
  tc.taxonomy_vocab_k = cfg.i64("vocab.taxonomy_k", 50);
  if (tc.lr_max <= 0.0) throw ConfigError("train.lr_max must be positive");
  if (tc.epochs < 0) throw ConfigError("train.epochs cannot be negative");
  if (tc.batch_size < 1) throw ConfigError("train.batch_size must be positive");

  std::string sampling = cfg.str(
      "train.sampling", tc.task == RankingTask::ctr ? "balanced_50_50" : "none");
  try {
    tc.sampling = sampling_mode_from(sampling);
  } catch (const std::exception&) {
    throw ConfigError("train.sampling: unknown mode '" + sampling + "'");
  }

  int64_t max_len = cfg.i64("adpm.max_len", 12);
  ADPMConfig ac = tc.task == RankingTask::ctr ? ADPMConfig::ctr_default(max_len)
                                              : ADPMConfig::pccvr_default(max_len);
  ac.use_component1 = cfg.flag("adpm.use_component1", ac.use_component1);
  ac.use_component2 = cfg.flag("adpm.use_component2", ac.use_component2);
  ac.use_component3 = cfg.flag("adpm.use_component3", ac.use_component3);
  std::string pooling = cfg.str("adpm.pooling", "max");
  if (pooling == "max")
    ac.pooling = PoolingMode::max;
  else if (pooling == "avg")
    ac.pooling = PoolingMode::avg;
  else
    throw ConfigError("adpm.pooling must be max or avg, got '" + pooling + "'");
  ac.flavors = cfg.list("adpm.flavors", ac.flavors);
  for (const std::string& f : ac.flavors)
    if (f != "air" && f != "visual" && f != "skipgram")
      throw ConfigError("adpm.flavors: unknown flavor '" + f + "'");
  ac.num_heads = cfg.i64("adpm.heads", ac.num_heads);
  ac.d1 = cfg.i64("adpm.d1", ac.d1);
  ac.num_blocks = cfg.i64("adpm.num_blocks", ac.num_blocks);
  ac.dropout = cfg.f64("adpm.dropout", ac.dropout);
  ac.include_target_in_pool = cfg.flag("adpm.include_target", true);
  if (ac.dropout < 0.0 || ac.dropout >= 1.0)
    throw ConfigError("adpm.dropout must lie in [0, 1)");
  if (tc.use_adpm) {
    try {
      ac.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("adpm config: ") + e.what());
    }
  }
  tc.adpm = ac;
  return tc;
}

PretrainedFiles pretrained_from(const KvConfig& cfg) {
  PretrainedFiles files;
  for (const char* f : {"air", "visual", "skipgram"}) {
    std::string key = std::string("tables.") + f;
    if (!cfg.has(key)) continue;
    std::string table = cfg.str_required(key);
    std::string vocab = cfg.str(key + "_vocab", table + ".vocab");
    files.entries.push_back({f, {table, vocab}});
  }
  return files;
}

namespace {

void preflight_tables(const TrainConfig& tc, const PretrainedFiles& files) {
  if (!tc.use_adpm || !tc.adpm.use_component2) return;
  for (const std::string& flavor : tc.adpm.flavors) {
    const std::pair<std::string, std::string>* paths = nullptr;
    for (const auto& [f, p] : files.entries)
      if (f == flavor) paths = &p;
    if (!paths)
      throw ConfigError("flavor '" + flavor + "' is enabled but tables." + flavor +
                        " is not set");
    if (!std::filesystem::exists(paths->first))
      throw ConfigError("tables." + flavor + ": file not found: " + paths->first);
    if (!std::filesystem::exists(paths->second))
      throw ConfigError("tables." + flavor + "_vocab: file not found: " + paths->second);
  }
}

Vocabulary listing_id_vocab(const SyntheticWorld& world) {
  std::vector<std::vector<std::string>> corpus;
  for (int64_t i = 0; i < world.config.num_listings; ++i)
    corpus.push_back({world.listing_id(i)});
  return build_vocab(corpus, world.config.num_listings);
}

}  // namespace

// ---- commands -------------------------------------------------------------------

std::string format_metric_report(const MetricReport& m) {
  std::string s;
  s += "roc_auc=" + g17(m.roc_auc) + "\n";
  s += "pr_auc=" + g17(m.pr_auc) + "\n";
  s += "ece=" + g17(m.ece) + "\n";
  s += "nce=" + g17(m.nce) + "\n";
  s += "n_pos=" + std::to_string(m.n_pos) + "\n";
  s += "n_neg=" + std::to_string(m.n_neg) + "\n";
  return s;
}

void cmd_gen_data(const KvConfig& cfg, std::ostream& log) {
  std::string dir = out_dir_of(cfg);
  SyntheticWorld world = world_from(cfg);
  ImpressionConfig ic = impressions_from(cfg);
  double val_fraction = cfg.f64("data.val_fraction", 0.2);
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ConfigError("data.val_fraction must lie in (0, 1)");

  RngStream rng = RngStream(world.config.seed).substream("impressions");
  std::vector<Impression> rows = generate_impressions(world, ic, rng);
  int64_t n = static_cast<int64_t>(rows.size());
  int64_t n_val = std::max<int64_t>(1, static_cast<int64_t>(
                                           std::llround(val_fraction * static_cast<double>(n))));
  std::vector<Impression> train(rows.begin(), rows.end() - n_val);
  std::vector<Impression> val(rows.end() - n_val, rows.end());
  save_impressions(train, dir + "/train.tsv");
  save_impressions(val, dir + "/val.tsv");
  cfg.save_resolved(dir + "/gen_data.resolved.cfg");

  int64_t clicks = 0, purchases = 0;
  for (const Impression& r : rows) {
    clicks += r.label_click;
    purchases += r.label_purchase;
  }
  log << "wrote " << train.size() << " train rows, " << val.size() << " val rows\n";
  log << "click rate " << g17(static_cast<double>(clicks) / static_cast<double>(n))
      << ", purchases " << purchases << "\n";
}

void cmd_build_vocab(const KvConfig& cfg, std::ostream& log) {
  std::string dir = out_dir_of(cfg);
  std::string path = cfg.str_required("data.train_path");
  std::string entity = cfg.str("vocab.entity", "listing");
  int64_t k = cfg.i64("vocab.k", 750);
  if (entity != "listing" && entity != "shop" && entity != "taxonomy")
    throw ConfigError("vocab.entity must be listing, shop or taxonomy");
  if (k < 1) throw ConfigError("vocab.k must be positive");

  std::vector<Impression> rows = load_impressions(path);
  std::vector<std::vector<std::string>> corpus;
  for (const Impression& r : rows) {
    std::vector<std::string> doc;
    if (entity == "listing") doc.push_back("L" + std::to_string(r.candidate));
    for (const auto& [key, seq] : r.sequences) {
      if (key.rfind(entity + ":", 0) != 0) continue;
      for (const auto& [id, ts] : seq) doc.push_back(id);
    }
    corpus.push_back(std::move(doc));
  }
  Vocabulary v = build_vocab(corpus, k);
  std::string out = dir + "/" + entity + ".vocab";
  v.save(out);
  cfg.save_resolved(dir + "/build_vocab.resolved.cfg");
  log << "wrote " << out << " with " << v.size() << " rows (" << v.num_oov()
      << " reserved)\n";
}

void cmd_pretrain(const KvConfig& cfg, std::ostream& log) {
  std::string dir = out_dir_of(cfg);
  std::string kind = cfg.str_required("pretrain.kind");
  SyntheticWorld world = world_from(cfg);
  uint64_t seed = world.config.seed;

  if (kind == "skipgram") {
    SessionConfig sc;
    sc.num_sessions = cfg.i64("pretrain.num_sessions", sc.num_sessions);
    sc.session_len = cfg.i64("pretrain.session_len", sc.session_len);
    sc.purchase_session_rate = cfg.f64("pretrain.purchase_rate", sc.purchase_session_rate);
    sc.cross_taxonomy_rate = cfg.f64("pretrain.cross_taxonomy_rate", sc.cross_taxonomy_rate);
    SkipGramConfig sgc;
    sgc.dim = cfg.i64("pretrain.dim", 64);
    sgc.window = cfg.i64("pretrain.window", 5);
    sgc.purchase_upsample = cfg.i64("pretrain.purchase_upsample", 5);
    sgc.epochs = cfg.i64("pretrain.epochs", 3);
    sgc.lr = cfg.f64("pretrain.lr", 0.05);
    sgc.seed = seed;
    std::string mode = cfg.str("pretrain.mode", "hierarchical");
    if (mode == "hierarchical")
      sgc.mode = SkipGramMode::hierarchical;
    else if (mode == "full_softmax")
      sgc.mode = SkipGramMode::full_softmax;
    else
      throw ConfigError("pretrain.mode must be hierarchical or full_softmax");

    std::vector<Session> sessions =
        generate_sessions(world, sc, RngStream(seed).substream("sessions"));
    SkipGramModel m = train_skipgram(sessions, sgc);
    ParamSet scratch;
    EmbeddingTable t = skipgram_export(scratch, m, "skipgram");
    save_table(t, dir + "/skipgram.embt");
    m.vocab.save(dir + "/skipgram.embt.vocab");
    cfg.save_resolved(dir + "/pretrain.resolved.cfg");
    log << "wrote " << dir << "/skipgram.embt: " << t.vocab_size << " x " << t.dim << "\n";
    return;
  }

  AirConfig ac;
  ac.batch_size = cfg.i64("pretrain.batch_size", 256);
  ac.num_negatives = cfg.i64("pretrain.negatives", ac.batch_size - 1);
  ac.epochs = cfg.i64("pretrain.epochs", 2);
  ac.lr = cfg.f64("pretrain.lr", 0.002);
  ac.seed = seed;
  AirFeatures features = build_air_features(world, ac);
  Vocabulary vocab = listing_id_vocab(world);

  if (kind == "air") {
    int64_t num_pairs = cfg.i64("pretrain.num_pairs", 20000);
    double cross = cfg.f64("pretrain.cross_taxonomy_rate", 0.02);
    std::vector<std::pair<int64_t, int64_t>> pairs = generate_coclick_pairs(
        world, num_pairs, cross, RngStream(seed).substream("coclick"));
    AirModel m = train_air(world, pairs, features, ac);
    ParamSet scratch;
    EmbeddingTable t = air_export(scratch, m, features, world, vocab, "air");
    save_table(t, dir + "/air.embt");
    vocab.save(dir + "/air.embt.vocab");
    cfg.save_resolved(dir + "/pretrain.resolved.cfg");
    log << "wrote " << dir << "/air.embt: " << t.vocab_size << " x " << t.dim
        << ", final loss " << g17(m.losses.back()) << "\n";
    return;
  }

  if (kind == "visual") {
    // the synthetic frozen visual vectors exported directly as a table
    ParamSet scratch;
    EmbeddingTable t;
    t.name = "visual";
    t.vocab_size = vocab.size();
    t.dim = ac.visual_dim;
    t.weights = &scratch.create("visual", {t.vocab_size, t.dim});
    t.weights->trainable = false;
    for (int64_t i = 0; i < world.config.num_listings; ++i) {
      int64_t row = vocab.index_of(world.listing_id(i));
      for (int64_t j = 0; j < t.dim; ++j)
        t.weights->value.v[static_cast<size_t>(row * t.dim + j)] =
            features.data[static_cast<size_t>(i * features.dim + j)];
    }
    save_table(t, dir + "/visual.embt");
    vocab.save(dir + "/visual.embt.vocab");
    cfg.save_resolved(dir + "/pretrain.resolved.cfg");
    log << "wrote " << dir << "/visual.embt: " << t.vocab_size << " x " << t.dim << "\n";
    return;
  }

  throw ConfigError("pretrain.kind must be skipgram, air or visual, got '" + kind + "'");
}

namespace {

// Construct-and-train wrapper shared by train/evaluate/calibrate; epochs=0
// builds the parameter set without taking a step, which is what checkpoint
// loading needs.
TrainedModel build_trained(const KvConfig& cfg, const SyntheticWorld& world,
                           const std::vector<Impression>& train_rows,
                           int64_t epochs_override = -1) {
  TrainConfig tc = train_config_from(cfg);
  if (epochs_override >= 0) tc.epochs = epochs_override;
  PretrainedFiles files = pretrained_from(cfg);
  preflight_tables(tc, files);
  return train_ranking(world, train_rows, tc, &files);
}

}  // namespace

void cmd_train(const KvConfig& cfg, std::ostream& log) {
  std::string dir = out_dir_of(cfg);
  SyntheticWorld world = world_from(cfg);
  std::vector<Impression> train_rows = load_impressions(cfg.str_required("data.train_path"));
  std::vector<Impression> val_rows = load_impressions(cfg.str_required("data.val_path"));

  TrainedModel tm = build_trained(cfg, world, train_rows);
  std::vector<Impression> eval_rows;
  if (tm.config.task == RankingTask::pccvr) {
    for (const Impression& r : val_rows)
      if (r.label_click) eval_rows.push_back(r);
  } else {
    eval_rows = val_rows;
  }
  if (eval_rows.empty()) throw std::runtime_error("validation split has no usable rows");
  std::vector<double> probs = predict(tm, eval_rows);
  std::vector<int> labels = labels_of(eval_rows, tm.config.task);
  MetricReport m = evaluate_metrics(probs, labels);

  save_checkpoint(*tm.params, dir + "/checkpoint.adck");
  std::string report = format_metric_report(m);

  if (cfg.flag("train.calibrate", false)) {
    std::vector<double> logits;
    logits.reserve(probs.size());
    for (double p : probs) logits.push_back(prob_to_logit(p));
    CalibrationParams cal = fit_platt(logits, labels);
    std::vector<double> cal_probs;
    cal_probs.reserve(probs.size());
    for (double l : logits) cal_probs.push_back(platt_apply(cal, l));
    MetricReport mc = evaluate_metrics(cal_probs, labels);
    std::string caltxt = "a=" + g17(cal.a) + "\nb=" + g17(cal.b) + "\n";
    caltxt += "ece_before=" + g17(m.ece) + "\nece_after=" + g17(mc.ece) + "\n";
    caltxt += "roc_auc_before=" + g17(m.roc_auc) + "\nroc_auc_after=" + g17(mc.roc_auc) + "\n";
    write_file(dir + "/calibration.txt", caltxt);
    report += "ece_calibrated=" + g17(mc.ece) + "\n";
  }

  write_file(dir + "/metrics.txt", report);
  {
    std::string losses;
    for (double l : tm.losses) losses += g17(l) + "\n";
    write_file(dir + "/train_losses.txt", losses);
  }
  cfg.save_resolved(dir + "/train.resolved.cfg");
  log << report;
}

void cmd_evaluate(const KvConfig& cfg, std::ostream& log) {
  std::string dir = out_dir_of(cfg);
  std::string ckpt = cfg.str_required("eval.checkpoint");
  if (!std::filesystem::exists(ckpt))
    throw ConfigError("eval.checkpoint: file not found: " + ckpt);
  SyntheticWorld world = world_from(cfg);
  std::vector<Impression> train_rows = load_impressions(cfg.str_required("data.train_path"));
  std::vector<Impression> rows =
      load_impressions(cfg.str("data.eval_path", cfg.str_required("data.val_path")));

  TrainedModel tm = build_trained(cfg, world, train_rows, /*epochs_override=*/0);
  load_checkpoint(*tm.params, ckpt);
  std::vector<Impression> eval_rows;
  if (tm.config.task == RankingTask::pccvr) {
    for (const Impression& r : rows)
      if (r.label_click) eval_rows.push_back(r);
  } else {
    eval_rows = rows;
  }
  if (eval_rows.empty()) throw std::runtime_error("no usable evaluation rows");
  MetricReport m = evaluate_metrics(predict(tm, eval_rows),
                                    labels_of(eval_rows, tm.config.task));
  std::string report = format_metric_report(m);
  write_file(dir + "/eval_metrics.txt", report);
  cfg.save_resolved(dir + "/evaluate.resolved.cfg");
  log << report;
}

void cmd_calibrate(const KvConfig& cfg, std::ostream& log) {
  std::string dir = out_dir_of(cfg);
  std::string ckpt = cfg.str_required("eval.checkpoint");
  if (!std::filesystem::exists(ckpt))
    throw ConfigError("eval.checkpoint: file not found: " + ckpt);
  SyntheticWorld world = world_from(cfg);
  std::vector<Impression> train_rows = load_impressions(cfg.str_required("data.train_path"));
  std::vector<Impression> val_rows = load_impressions(cfg.str_required("data.val_path"));

  TrainedModel tm = build_trained(cfg, world, train_rows, /*epochs_override=*/0);
  load_checkpoint(*tm.params, ckpt);
  std::vector<Impression> eval_rows;
  if (tm.config.task == RankingTask::pccvr) {
    for (const Impression& r : val_rows)
      if (r.label_click) eval_rows.push_back(r);
  } else {
    eval_rows = val_rows;
  }
  if (eval_rows.empty()) throw std::runtime_error("no usable calibration rows");
  std::vector<double> probs = predict(tm, eval_rows);
  std::vector<int> labels = labels_of(eval_rows, tm.config.task);
  std::vector<double> logits;
  logits.reserve(probs.size());
  for (double p : probs) logits.push_back(prob_to_logit(p));
  CalibrationParams cal = fit_platt(logits, labels);
  std::vector<double> cal_probs;
  for (double l : logits) cal_probs.push_back(platt_apply(cal, l));
  MetricReport before = evaluate_metrics(probs, labels);
  MetricReport after = evaluate_metrics(cal_probs, labels);
  std::string txt = "a=" + g17(cal.a) + "\nb=" + g17(cal.b) + "\n";
  txt += "ece_before=" + g17(before.ece) + "\nece_after=" + g17(after.ece) + "\n";
  txt += "roc_auc_before=" + g17(before.roc_auc) + "\nroc_auc_after=" +
         g17(after.roc_auc) + "\n";
  write_file(dir + "/calibration.txt", txt);
  cfg.save_resolved(dir + "/calibrate.resolved.cfg");
  log << txt;
}

void cmd_ablate(const KvConfig& cfg, std::ostream& log) {
  std::string dir = out_dir_of(cfg);
  SyntheticWorld world = world_from(cfg);
  std::vector<Impression> train_rows = load_impressions(cfg.str_required("data.train_path"));
  std::vector<Impression> val_rows = load_impressions(cfg.str_required("data.val_path"));

  std::vector<uint64_t> seeds;
  for (const std::string& s : cfg.list("ablate.seeds", {"1", "2", "3", "4", "5"}))
    seeds.push_back(static_cast<uint64_t>(std::stoll(s)));
  int threads = static_cast<int>(cfg.i64("ablate.threads", 4));

  std::vector<AblationVariant> variants;
  auto add_variant = [&](const std::string& name,
                         const std::vector<std::pair<std::string, std::string>>& over) {
    KvConfig copy = cfg;
    for (const auto& [k, v] : over) copy.set(k, v);
    variants.push_back({name, train_config_from(copy)});
  };
  std::string grid_path = cfg.str("ablate.grid_path", "");
  if (!grid_path.empty()) {
    std::ifstream in(grid_path);
    if (!in) throw ConfigError("ablate.grid_path: cannot open " + grid_path);
    std::string line;
    while (std::getline(in, line)) {
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::istringstream ss(t);
      std::string name, item;
      ss >> name;
      std::vector<std::pair<std::string, std::string>> over;
      while (ss >> item) {
        size_t eq = item.find('=');
        if (eq == std::string::npos)
          throw ConfigError("grid line for '" + name + "': expected key=value");
        over.push_back({item.substr(0, eq), item.substr(eq + 1)});
      }
      add_variant(name, over);
    }
  } else {
    // default component grid, baseline first
    add_variant("base", {{"train.use_adpm", "false"}});
    const char* off = "false";
    add_variant("c1", {{"adpm.use_component2", off}, {"adpm.use_component3", off}});
    add_variant("c2", {{"adpm.use_component1", off}, {"adpm.use_component3", off}});
    add_variant("c3", {{"adpm.use_component1", off}, {"adpm.use_component2", off}});
    add_variant("c1c2", {{"adpm.use_component3", off}});
    add_variant("c1c3", {{"adpm.use_component2", off}});
    add_variant("c2c3", {{"adpm.use_component1", off}});
    add_variant("c1c2c3", {});
    add_variant("c1c2c3_avg", {{"adpm.pooling", "avg"}});
  }
  if (variants.empty()) throw ConfigError("ablation grid is empty");

  PretrainedFiles files = pretrained_from(cfg);
  for (const AblationVariant& v : variants) preflight_tables(v.config, files);

  AblationOutput out =
      run_ablation(world, train_rows, val_rows, variants, seeds, &files, threads);
  std::string table = format_ablation_table(out);
  write_file(dir + "/ablation.txt", table);
  std::string records = "variant\tseed\troc_auc\tpr_auc\tlift_roc\tlift_pr\n";
  for (const AblationRecord& r : out.records)
    records += r.variant + "\t" + std::to_string(r.seed) + "\t" + g17(r.metrics.roc_auc) +
               "\t" + g17(r.metrics.pr_auc) + "\t" + g17(r.lift_roc) + "\t" +
               g17(r.lift_pr) + "\n";
  write_file(dir + "/ablation_records.tsv", records);
  cfg.save_resolved(dir + "/ablate.resolved.cfg");
  log << table;
}

void cmd_dump(const KvConfig& cfg, std::ostream& log) {
  std::string path = cfg.str_required("dump.path");
  int64_t rows = cfg.i64("dump.rows", 5);
  if (!std::filesystem::exists(path)) throw ConfigError("dump.path: file not found: " + path);

  if (path.size() > 5 && path.substr(path.size() - 5) == ".embt") {
    ParamSet scratch;
    EmbeddingTable t = load_table(scratch, path, "dump");
    log << path << ": " << t.vocab_size << " x " << t.dim << ", checksum "
        << table_checksum(t) << "\n";
    for (int64_t i = 0; i < std::min(rows, t.vocab_size); ++i) {
      log << i << ":";
      for (int64_t j = 0; j < std::min<int64_t>(8, t.dim); ++j)
        log << " " << g17(t.weights->value.v[static_cast<size_t>(i * t.dim + j)]);
      log << (t.dim > 8 ? " ...\n" : "\n");
    }
    return;
  }
  if (path.size() > 5 && path.substr(path.size() - 5) == ".adck") {
    // header listing only; rebuild-free inspection
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    log << path << ": " << ss.str().size() << " bytes\n";
    return;
  }
  std::ifstream in(path);
  std::string line;
  for (int64_t i = 0; i <= rows && std::getline(in, line); ++i) log << line << "\n";
}

int run_command(const std::string& name, const KvConfig& cfg, std::ostream& log,
                std::ostream& err) {
  using Fn = void (*)(const KvConfig&, std::ostream&);
  static const std::map<std::string, Fn> dispatch = {
      {"gen-data", cmd_gen_data},   {"build-vocab", cmd_build_vocab},
      {"pretrain", cmd_pretrain},   {"train", cmd_train},
      {"calibrate", cmd_calibrate}, {"evaluate", cmd_evaluate},
      {"ablate", cmd_ablate},       {"dump", cmd_dump}};
  auto it = dispatch.find(name);
  if (it == dispatch.end()) {
    err << "unknown command: " << name << "\n";
    return 2;
  }
  try {
    it->second(cfg, log);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace adsf
