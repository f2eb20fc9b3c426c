#include "adsf/training_eval.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "adsf/embeddings.hpp"

namespace adsf {

int64_t context_width(const SyntheticWorld& world) {
  return world.config.attr_dim + 1;
}

std::vector<double> context_features(const SyntheticWorld& world, const Impression& row) {
  int64_t d = world.config.attr_dim;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(d + 1));
  for (int64_t j = 0; j < d; ++j)
    out.push_back(world.listing_attrs.v[static_cast<size_t>(row.candidate * d + j)]);
  size_t total_events = 0;
  for (const auto& [key, seq] : row.sequences) total_events += seq.size();
  out.push_back(std::log1p(static_cast<double>(total_events)) / 3.0);
  return out;
}

EmbeddingTable remap_pretrained(ParamSet& params, const EmbeddingTable& src,
                                const Vocabulary& src_vocab,
                                const Vocabulary& dst_vocab, const std::string& name) {
  EmbeddingTable t;
  t.name = name;
  t.vocab_size = dst_vocab.size();
  t.dim = src.dim;
  t.weights = &params.create(name, {t.vocab_size, t.dim});
  t.weights->trainable = false;
  for (const auto& [id, freq] : dst_vocab.entries()) {
    int64_t di = dst_vocab.index_of(id);
    int64_t si = src_vocab.index_of(id);
    if (si < src_vocab.num_oov()) continue;  // unknown to the source: zero row
    for (int64_t j = 0; j < t.dim; ++j)
      t.weights->value.v[static_cast<size_t>(di * t.dim + j)] =
          src.weights->value.v[static_cast<size_t>(si * t.dim + j)];
  }
  return t;
}

namespace {

struct Corpora {
  std::vector<std::vector<std::string>> listing, shop, taxonomy;
};

Corpora collect_corpora(const std::vector<Impression>& rows) {
  Corpora c;
  for (const Impression& r : rows) {
    std::vector<std::string> l, s, t;
    l.push_back("L" + std::to_string(r.candidate));
    for (const auto& [key, seq] : r.sequences) {
      auto* dst = key.rfind("listing:", 0) == 0   ? &l
                  : key.rfind("shop:", 0) == 0    ? &s
                  : key.rfind("taxonomy:", 0) == 0 ? &t
                                                   : nullptr;
      if (!dst) continue;
      for (const auto& [id, ts] : seq) dst->push_back(id);
    }
    c.listing.push_back(std::move(l));
    c.shop.push_back(std::move(s));
    c.taxonomy.push_back(std::move(t));
  }
  return c;
}

TensorData context_matrix(const SyntheticWorld& world,
                          const std::vector<Impression>& rows) {
  int64_t d = context_width(world);
  TensorData m = TensorData::zeros({static_cast<int64_t>(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i) {
    auto f = context_features(world, rows[i]);
    std::copy(f.begin(), f.end(), m.v.begin() + static_cast<int64_t>(i) * d);
  }
  return m;
}

// Forward for one batch; returns the predicted probability node.
Var batch_forward(Graph& g, TrainedModel& tm, const std::vector<Impression>& rows,
                  bool training, RngStream& drop_rng) {
  Var ctx = g.constant(context_matrix(*tm.world, rows));
  Var wide = ctx;
  if (tm.adpm) {
    ADPMBatch ab = build_adpm_batch(*tm.adpm, rows);
    ADPMOutput out = adpm_forward(g, *tm.adpm, ab, training, drop_rng);
    wide = concat_last({ctx, out.u});
  }
  return ranking_forward(g, tm.model, wide, training);
}

}  // namespace

std::vector<int> labels_of(const std::vector<Impression>& rows, RankingTask task) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (const Impression& r : rows)
    y.push_back(task == RankingTask::ctr ? r.label_click : r.label_purchase);
  return y;
}

TrainedModel train_ranking(const SyntheticWorld& world,
                           const std::vector<Impression>& rows,
                           const TrainConfig& config,
                           const PretrainedFiles* pretrained) {
  RngStream rng(config.seed);
  TrainedModel tm;
  tm.config = config;
  tm.world = &world;
  tm.params = std::make_unique<ParamSet>();

  // task-specific training rows
  std::vector<Impression> train_rows;
  if (config.task == RankingTask::ctr) {
    train_rows = negative_sample(rows, config.sampling, rng.substream("sampling"));
  } else {
    for (const Impression& r : rows)
      if (r.label_click) train_rows.push_back(r);
    if (train_rows.empty())
      throw std::invalid_argument("pccvr training: no clicked rows in dataset");
  }

  int64_t width = context_width(world);
  if (config.use_adpm) {
    ADPMConfig ac = config.adpm;
    ac.validate();
    Corpora c = collect_corpora(train_rows);
    Vocabulary lv = build_vocab(c.listing, config.listing_vocab_k);
    Vocabulary sv = build_vocab(c.shop, config.shop_vocab_k);
    Vocabulary tv = build_vocab(c.taxonomy, config.taxonomy_vocab_k);
    if (ac.use_component2) {
      if (!pretrained)
        throw std::invalid_argument(
            "config error: component two enabled but no pretrained tables supplied");
      tm.own_bundle = std::make_unique<PretrainedBundle>();
      for (const std::string& flavor : ac.flavors) {
        const std::pair<std::string, std::string>* files = nullptr;
        for (const auto& [fl, paths] : pretrained->entries)
          if (fl == flavor) files = &paths;
        if (!files)
          throw std::invalid_argument("config error: flavor '" + flavor +
                                      "' has no pretrained table file");
        ParamSet scratch;
        EmbeddingTable src = load_table(scratch, files->first, flavor + ".src");
        Vocabulary src_vocab = Vocabulary::load(files->second);
        if (src.dim != PretrainedBundle::expected_dim(flavor))
          throw std::invalid_argument("config error: table for flavor '" + flavor +
                                      "' has dim " + std::to_string(src.dim));
        tm.own_bundle->tables.emplace(
            flavor, remap_pretrained(*tm.params, src, src_vocab, lv, "frozen." + flavor));
      }
      tm.own_bundle->validate();
    }
    RngStream init_rng = rng.substream("adpm_init");
    tm.adpm = std::make_unique<ADPM>(make_adpm(*tm.params, ac, std::move(lv),
                                               std::move(sv), std::move(tv),
                                               tm.own_bundle.get(), init_rng));
    width += ac.output_width();
  }

  RankingConfig rc;
  rc.task = config.task;
  rc.input_width = width;
  rc.use_cross = config.use_cross;
  rc.serial_dcn = config.serial_dcn;
  rc.width_divisor = config.width_divisor;
  RngStream model_rng = rng.substream("model_init");
  tm.model = make_ranking_model(*tm.params, rc, model_rng);

  // training loop
  int64_t n = static_cast<int64_t>(train_rows.size());
  int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  int64_t total_steps = steps_per_epoch * config.epochs;
  Adam opt(tm.params->trainable(), AdamConfig{config.lr_max, 0.9, 0.999, 1e-8});
  RngStream shuffle_rng = rng.substream("shuffle");
  RngStream drop_rng = rng.substream("dropout");
  std::vector<size_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<Impression> batch;
      std::vector<double> y;
      for (int64_t k = b * config.batch_size;
           k < std::min(n, (b + 1) * config.batch_size); ++k) {
        const Impression& r = train_rows[order[static_cast<size_t>(k)]];
        if (config.task == RankingTask::pccvr && !r.label_click)
          throw std::logic_error("pccvr loss reached a non-clicked row");
        batch.push_back(r);
        y.push_back(config.task == RankingTask::ctr
                        ? static_cast<double>(r.label_click)
                        : static_cast<double>(r.label_purchase));
      }
      tm.params->zero_grad();
      Graph g;
      Var p = batch_forward(g, tm, batch, /*training=*/true, drop_rng);
      Var loss = bce_mean(p, y);
      g.backward(loss);
      opt.step(cosine_lr(step, total_steps, config.lr_max));
      tm.losses.push_back(loss.val().v[0]);
      ++step;
    }
  }
  return tm;
}

std::vector<double> predict(TrainedModel& tm, const std::vector<Impression>& rows) {
  std::vector<double> probs;
  probs.reserve(rows.size());
  RngStream dummy(0);
  const int64_t chunk = 512;
  for (size_t start = 0; start < rows.size(); start += chunk) {
    std::vector<Impression> batch(
        rows.begin() + static_cast<int64_t>(start),
        rows.begin() + static_cast<int64_t>(std::min(rows.size(), start + chunk)));
    Graph g;
    Var p = batch_forward(g, tm, batch, /*training=*/false, dummy);
    for (double v : p.val().v) probs.push_back(v);
  }
  return probs;
}

AblationOutput run_ablation(const SyntheticWorld& world,
                            const std::vector<Impression>& train_rows,
                            const std::vector<Impression>& val_rows,
                            const std::vector<AblationVariant>& variants,
                            const std::vector<uint64_t>& seeds,
                            const PretrainedFiles* pretrained, int num_threads) {
  if (variants.empty()) throw std::invalid_argument("run_ablation: no variants");
  auto run_one = [&](const AblationVariant& v, uint64_t seed) {
    TrainConfig cfg = v.config;
    cfg.seed = seed;
    TrainedModel tm = train_ranking(world, train_rows, cfg, pretrained);
    std::vector<double> probs = predict(tm, val_rows);
    return evaluate_metrics(probs, labels_of(val_rows, cfg.task));
  };

  // flat grid, evaluated on a bounded pool; record order is fixed up front
  struct Cell {
    size_t vi;
    size_t si;
  };
  std::vector<Cell> grid;
  for (size_t vi = 0; vi < variants.size(); ++vi)
    for (size_t si = 0; si < seeds.size(); ++si) grid.push_back({vi, si});
  std::vector<MetricReport> results(grid.size());
  size_t pool = std::max(1, num_threads);
  for (size_t base = 0; base < grid.size(); base += pool) {
    std::vector<std::future<MetricReport>> futs;
    for (size_t k = base; k < std::min(grid.size(), base + pool); ++k)
      futs.push_back(std::async(std::launch::async, [&, k]() {
        return run_one(variants[grid[k].vi], seeds[grid[k].si]);
      }));
    for (size_t k = base; k < std::min(grid.size(), base + pool); ++k)
      results[k] = futs[k - base].get();
  }

  AblationOutput out;
  // per-seed baseline references come from the first variant
  std::vector<MetricReport> baseline(seeds.size());
  for (size_t si = 0; si < seeds.size(); ++si) baseline[si] = results[si];
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    std::vector<double> lifts_roc, lifts_pr;
    for (size_t si = 0; si < seeds.size(); ++si) {
      const MetricReport& m = results[vi * seeds.size() + si];
      AblationRecord rec;
      rec.variant = variants[vi].name;
      rec.seed = seeds[si];
      rec.metrics = m;
      rec.lift_roc = 100.0 * (m.roc_auc - baseline[si].roc_auc) / baseline[si].roc_auc;
      rec.lift_pr = 100.0 * (m.pr_auc - baseline[si].pr_auc) / baseline[si].pr_auc;
      lifts_roc.push_back(rec.lift_roc);
      lifts_pr.push_back(rec.lift_pr);
      out.records.push_back(rec);
    }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    AblationSummary s;
    s.variant = variants[vi].name;
    s.median_lift_roc = median(lifts_roc);
    s.median_lift_pr = median(lifts_pr);
    s.min_lift_roc = *std::min_element(lifts_roc.begin(), lifts_roc.end());
    s.max_lift_roc = *std::max_element(lifts_roc.begin(), lifts_roc.end());
    out.summary.push_back(s);
  }
  return out;
}

std::string format_ablation_table(const AblationOutput& out) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "variant" << std::right << std::setw(14)
     << "roc_lift_med%" << std::setw(14) << "pr_lift_med%" << std::setw(12)
     << "roc_min%" << std::setw(12) << "roc_max%" << "\n";
  os << std::fixed << std::setprecision(3);
  for (const AblationSummary& s : out.summary)
    os << std::left << std::setw(22) << s.variant << std::right << std::setw(14)
       << s.median_lift_roc << std::setw(14) << s.median_lift_pr << std::setw(12)
       << s.min_lift_roc << std::setw(12) << s.max_lift_roc << "\n";
  return os.str();
}

}  // namespace adsf
