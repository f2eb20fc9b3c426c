#pragma once

#include <memory>
#include <string>
#include <vector>

#include "adsf/adsformer.hpp"
#include "adsf/ranking.hpp"
#include "adsf/sequences.hpp"
#include "adsf/tensor.hpp"

namespace adsf {

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr_max = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list; moment slots are allocated
// in parameter order, keeping updates deterministic.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig config);
  void step(double lr);
  int64_t t() const { return t_; }

 private:
  std::vector<Param*> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// lr = 0.5 * lr_max * (1 + cos(pi * t / T))
double cosine_lr(int64_t step, int64_t total, double lr_max);

// ---- sampling ---------------------------------------------------------------

enum class SamplingMode { none, balanced_50_50, keep_half_negatives };

SamplingMode sampling_mode_from(const std::string& name);
const char* sampling_mode_name(SamplingMode m);

std::vector<Impression> negative_sample(const std::vector<Impression>& rows,
                                        SamplingMode mode, RngStream rng);

// ---- metrics ----------------------------------------------------------------

// Rank statistic: P(score_pos > score_neg) + 0.5 P(tie). Throws if a class
// is missing.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision (not interpolated); ties broken by original index.
double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels);

double ece(const std::vector<double>& probs, const std::vector<int>& labels,
           int num_bins = 10);
double nce(const std::vector<double>& probs, const std::vector<int>& labels);

struct MetricReport {
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  double ece = 0.0;
  double nce = 0.0;
  int64_t n_pos = 0;
  int64_t n_neg = 0;
};

MetricReport evaluate_metrics(const std::vector<double>& probs,
                              const std::vector<int>& labels);

// ---- calibration ------------------------------------------------------------

struct CalibrationParams {
  double a = 1.0;
  double b = 0.0;
};

// Maximum-likelihood logistic fit p = sigmoid(a*f + b) by Newton iteration.
CalibrationParams fit_platt(const std::vector<double>& logits,
                            const std::vector<int>& labels, int max_iter = 100,
                            double tol = 1e-8);

double platt_apply(const CalibrationParams& c, double logit);
double prob_to_logit(double p);

// ---- trainer ----------------------------------------------------------------

struct TrainConfig {
  RankingTask task = RankingTask::ctr;
  bool use_adpm = true;
  ADPMConfig adpm;
  bool use_cross = true;
  bool serial_dcn = false;
  double lr_max = 0.002;
  int64_t epochs = 1;
  int64_t batch_size = 256;
  SamplingMode sampling = SamplingMode::balanced_50_50;
  int64_t listing_vocab_k = 750;
  int64_t shop_vocab_k = 200;
  int64_t taxonomy_vocab_k = 50;
  double width_divisor = 50.0;
  uint64_t seed = 1;
};

// A trained ranker plus everything needed to score new impressions.
struct TrainedModel {
  TrainConfig config;
  std::unique_ptr<ParamSet> params;
  RankingModel model;
  std::unique_ptr<ADPM> adpm;                      // null for the baseline
  std::unique_ptr<PretrainedBundle> own_bundle;    // re-indexed frozen tables
  const SyntheticWorld* world = nullptr;
  std::vector<double> losses;  // per-step training losses
};

// Context features visible to every model (candidate attributes plus a few
// normalized scalars); the planted sequence signal is NOT in here.
std::vector<double> context_features(const SyntheticWorld& world, const Impression& row);
int64_t context_width(const SyntheticWorld& world);

// Frozen flavor tables in EMBT files come with their own vocabulary; remap
// rows onto the downstream listing vocabulary (missing ids become zero rows).
EmbeddingTable remap_pretrained(ParamSet& params, const EmbeddingTable& src,
                                const Vocabulary& src_vocab,
                                const Vocabulary& dst_vocab, const std::string& name);

struct PretrainedFiles {
  // flavor -> (table path, vocab path)
  std::vector<std::pair<std::string, std::pair<std::string, std::string>>> entries;
};

TrainedModel train_ranking(const SyntheticWorld& world,
                           const std::vector<Impression>& rows,
                           const TrainConfig& config,
                           const PretrainedFiles* pretrained);

std::vector<double> predict(TrainedModel& tm, const std::vector<Impression>& rows);

std::vector<int> labels_of(const std::vector<Impression>& rows, RankingTask task);

// ---- ablation harness -------------------------------------------------------

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

struct AblationRecord {
  std::string variant;
  uint64_t seed = 0;
  MetricReport metrics;
  double lift_roc = 0.0;  // percent vs same-seed baseline
  double lift_pr = 0.0;
};

struct AblationSummary {
  std::string variant;
  double median_lift_roc = 0.0;
  double median_lift_pr = 0.0;
  double min_lift_roc = 0.0;
  double max_lift_roc = 0.0;
};

struct AblationOutput {
  std::vector<AblationRecord> records;    // variant-major, seed-minor order
  std::vector<AblationSummary> summary;   // variant order as given
};

// Trains every variant x seed (the first variant must be the baseline),
// evaluating on the validation rows. Grid points run on a thread pool;
// each run is independently seeded so results do not depend on scheduling.
AblationOutput run_ablation(const SyntheticWorld& world,
                            const std::vector<Impression>& train_rows,
                            const std::vector<Impression>& val_rows,
                            const std::vector<AblationVariant>& variants,
                            const std::vector<uint64_t>& seeds,
                            const PretrainedFiles* pretrained, int num_threads = 4);

std::string format_ablation_table(const AblationOutput& out);

}  // namespace adsf
