#include "adsf/training_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace adsf {

Adam::Adam(std::vector<Param*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (Param* p : params_) {
    m_.emplace_back(p->value.v.size(), 0.0);
    v_.emplace_back(p->value.v.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param* p = params_[pi];
    if (!p->trainable) continue;
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < p->value.v.size(); ++i) {
      double g = p->grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p->value.v[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

double cosine_lr(int64_t step, int64_t total, double lr_max) {
  if (step < 0 || step > total)
    throw std::invalid_argument("cosine_lr: step out of [0, total]");
  return 0.5 * lr_max *
         (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                         static_cast<double>(total)));
}

SamplingMode sampling_mode_from(const std::string& name) {
  if (name == "none") return SamplingMode::none;
  if (name == "balanced_50_50") return SamplingMode::balanced_50_50;
  if (name == "keep_half_negatives") return SamplingMode::keep_half_negatives;
  throw std::invalid_argument("unknown sampling mode: " + name);
}

const char* sampling_mode_name(SamplingMode m) {
  switch (m) {
    case SamplingMode::none: return "none";
    case SamplingMode::balanced_50_50: return "balanced_50_50";
    case SamplingMode::keep_half_negatives: return "keep_half_negatives";
  }
  return "?";
}

std::vector<Impression> negative_sample(const std::vector<Impression>& rows,
                                        SamplingMode mode, RngStream rng) {
  if (mode == SamplingMode::none) return rows;
  std::vector<Impression> out;
  if (mode == SamplingMode::keep_half_negatives) {
    for (const Impression& r : rows) {
      if (r.label_click || rng.bernoulli(0.5)) out.push_back(r);
    }
    return out;
  }
  // balanced_50_50: downsample negatives to the positive count
  std::vector<size_t> neg_idx;
  int64_t n_pos = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].label_click) ++n_pos;
    else neg_idx.push_back(i);
  }
  if (n_pos == 0)
    throw std::invalid_argument("negative_sample: no positives for balanced mode");
  // Fisher-Yates over the negative index list
  for (size_t i = neg_idx.size(); i > 1; --i)
    std::swap(neg_idx[i - 1], neg_idx[rng.uniform_int(i)]);
  size_t keep = std::min<size_t>(neg_idx.size(), static_cast<size_t>(n_pos));
  neg_idx.resize(keep);
  std::sort(neg_idx.begin(), neg_idx.end());
  size_t ni = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].label_click) out.push_back(rows[i]);
    else if (ni < neg_idx.size() && neg_idx[ni] == i) {
      out.push_back(rows[i]);
      ++ni;
    }
  }
  return out;
}

namespace {

void check_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("metrics: scores/labels size mismatch");
  if (scores.empty()) throw std::invalid_argument("metrics: empty input");
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels);
  int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("roc_auc: undefined, only one class present");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // midranks over tie groups; rank sum of positives
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]]) rank_sum_pos += midrank;
    i = j + 1;
  }
  double np = static_cast<double>(n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) /
         (np * static_cast<double>(n_neg));
}

double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels);
  int64_t n_pos = 0;
  for (int y : labels) n_pos += y;
  if (n_pos == 0)
    throw std::invalid_argument("pr_auc: undefined, no positives present");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  double ap = 0.0;
  int64_t hits = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

double ece(const std::vector<double>& probs, const std::vector<int>& labels,
           int num_bins) {
  check_binary(probs, labels);
  std::vector<double> conf(static_cast<size_t>(num_bins), 0.0);
  std::vector<double> acc(static_cast<size_t>(num_bins), 0.0);
  std::vector<int64_t> count(static_cast<size_t>(num_bins), 0);
  for (size_t i = 0; i < probs.size(); ++i) {
    int b = std::min(num_bins - 1,
                     static_cast<int>(probs[i] * static_cast<double>(num_bins)));
    b = std::max(0, b);
    conf[static_cast<size_t>(b)] += probs[i];
    acc[static_cast<size_t>(b)] += labels[i];
    ++count[static_cast<size_t>(b)];
  }
  double e = 0.0;
  double n = static_cast<double>(probs.size());
  for (int b = 0; b < num_bins; ++b) {
    if (count[static_cast<size_t>(b)] == 0) continue;
    double c = static_cast<double>(count[static_cast<size_t>(b)]);
    e += (c / n) * std::abs(acc[static_cast<size_t>(b)] / c - conf[static_cast<size_t>(b)] / c);
  }
  return e;
}

namespace {

double bce_of(const std::vector<double>& probs, const std::vector<int>& labels) {
  double s = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    double p = std::min(std::max(probs[i], 1e-7), 1.0 - 1e-7);
    s -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return s / static_cast<double>(probs.size());
}

}  // namespace

double nce(const std::vector<double>& probs, const std::vector<int>& labels) {
  check_binary(probs, labels);
  double base = 0.0;
  for (int y : labels) base += y;
  base /= static_cast<double>(labels.size());
  std::vector<double> base_probs(labels.size(), base);
  return bce_of(probs, labels) / bce_of(base_probs, labels);
}

MetricReport evaluate_metrics(const std::vector<double>& probs,
                              const std::vector<int>& labels) {
  MetricReport r;
  for (int y : labels) (y ? r.n_pos : r.n_neg)++;
  r.roc_auc = roc_auc(probs, labels);
  r.pr_auc = pr_auc(probs, labels);
  r.ece = ece(probs, labels);
  r.nce = nce(probs, labels);
  return r;
}

CalibrationParams fit_platt(const std::vector<double>& logits,
                            const std::vector<int>& labels, int max_iter,
                            double tol) {
  check_binary(logits, labels);
  auto nll = [&](double a, double b) {
    double total = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
      double z = a * logits[i] + b;
      // log(1 + e^z) - y z, computed stably
      total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) -
               static_cast<double>(labels[i]) * z;
    }
    return total;
  };
  double a = 1.0, b = 0.0;
  double gnorm = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
      double f = logits[i];
      double p = 1.0 / (1.0 + std::exp(-(a * f + b)));
      double r = p - static_cast<double>(labels[i]);
      double w = p * (1.0 - p);
      ga += r * f;
      gb += r;
      haa += w * f * f;
      hab += w * f;
      hbb += w;
    }
    gnorm = std::sqrt(ga * ga + gb * gb);
    if (gnorm < tol * static_cast<double>(logits.size())) return {a, b};
    double det = haa * hbb - hab * hab;
    if (std::abs(det) < 1e-18)
      throw std::runtime_error("fit_platt: singular Hessian, det=" + std::to_string(det));
    double da = (hbb * ga - hab * gb) / det;
    double db = (haa * gb - hab * ga) / det;
    // a full Newton step can overshoot far from the optimum; backtrack until
    // the likelihood improves
    double base = nll(a, b), step = 1.0;
    while (step > 1e-12 && !(nll(a - step * da, b - step * db) < base)) step *= 0.5;
    if (step <= 1e-12) return {a, b};  // no direction improves: numerical optimum
    a -= step * da;
    b -= step * db;
  }
  throw std::runtime_error("fit_platt: no convergence after " +
                           std::to_string(max_iter) +
                           " iterations, gradient norm " + std::to_string(gnorm));
}

double platt_apply(const CalibrationParams& c, double logit) {
  return 1.0 / (1.0 + std::exp(-(c.a * logit + c.b)));
}

double prob_to_logit(double p) {
  double pc = std::min(std::max(p, 1e-15), 1.0 - 1e-15);
  return std::log(pc / (1.0 - pc));
}

}  // namespace adsf
