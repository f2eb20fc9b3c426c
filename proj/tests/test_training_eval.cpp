#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "adsf/rng.hpp"
#include "adsf/tensor.hpp"
#include "adsf/training_eval.hpp"
#include "doctest.h"

using namespace adsf;

namespace {

// Quadratic-time rank statistic used as an independent check on the
// sort-based implementation.
double auc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      ++pairs;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  return num / double(pairs);
}

// Average precision straight from the definition: walk scores best first,
// ties kept in original order, sum precision at each positive.
double ap_brute(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return s[a] > s[b]; });
  double sum = 0.0;
  int64_t hits = 0, total = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (y[order[k]]) {
      ++hits;
      sum += double(hits) / double(k + 1);
    }
  }
  for (int v : y) total += v;
  return sum / double(total);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 0.002) == doctest::Approx(0.002).epsilon(1e-12));
  CHECK(cosine_lr(100, 100, 0.002) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 0.002) == doctest::Approx(0.001).epsilon(1e-12));
  // monotone decreasing over the horizon
  double prev = cosine_lr(0, 17, 1.0);
  for (int64_t t = 1; t <= 17; ++t) {
    double cur = cosine_lr(t, 17, 1.0);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("adam first step moves each parameter by about lr against the gradient") {
  // With bias correction, step 1 is exactly -lr * sign(g) when g is constant,
  // up to the eps term.
  Param p("p", TensorData({3}, {1.0, 2.0, 3.0}));
  p.grad = {0.4, -0.003, 0.0};
  std::vector<double> before = p.value.v;
  Adam opt({&p}, AdamConfig{});
  opt.step(0.01);
  CHECK(p.value.v[0] == doctest::Approx(before[0] - 0.01).epsilon(1e-4));
  CHECK(p.value.v[1] == doctest::Approx(before[1] + 0.01).epsilon(1e-4));
  CHECK(p.value.v[2] == doctest::Approx(before[2]).epsilon(1e-12));
  CHECK(opt.t() == 1);
}

TEST_CASE("adam converges on a simple quadratic") {
  Param p("p", TensorData({2}, {5.0, -3.0}));
  Adam opt({&p}, AdamConfig{});
  for (int t = 0; t < 4000; ++t) {
    p.grad = {2.0 * p.value.v[0], 2.0 * p.value.v[1]};
    opt.step(0.05);
  }
  CHECK(std::fabs(p.value.v[0]) < 1e-3);
  CHECK(std::fabs(p.value.v[1]) < 1e-3);
}

TEST_CASE("negative sampling balances classes and keeps positives") {
  std::vector<Impression> rows(100);
  for (int i = 0; i < 100; ++i) {
    rows[i].user = i;
    rows[i].label_click = (i % 10 == 0) ? 1 : 0;  // 10 positives
  }
  auto out = negative_sample(rows, SamplingMode::balanced_50_50, RngStream(7));
  int64_t pos = 0, neg = 0;
  for (auto& r : out) (r.label_click ? pos : neg)++;
  CHECK(pos == 10);
  CHECK(neg == 10);
  // every positive survives
  std::vector<int64_t> pos_users;
  for (auto& r : out)
    if (r.label_click) pos_users.push_back(r.user);
  std::sort(pos_users.begin(), pos_users.end());
  for (size_t i = 0; i < pos_users.size(); ++i) CHECK(pos_users[i] == int64_t(i * 10));

  auto again = negative_sample(rows, SamplingMode::balanced_50_50, RngStream(7));
  REQUIRE(again.size() == out.size());
  for (size_t i = 0; i < out.size(); ++i) CHECK(again[i].user == out[i].user);

  auto half = negative_sample(rows, SamplingMode::keep_half_negatives, RngStream(7));
  // each negative flips a fair coin; 90 trials stay well inside 5 sigma
  int64_t hneg = 0;
  for (auto& r : half)
    if (!r.label_click) ++hneg;
  CHECK(hneg > 20);
  CHECK(hneg < 70);

  auto none = negative_sample(rows, SamplingMode::none, RngStream(7));
  CHECK(none.size() == rows.size());
}

TEST_CASE("negative sampling refuses an all-negative set") {
  std::vector<Impression> rows(5);
  CHECK_THROWS(negative_sample(rows, SamplingMode::balanced_50_50, RngStream(1)));
}

TEST_CASE("roc auc equals the quadratic pairwise statistic") {
  RngStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 30 + trial * 7;
    std::vector<double> s(n);
    std::vector<int> y(n);
    bool haspos = false, hasneg = false;
    for (int i = 0; i < n; ++i) {
      // coarse grid forces plenty of ties
      s[i] = std::floor(rng.uniform() * 8.0) / 8.0;
      y[i] = rng.uniform() < 0.3 ? 1 : 0;
      (y[i] ? haspos : hasneg) = true;
    }
    if (!haspos) y[0] = 1;
    if (!hasneg) y[1] = 0;
    CHECK(roc_auc(s, y) == auc_pairwise(s, y));
  }
  // hand case: perfect, inverted, all tied
  CHECK(roc_auc({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(roc_auc({0.1, 0.9}, {1, 0}) == 0.0);
  CHECK(roc_auc({0.5, 0.5, 0.5}, {1, 0, 1}) == 0.5);
  CHECK_THROWS(roc_auc({0.5, 0.6}, {1, 1}));
}

TEST_CASE("pr auc equals brute-force average precision") {
  RngStream rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 25 + trial * 5;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform() * 6.0) / 6.0;
      y[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    y[0] = 1;
    CHECK(pr_auc(s, y) == doctest::Approx(ap_brute(s, y)).epsilon(1e-12));
  }
  // single positive ranked first
  CHECK(pr_auc({0.9, 0.2, 0.1}, {1, 0, 0}) == doctest::Approx(1.0));
  // single positive ranked last of three
  CHECK(pr_auc({0.1, 0.5, 0.9}, {1, 0, 0}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("expected calibration error matches a hand computation") {
  // two bins: probs {0.1,0.1} with rate 0 -> |0.1-0| ; probs {0.9,0.9}
  // with rate 0.5 -> |0.9-0.5|; equally weighted
  std::vector<double> p = {0.1, 0.1, 0.9, 0.9};
  std::vector<int> y = {0, 0, 1, 0};
  CHECK(ece(p, y, 2) == doctest::Approx(0.5 * 0.1 + 0.5 * 0.4).epsilon(1e-12));
  // perfectly calibrated constant predictor
  std::vector<double> q(1000, 0.3);
  std::vector<int> yy(1000, 0);
  for (int i = 0; i < 300; ++i) yy[i] = 1;
  CHECK(ece(q, yy, 10) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("normalized cross entropy is one for the base-rate predictor") {
  std::vector<int> y(200, 0);
  for (int i = 0; i < 60; ++i) y[i] = 1;
  std::vector<double> p(200, 0.3);
  CHECK(nce(p, y) == doctest::Approx(1.0).epsilon(1e-12));
  // a better-than-base predictor scores below one
  std::vector<double> good(200);
  for (int i = 0; i < 200; ++i) good[i] = y[i] ? 0.7 : 0.15;
  CHECK(nce(good, y) < 1.0);
}

TEST_CASE("platt fit recovers a known affine distortion of the logits") {
  RngStream rng(21);
  int n = 40000;
  std::vector<double> logits(n);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    double z = rng.normal() * 1.5;
    logits[i] = z;
    // true probability uses a scaled and shifted logit
    double ptrue = sigmoid(1.8 * z - 0.6);
    labels[i] = rng.uniform() < ptrue ? 1 : 0;
  }
  CalibrationParams c = fit_platt(logits, labels);
  CHECK(c.a == doctest::Approx(1.8).epsilon(0.05));
  CHECK(c.b == doctest::Approx(-0.6).epsilon(0.12));

  // already-calibrated data comes back near identity
  std::vector<int> id_labels(n);
  for (int i = 0; i < n; ++i) id_labels[i] = rng.uniform() < sigmoid(logits[i]) ? 1 : 0;
  CalibrationParams ci = fit_platt(logits, id_labels);
  CHECK(ci.a == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::fabs(ci.b) < 0.05);
}

TEST_CASE("platt apply and logit transform round trip") {
  CalibrationParams c{1.0, 0.0};
  for (double p : {0.01, 0.25, 0.5, 0.77, 0.99}) {
    CHECK(platt_apply(c, prob_to_logit(p)) == doctest::Approx(p).epsilon(1e-10));
  }
  CalibrationParams c2{2.0, 1.0};
  CHECK(platt_apply(c2, 0.5) == doctest::Approx(sigmoid(2.0)).epsilon(1e-12));
}

TEST_CASE("metric report carries the class counts") {
  std::vector<double> p = {0.8, 0.2, 0.7, 0.1, 0.6};
  std::vector<int> y = {1, 0, 1, 0, 0};
  MetricReport r = evaluate_metrics(p, y);
  CHECK(r.n_pos == 2);
  CHECK(r.n_neg == 3);
  CHECK(r.roc_auc == auc_pairwise(p, y));
  CHECK(r.pr_auc == doctest::Approx(ap_brute(p, y)).epsilon(1e-12));
}

TEST_CASE("trainer loss trace length matches the step budget") {
  WorldConfig wc;
  wc.num_listings = 120;
  wc.num_shops = 20;
  wc.num_taxonomies = 8;
  wc.num_users = 40;
  SyntheticWorld world = generate_world(wc);
  ImpressionConfig ic;
  ic.num_impressions = 400;
  ic.target_click_rate = 0.25;
  auto rows = generate_impressions(world, ic, RngStream(3));

  TrainConfig tc;
  tc.use_adpm = false;
  tc.epochs = 2;
  tc.batch_size = 32;
  tc.sampling = SamplingMode::none;
  TrainedModel tm = train_ranking(world, rows, tc, nullptr);
  int64_t per_epoch = (int64_t(rows.size()) + tc.batch_size - 1) / tc.batch_size;
  CHECK(int64_t(tm.losses.size()) == per_epoch * tc.epochs);
  for (double l : tm.losses) CHECK(std::isfinite(l));

  auto probs = predict(tm, rows);
  REQUIRE(probs.size() == rows.size());
  for (double p : probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}
