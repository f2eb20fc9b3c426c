#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adsf/adsformer.hpp"
#include "adsf/training_eval.hpp"

using namespace adsf;

namespace {

Vocabulary vocab_of(std::vector<std::string> ids) {
  std::vector<std::vector<std::string>> corpus;
  for (auto& id : ids) corpus.push_back({id});
  return build_vocab(corpus, static_cast<int64_t>(ids.size()));
}

// plain-loop attention used as an oracle against the graph implementation
std::vector<double> attention_oracle(const AdsformerBlockParams& p,
                                     const std::vector<double>& x, int64_t bsz,
                                     int64_t L, const std::vector<uint8_t>& mask) {
  int64_t d = p.d1, dh = p.head_dim, H = p.num_heads;
  int64_t dq = H * dh;
  auto proj = [&](const Param* w, int64_t b, int64_t i, int64_t o) {
    double s = 0;
    for (int64_t k = 0; k < d; ++k)
      s += x[static_cast<size_t>((b * L + i) * d + k)] *
           w->value.v[static_cast<size_t>(k * dq + o)];
    return s;
  };
  std::vector<double> concat(static_cast<size_t>(bsz * L * dq), 0.0);
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t i = 0; i < L; ++i) {
        std::vector<double> logits(static_cast<size_t>(L));
        for (int64_t j = 0; j < L; ++j) {
          double s = 0;
          for (int64_t k = 0; k < dh; ++k)
            s += proj(p.wq, b, i, h * dh + k) * proj(p.wk, b, j, h * dh + k);
          s /= std::sqrt(static_cast<double>(dh));
          if (!mask[static_cast<size_t>(b * L + j)]) s -= 1e9;
          logits[static_cast<size_t>(j)] = s;
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (double& v : logits) {
          v = std::exp(v - mx);
          z += v;
        }
        for (int64_t k = 0; k < dh; ++k) {
          double s = 0;
          for (int64_t j = 0; j < L; ++j)
            s += logits[static_cast<size_t>(j)] / z * proj(p.wv, b, j, h * dh + k);
          concat[static_cast<size_t>((b * L + i) * dq + h * dh + k)] = s;
        }
      }
  std::vector<double> out(static_cast<size_t>(bsz * L * d), 0.0);
  for (int64_t r = 0; r < bsz * L; ++r)
    for (int64_t o = 0; o < d; ++o) {
      double s = 0;
      for (int64_t k = 0; k < dq; ++k)
        s += concat[static_cast<size_t>(r * dq + k)] *
             p.wh->value.v[static_cast<size_t>(k * d + o)];
      out[static_cast<size_t>(r * d + o)] = s;
    }
  return out;
}

}  // namespace

TEST_CASE("multi-head attention matches a loop oracle") {
  for (int64_t heads : {1, 2, 3}) {
    ParamSet ps;
    RngStream rng(40 + heads);
    AdsformerBlockParams p = make_adsformer_block(ps, "blk", 9, 6, heads, 4, 0.0, rng);
    int64_t bsz = 2, L = 5;
    std::vector<double> xv(static_cast<size_t>(bsz * L * 6));
    for (double& v : xv) v = rng.normal();
    std::vector<uint8_t> mask = {1, 1, 1, 0, 0, 1, 1, 1, 1, 1};

    Graph g;
    Var x = g.constant(TensorData({bsz, L, 6}, xv));
    const TensorData& got = mhsa(g, x, mask, p).val();
    std::vector<double> want = attention_oracle(p, xv, bsz, L, mask);
    REQUIRE(got.v.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(got.v[i] == doctest::Approx(want[i]).epsilon(1e-9));
  }
}

TEST_CASE("attention rows over fully masked keys still normalize") {
  ParamSet ps;
  RngStream rng(3);
  AdsformerBlockParams p = make_adsformer_block(ps, "blk", 5, 4, 2, 3, 0.0, rng);
  std::vector<double> xv(1 * 2 * 4, 0.5);
  Graph g;
  Var x = g.constant(TensorData({1, 2, 4}, xv));
  // first key masked: output must be finite everywhere
  const TensorData& y = mhsa(g, x, {0, 1}, p).val();
  for (double v : y.v) CHECK(std::isfinite(v));
}

TEST_CASE("block output ignores padding entirely") {
  ParamSet ps;
  RngStream rng(8);
  AdsformerBlockParams p = make_adsformer_block(ps, "blk", 20, 8, 2, 6, 0.0, rng);
  Vocabulary v = vocab_of({"a", "b", "c", "d", "e"});

  RngStream drop(0);
  PaddedBatch small = pad_and_mask({{"a", "c", "b"}}, v, 6);
  Graph g1;
  const TensorData& y1 =
      adsformer_block(g1, {v.index_of("e")}, small, p, PoolingMode::max, false, drop).val();

  // identical content, different pad tail garbage in the index array
  PaddedBatch tweaked = small;
  tweaked.indices[4] = 3;
  tweaked.indices[5] = 1;
  Graph g2;
  const TensorData& y2 =
      adsformer_block(g2, {v.index_of("e")}, tweaked, p, PoolingMode::max, false, drop).val();
  for (size_t i = 0; i < y1.v.size(); ++i)
    CHECK(std::abs(y1.v[i] - y2.v[i]) < 1e-9);
}

TEST_CASE("target exclusion flag changes the pooled value") {
  ParamSet ps;
  RngStream rng(21);
  AdsformerBlockParams p = make_adsformer_block(ps, "blk", 10, 8, 2, 4, 0.0, rng);
  Vocabulary v = vocab_of({"a", "b"});
  PaddedBatch b = pad_and_mask({{"a", "b"}}, v, 4);
  RngStream drop(0);
  Graph g1, g2;
  const TensorData& with_t =
      adsformer_block(g1, {1}, b, p, PoolingMode::avg, false, drop, true).val();
  const TensorData& without_t =
      adsformer_block(g2, {1}, b, p, PoolingMode::avg, false, drop, false).val();
  bool any_diff = false;
  for (size_t i = 0; i < with_t.v.size(); ++i)
    any_diff |= std::abs(with_t.v[i] - without_t.v[i]) > 1e-12;
  CHECK(any_diff);
}

TEST_CASE("module output widths match the published configurations") {
  ADPMConfig ctr = ADPMConfig::ctr_default(12);
  CHECK(ctr.output_width() == 456);  // 32 + 256 + 3*(32+16+8)

  ADPMConfig pccvr = ADPMConfig::pccvr_default(12);
  CHECK(pccvr.output_width() == 520);  // 32 + (64+256) + 168
  CHECK(pccvr.num_heads == 2);

  ADPMConfig solo = ctr;
  solo.use_component2 = false;
  solo.use_component3 = false;
  CHECK(solo.output_width() == 32);
}

TEST_CASE("forward pass produces the configured width and order") {
  WorldConfig wc;
  wc.num_users = 30;
  wc.num_listings = 80;
  wc.seed = 5;
  SyntheticWorld world = generate_world(wc);
  ImpressionConfig ic;
  ic.num_impressions = 64;
  std::vector<Impression> rows = generate_impressions(world, ic, RngStream(5));

  std::vector<std::vector<std::string>> lc, sc, tc;
  for (const Impression& r : rows) {
    lc.push_back({"L" + std::to_string(r.candidate)});
    for (const auto& [key, seq] : r.sequences)
      for (const auto& [id, ts] : seq) {
        if (key.rfind("listing:", 0) == 0) lc.back().push_back(id);
        if (key.rfind("shop:", 0) == 0) sc.push_back({id});
        if (key.rfind("taxonomy:", 0) == 0) tc.push_back({id});
      }
  }
  Vocabulary lv = build_vocab(lc, 80), sv = build_vocab(sc, 40), tv = build_vocab(tc, 12);

  ParamSet ps;
  RngStream rng(5);
  PretrainedBundle bundle;
  Param& airw = ps.create_init("air", {lv.size(), 256}, rng, 0.1);
  airw.trainable = false;
  bundle.tables.emplace("air", EmbeddingTable{"air", lv.size(), 256, &airw});

  ADPMConfig cfg = ADPMConfig::ctr_default(12);
  ADPM adpm = make_adpm(ps, cfg, lv, sv, tv, &bundle, rng);

  ADPMBatch batch = build_adpm_batch(adpm, rows);
  CHECK(batch.listing_union.max_len == 36);  // three action types x max_len

  RngStream drop(0);
  Graph g;
  ADPMOutput out = adpm_forward(g, adpm, batch, false, drop);
  CHECK(out.u.val().shape == std::vector<int64_t>{64, 456});
  CHECK(out.o1->val().shape == std::vector<int64_t>{64, 32});
  CHECK(out.o2->val().shape == std::vector<int64_t>{64, 256});
  CHECK(out.o3->val().shape == std::vector<int64_t>{64, 168});

  // concat order is o1, o2, o3
  const TensorData& u = out.u.val();
  const TensorData& o1 = out.o1->val();
  for (int64_t j = 0; j < 32; ++j)
    CHECK(u.v[static_cast<size_t>(j)] == o1.v[static_cast<size_t>(j)]);
}

TEST_CASE("encoder trains end to end inside the ranking stack") {
  WorldConfig wc;
  wc.num_users = 25;
  wc.num_listings = 60;
  wc.seed = 30;
  SyntheticWorld world = generate_world(wc);
  ImpressionConfig ic;
  ic.num_impressions = 400;
  ic.target_click_rate = 0.2;
  std::vector<Impression> rows = generate_impressions(world, ic, RngStream(30));

  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 64;
  tc.seed = 30;
  tc.listing_vocab_k = 60;
  tc.shop_vocab_k = 30;
  tc.taxonomy_vocab_k = 12;
  tc.adpm = ADPMConfig::ctr_default(12);
  tc.adpm.use_component2 = false;  // train without frozen tables first
  TrainedModel tm = train_ranking(world, rows, tc, nullptr);
  REQUIRE(tm.params->find("adpm.encoder.wq") != nullptr);
  CHECK(tm.losses.size() > 0);
  std::vector<double> probs = predict(tm, rows);
  for (double p : probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("misconfigured modules are rejected") {
  ADPMConfig c = ADPMConfig::ctr_default(12);
  c.use_component1 = c.use_component2 = c.use_component3 = false;
  CHECK_THROWS(c.validate());

  ADPMConfig h = ADPMConfig::ctr_default(12);
  h.num_heads = 64;  // exceeds d1
  CHECK_THROWS(h.validate());

  ADPMConfig f = ADPMConfig::ctr_default(12);
  f.flavors = {"word2vec2000"};
  CHECK_THROWS(f.validate());

  // component two without a bundle
  ParamSet ps;
  RngStream rng(1);
  Vocabulary v = vocab_of({"a"});
  CHECK_THROWS(make_adpm(ps, ADPMConfig::ctr_default(12), v, v, v, nullptr, rng));
}
