#include "adsf/adsformer.hpp"

#include <cmath>
#include <stdexcept>

namespace adsf {

AdsformerBlockParams make_adsformer_block(ParamSet& params, const std::string& prefix,
                                          int64_t vocab_size, int64_t d1,
                                          int64_t num_heads, int64_t max_len,
                                          double dropout_rate, RngStream& rng) {
  if (num_heads < 1 || num_heads > d1)
    throw std::invalid_argument("adsformer block: num_heads must lie in [1, d1]");
  AdsformerBlockParams p;
  p.d1 = d1;
  p.num_heads = num_heads;
  p.head_dim = d1 / num_heads;  // projection width per head; wh maps back to d1
  p.max_len = max_len;
  p.dropout_rate = dropout_rate;
  int64_t dq = num_heads * p.head_dim;
  double ws = 1.0 / std::sqrt(static_cast<double>(d1));
  p.listing_table = make_table(params, prefix + ".embed", vocab_size, d1, true, rng);
  p.position = &params.create_init(prefix + ".position", {max_len + 1, d1}, rng, 0.02);
  p.wq = &params.create_init(prefix + ".wq", {d1, dq}, rng, ws);
  p.wk = &params.create_init(prefix + ".wk", {d1, dq}, rng, ws);
  p.wv = &params.create_init(prefix + ".wv", {d1, dq}, rng, ws);
  p.wh = &params.create_init(prefix + ".wh", {dq, d1}, rng,
                             1.0 / std::sqrt(static_cast<double>(dq)));
  int64_t d_ffn = 4 * d1;
  p.ffn_w1 = &params.create_init(prefix + ".ffn_w1", {d1, d_ffn}, rng, ws);
  p.ffn_b1 = &params.create(prefix + ".ffn_b1", {d_ffn});
  p.ffn_w2 = &params.create_init(prefix + ".ffn_w2", {d_ffn, d1}, rng,
                                 1.0 / std::sqrt(static_cast<double>(d_ffn)));
  p.ffn_b2 = &params.create(prefix + ".ffn_b2", {d1});
  p.ln1_gain = &params.create(prefix + ".ln1_gain", {d1});
  p.ln1_bias = &params.create(prefix + ".ln1_bias", {d1});
  p.ln2_gain = &params.create(prefix + ".ln2_gain", {d1});
  p.ln2_bias = &params.create(prefix + ".ln2_bias", {d1});
  for (double& v : p.ln1_gain->value.v) v = 1.0;
  for (double& v : p.ln2_gain->value.v) v = 1.0;
  return p;
}

Var mhsa(Graph& g, Var x, const std::vector<uint8_t>& mask,
         const AdsformerBlockParams& p) {
  const TensorData& xv = x.val();
  int64_t bsz = xv.shape[0], L = xv.shape[1];
  int64_t dh = p.head_dim;

  Var q = matmul(x, g.leaf(*p.wq));
  Var k = matmul(x, g.leaf(*p.wk));
  Var v = matmul(x, g.leaf(*p.wv));

  // additive key mask, identical across query rows
  TensorData maskadd = TensorData::zeros({bsz, L, L});
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < L; ++i)
      for (int64_t j = 0; j < L; ++j)
        if (!mask[static_cast<size_t>(b * L + j)])
          maskadd.v[static_cast<size_t>((b * L + i) * L + j)] = -1e9;
  Var mask_c = g.constant(std::move(maskadd));

  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(p.num_heads));
  for (int64_t h = 0; h < p.num_heads; ++h) {
    Var qh = slice_last(q, h * dh, dh);
    Var kh = slice_last(k, h * dh, dh);
    Var vh = slice_last(v, h * dh, dh);
    Var scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = softmax_last(add(scores, mask_c));
    heads.push_back(matmul(attn, vh));
  }
  Var cat = p.num_heads == 1 ? heads[0] : concat_last(heads);
  return matmul(cat, g.leaf(*p.wh));
}

Var adsformer_block(Graph& g, const std::vector<int64_t>& target_idx,
                    const PaddedBatch& seq, const AdsformerBlockParams& p,
                    PoolingMode pooling, bool training, RngStream& drop_rng,
                    bool include_target_in_pool, int64_t num_blocks) {
  int64_t bsz = static_cast<int64_t>(target_idx.size());
  if (seq.batch != bsz)
    throw std::invalid_argument("adsformer_block: batch size mismatch");
  int64_t L = seq.max_len + 1;

  // target at position zero, always unmasked
  std::vector<int64_t> indices(static_cast<size_t>(bsz * L), 0);
  std::vector<uint8_t> mask(static_cast<size_t>(bsz * L), 0);
  for (int64_t b = 0; b < bsz; ++b) {
    indices[static_cast<size_t>(b * L)] = target_idx[static_cast<size_t>(b)];
    mask[static_cast<size_t>(b * L)] = 1;
    for (int64_t j = 0; j < seq.max_len; ++j) {
      indices[static_cast<size_t>(b * L + 1 + j)] = seq.indices[static_cast<size_t>(b * seq.max_len + j)];
      mask[static_cast<size_t>(b * L + 1 + j)] = seq.mask[static_cast<size_t>(b * seq.max_len + j)];
    }
  }

  Var table = g.leaf(*p.listing_table.weights);
  Var e = embedding_lookup(table, indices, {bsz, L});
  Var x = add_seq(e, g.leaf(*p.position));

  for (int64_t blk = 0; blk < num_blocks; ++blk) {
    Var attn = dropout(mhsa(g, x, mask, p), p.dropout_rate, training, drop_rng);
    Var gx = add(x, attn);
    x = layer_norm_last(add(x, gx), g.leaf(*p.ln1_gain), g.leaf(*p.ln1_bias));
    Var ff = leaky_relu(x, p.leaky_slope);
    ff = add_bias(matmul(ff, g.leaf(*p.ffn_w1)), g.leaf(*p.ffn_b1));
    ff = add_bias(matmul(ff, g.leaf(*p.ffn_w2)), g.leaf(*p.ffn_b2));
    ff = dropout(ff, p.dropout_rate, training, drop_rng);
    Var gx2 = add(x, ff);
    x = layer_norm_last(add(x, gx2), g.leaf(*p.ln2_gain), g.leaf(*p.ln2_bias));
  }

  std::vector<uint8_t> pool_mask = mask;
  if (!include_target_in_pool)
    for (int64_t b = 0; b < bsz; ++b) pool_mask[static_cast<size_t>(b * L)] = 0;
  return pooling == PoolingMode::max ? masked_max_pool(x, pool_mask)
                                     : masked_avg_pool(x, pool_mask);
}

ADPMConfig ADPMConfig::ctr_default(int64_t max_len) {
  ADPMConfig c;
  c.num_heads = 3;
  c.max_len = max_len;
  c.flavors = {"air"};
  for (Action a : {Action::view, Action::favorite, Action::cart_add}) {
    c.comp3.push_back({EntityKind::listing, a, 32});
    c.comp3.push_back({EntityKind::shop, a, 16});
    c.comp3.push_back({EntityKind::taxonomy, a, 8});
  }
  return c;
}

ADPMConfig ADPMConfig::pccvr_default(int64_t max_len) {
  ADPMConfig c = ctr_default(max_len);
  c.num_heads = 2;
  c.flavors = {"skipgram", "visual"};
  return c;
}

int64_t ADPMConfig::output_width() const {
  int64_t w = 0;
  if (use_component1) w += d1;
  if (use_component2)
    for (const std::string& f : flavors) w += PretrainedBundle::expected_dim(f);
  if (use_component3)
    for (const Comp3Spec& s : comp3) w += s.dim;
  return w;
}

void ADPMConfig::validate() const {
  if (!use_component1 && !use_component2 && !use_component3)
    throw std::invalid_argument("ADPM config: at least one component must be enabled");
  if (use_component1 && (num_heads < 1 || num_heads > d1))
    throw std::invalid_argument("ADPM config: num_heads must lie in [1, d1]");
  if (use_component2) {
    if (flavors.empty())
      throw std::invalid_argument("ADPM config: component two enabled without flavors");
    for (const std::string& f : flavors) PretrainedBundle::expected_dim(f);
  }
  if (use_component3 && comp3.empty())
    throw std::invalid_argument("ADPM config: component three enabled without (e,a) specs");
}

ADPM make_adpm(ParamSet& params, const ADPMConfig& config, Vocabulary listing_vocab,
               Vocabulary shop_vocab, Vocabulary taxonomy_vocab,
               const PretrainedBundle* pretrained, RngStream& rng) {
  config.validate();
  ADPM m;
  m.config = config;
  m.listing_vocab = std::move(listing_vocab);
  m.shop_vocab = std::move(shop_vocab);
  m.taxonomy_vocab = std::move(taxonomy_vocab);
  m.pretrained = pretrained;
  if (config.use_component2) {
    if (!pretrained)
      throw std::invalid_argument("ADPM: component two enabled but no pretrained bundle given");
    for (const std::string& f : config.flavors) {
      auto it = pretrained->tables.find(f);
      if (it == pretrained->tables.end())
        throw std::invalid_argument("ADPM: no pretrained table for flavor '" + f + "'");
      if (it->second.vocab_size != m.listing_vocab.size())
        throw std::invalid_argument("ADPM: pretrained table '" + f +
                                    "' vocab does not match listing vocabulary");
    }
  }
  if (config.use_component1) {
    m.block = make_adsformer_block(params, "adpm.encoder", m.listing_vocab.size(),
                                   config.d1, config.num_heads, config.max_len,
                                   config.dropout, rng);
  }
  if (config.use_component3) {
    for (size_t i = 0; i < config.comp3.size(); ++i) {
      const Comp3Spec& s = config.comp3[i];
      const Vocabulary* v = s.entity == EntityKind::listing ? &m.listing_vocab
                            : s.entity == EntityKind::shop  ? &m.shop_vocab
                                                            : &m.taxonomy_vocab;
      std::string nm = std::string("adpm.comp3.") + entity_name(s.entity) + "." +
                       action_name(s.action);
      m.comp3_tables.push_back(make_table(params, nm, v->size(), s.dim, true, rng));
    }
  }
  return m;
}

namespace {

std::vector<std::string> ids_for(const Impression& row, const std::string& key,
                                 int64_t limit) {
  std::vector<std::string> out;
  auto it = row.sequences.find(key);
  if (it == row.sequences.end()) return out;
  for (const auto& [id, ts] : it->second) {
    if (static_cast<int64_t>(out.size()) >= limit) break;
    out.push_back(id);
  }
  return out;
}

}  // namespace

ADPMBatch build_adpm_batch(const ADPM& adpm, const std::vector<Impression>& rows) {
  const ADPMConfig& c = adpm.config;
  ADPMBatch b;
  b.target.reserve(rows.size());
  for (const Impression& r : rows)
    b.target.push_back(adpm.listing_vocab.index_of("L" + std::to_string(r.candidate)));

  std::vector<std::vector<std::string>> enc, uni;
  enc.reserve(rows.size());
  uni.reserve(rows.size());
  for (const Impression& r : rows) {
    enc.push_back(ids_for(r, "listing:view", c.max_len));
    std::vector<std::string> all_listing;
    for (const char* a : {"view", "favorite", "cart_add"}) {
      auto part = ids_for(r, std::string("listing:") + a, c.max_len);
      all_listing.insert(all_listing.end(), part.begin(), part.end());
    }
    uni.push_back(std::move(all_listing));
  }
  b.encoder_seq = pad_and_mask(enc, adpm.listing_vocab, c.max_len);
  b.listing_union = pad_and_mask(uni, adpm.listing_vocab, 3 * c.max_len);

  for (const Comp3Spec& s : c.comp3) {
    std::string key = std::string(entity_name(s.entity)) + ":" + action_name(s.action);
    const Vocabulary* v = s.entity == EntityKind::listing ? &adpm.listing_vocab
                          : s.entity == EntityKind::shop  ? &adpm.shop_vocab
                                                          : &adpm.taxonomy_vocab;
    std::vector<std::vector<std::string>> seqs;
    seqs.reserve(rows.size());
    for (const Impression& r : rows) seqs.push_back(ids_for(r, key, c.max_len));
    b.comp3_seqs.push_back(pad_and_mask(seqs, *v, c.max_len));
  }
  return b;
}

ADPMOutput adpm_forward(Graph& g, const ADPM& adpm, const ADPMBatch& batch,
                        bool training, RngStream& drop_rng) {
  const ADPMConfig& c = adpm.config;
  ADPMOutput out;
  std::vector<Var> parts;
  if (c.use_component1) {
    out.o1 = adsformer_block(g, batch.target, batch.encoder_seq, adpm.block,
                             c.pooling, training, drop_rng,
                             c.include_target_in_pool, c.num_blocks);
    parts.push_back(*out.o1);
  }
  if (c.use_component2) {
    std::vector<Var> flavor_outs;
    for (const std::string& f : c.flavors) {
      auto it = adpm.pretrained->tables.find(f);
      if (it == adpm.pretrained->tables.end())
        throw std::runtime_error("adpm_forward: missing pretrained table '" + f + "'");
      flavor_outs.push_back(avg_pool_sequence(g, it->second, batch.listing_union));
    }
    out.o2 = flavor_outs.size() == 1 ? flavor_outs[0] : concat_last(flavor_outs);
    parts.push_back(*out.o2);
  }
  if (c.use_component3) {
    std::vector<Var> seq_outs;
    for (size_t i = 0; i < adpm.comp3_tables.size(); ++i)
      seq_outs.push_back(
          avg_pool_sequence(g, adpm.comp3_tables[i], batch.comp3_seqs[i]));
    out.o3 = seq_outs.size() == 1 ? seq_outs[0] : concat_last(seq_outs);
    parts.push_back(*out.o3);
  }
  out.u = parts.size() == 1 ? parts[0] : concat_last(parts);
  return out;
}

}  // namespace adsf
