#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adsf/embeddings.hpp"
#include "adsf/sequences.hpp"
#include "adsf/tensor.hpp"

namespace adsf {

// Transformer block over one (target, sequence) batch, ending in global
// pooling over unmasked positions.
struct AdsformerBlockParams {
  int64_t d1 = 32;
  int64_t num_heads = 3;
  int64_t head_dim = 10;  // d1 / num_heads; wh projects heads back to d1
  int64_t max_len = 50;  // user actions; the block sees max_len + 1 positions
  double dropout_rate = 0.0;
  double leaky_slope = 0.2;

  EmbeddingTable listing_table;
  Param* position = nullptr;  // [(M+1) x d1], fully learnable
  Param* wq = nullptr;
  Param* wk = nullptr;
  Param* wv = nullptr;
  Param* wh = nullptr;
  Param* ffn_w1 = nullptr;  // d1 -> 4*d1
  Param* ffn_b1 = nullptr;
  Param* ffn_w2 = nullptr;  // 4*d1 -> d1
  Param* ffn_b2 = nullptr;
  Param* ln1_gain = nullptr;
  Param* ln1_bias = nullptr;
  Param* ln2_gain = nullptr;
  Param* ln2_bias = nullptr;
};

AdsformerBlockParams make_adsformer_block(ParamSet& params, const std::string& prefix,
                                          int64_t vocab_size, int64_t d1,
                                          int64_t num_heads, int64_t max_len,
                                          double dropout_rate, RngStream& rng);

// Scaled dot-product multi-head self attention; masked keys get a -1e9
// additive logit. x is [batch, L, d1], mask is [batch * L].
Var mhsa(Graph& g, Var x, const std::vector<uint8_t>& mask,
         const AdsformerBlockParams& p);

enum class PoolingMode { max, avg };

// Full block: embed, add learned positions, attention and feed-forward
// sublayers with residuals and layer norms, then global pooling. The target
// listing occupies position zero and is always unmasked.
Var adsformer_block(Graph& g, const std::vector<int64_t>& target_idx,
                    const PaddedBatch& seq, const AdsformerBlockParams& p,
                    PoolingMode pooling, bool training, RngStream& drop_rng,
                    bool include_target_in_pool = true, int64_t num_blocks = 1);

struct Comp3Spec {
  EntityKind entity;
  Action action;
  int64_t dim;
};

struct ADPMConfig {
  bool use_component1 = true;
  bool use_component2 = true;
  bool use_component3 = true;
  PoolingMode pooling = PoolingMode::max;
  std::vector<std::string> flavors;  // subset of {air, visual, skipgram}
  std::vector<Comp3Spec> comp3;
  int64_t num_heads = 3;
  int64_t d1 = 32;
  int64_t max_len = 12;
  int64_t num_blocks = 1;
  double dropout = 0.0;
  bool include_target_in_pool = true;

  // Table 1 style defaults for the two ranking tasks at a given M.
  static ADPMConfig ctr_default(int64_t max_len);
  static ADPMConfig pccvr_default(int64_t max_len);

  int64_t output_width() const;
  void validate() const;
};

// The three-component module. Component one is the adSformer encoder over
// (listing, view); component two average-pools frozen pretrained flavor
// tables over the union of listing sequences; component three average-pools
// trainable per-(entity, action) tables.
struct ADPM {
  ADPMConfig config;
  Vocabulary listing_vocab;
  Vocabulary shop_vocab;
  Vocabulary taxonomy_vocab;
  AdsformerBlockParams block;  // valid iff use_component1
  std::vector<EmbeddingTable> comp3_tables;  // aligned with config.comp3
  const PretrainedBundle* pretrained = nullptr;
};

ADPM make_adpm(ParamSet& params, const ADPMConfig& config, Vocabulary listing_vocab,
               Vocabulary shop_vocab, Vocabulary taxonomy_vocab,
               const PretrainedBundle* pretrained, RngStream& rng);

// Index view of one impression batch, ready for the forward pass.
struct ADPMBatch {
  std::vector<int64_t> target;  // listing vocab indices
  PaddedBatch encoder_seq;      // (listing, view) for component one
  PaddedBatch listing_union;    // all listing sequences for component two
  std::vector<PaddedBatch> comp3_seqs;
};

ADPMBatch build_adpm_batch(const ADPM& adpm, const std::vector<Impression>& rows);

struct ADPMOutput {
  std::optional<Var> o1;
  std::optional<Var> o2;
  std::optional<Var> o3;
  Var u;  // Concat of the present components, in o1, o2, o3 order
};

ADPMOutput adpm_forward(Graph& g, const ADPM& adpm, const ADPMBatch& batch,
                        bool training, RngStream& drop_rng);

}  // namespace adsf
