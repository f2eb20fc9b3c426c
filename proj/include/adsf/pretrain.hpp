#pragma once

#include <string>
#include <vector>

#include "adsf/embeddings.hpp"
#include "adsf/sequences.hpp"
#include "adsf/tensor.hpp"

namespace adsf {

// ---- session skip-gram ------------------------------------------------------

// Binary prefix-code tree over leaf frequencies; greedy two-smallest merge
// with index tie-breaks so identical counts give identical trees.
struct HuffmanTree {
  int64_t num_leaves = 0;
  std::vector<std::vector<int64_t>> paths;  // per leaf: internal nodes, root first
  std::vector<std::vector<int>> codes;      // per leaf: branch bits along the path

  int64_t num_internal() const { return num_leaves - 1; }
};

HuffmanTree build_huffman(const std::vector<int64_t>& counts);

enum class SkipGramMode { hierarchical, full_softmax };

struct SkipGramConfig {
  int64_t dim = 64;
  int64_t window = 5;
  int64_t purchase_upsample = 5;  // purchased sessions repeated this many times
  int64_t epochs = 3;
  double lr = 0.05;  // linearly decayed over all pairs
  SkipGramMode mode = SkipGramMode::hierarchical;
  int64_t vocab_k = 100000;
  uint64_t seed = 1;
};

struct SkipGramModel {
  SkipGramConfig config;
  Vocabulary vocab;
  std::vector<double> input;      // V x d center vectors
  std::vector<double> output;     // V x d, full-softmax mode only
  HuffmanTree tree;               // hierarchical mode only
  std::vector<double> node_vecs;  // (V-1) x d internal-node vectors

  int64_t vocab_size() const { return vocab.size(); }
};

SkipGramModel make_skipgram(const SkipGramConfig& config, Vocabulary vocab,
                            const std::vector<int64_t>& counts, RngStream& rng);

// p(other | center). Full-softmax mode evaluates the normalized exponential
// over the whole vocabulary; hierarchical mode multiplies branch sigmoids
// along other's tree path. Unknown ids are an error.
double skipgram_prob(const SkipGramModel& m, const std::string& center,
                     const std::string& other);

// -log p(context | center) for one pair, by vocabulary index.
double skipgram_pair_loss(const SkipGramModel& m, int64_t center, int64_t context);

// Analytic gradients of skipgram_pair_loss with respect to the center row and
// the touched output-side rows (tree nodes or every output row). Layout
// matches the model's flat storage; untouched entries stay zero.
struct SkipGramGrads {
  std::vector<double> g_center;              // d
  std::vector<std::pair<int64_t, std::vector<double>>> g_out;  // (row, d)
};
SkipGramGrads skipgram_pair_grads(const SkipGramModel& m, int64_t center,
                                  int64_t context);

// One SGD step on a pair.
void skipgram_pair_update(SkipGramModel& m, int64_t center, int64_t context,
                          double lr);

// Fits on (center, context) pairs within the window; purchased sessions are
// repeated before pair extraction and before frequency counting. Throws on an
// empty corpus or if no pair exists.
SkipGramModel train_skipgram(const std::vector<Session>& sessions,
                             const SkipGramConfig& config);

// Frozen copy of the input vectors as an embedding table.
EmbeddingTable skipgram_export(ParamSet& params, const SkipGramModel& m,
                               const std::string& name);

// ---- pseudo-two-tower co-click encoder --------------------------------------

struct AirConfig {
  int64_t visual_dim = 256;
  int64_t text_dim = 256;
  int64_t scalar_dim = 4;
  int64_t hidden_dim = 256;
  int64_t out_dim = 256;
  int64_t batch_size = 256;
  int64_t num_negatives = 255;  // capped at batch-1 per batch
  int64_t epochs = 2;
  double lr = 0.002;
  double leaky_slope = 0.2;
  uint64_t seed = 1;

  int64_t input_dim() const { return visual_dim + text_dim + scalar_dim; }
};

// Both sides of a pair run through the one parameter set, so identical inputs
// encode identically by construction.
struct AirModel {
  AirConfig config;
  std::unique_ptr<ParamSet> params;
  Param* w1 = nullptr;  // input_dim -> hidden_dim
  Param* b1 = nullptr;
  Param* w2 = nullptr;  // hidden_dim -> out_dim
  Param* b2 = nullptr;
  std::vector<double> losses;
};

AirModel make_air(const AirConfig& config);

// Per-listing input features: frozen synthetic visual and text vectors
// projected from listing attributes, plus a few normalized scalars.
struct AirFeatures {
  int64_t num_rows = 0;
  int64_t dim = 0;
  std::vector<double> data;  // row-major

  std::vector<double> row(int64_t i) const {
    return {data.begin() + i * dim, data.begin() + (i + 1) * dim};
  }
};

AirFeatures build_air_features(const SyntheticWorld& world, const AirConfig& config);

// Co-click pairs: both members usually share a taxonomy group.
std::vector<std::pair<int64_t, int64_t>> generate_coclick_pairs(
    const SyntheticWorld& world, int64_t num_pairs, double cross_taxonomy_rate,
    RngStream rng);

Var air_encode(Graph& g, const AirModel& m, Var features, bool training);

// Cosine matrix between normalized source and candidate encodings; per-row
// softmax cross-entropy with the diagonal as the positive class, restricted
// to {diagonal plus num_negatives sampled off-diagonal columns}. With
// num_negatives = batch-1 every column participates and no sampling happens.
Var air_batch_loss(Graph& g, const AirModel& m, const std::vector<double>& src,
                   const std::vector<double>& cand, int64_t batch,
                   int64_t num_negatives, bool training, RngStream& rng);

AirModel train_air(const SyntheticWorld& world,
                   const std::vector<std::pair<int64_t, int64_t>>& pairs,
                   const AirFeatures& features, const AirConfig& config);

// Batch inference over every listing row.
TensorData air_infer_all(const AirModel& m, const AirFeatures& features);

// One row per listing, placed at its index in `vocab` (OOV rows stay zero).
EmbeddingTable air_export(ParamSet& params, const AirModel& m,
                          const AirFeatures& features, const SyntheticWorld& world,
                          const Vocabulary& vocab, const std::string& name);

}  // namespace adsf
