#pragma once

#include <map>
#include <memory>
#include <string>

#include "adsf/sequences.hpp"
#include "adsf/tensor.hpp"

namespace adsf {

// id->vector storage backed by a Param so trainable tables join the optimizer
// and frozen ones are skipped. Frozen tables never change during training.
struct EmbeddingTable {
  std::string name;
  int64_t vocab_size = 0;  // includes OOV rows
  int64_t dim = 0;
  Param* weights = nullptr;

  bool trainable() const { return weights->trainable; }
};

EmbeddingTable make_table(ParamSet& params, std::string name, int64_t vocab_size,
                          int64_t dim, bool trainable, RngStream& rng);

// Row gather over a padded batch; masked slots are gathered too and handled
// by downstream pooling. Out-of-range indices signal corruption.
Var lookup(Graph& g, const EmbeddingTable& table, const PaddedBatch& batch);

// Masked average over sequence positions; empty rows give zero vectors.
Var avg_pool_sequence(Graph& g, const EmbeddingTable& table, const PaddedBatch& batch);

// Flat binary table format: magic "EMBT", u32 version=1, u32 vocab_size,
// u32 dim, u8 frozen flag, then vocab_size*dim little-endian f32 values.
void save_table(const EmbeddingTable& table, const std::string& path);
EmbeddingTable load_table(ParamSet& params, const std::string& path,
                          const std::string& name);

uint64_t table_checksum(const EmbeddingTable& table);

// Frozen pretrained tables for the downstream module, keyed by flavor.
// Expected dims: air 256, visual 256, skipgram 64.
struct PretrainedBundle {
  std::map<std::string, EmbeddingTable> tables;

  static int64_t expected_dim(const std::string& flavor);
  void validate() const;  // dim per flavor, frozen flags
};

}  // namespace adsf
