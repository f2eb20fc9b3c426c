#include "adsf/embeddings.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adsf {

EmbeddingTable make_table(ParamSet& params, std::string name, int64_t vocab_size,
                          int64_t dim, bool trainable, RngStream& rng) {
  EmbeddingTable t;
  t.name = name;
  t.vocab_size = vocab_size;
  t.dim = dim;
  // init scale keeps dot products O(1) across table widths
  t.weights = &params.create_init(std::move(name), {vocab_size, dim}, rng,
                                  1.0 / std::sqrt(static_cast<double>(dim)));
  t.weights->trainable = trainable;
  return t;
}

Var lookup(Graph& g, const EmbeddingTable& table, const PaddedBatch& batch) {
  Var w = g.leaf(*table.weights);
  return embedding_lookup(w, batch.indices, {batch.batch, batch.max_len});
}

Var avg_pool_sequence(Graph& g, const EmbeddingTable& table, const PaddedBatch& batch) {
  return masked_avg_pool(lookup(g, table, batch), batch.mask);
}

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& f, uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                        static_cast<unsigned char>((x >> 8) & 0xff),
                        static_cast<unsigned char>((x >> 16) & 0xff),
                        static_cast<unsigned char>((x >> 24) & 0xff)};
  f.write(reinterpret_cast<char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("table file truncated reading " + std::string(what) +
                             " at offset " + std::to_string(f.tellg()) + ": " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_table(const EmbeddingTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open table file for writing: " + path);
  f.write(kMagic, 4);
  put_u32(f, kVersion);
  put_u32(f, static_cast<uint32_t>(table.vocab_size));
  put_u32(f, static_cast<uint32_t>(table.dim));
  unsigned char frozen = table.trainable() ? 0 : 1;
  f.write(reinterpret_cast<char*>(&frozen), 1);
  for (double d : table.weights->value.v) {
    float x = static_cast<float>(d);
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32(f, bits);
  }
}

EmbeddingTable load_table(ParamSet& params, const std::string& path,
                          const std::string& name) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open table file: " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad table magic at offset 0: " + path);
  uint32_t version = get_u32(f, path, "version");
  if (version != kVersion)
    throw std::runtime_error("unsupported table version " + std::to_string(version) +
                             " at offset 4: " + path);
  uint32_t vocab = get_u32(f, path, "vocab_size");
  uint32_t dim = get_u32(f, path, "dim");
  char frozen;
  if (!f.read(&frozen, 1))
    throw std::runtime_error("table file truncated reading frozen flag: " + path);
  std::vector<double> data;
  data.reserve(static_cast<size_t>(vocab) * dim);
  for (uint64_t i = 0; i < static_cast<uint64_t>(vocab) * dim; ++i) {
    uint32_t bits = get_u32(f, path, "weights");
    float x;
    std::memcpy(&x, &bits, 4);
    data.push_back(static_cast<double>(x));
  }
  // loaded tables are always frozen
  EmbeddingTable t;
  t.name = name;
  t.vocab_size = vocab;
  t.dim = dim;
  t.weights = &params.create(name, {static_cast<int64_t>(vocab), static_cast<int64_t>(dim)});
  t.weights->value.v = std::move(data);
  t.weights->trainable = false;
  return t;
}

uint64_t table_checksum(const EmbeddingTable& table) {
  uint64_t h = 1469598103934665603ull;
  for (double d : table.weights->value.v) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

int64_t PretrainedBundle::expected_dim(const std::string& flavor) {
  if (flavor == "air" || flavor == "visual") return 256;
  if (flavor == "skipgram") return 64;
  throw std::invalid_argument("unknown pretrained flavor: " + flavor);
}

void PretrainedBundle::validate() const {
  for (const auto& [flavor, table] : tables) {
    int64_t want = expected_dim(flavor);
    if (table.dim != want)
      throw std::runtime_error("pretrained table '" + flavor + "' has dim " +
                               std::to_string(table.dim) + ", expected " +
                               std::to_string(want));
    if (table.trainable())
      throw std::runtime_error("pretrained table '" + flavor + "' must be frozen");
  }
}

}  // namespace adsf
