#include "adsf/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "adsf/training_eval.hpp"

namespace adsf {

namespace {

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot(const double* a, const double* b, int64_t d) {
  double s = 0.0;
  for (int64_t i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

// ---- Huffman ----------------------------------------------------------------

HuffmanTree build_huffman(const std::vector<int64_t>& counts) {
  int64_t v = static_cast<int64_t>(counts.size());
  if (v == 0) throw std::invalid_argument("build_huffman: empty counts");
  HuffmanTree t;
  t.num_leaves = v;
  t.paths.resize(static_cast<size_t>(v));
  t.codes.resize(static_cast<size_t>(v));
  if (v == 1) return t;  // single leaf, empty code

  // node ids: [0, v) leaves, [v, 2v-1) internal
  std::vector<int64_t> count(static_cast<size_t>(2 * v - 1), 0);
  std::vector<int64_t> parent(static_cast<size_t>(2 * v - 1), -1);
  std::vector<int> bit(static_cast<size_t>(2 * v - 1), 0);
  for (int64_t i = 0; i < v; ++i) count[static_cast<size_t>(i)] = counts[static_cast<size_t>(i)];

  using Item = std::pair<int64_t, int64_t>;  // (count, node id), lowest first
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  for (int64_t i = 0; i < v; ++i) heap.push({count[static_cast<size_t>(i)], i});
  int64_t next = v;
  while (heap.size() > 1) {
    auto [c0, n0] = heap.top();
    heap.pop();
    auto [c1, n1] = heap.top();
    heap.pop();
    count[static_cast<size_t>(next)] = c0 + c1;
    parent[static_cast<size_t>(n0)] = next;
    bit[static_cast<size_t>(n0)] = 0;
    parent[static_cast<size_t>(n1)] = next;
    bit[static_cast<size_t>(n1)] = 1;
    heap.push({c0 + c1, next});
    ++next;
  }
  for (int64_t leaf = 0; leaf < v; ++leaf) {
    std::vector<int64_t> path;
    std::vector<int> code;
    for (int64_t n = leaf; parent[static_cast<size_t>(n)] != -1;
         n = parent[static_cast<size_t>(n)]) {
      path.push_back(parent[static_cast<size_t>(n)] - v);
      code.push_back(bit[static_cast<size_t>(n)]);
    }
    std::reverse(path.begin(), path.end());
    std::reverse(code.begin(), code.end());
    t.paths[static_cast<size_t>(leaf)] = std::move(path);
    t.codes[static_cast<size_t>(leaf)] = std::move(code);
  }
  return t;
}

// ---- skip-gram --------------------------------------------------------------

SkipGramModel make_skipgram(const SkipGramConfig& config, Vocabulary vocab,
                            const std::vector<int64_t>& counts, RngStream& rng) {
  SkipGramModel m;
  m.config = config;
  m.vocab = std::move(vocab);
  int64_t v = m.vocab.size();
  int64_t d = config.dim;
  if (static_cast<int64_t>(counts.size()) != v)
    throw std::invalid_argument("make_skipgram: counts size mismatch");
  m.input.resize(static_cast<size_t>(v * d));
  double half = 0.5 / static_cast<double>(d);
  for (double& x : m.input) x = rng.uniform(-half, half);
  if (config.mode == SkipGramMode::hierarchical) {
    m.tree = build_huffman(counts);
    m.node_vecs.assign(static_cast<size_t>(m.tree.num_internal() * d), 0.0);
  } else {
    m.output.assign(static_cast<size_t>(v * d), 0.0);
  }
  return m;
}

double skipgram_prob(const SkipGramModel& m, const std::string& center,
                     const std::string& other) {
  if (!m.vocab.contains(center))
    throw std::invalid_argument("skipgram_prob: unknown listing '" + center + "'");
  if (!m.vocab.contains(other))
    throw std::invalid_argument("skipgram_prob: unknown listing '" + other + "'");
  return std::exp(-skipgram_pair_loss(m, m.vocab.index_of(center),
                                      m.vocab.index_of(other)));
}

double skipgram_pair_loss(const SkipGramModel& m, int64_t center, int64_t context) {
  int64_t d = m.config.dim;
  const double* vc = m.input.data() + center * d;
  if (m.config.mode == SkipGramMode::hierarchical) {
    const auto& path = m.tree.paths[static_cast<size_t>(context)];
    const auto& code = m.tree.codes[static_cast<size_t>(context)];
    double loss = 0.0;
    for (size_t j = 0; j < path.size(); ++j) {
      double s = code[j] == 0 ? 1.0 : -1.0;
      double x = s * dot(m.node_vecs.data() + path[j] * d, vc, d);
      // -log sigmoid(x), stable
      loss += x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
    }
    return loss;
  }
  int64_t v = m.vocab.size();
  double mx = -1e300;
  std::vector<double> u(static_cast<size_t>(v));
  for (int64_t k = 0; k < v; ++k) {
    u[static_cast<size_t>(k)] = dot(m.output.data() + k * d, vc, d);
    mx = std::max(mx, u[static_cast<size_t>(k)]);
  }
  double z = 0.0;
  for (double x : u) z += std::exp(x - mx);
  return -(u[static_cast<size_t>(context)] - mx - std::log(z));
}

SkipGramGrads skipgram_pair_grads(const SkipGramModel& m, int64_t center,
                                  int64_t context) {
  int64_t d = m.config.dim;
  const double* vc = m.input.data() + center * d;
  SkipGramGrads g;
  g.g_center.assign(static_cast<size_t>(d), 0.0);
  if (m.config.mode == SkipGramMode::hierarchical) {
    const auto& path = m.tree.paths[static_cast<size_t>(context)];
    const auto& code = m.tree.codes[static_cast<size_t>(context)];
    for (size_t j = 0; j < path.size(); ++j) {
      double s = code[j] == 0 ? 1.0 : -1.0;
      const double* w = m.node_vecs.data() + path[j] * d;
      double e = (sigmoid_scalar(s * dot(w, vc, d)) - 1.0) * s;
      std::vector<double> gw(static_cast<size_t>(d));
      for (int64_t i = 0; i < d; ++i) {
        gw[static_cast<size_t>(i)] = e * vc[i];
        g.g_center[static_cast<size_t>(i)] += e * w[i];
      }
      g.g_out.emplace_back(path[j], std::move(gw));
    }
    return g;
  }
  int64_t v = m.vocab.size();
  std::vector<double> u(static_cast<size_t>(v));
  double mx = -1e300;
  for (int64_t k = 0; k < v; ++k) {
    u[static_cast<size_t>(k)] = dot(m.output.data() + k * d, vc, d);
    mx = std::max(mx, u[static_cast<size_t>(k)]);
  }
  double z = 0.0;
  for (double& x : u) {
    x = std::exp(x - mx);
    z += x;
  }
  for (int64_t k = 0; k < v; ++k) {
    double e = u[static_cast<size_t>(k)] / z - (k == context ? 1.0 : 0.0);
    const double* w = m.output.data() + k * d;
    std::vector<double> gw(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) {
      gw[static_cast<size_t>(i)] = e * vc[i];
      g.g_center[static_cast<size_t>(i)] += e * w[i];
    }
    g.g_out.emplace_back(k, std::move(gw));
  }
  return g;
}

void skipgram_pair_update(SkipGramModel& m, int64_t center, int64_t context,
                          double lr) {
  SkipGramGrads g = skipgram_pair_grads(m, center, context);
  int64_t d = m.config.dim;
  std::vector<double>& out =
      m.config.mode == SkipGramMode::hierarchical ? m.node_vecs : m.output;
  for (const auto& [row, gw] : g.g_out)
    for (int64_t i = 0; i < d; ++i)
      out[static_cast<size_t>(row * d + i)] -= lr * gw[static_cast<size_t>(i)];
  for (int64_t i = 0; i < d; ++i)
    m.input[static_cast<size_t>(center * d + i)] -= lr * g.g_center[static_cast<size_t>(i)];
}

SkipGramModel train_skipgram(const std::vector<Session>& sessions,
                             const SkipGramConfig& config) {
  std::vector<std::vector<std::string>> corpus;
  for (const Session& s : sessions) {
    if (s.listings.empty()) continue;
    int64_t reps = s.purchased ? config.purchase_upsample : 1;
    for (int64_t r = 0; r < reps; ++r) corpus.push_back(s.listings);
  }
  if (corpus.empty()) throw std::invalid_argument("train_skipgram: empty corpus");
  Vocabulary vocab = build_vocab(corpus, config.vocab_k);

  std::vector<int64_t> counts(static_cast<size_t>(vocab.size()), 0);
  for (const auto& sess : corpus)
    for (const std::string& id : sess)
      counts[static_cast<size_t>(vocab.index_of(id))]++;
  for (int64_t& c : counts) c = std::max<int64_t>(c, 1);

  RngStream rng = RngStream(config.seed).substream("skipgram_init");
  SkipGramModel m = make_skipgram(config, std::move(vocab), counts, rng);

  std::vector<std::pair<int64_t, int64_t>> pairs;
  for (const auto& sess : corpus) {
    int64_t n = static_cast<int64_t>(sess.size());
    for (int64_t t = 0; t < n; ++t) {
      int64_t c = m.vocab.index_of(sess[static_cast<size_t>(t)]);
      for (int64_t j = std::max<int64_t>(0, t - config.window);
           j <= std::min(n - 1, t + config.window); ++j) {
        if (j == t) continue;
        pairs.emplace_back(c, m.vocab.index_of(sess[static_cast<size_t>(j)]));
      }
    }
  }
  if (pairs.empty())
    throw std::invalid_argument("train_skipgram: no (center, context) pairs");

  int64_t total = static_cast<int64_t>(pairs.size()) * config.epochs;
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch)
    for (const auto& [c, o] : pairs) {
      double frac = static_cast<double>(step) / static_cast<double>(total);
      skipgram_pair_update(m, c, o, config.lr * std::max(1e-4, 1.0 - frac));
      ++step;
    }
  return m;
}

EmbeddingTable skipgram_export(ParamSet& params, const SkipGramModel& m,
                               const std::string& name) {
  EmbeddingTable t;
  t.name = name;
  t.vocab_size = m.vocab.size();
  t.dim = m.config.dim;
  t.weights = &params.create(name, {t.vocab_size, t.dim});
  t.weights->trainable = false;
  t.weights->value.v = m.input;
  return t;
}

// ---- pseudo-two-tower encoder -----------------------------------------------

AirModel make_air(const AirConfig& config) {
  AirModel m;
  m.config = config;
  m.params = std::make_unique<ParamSet>();
  RngStream rng = RngStream(config.seed).substream("air_init");
  double s1 = 1.0 / std::sqrt(static_cast<double>(config.input_dim()));
  double s2 = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  m.w1 = &m.params->create_init("air.w1", {config.input_dim(), config.hidden_dim}, rng, s1);
  m.b1 = &m.params->create("air.b1", {config.hidden_dim});
  m.w2 = &m.params->create_init("air.w2", {config.hidden_dim, config.out_dim}, rng, s2);
  m.b2 = &m.params->create("air.b2", {config.out_dim});
  return m;
}

AirFeatures build_air_features(const SyntheticWorld& world, const AirConfig& config) {
  int64_t n = world.config.num_listings;
  int64_t d = world.config.attr_dim;
  AirFeatures f;
  f.num_rows = n;
  f.dim = config.input_dim();
  f.data.assign(static_cast<size_t>(n * f.dim), 0.0);

  RngStream base(world.config.seed);
  auto fill_block = [&](const char* label, int64_t offset, int64_t width) {
    RngStream proj_rng = base.substream(label);
    std::vector<double> proj(static_cast<size_t>(d * width));
    for (double& x : proj) x = proj_rng.normal();
    for (int64_t i = 0; i < n; ++i) {
      RngStream noise = base.substream(std::string(label) + "#" + std::to_string(i));
      double norm2 = 0.0;
      for (int64_t j = 0; j < width; ++j) {
        double s = 0.0;
        for (int64_t k = 0; k < d; ++k)
          s += world.listing_attrs.v[static_cast<size_t>(i * d + k)] *
               proj[static_cast<size_t>(k * width + j)];
        s += 0.1 * noise.normal();
        f.data[static_cast<size_t>(i * f.dim + offset + j)] = s;
        norm2 += s * s;
      }
      double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
      for (int64_t j = 0; j < width; ++j)
        f.data[static_cast<size_t>(i * f.dim + offset + j)] *= inv;
    }
  };
  fill_block("air_visual", 0, config.visual_dim);
  fill_block("air_text", config.visual_dim, config.text_dim);

  RngStream scal = base.substream("air_scalars");
  for (int64_t i = 0; i < n; ++i) {
    int64_t off = i * f.dim + config.visual_dim + config.text_dim;
    double price = scal.uniform();
    double extra = scal.uniform();
    std::vector<double> s = {
        price,
        static_cast<double>(world.listing_shop[static_cast<size_t>(i)]) /
            static_cast<double>(world.config.num_shops),
        static_cast<double>(world.listing_taxonomy[static_cast<size_t>(i)]) /
            static_cast<double>(world.config.num_taxonomies),
        extra};
    for (int64_t j = 0; j < config.scalar_dim; ++j)
      f.data[static_cast<size_t>(off + j)] = s[static_cast<size_t>(j % 4)];
  }
  return f;
}

std::vector<std::pair<int64_t, int64_t>> generate_coclick_pairs(
    const SyntheticWorld& world, int64_t num_pairs, double cross_taxonomy_rate,
    RngStream rng) {
  // bucket listings by taxonomy
  std::vector<std::vector<int64_t>> groups(
      static_cast<size_t>(world.config.num_taxonomies));
  for (int64_t i = 0; i < world.config.num_listings; ++i)
    groups[static_cast<size_t>(world.listing_taxonomy[static_cast<size_t>(i)])].push_back(i);

  std::vector<std::pair<int64_t, int64_t>> pairs;
  pairs.reserve(static_cast<size_t>(num_pairs));
  while (static_cast<int64_t>(pairs.size()) < num_pairs) {
    int64_t a = static_cast<int64_t>(rng.uniform_int(
        static_cast<uint64_t>(world.config.num_listings)));
    int64_t b;
    if (rng.bernoulli(cross_taxonomy_rate)) {
      b = static_cast<int64_t>(rng.uniform_int(
          static_cast<uint64_t>(world.config.num_listings)));
    } else {
      const auto& grp = groups[static_cast<size_t>(
          world.listing_taxonomy[static_cast<size_t>(a)])];
      b = grp[rng.uniform_int(grp.size())];
    }
    if (b == a) continue;
    pairs.emplace_back(a, b);
  }
  return pairs;
}

Var air_encode(Graph& g, const AirModel& m, Var features, bool training) {
  (void)training;
  Var h = leaky_relu(add_bias(matmul(features, g.leaf(*m.w1)), g.leaf(*m.b1)),
                     m.config.leaky_slope);
  return add_bias(matmul(h, g.leaf(*m.w2)), g.leaf(*m.b2));
}

Var air_batch_loss(Graph& g, const AirModel& m, const std::vector<double>& src,
                   const std::vector<double>& cand, int64_t batch,
                   int64_t num_negatives, bool training, RngStream& rng) {
  if (batch < 2) throw std::invalid_argument("air_batch_loss: batch must be >= 2");
  int64_t in = m.config.input_dim();
  if (static_cast<int64_t>(src.size()) != batch * in ||
      static_cast<int64_t>(cand.size()) != batch * in)
    throw std::invalid_argument("air_batch_loss: feature size mismatch");
  num_negatives = std::min(num_negatives, batch - 1);
  if (num_negatives < 1)
    throw std::invalid_argument("air_batch_loss: need at least one negative");

  TensorData sx{{batch, in}, src};
  TensorData cx{{batch, in}, cand};
  Var zs = l2_normalize_rows(air_encode(g, m, g.constant(std::move(sx)), training));
  Var zc = l2_normalize_rows(air_encode(g, m, g.constant(std::move(cx)), training));
  Var cos = matmul_nt(zs, zc);

  Var logits = cos;
  if (num_negatives < batch - 1) {
    // keep the diagonal plus a per-row sample of off-diagonal columns
    TensorData maskv = TensorData::full({batch, batch}, -1e9);
    for (int64_t i = 0; i < batch; ++i) {
      maskv.v[static_cast<size_t>(i * batch + i)] = 0.0;
      std::vector<int64_t> others;
      others.reserve(static_cast<size_t>(batch - 1));
      for (int64_t j = 0; j < batch; ++j)
        if (j != i) others.push_back(j);
      for (int64_t k = 0; k < num_negatives; ++k) {
        size_t pick = static_cast<size_t>(k) +
                      rng.uniform_int(others.size() - static_cast<size_t>(k));
        std::swap(others[static_cast<size_t>(k)], others[pick]);
        maskv.v[static_cast<size_t>(i * batch + others[static_cast<size_t>(k)])] = 0.0;
      }
    }
    logits = add(cos, g.constant(std::move(maskv)));
  }
  std::vector<int64_t> targets(static_cast<size_t>(batch));
  std::iota(targets.begin(), targets.end(), 0);
  return softmax_xent_rows(logits, targets);
}

AirModel train_air(const SyntheticWorld& world,
                   const std::vector<std::pair<int64_t, int64_t>>& pairs,
                   const AirFeatures& features, const AirConfig& config) {
  (void)world;
  if (pairs.size() < 2) throw std::invalid_argument("train_air: need at least 2 pairs");
  AirModel m = make_air(config);
  RngStream rng = RngStream(config.seed).substream("air_train");
  Adam opt(m.params->trainable(), AdamConfig{config.lr, 0.9, 0.999, 1e-8});

  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  int64_t in = config.input_dim();
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    for (size_t start = 0; start + 2 <= pairs.size(); start += config.batch_size) {
      int64_t b = std::min<int64_t>(config.batch_size,
                                    static_cast<int64_t>(pairs.size() - start));
      if (b < 2) break;
      std::vector<double> src, cand;
      src.reserve(static_cast<size_t>(b * in));
      cand.reserve(static_cast<size_t>(b * in));
      for (int64_t k = 0; k < b; ++k) {
        const auto& [a, c] = pairs[order[start + static_cast<size_t>(k)]];
        auto ra = features.row(a);
        auto rc = features.row(c);
        src.insert(src.end(), ra.begin(), ra.end());
        cand.insert(cand.end(), rc.begin(), rc.end());
      }
      m.params->zero_grad();
      Graph g;
      Var loss = air_batch_loss(g, m, src, cand, b, config.num_negatives,
                                /*training=*/true, rng);
      g.backward(loss);
      opt.step(config.lr);
      m.losses.push_back(loss.val().v[0]);
    }
  }
  return m;
}

TensorData air_infer_all(const AirModel& m, const AirFeatures& features) {
  TensorData out = TensorData::zeros({features.num_rows, m.config.out_dim});
  const int64_t chunk = 256;
  for (int64_t start = 0; start < features.num_rows; start += chunk) {
    int64_t b = std::min(chunk, features.num_rows - start);
    TensorData x{{b, features.dim},
                 {features.data.begin() + start * features.dim,
                  features.data.begin() + (start + b) * features.dim}};
    Graph g;
    Var z = air_encode(g, m, g.constant(std::move(x)), /*training=*/false);
    std::copy(z.val().v.begin(), z.val().v.end(),
              out.v.begin() + start * m.config.out_dim);
  }
  return out;
}

EmbeddingTable air_export(ParamSet& params, const AirModel& m,
                          const AirFeatures& features, const SyntheticWorld& world,
                          const Vocabulary& vocab, const std::string& name) {
  TensorData enc = air_infer_all(m, features);
  EmbeddingTable t;
  t.name = name;
  t.vocab_size = vocab.size();
  t.dim = m.config.out_dim;
  t.weights = &params.create(name, {t.vocab_size, t.dim});
  t.weights->trainable = false;
  for (int64_t i = 0; i < world.config.num_listings; ++i) {
    std::string id = world.listing_id(i);
    if (!vocab.contains(id)) continue;
    int64_t row = vocab.index_of(id);
    for (int64_t j = 0; j < t.dim; ++j)
      t.weights->value.v[static_cast<size_t>(row * t.dim + j)] =
          enc.v[static_cast<size_t>(i * t.dim + j)];
  }
  return t;
}

}  // namespace adsf
