#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "adsf/embeddings.hpp"

using namespace adsf;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("lookup gathers table rows for a padded batch") {
  ParamSet ps;
  RngStream rng(1);
  EmbeddingTable t = make_table(ps, "t", 5, 3, true, rng);
  Vocabulary v = build_vocab({{"a", "b", "c", "d"}}, 4);
  PaddedBatch b = pad_and_mask({{"a", "c"}, {"d"}}, v, 2);
  Graph g;
  const TensorData& out = lookup(g, t, b).val();
  CHECK(out.shape == std::vector<int64_t>{2, 2, 3});
  int64_t ia = v.index_of("a");
  for (int64_t j = 0; j < 3; ++j)
    CHECK(out.v[static_cast<size_t>(j)] ==
          t.weights->value.v[static_cast<size_t>(ia * 3 + j)]);
}

TEST_CASE("average pooling respects masks and empty rows") {
  ParamSet ps;
  Param& w = ps.create("t", {3, 2});
  w.value.v = {0, 0, 2, 4, 6, 8};
  EmbeddingTable t{"t", 3, 2, &w};
  Vocabulary v = build_vocab({{"a", "b"}}, 2);
  // row 0 averages indices a and b; row 1 is all padding
  PaddedBatch b = pad_and_mask({{"a", "b"}, {}}, v, 2);
  Graph g;
  const TensorData& out = avg_pool_sequence(g, t, b).val();
  int64_t ia = v.index_of("a"), ib = v.index_of("b");
  double e0 = (w.value.v[static_cast<size_t>(ia * 2)] + w.value.v[static_cast<size_t>(ib * 2)]) / 2;
  CHECK(out.v[0] == doctest::Approx(e0));
  CHECK(out.v[2] == 0.0);
  CHECK(out.v[3] == 0.0);
}

TEST_CASE("table files round trip and load frozen") {
  ParamSet ps;
  RngStream rng(7);
  EmbeddingTable t = make_table(ps, "orig", 11, 6, true, rng);
  std::string path = tmp_path("emb_test.embt");
  save_table(t, path);

  ParamSet ps2;
  EmbeddingTable r = load_table(ps2, path, "loaded");
  CHECK(r.vocab_size == 11);
  CHECK(r.dim == 6);
  CHECK_FALSE(r.trainable());
  // f32 storage: round trip through float, not exact doubles
  for (size_t i = 0; i < t.weights->value.v.size(); ++i)
    CHECK(r.weights->value.v[i] ==
          doctest::Approx(t.weights->value.v[i]).epsilon(1e-6));
  CHECK(table_checksum(r) == table_checksum(r));
  std::remove(path.c_str());
}

TEST_CASE("corrupt table files are rejected with positions") {
  std::string path = tmp_path("emb_bad.embt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  ParamSet ps;
  CHECK_THROWS_WITH_AS(load_table(ps, path, "x"),
                       doctest::Contains("magic"), std::runtime_error);
  {
    // valid magic, truncated payload
    std::ofstream out(path, std::ios::binary);
    uint32_t version = 1, vocab = 4, dim = 8;
    uint8_t frozen = 1;
    out.write("EMBT", 4);
    out.write(reinterpret_cast<char*>(&version), 4);
    out.write(reinterpret_cast<char*>(&vocab), 4);
    out.write(reinterpret_cast<char*>(&dim), 4);
    out.write(reinterpret_cast<char*>(&frozen), 1);
    float one = 1.0f;
    out.write(reinterpret_cast<char*>(&one), 4);
  }
  CHECK_THROWS(load_table(ps, path, "y"));
  std::remove(path.c_str());
}

TEST_CASE("checksum is sensitive to single-value changes") {
  ParamSet ps;
  RngStream rng(3);
  EmbeddingTable t = make_table(ps, "t", 4, 4, true, rng);
  uint64_t before = table_checksum(t);
  t.weights->value.v[7] += 1e-9;
  CHECK(table_checksum(t) != before);
}

TEST_CASE("bundle validation checks dims and frozen flags") {
  CHECK(PretrainedBundle::expected_dim("air") == 256);
  CHECK(PretrainedBundle::expected_dim("visual") == 256);
  CHECK(PretrainedBundle::expected_dim("skipgram") == 64);
  CHECK_THROWS(PretrainedBundle::expected_dim("glove"));

  ParamSet ps;
  RngStream rng(5);
  PretrainedBundle b;
  b.tables.emplace("skipgram", make_table(ps, "sg", 10, 64, false, rng));
  b.validate();

  PretrainedBundle bad;
  bad.tables.emplace("skipgram", make_table(ps, "sg2", 10, 32, false, rng));
  CHECK_THROWS(bad.validate());

  PretrainedBundle thawed;
  thawed.tables.emplace("air", make_table(ps, "air", 10, 256, true, rng));
  CHECK_THROWS(thawed.validate());
}
