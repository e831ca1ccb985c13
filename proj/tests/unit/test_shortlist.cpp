#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "genicl/errors.hpp"
#include "genicl/shortlist.hpp"
#include "test_support.hpp"

using namespace genicl;

namespace {

Example ex(std::string id, std::string input) {
  Example e;
  e.id = std::move(id);
  e.input = std::move(input);
  e.target = "t";
  return e;
}

// Embeds by table lookup so cosine values are known exactly.
class TableEmbedder : public Embedder {
 public:
  explicit TableEmbedder(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}
  std::size_t dim() const override { return table_.begin()->second.size(); }
  std::vector<double> embed(std::string_view text) const override {
    return normalized(table_.at(std::string(text)), text);
  }

 private:
  std::map<std::string, std::vector<double>> table_;
};

}  // namespace

TEST(RankTopN, OrdersByScoreThenId) {
  std::vector<ScoredCandidate> s{{"c", 1.0, 0}, {"a", 2.0, 0}, {"b", 1.0, 0}, {"d", 0.5, 0}};
  const auto r = rank_top_n(s, 3);
  ASSERT_EQ(r.items.size(), 3u);
  EXPECT_EQ(r.items[0].example_id, "a");
  EXPECT_EQ(r.items[1].example_id, "b");
  EXPECT_EQ(r.items[2].example_id, "c");
  EXPECT_EQ(r.items[2].rank, 3);
  EXPECT_FALSE(r.truncated);
  EXPECT_TRUE(rank_top_n(s, 10).truncated);
}

TEST(Bm25, SoleMatchRanksFirst) {
  const DemonstrationPool pool({ex("doc1", "red green"), ex("doc2", "blue sky"), ex("doc3", "green grass")});
  const auto r = bm25_rank("blue", pool, 3);
  EXPECT_EQ(r.items.front().example_id, "doc2");
  EXPECT_GT(r.items[0].score, 0.0);
  EXPECT_EQ(r.items[1].score, 0.0);
}

TEST(Bm25, IdenticalDocumentsAreAdjacentByIdOrder) {
  const DemonstrationPool pool({ex("z", "cat"), ex("m", "dog bird"), ex("b", "cat")});
  const auto r = bm25_rank("cat", pool, 3);
  EXPECT_EQ(r.items[0].example_id, "b");
  EXPECT_EQ(r.items[1].example_id, "z");
  EXPECT_EQ(r.items[0].score, r.items[1].score);
}

TEST(Bm25, HandEvaluatedThreeDocuments) {
  // N=3, lengths 3,3,2 so avgdl=8/3; df(a)=2, df(d)=1.
  const DemonstrationPool pool({ex("d1", "a b c"), ex("d2", "a a d"), ex("d3", "e f")});
  const double idf_a = std::log(1.0 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5));
  const double idf_d = std::log(1.0 + (3.0 - 1.0 + 0.5) / (1.0 + 0.5));
  const double k = 1.5 * (0.25 + 0.75 * 3.0 / (8.0 / 3.0));
  const double d1 = idf_a * 1.0 * 2.5 / (1.0 + k);
  const double d2 = idf_a * 2.0 * 2.5 / (2.0 + k) + idf_d * 1.0 * 2.5 / (1.0 + k);
  const auto r = bm25_rank("a d", pool, 3);
  ASSERT_EQ(r.items.size(), 3u);
  EXPECT_EQ(r.items[0].example_id, "d2");
  EXPECT_NEAR(r.items[0].score, d2, 1e-12);
  EXPECT_EQ(r.items[1].example_id, "d1");
  EXPECT_NEAR(r.items[1].score, d1, 1e-12);
  EXPECT_EQ(r.items[2].score, 0.0);
}

TEST(Bm25, RejectsBadArguments) {
  const DemonstrationPool empty;
  EXPECT_THROW(bm25_rank("a", empty, 1), ConfigError);
  const DemonstrationPool pool({ex("a", "x")});
  EXPECT_THROW(bm25_rank("a", pool, 0), ConfigError);
}

TEST(Embedding, IdentityOrthogonalityAndZero) {
  const TableEmbedder emb({{"q", {1, 0, 0}}, {"same", {2, 0, 0}}, {"orth", {0, 3, 0}}, {"mid", {1, 1, 0}},
                           {"zero", {0, 0, 0}}});
  const DemonstrationPool pool({ex("p1", "orth"), ex("p2", "same"), ex("p3", "mid")});
  const EmbeddingIndex index(pool, emb);
  const auto r = index.rank("q", 3);
  EXPECT_EQ(r.items[0].example_id, "p2");
  EXPECT_NEAR(r.items[0].score, 1.0, 1e-15);
  EXPECT_EQ(r.items[2].example_id, "p1");
  EXPECT_EQ(r.items[2].score, 0.0);
  try {
    emb.embed("zero");
    FAIL();
  } catch (const ScoringError& e) {
    EXPECT_NE(std::string(e.what()).find("zero"), std::string::npos);
  }
}

TEST(Embedding, LmEmbedderMatchesBruteForceCosine) {
  auto model = std::make_shared<const Model>(
      Model::random(genicl::testing::tiny_config(), Vocabulary::character_default(), 3));
  const LmEmbedder emb(model);
  std::vector<Example> xs;
  const char* words[] = {"apple", "apply", "banana", "band", "cat", "catalog", "dog", "door", "eel", "egg"};
  for (int i = 0; i < 10; ++i) xs.push_back(ex("e" + std::to_string(i), words[i]));
  const DemonstrationPool pool(xs);
  const EmbeddingIndex index(pool, emb);
  const std::string query = "appl";
  const auto qv = emb.embed(query);
  std::vector<ScoredCandidate> brute;
  for (const auto& e : xs) {
    const auto v = emb.embed(e.input);
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * qv[i];
    brute.push_back({e.id, dot, 0});
  }
  const auto want = rank_top_n(brute, 5);
  const auto got = index.rank(query, 5);
  ASSERT_EQ(got.items.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(got.items[i].example_id, want.items[i].example_id);
    EXPECT_NEAR(got.items[i].score, want.items[i].score, 1e-12);
  }
  const auto one_shot = embed_rank(query, pool, 5, emb);
  EXPECT_EQ(one_shot.items, got.items);
}

TEST(Embedding, ProjectionIsApplied) {
  auto model = std::make_shared<const Model>(
      Model::random(genicl::testing::tiny_config(), Vocabulary::character_default(), 3));
  const std::size_t d = model->d();
  std::vector<double> identity(d * d, 0.0), flip(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) identity[i * d + i] = 1.0, flip[i * d + (d - 1 - i)] = 2.0;
  const LmEmbedder plain(model), id(model, identity), fl(model, flip);
  const auto a = plain.embed("hello");
  const auto b = id.embed("hello");
  const auto c = fl.embed("hello");
  for (std::size_t i = 0; i < d; ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-15);
    EXPECT_NEAR(c[i], a[d - 1 - i], 1e-12);
  }
  EXPECT_THROW(LmEmbedder(model, std::vector<double>(3, 1.0)), ConfigError);
}
