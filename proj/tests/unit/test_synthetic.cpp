#include <gtest/gtest.h>

#include <map>
#include <set>

#include "genicl/errors.hpp"
#include "genicl/synthetic.hpp"

using namespace genicl;

TEST(Synthetic, ShapesAndIds) {
  SyntheticTaskSpec s;
  s.seed = 3;
  const auto t = synth_task_generate(s);
  EXPECT_EQ(t.pool.size(), 256u);
  EXPECT_EQ(t.train.examples.size(), 200u);
  EXPECT_EQ(t.test.examples.size(), 100u);
  EXPECT_EQ(t.pool[0].id, "d0000");
  EXPECT_EQ(t.train.examples[0].id, "q0000");
  EXPECT_EQ(t.test.examples[0].id, "t0000");
  EXPECT_EQ(t.train.kind, TaskKind::generation);
  EXPECT_EQ(t.train.metric, MetricKind::exact_match);
  EXPECT_NO_THROW(validate_dataset(t.train));
  EXPECT_NO_THROW(validate_dataset(t.test));
}

TEST(Synthetic, KeyMapIsInjectiveAndTargetsFollowIt) {
  SyntheticTaskSpec s;
  s.n_keys = 10;
  s.seed = 8;
  const auto t = synth_task_generate(s);
  std::map<char, char> km(t.key_map.begin(), t.key_map.end());
  std::set<char> digits;
  for (const auto& [k, d] : km) digits.insert(d);
  EXPECT_EQ(km.size(), 10u);
  EXPECT_EQ(digits.size(), 10u);
  auto check = [&](const Example& e) {
    ASSERT_EQ(e.input.size(), 4u);
    const char key = e.input.back();
    EXPECT_TRUE(key >= 'A' && key <= 'Z');
    EXPECT_EQ(e.metadata.at("key"), std::string(1, key));
    EXPECT_EQ(e.target, std::string(1, km.at(key)));
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(e.input[i] >= 'a' && e.input[i] <= 'z');
  };
  for (const auto& e : t.pool.examples()) check(e);
  for (const auto& e : t.train.examples) check(e);
  for (const auto& e : t.test.examples) check(e);
}

TEST(Synthetic, PoolKeysAreBalanced) {
  SyntheticTaskSpec s;
  s.n_keys = 10;
  s.pool_size = 100;
  s.seed = 1;
  const auto t = synth_task_generate(s);
  std::map<std::string, int> counts;
  for (const auto& e : t.pool.examples()) ++counts[e.metadata.at("key")];
  EXPECT_EQ(counts.size(), 10u);
  for (const auto& [k, c] : counts) EXPECT_EQ(c, 10) << k;
  for (const auto& q : t.test.examples) EXPECT_EQ(oracle_useful_count(q, t.pool), 10u);
}

TEST(Synthetic, OracleUsefulIsKeyEquality) {
  Example a, b, c;
  a.metadata["key"] = "K";
  b.metadata["key"] = "K";
  c.metadata["key"] = "Q";
  EXPECT_TRUE(oracle_useful(a, b));
  EXPECT_FALSE(oracle_useful(a, c));
}

TEST(Synthetic, SeedDeterminism) {
  SyntheticTaskSpec s;
  s.seed = 5;
  const auto a = synth_task_generate(s);
  const auto b = synth_task_generate(s);
  EXPECT_EQ(a.pool.examples(), b.pool.examples());
  EXPECT_EQ(a.test.examples, b.test.examples);
  s.seed = 6;
  EXPECT_NE(synth_task_generate(s).pool.examples(), a.pool.examples());
}

TEST(Synthetic, SpecValidation) {
  SyntheticTaskSpec s;
  s.n_keys = 11;
  EXPECT_THROW(synth_task_generate(s), ConfigError);
  s.n_keys = 8;
  s.pool_size = 4;
  EXPECT_THROW(synth_task_generate(s), ConfigError);
}

TEST(CopyCorpus, LinesAreConsistentWithinALine) {
  CopyCorpusSpec s;
  s.lines = 300;
  s.seed = 2;
  const auto lines = copy_corpus(s);
  ASSERT_EQ(lines.size(), 300u);
  for (const auto& line : lines) {
    std::map<char, char> seen;
    std::size_t start = 0;
    int items = 0;
    while (start <= line.size()) {
      auto end = line.find('\n', start);
      if (end == std::string::npos) end = line.size();
      const auto item = line.substr(start, end - start);
      ASSERT_EQ(item.size(), 5u) << line;
      const char key = item[3], digit = item[4];
      EXPECT_TRUE(key >= 'A' && key <= 'Z');
      EXPECT_TRUE(digit >= '0' && digit <= '9');
      if (auto it = seen.find(key); it != seen.end()) EXPECT_EQ(it->second, digit) << line;
      seen[key] = digit;
      ++items;
      start = end + 1;
    }
    EXPECT_GE(items, 1);
    EXPECT_LE(items, s.max_items);
    EXPECT_LE(static_cast<int>(seen.size()), s.max_keys);
  }
}
