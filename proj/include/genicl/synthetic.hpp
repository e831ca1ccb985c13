#pragma once

// Key-match testbed. Each example is a few filler letters followed by one
// uppercase key letter; its target is the key's digit under a seeded injective
// map. A demonstration is useful for a query iff the two share a key.

#include <cstdint>
#include <string>
#include <vector>

#include "genicl/corpus.hpp"

namespace genicl {

struct SyntheticTaskSpec {
  int n_keys = 8;
  int pool_size = 256;
  int query_count = 200;
  int test_count = 100;
  int filler_length = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticTask {
  /// Training queries (Algorithm-style preference learning consumes these).
  TaskDataset train;
  /// Held-out queries for evaluation.
  TaskDataset test;
  DemonstrationPool pool;
  /// key letter -> digit
  std::vector<std::pair<char, char>> key_map;
};

/// Generation task (exact-match metric) whose examples carry metadata "key".
SyntheticTask synth_task_generate(const SyntheticTaskSpec& spec);

TaskTemplate synthetic_template();

/// Oracle usefulness: demo and query carry the same "key" metadata.
bool oracle_useful(const Example& query, const Example& demo);

/// Number of pool demos sharing the query's key.
std::size_t oracle_useful_count(const Example& query, const DemonstrationPool& pool);

struct CopyCorpusSpec {
  int lines = 20000;
  int max_items = 10;
  /// Each line draws its keys from a random subset of this many letters.
  int min_keys = 2;
  int max_keys = 6;
  int filler_length = 3;
  std::uint64_t seed = 0;
};

/// Pretraining text in the key-match format. Every line draws a fresh random
/// key -> digit map, so a key's digit is only predictable from an earlier item
/// in the same line carrying that key.
std::vector<std::string> copy_corpus(const CopyCorpusSpec& spec);

}  // namespace genicl
