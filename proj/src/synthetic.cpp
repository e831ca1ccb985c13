#include "genicl/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <tuple>

#include "genicl/errors.hpp"

namespace genicl {

namespace {

constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";
constexpr std::string_view kKeys = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

std::string filler(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<std::size_t> pick(0, kLetters.size() - 1);
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(kLetters[pick(rng)]);
  return s;
}

Example make_example(std::string id, const std::string& task_id, std::string input, char key, char digit) {
  Example ex;
  ex.id = std::move(id);
  ex.task_id = task_id;
  ex.input = std::move(input);
  ex.target = std::string(1, digit);
  ex.metadata["key"] = std::string(1, key);
  return ex;
}

std::string padded(const char* prefix, int i) {
  std::string n = std::to_string(i);
  return std::string(prefix) + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (n_keys < 2 || n_keys > 10) throw ConfigError("synthetic task: n_keys must be in [2, 10]");
  if (pool_size < n_keys) throw ConfigError("synthetic task: pool_size must be >= n_keys");
  if (query_count < 0 || test_count < 0) throw ConfigError("synthetic task: negative query count");
  if (filler_length < 0) throw ConfigError("synthetic task: negative filler length");
}

TaskTemplate synthetic_template() {
  TaskTemplate t;
  t.input_pattern = "{input}";
  t.answer_pattern = "{target}";
  t.demo_separator = "\n";
  t.answer_prefix = "";
  return t;
}

SyntheticTask synth_task_generate(const SyntheticTaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ULL + 0x5eed);

  std::string keys(kKeys);
  std::shuffle(keys.begin(), keys.end(), rng);
  keys.resize(static_cast<std::size_t>(spec.n_keys));
  std::string digits = "0123456789";
  std::shuffle(digits.begin(), digits.end(), rng);

  SyntheticTask out;
  for (int k = 0; k < spec.n_keys; ++k) out.key_map.emplace_back(keys[k], digits[k]);

  const std::string task_id = "keymatch";
  auto fresh = [&](const char* prefix, int i, int key_index) {
    const auto [key, digit] = out.key_map[static_cast<std::size_t>(key_index)];
    return make_example(padded(prefix, i), task_id, filler(rng, spec.filler_length) + key, key, digit);
  };

  // Round-robin keys give every key exactly pool_size / n_keys demos (the
  // remainder goes to the first keys); the order is then shuffled.
  std::vector<int> owner(static_cast<std::size_t>(spec.pool_size));
  for (int i = 0; i < spec.pool_size; ++i) owner[i] = i % spec.n_keys;
  std::shuffle(owner.begin(), owner.end(), rng);
  std::vector<Example> pool;
  for (int i = 0; i < spec.pool_size; ++i) pool.push_back(fresh("d", i, owner[i]));
  out.pool = DemonstrationPool(std::move(pool));

  std::uniform_int_distribution<int> any_key(0, spec.n_keys - 1);
  for (auto [ds, prefix, count] : {std::tuple{&out.train, "q", spec.query_count},
                                    std::tuple{&out.test, "t", spec.test_count}}) {
    ds->task_id = task_id;
    ds->kind = TaskKind::generation;
    ds->metric = MetricKind::exact_match;
    ds->template_ = synthetic_template();
    for (int i = 0; i < count; ++i) ds->examples.push_back(fresh(prefix, i, any_key(rng)));
  }
  return out;
}

bool oracle_useful(const Example& query, const Example& demo) {
  const auto q = query.metadata.find("key");
  const auto d = demo.metadata.find("key");
  return q != query.metadata.end() && d != demo.metadata.end() && q->second == d->second;
}

std::size_t oracle_useful_count(const Example& query, const DemonstrationPool& pool) {
  return static_cast<std::size_t>(std::count_if(pool.examples().begin(), pool.examples().end(),
                                                [&](const Example& d) { return oracle_useful(query, d); }));
}

std::vector<std::string> copy_corpus(const CopyCorpusSpec& spec) {
  if (spec.lines < 0 || spec.max_items < 1) throw ConfigError("copy corpus: invalid size");
  if (spec.min_keys < 1 || spec.max_keys < spec.min_keys || spec.max_keys > 26) {
    throw ConfigError("copy corpus: key range must satisfy 1 <= min_keys <= max_keys <= 26");
  }
  std::mt19937_64 rng(spec.seed * 0xbf58476d1ce4e5b9ULL + 0xc0de);
  std::uniform_int_distribution<int> n_items(1, spec.max_items);
  std::uniform_int_distribution<int> n_keys(spec.min_keys, spec.max_keys);
  std::uniform_int_distribution<int> digit_pick(0, 9);

  std::vector<std::string> lines;
  lines.reserve(static_cast<std::size_t>(spec.lines));
  for (int l = 0; l < spec.lines; ++l) {
    std::string keys(kKeys);
    std::shuffle(keys.begin(), keys.end(), rng);
    keys.resize(static_cast<std::size_t>(n_keys(rng)));
    char map[26];
    for (char& c : map) c = static_cast<char>('0' + digit_pick(rng));
    std::uniform_int_distribution<std::size_t> key_pick(0, keys.size() - 1);

    std::string text;
    const int n = n_items(rng);
    for (int i = 0; i < n; ++i) {
      if (i > 0) text.push_back('\n');
      const char k = keys[key_pick(rng)];
      text += filler(rng, spec.filler_length);
      text.push_back(k);
      text.push_back(map[k - 'A']);
    }
    lines.push_back(std::move(text));
  }
  return lines;
}

}  // namespace genicl
