#include "genicl/preference.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"

namespace genicl {

template <class T>
LogProb preference_score(const ModelState<T>& model, const Example& query, const Example& demo,
                         const TaskTemplate& tmpl) {
  const std::vector<Example> demos{demo};
  const auto enc = icl_tokens(model.vocab, demos, query, query.target, tmpl);
  return sequence_logprob(model, enc.context, enc.target);
}

template <class T>
DemoPairsResult build_demo_pairs(const Example& query, std::span<const ScoredCandidate> shortlist,
                                 const DemonstrationPool& pool, const ModelState<T>& model, const TaskTemplate& tmpl,
                                 const PairOptions& options) {
  if (options.n_pos < 1 || options.n_neg < 1) throw ConfigError("build_demo_pairs: n_pos and n_neg must be >= 1");
  if (shortlist.size() < static_cast<std::size_t>(options.n_pos + options.n_neg)) {
    throw ConfigError("build_demo_pairs: shortlist of " + std::to_string(shortlist.size()) +
                      " is smaller than n_pos + n_neg");
  }
  DemoPairsResult out;
  const std::uint64_t model_hash = options.cache ? model.content_hash() : 0;

  struct Scored {
    const Example* demo;
    LogProb lp;
    double key;
  };
  std::vector<Scored> scored;
  for (const auto& cand : shortlist) {
    const Example* demo = pool.find(cand.example_id);
    if (!demo) throw ValidationError("shortlist id '" + cand.example_id + "' is not in the pool");
    if (demo->id == query.id) continue;
    std::optional<LogProb> lp;
    if (options.cache) lp = options.cache->get(model_hash, query.id, demo->id);
    if (!lp) {
      try {
        lp = preference_score(model, query, *demo, tmpl);
      } catch (const WindowError&) {
        out.skipped_ids.push_back(demo->id);
        continue;
      }
      if (options.cache) options.cache->put(model_hash, query.id, demo->id, *lp);
    }
    out.scores.emplace_back(demo->id, *lp);
    scored.push_back({demo, *lp, options.per_token_mean ? lp->mean() : lp->value});
  }

  if (scored.empty() ||
      std::all_of(scored.begin(), scored.end(), [&](const Scored& s) { return s.key == scored.front().key; })) {
    out.no_signal = true;
    return out;
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.key != b.key) return a.key > b.key;
    return a.demo->id < b.demo->id;
  });
  const auto n_pos = std::min<std::size_t>(static_cast<std::size_t>(options.n_pos), scored.size());
  const auto n_neg = std::min<std::size_t>(static_cast<std::size_t>(options.n_neg), scored.size());
  for (std::size_t i = 0; i < n_pos; ++i) {
    for (std::size_t j = scored.size() - n_neg; j < scored.size(); ++j) {
      if (i == j || !(scored[i].key > scored[j].key)) continue;
      out.pairs.push_back(PreferencePair{query, *scored[i].demo, *scored[j].demo, scored[i].lp, scored[j].lp});
    }
  }
  if (out.pairs.empty()) out.no_signal = true;
  return out;
}

AnswerPair build_answer_pair(const Example& query, const TaskDataset& dataset, std::uint64_t seed) {
  AnswerPair out{query, query.target, {}};
  std::mt19937_64 rng(seed ^ (hash_string(query.id) * 0x9e3779b97f4a7c15ULL));
  if (dataset.kind == TaskKind::generation) {
    std::set<std::string> distinct;
    for (const auto& ex : dataset.examples) distinct.insert(ex.target);
    if (distinct.size() < 2 || !std::any_of(distinct.begin(), distinct.end(),
                                            [&](const std::string& t) { return t != query.target; })) {
      throw ConstructionError("build_answer_pair: dataset '" + dataset.task_id +
                              "' has no target different from query '" + query.id + "'");
    }
    std::uniform_int_distribution<std::size_t> pick(0, dataset.examples.size() - 1);
    for (;;) {
      const auto& other = dataset.examples[pick(rng)];
      if (other.id == query.id || other.target == query.target) continue;
      out.y_l = other.target;
      return out;
    }
  }
  if (!query.options || query.options->size() < 2) {
    throw ConstructionError("build_answer_pair: query '" + query.id + "' needs at least two options");
  }
  std::vector<std::string> wrong;
  for (const auto& o : *query.options) {
    if (o != query.target) wrong.push_back(o);
  }
  if (wrong.empty()) throw ConstructionError("build_answer_pair: query '" + query.id + "' has no wrong option");
  std::uniform_int_distribution<std::size_t> pick(0, wrong.size() - 1);
  out.y_l = wrong[pick(rng)];
  return out;
}

template LogProb preference_score<float>(const ModelState<float>&, const Example&, const Example&,
                                         const TaskTemplate&);
template LogProb preference_score<double>(const ModelState<double>&, const Example&, const Example&,
                                          const TaskTemplate&);
template DemoPairsResult build_demo_pairs<float>(const Example&, std::span<const ScoredCandidate>,
                                                 const DemonstrationPool&, const ModelState<float>&,
                                                 const TaskTemplate&, const PairOptions&);
template DemoPairsResult build_demo_pairs<double>(const Example&, std::span<const ScoredCandidate>,
                                                  const DemonstrationPool&, const ModelState<double>&,
                                                  const TaskTemplate&, const PairOptions&);

}  // namespace genicl
