#include "genicl/selector.hpp"

#include <algorithm>
#include <random>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"

namespace genicl {

std::string_view to_string(OrderPolicy p) {
  switch (p) {
    case OrderPolicy::descending: return "descending";
    case OrderPolicy::ascending: return "ascending";
    case OrderPolicy::shuffle: return "shuffle";
  }
  return "?";
}

OrderPolicy parse_order(std::string_view s) {
  if (s == "descending") return OrderPolicy::descending;
  if (s == "ascending") return OrderPolicy::ascending;
  if (s == "shuffle") return OrderPolicy::shuffle;
  throw ConfigError("unknown order policy '" + std::string(s) + "'");
}

void SelectionConfig::validate() const {
  if (K < 0) throw ConfigError("selection: K must be >= 0");
}

std::vector<ScoredCandidate> top_k(std::vector<ScoredCandidate> scored, int K) {
  if (K <= 0) return {};
  return rank_top_n(std::move(scored), K).items;
}

template <class Item>
std::vector<Item> apply_order(std::vector<Item> items, const SelectionConfig& cfg) {
  switch (cfg.order) {
    case OrderPolicy::descending: break;
    case OrderPolicy::ascending: std::reverse(items.begin(), items.end()); break;
    case OrderPolicy::shuffle: {
      std::mt19937_64 rng(cfg.shuffle_seed * 0x9e3779b97f4a7c15ULL + 0x5u);
      std::shuffle(items.begin(), items.end(), rng);
      break;
    }
  }
  return items;
}

template std::vector<ScoredCandidate> apply_order(std::vector<ScoredCandidate>, const SelectionConfig&);
template std::vector<Example> apply_order(std::vector<Example>, const SelectionConfig&);

template <class T>
std::vector<ScoredCandidate> latent_scores(const Example& query, std::span<const ScoredCandidate> shortlist,
                                           const DemonstrationPool& pool, const ModelState<T>& model,
                                           const LatentPrompt& latent, const TaskTemplate& tmpl) {
  if (latent.length() == 0) throw SelectionError("selection requires a trained latent prompt");
  std::vector<ScoredCandidate> out;
  out.reserve(shortlist.size());
  for (const auto& cand : shortlist) {
    const Example* demo = pool.find(cand.example_id);
    if (!demo) throw SelectionError("shortlist id '" + cand.example_id + "' is not in the pool");
    out.push_back({demo->id, logprob_latent_given(model, latent, *demo, query, tmpl).value, 0});
  }
  return out;
}

template <class T>
Selection select_from_shortlist(const Example& query, std::span<const ScoredCandidate> shortlist,
                                const DemonstrationPool& pool, const ModelState<T>& model, const LatentPrompt& latent,
                                const SelectionConfig& cfg, const TaskTemplate& tmpl) {
  cfg.validate();
  Selection sel;
  if (cfg.K == 0) return sel;
  if (static_cast<std::size_t>(cfg.K) > shortlist.size()) {
    throw SelectionError("K=" + std::to_string(cfg.K) + " exceeds shortlist size " + std::to_string(shortlist.size()));
  }
  auto picked = apply_order(top_k(latent_scores(query, shortlist, pool, model, latent, tmpl), cfg.K), cfg);
  for (const auto& c : picked) {
    sel.demos.push_back(*pool.find(c.example_id));
    sel.scores.push_back(c.score);
  }
  return sel;
}

template <class T>
Selection select_demonstrations(const Example& query, const DemonstrationPool& pool, const ModelState<T>& model,
                                const LatentPrompt& latent, const EmbeddingIndex& index, int shortlist_n,
                                const SelectionConfig& cfg, const TaskTemplate& tmpl) {
  cfg.validate();
  if (cfg.K == 0) return {};
  if (shortlist_n < cfg.K) {
    throw SelectionError("shortlist_n=" + std::to_string(shortlist_n) + " is smaller than K=" + std::to_string(cfg.K));
  }
  const auto shortlist = index.rank(index_text(query, tmpl), shortlist_n).items;
  return select_from_shortlist(query, shortlist, pool, model, latent, cfg, tmpl);
}

#define GENICL_INSTANTIATE(T)                                                                                       \
  template std::vector<ScoredCandidate> latent_scores<T>(const Example&, std::span<const ScoredCandidate>,         \
                                                         const DemonstrationPool&, const ModelState<T>&,           \
                                                         const LatentPrompt&, const TaskTemplate&);                \
  template Selection select_from_shortlist<T>(const Example&, std::span<const ScoredCandidate>,                    \
                                              const DemonstrationPool&, const ModelState<T>&, const LatentPrompt&, \
                                              const SelectionConfig&, const TaskTemplate&);                        \
  template Selection select_demonstrations<T>(const Example&, const DemonstrationPool&, const ModelState<T>&,      \
                                              const LatentPrompt&, const EmbeddingIndex&, int,                     \
                                              const SelectionConfig&, const TaskTemplate&);

GENICL_INSTANTIATE(float)
GENICL_INSTANTIATE(double)

#undef GENICL_INSTANTIATE

}  // namespace genicl
