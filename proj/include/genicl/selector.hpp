#pragma once

// Inference-time selection: shortlist, score each candidate by log P(z | demo, query),
// keep the top K, then order them.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "genicl/corpus.hpp"
#include "genicl/lm.hpp"
#include "genicl/shortlist.hpp"

namespace genicl {

enum class OrderPolicy { descending, ascending, shuffle };

std::string_view to_string(OrderPolicy p);
OrderPolicy parse_order(std::string_view s);

struct SelectionConfig {
  int K = 8;
  OrderPolicy order = OrderPolicy::descending;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
};

struct Selection {
  /// Demonstrations in prompt order.
  std::vector<Example> demos;
  /// Latent scores aligned with `demos`.
  std::vector<double> scores;
};

/// Top-K of (id, score) candidates by descending score, ties by ascending id.
std::vector<ScoredCandidate> top_k(std::vector<ScoredCandidate> scored, int K);

/// Reorders a descending top-K list according to the policy.
template <class Item>
std::vector<Item> apply_order(std::vector<Item> descending, const SelectionConfig& cfg);

/// Scores every shortlisted candidate with log P(z | demo, query).
template <class T>
std::vector<ScoredCandidate> latent_scores(const Example& query, std::span<const ScoredCandidate> shortlist,
                                           const DemonstrationPool& pool, const ModelState<T>& model,
                                           const LatentPrompt& latent, const TaskTemplate& tmpl);

/// Shortlists via `index` (shortlist_n candidates), scores and selects.
template <class T>
Selection select_demonstrations(const Example& query, const DemonstrationPool& pool, const ModelState<T>& model,
                                const LatentPrompt& latent, const EmbeddingIndex& index, int shortlist_n,
                                const SelectionConfig& cfg, const TaskTemplate& tmpl);

/// Selection over an explicit shortlist (no retrieval step).
template <class T>
Selection select_from_shortlist(const Example& query, std::span<const ScoredCandidate> shortlist,
                                const DemonstrationPool& pool, const ModelState<T>& model, const LatentPrompt& latent,
                                const SelectionConfig& cfg, const TaskTemplate& tmpl);

}  // namespace genicl
