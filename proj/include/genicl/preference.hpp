#pragma once

// Preference data: which shortlist demonstrations help the frozen LM produce a
// query's ground truth, and which wrong answers to contrast with it.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "genicl/corpus.hpp"
#include "genicl/lm.hpp"
#include "genicl/score_cache.hpp"
#include "genicl/shortlist.hpp"

namespace genicl {

struct PreferencePair {
  Example query;
  Example preferred;
  Example non_preferred;
  LogProb preferred_score;
  LogProb non_preferred_score;
};

struct AnswerPair {
  Example query;
  std::string y_w;
  std::string y_l;
};

/// log P(query.target | render(demo) ⊕ separator ⊕ render(query) ⊕ prefix) under the scoring model.
template <class T>
LogProb preference_score(const ModelState<T>& model, const Example& query, const Example& demo,
                         const TaskTemplate& tmpl);

struct PairOptions {
  int n_pos = 2;
  int n_neg = 2;
  /// Rank by mean per-token log-probability instead of the sum.
  bool per_token_mean = false;
  ScoreCache* cache = nullptr;
};

struct DemoPairsResult {
  std::vector<PreferencePair> pairs;
  /// Every scored candidate received the same score.
  bool no_signal = false;
  /// Candidates whose rendered prompt did not fit the window.
  std::vector<std::string> skipped_ids;
  /// Scores of all scored candidates, in shortlist order.
  std::vector<std::pair<std::string, LogProb>> scores;
};

/// Scores every shortlist candidate, then pairs the top n_pos with the bottom
/// n_neg (ties resolved by ascending id). Pairs with equal scores are dropped.
template <class T>
DemoPairsResult build_demo_pairs(const Example& query, std::span<const ScoredCandidate> shortlist,
                                 const DemonstrationPool& pool, const ModelState<T>& model, const TaskTemplate& tmpl,
                                 const PairOptions& options = {});

/// y_w = query.target. Option tasks: y_l uniform over the other options.
/// Generation: y_l is the target of a uniformly drawn other example, redrawn
/// until it differs textually.
AnswerPair build_answer_pair(const Example& query, const TaskDataset& dataset, std::uint64_t seed);

}  // namespace genicl
