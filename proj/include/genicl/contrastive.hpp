#pragma once

// Contrastive retriever baseline: a square projection over frozen mean-pooled
// LM states, trained so the highest-scoring demonstration of a query outranks
// its lowest-scoring ones under a softmax over cosine similarities.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genicl/corpus.hpp"
#include "genicl/lm.hpp"
#include "genicl/shortlist.hpp"

namespace genicl {

struct ContrastiveConfig {
  int n_neg = 4;
  double temperature = 0.1;
  double lr = 1e-2;
  int epochs = 5;
  std::uint64_t seed = 0;
};

struct ContrastiveExample {
  std::vector<double> query;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
};

struct ContrastiveLoss {
  double loss = 0.0;
  /// dLoss/dW, row-major d x d.
  std::vector<double> grad;
};

/// -log softmax_0(s_pos / t, s_neg_1 / t, ...) with s = cos(W q, W demo).
ContrastiveLoss contrastive_loss(std::span<const double> W, const ContrastiveExample& ex, double temperature);

/// A query with preference scores for its shortlist candidates.
struct ScoredQuery {
  Example query;
  std::vector<std::pair<std::string, LogProb>> scores;
};

struct ContrastiveResult {
  std::vector<double> projection;
  std::vector<double> epoch_losses;
  std::size_t skipped_queries = 0;
};

/// Positive = highest preference score, negatives = the n_neg lowest. Queries
/// with no negative are skipped. The projection starts at the identity.
ContrastiveResult contrastive_baseline_train(std::span<const ScoredQuery> data, const DemonstrationPool& pool,
                                             const LmEmbedder& base, const TaskTemplate& tmpl,
                                             const ContrastiveConfig& cfg);

}  // namespace genicl
