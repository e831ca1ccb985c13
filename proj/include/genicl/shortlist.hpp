#pragma once

// Candidate pre-retrieval: Okapi BM25 and cosine similarity over LM embeddings.

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "genicl/corpus.hpp"
#include "genicl/model.hpp"

namespace genicl {

struct ScoredCandidate {
  std::string example_id;
  double score = 0.0;
  int rank = 0;

  friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

struct RankResult {
  std::vector<ScoredCandidate> items;
  /// Set when more candidates were requested than the pool holds.
  bool truncated = false;
};

/// Orders (id, score) by descending score, ties by ascending id, keeps the top n
/// and assigns ranks 1..n.
RankResult rank_top_n(std::vector<ScoredCandidate> scored, int n);

struct BM25Params {
  double k1 = 1.5;
  double b = 0.75;
};

/// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); documents are the
/// whitespace-tokenized rendered inputs of the pool.
RankResult bm25_rank(std::string_view query, const DemonstrationPool& pool, int n, BM25Params params = {},
                     const TaskTemplate& tmpl = {});

/// Text -> unit vector.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  /// Throws ScoringError naming the text when the raw embedding is zero.
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Mean-pooled final (normed) hidden states of a frozen LM over bos ⊕ text,
/// optionally passed through a square linear projection, then length-normalized.
class LmEmbedder : public Embedder {
 public:
  explicit LmEmbedder(FrozenModel<float> model, std::vector<double> projection = {});

  std::size_t dim() const override;
  std::vector<double> embed(std::string_view text) const override;
  /// Mean-pooled hidden state before projection and normalization.
  std::vector<double> pooled(std::string_view text) const;

  const std::vector<double>& projection() const { return projection_; }
  const ModelState<float>& model() const { return *model_; }

 private:
  FrozenModel<float> model_;
  std::vector<double> projection_;  // d x d row-major; empty = identity
};

/// Returns the unit vector of `v`; throws ScoringError mentioning `text` when v is zero.
std::vector<double> normalized(std::vector<double> v, std::string_view text);

/// Pool embeddings computed once; queries are ranked by cosine similarity.
class EmbeddingIndex {
 public:
  EmbeddingIndex(const DemonstrationPool& pool, const Embedder& embedder, const TaskTemplate& tmpl = {});

  RankResult rank(std::string_view query, int n) const;
  RankResult rank_vector(std::span<const double> unit_query, int n) const;
  const std::vector<std::vector<double>>& vectors() const { return vectors_; }

 private:
  const DemonstrationPool* pool_;
  const Embedder* embedder_;
  std::vector<std::vector<double>> vectors_;
};

/// One-shot convenience: embeds the whole pool and ranks it.
RankResult embed_rank(std::string_view query, const DemonstrationPool& pool, int n, const Embedder& embedder,
                      const TaskTemplate& tmpl = {});

/// The text a demonstration is indexed under: its input rendered through the template.
std::string index_text(const Example& ex, const TaskTemplate& tmpl);

}  // namespace genicl
