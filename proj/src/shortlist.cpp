#include "genicl/shortlist.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "genicl/errors.hpp"
#include "genicl/metrics.hpp"

namespace genicl {

RankResult rank_top_n(std::vector<ScoredCandidate> scored, int n) {
  if (n < 1) throw ConfigError("ranking requires n >= 1");
  RankResult out;
  std::sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.example_id < b.example_id;
  });
  const auto want = static_cast<std::size_t>(n);
  out.truncated = want > scored.size();
  scored.resize(std::min(want, scored.size()));
  for (std::size_t i = 0; i < scored.size(); ++i) scored[i].rank = static_cast<int>(i) + 1;
  out.items = std::move(scored);
  return out;
}

std::string index_text(const Example& ex, const TaskTemplate& tmpl) {
  return render_example(tmpl, ex, false);
}

RankResult bm25_rank(std::string_view query, const DemonstrationPool& pool, int n, BM25Params params,
                     const TaskTemplate& tmpl) {
  if (pool.empty()) throw ConfigError("bm25_rank: pool is empty");
  if (n < 1) throw ConfigError("bm25_rank: n must be >= 1");

  std::vector<std::map<std::string, int>> tf(pool.size());
  std::vector<double> len(pool.size());
  std::unordered_map<std::string, int> df;
  double total = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto toks = whitespace_tokens(index_text(pool[i], tmpl));
    for (const auto& t : toks) ++tf[i][t];
    for (const auto& [t, _] : tf[i]) ++df[t];
    len[i] = static_cast<double>(toks.size());
    total += len[i];
  }
  const double N = static_cast<double>(pool.size());
  const double avgdl = total / N;

  // Repeated query terms contribute once per occurrence.
  const auto qtoks = whitespace_tokens(query);
  std::vector<ScoredCandidate> scored;
  scored.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    double s = 0.0;
    for (const auto& t : qtoks) {
      const auto it = tf[i].find(t);
      if (it == tf[i].end()) continue;
      const double f = it->second;
      const double d = df[t];
      const double idf = std::log(1.0 + (N - d + 0.5) / (d + 0.5));
      const double norm = avgdl > 0.0 ? len[i] / avgdl : 0.0;
      s += idf * f * (params.k1 + 1.0) / (f + params.k1 * (1.0 - params.b + params.b * norm));
    }
    scored.push_back({pool[i].id, s, 0});
  }
  return rank_top_n(std::move(scored), n);
}

std::vector<double> normalized(std::vector<double> v, std::string_view text) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw ScoringError("zero or non-finite embedding for text \"" + std::string(text) + "\"");
  }
  for (double& x : v) x /= norm;
  return v;
}

LmEmbedder::LmEmbedder(FrozenModel<float> model, std::vector<double> projection)
    : model_(std::move(model)), projection_(std::move(projection)) {
  if (!model_) throw ConfigError("LmEmbedder: null model");
  const std::size_t d = model_->d();
  if (!projection_.empty() && projection_.size() != d * d) {
    throw ConfigError("LmEmbedder: projection must be d x d");
  }
}

std::size_t LmEmbedder::dim() const { return model_->d(); }

std::vector<double> LmEmbedder::pooled(std::string_view text) const {
  std::vector<int> ids{model_->vocab.bos()};
  const auto body = model_->vocab.encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  if (ids.size() > static_cast<std::size_t>(model_->config.context_length)) {
    ids.resize(static_cast<std::size_t>(model_->config.context_length));
  }
  Activations<float> act;
  forward(*model_, ids, ids.size() - 1, act);
  const std::size_t d = model_->d();
  std::vector<double> mean(d, 0.0);
  // The bos position carries no text; pool over the rest when text is present.
  const std::size_t first = ids.size() > 1 ? 1 : 0;
  for (std::size_t t = first; t < ids.size(); ++t) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += act.h[t * d + j];
  }
  const double count = static_cast<double>(ids.size() - first);
  for (double& x : mean) x /= count;
  return mean;
}

std::vector<double> LmEmbedder::embed(std::string_view text) const {
  auto v = pooled(text);
  if (!projection_.empty()) {
    const std::size_t d = v.size();
    std::vector<double> p(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) p[i] += projection_[i * d + j] * v[j];
    }
    v = std::move(p);
  }
  return normalized(std::move(v), text);
}

EmbeddingIndex::EmbeddingIndex(const DemonstrationPool& pool, const Embedder& embedder, const TaskTemplate& tmpl)
    : pool_(&pool), embedder_(&embedder) {
  vectors_.reserve(pool.size());
  for (const auto& ex : pool.examples()) vectors_.push_back(embedder.embed(index_text(ex, tmpl)));
}

RankResult EmbeddingIndex::rank_vector(std::span<const double> q, int n) const {
  if (pool_->empty()) throw ConfigError("embed_rank: pool is empty");
  std::vector<ScoredCandidate> scored;
  scored.reserve(vectors_.size());
  for (std::size_t i = 0; i < vectors_.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += q[j] * vectors_[i][j];
    scored.push_back({(*pool_)[i].id, s, 0});
  }
  return rank_top_n(std::move(scored), n);
}

RankResult EmbeddingIndex::rank(std::string_view query, int n) const {
  const auto q = embedder_->embed(query);
  return rank_vector(q, n);
}

RankResult embed_rank(std::string_view query, const DemonstrationPool& pool, int n, const Embedder& embedder,
                      const TaskTemplate& tmpl) {
  return EmbeddingIndex(pool, embedder, tmpl).rank(query, n);
}

}  // namespace genicl
