#include "genicl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "genicl/errors.hpp"
#include "genicl/optimizer.hpp"

namespace genicl {

namespace {

std::vector<double> matvec(std::span<const double> W, std::span<const double> x) {
  const std::size_t d = x.size();
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) y[i] += W[i * d + j] * x[j];
  }
  return y;
}

double dotp(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Cosine {
  double value;
  std::vector<double> d_u, d_v;  // d cos / d u and d cos / d v
};

Cosine cosine(const std::vector<double>& u, const std::vector<double>& v) {
  const double nu = std::sqrt(dotp(u, u));
  const double nv = std::sqrt(dotp(v, v));
  if (!(nu > 0.0) || !(nv > 0.0)) throw ScoringError("contrastive: zero projected embedding");
  Cosine c;
  c.value = dotp(u, v) / (nu * nv);
  c.d_u.resize(u.size());
  c.d_v.resize(v.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    c.d_u[i] = v[i] / (nu * nv) - c.value * u[i] / (nu * nu);
    c.d_v[i] = u[i] / (nu * nv) - c.value * v[i] / (nv * nv);
  }
  return c;
}

// grad += g * (du ⊗ a)
void outer_add(std::vector<double>& grad, double g, std::span<const double> du, std::span<const double> a) {
  const std::size_t d = a.size();
  for (std::size_t i = 0; i < d; ++i) {
    const double s = g * du[i];
    for (std::size_t j = 0; j < d; ++j) grad[i * d + j] += s * a[j];
  }
}

}  // namespace

ContrastiveLoss contrastive_loss(std::span<const double> W, const ContrastiveExample& ex, double temperature) {
  const std::size_t d = ex.query.size();
  if (W.size() != d * d) throw ConfigError("contrastive_loss: projection must be d x d");
  if (ex.negatives.empty()) throw ConfigError("contrastive_loss: need at least one negative");
  if (!(temperature > 0.0)) throw ConfigError("contrastive_loss: temperature must be > 0");

  const auto u = matvec(W, ex.query);
  std::vector<const std::vector<double>*> docs{&ex.positive};
  for (const auto& n : ex.negatives) docs.push_back(&n);
  std::vector<Cosine> cos;
  std::vector<std::vector<double>> vs;
  for (const auto* doc : docs) {
    vs.push_back(matvec(W, *doc));
    cos.push_back(cosine(u, vs.back()));
  }
  std::vector<double> logits(cos.size());
  for (std::size_t k = 0; k < cos.size(); ++k) logits[k] = cos[k].value / temperature;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);

  ContrastiveLoss out;
  out.loss = lse - logits[0];
  out.grad.assign(d * d, 0.0);
  for (std::size_t k = 0; k < cos.size(); ++k) {
    const double p = std::exp(logits[k] - lse);
    const double g = (p - (k == 0 ? 1.0 : 0.0)) / temperature;  // dLoss / d cos_k
    outer_add(out.grad, g, cos[k].d_u, ex.query);
    outer_add(out.grad, g, cos[k].d_v, *docs[k]);
  }
  return out;
}

ContrastiveResult contrastive_baseline_train(std::span<const ScoredQuery> data, const DemonstrationPool& pool,
                                             const LmEmbedder& base, const TaskTemplate& tmpl,
                                             const ContrastiveConfig& cfg) {
  if (cfg.n_neg < 1) throw ConfigError("contrastive: n_neg must be >= 1");
  const std::size_t d = base.dim();
  ContrastiveResult res;
  res.projection.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) res.projection[i * d + i] = 1.0;

  std::vector<ContrastiveExample> examples;
  for (const auto& sq : data) {
    if (sq.scores.size() < 2) {
      ++res.skipped_queries;
      continue;
    }
    auto sorted = sq.scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      if (a.second.value != b.second.value) return a.second.value > b.second.value;
      return a.first < b.first;
    });
    ContrastiveExample ex;
    ex.query = base.pooled(index_text(sq.query, tmpl));
    ex.positive = base.pooled(index_text(*pool.find(sorted.front().first), tmpl));
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.n_neg), sorted.size() - 1);
    for (std::size_t k = sorted.size() - n; k < sorted.size(); ++k) {
      if (!(sorted[k].second.value < sorted.front().second.value)) continue;
      ex.negatives.push_back(base.pooled(index_text(*pool.find(sorted[k].first), tmpl)));
    }
    if (ex.negatives.empty()) {
      ++res.skipped_queries;
      continue;
    }
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) return res;

  AdamW<double> opt(d * d, AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0, 0, 0});
  const std::vector<ParamRange> all{ParamRange{0, d * d}};
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 3);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (const auto i : order) {
      const auto l = contrastive_loss(res.projection, examples[i], cfg.temperature);
      total += l.loss;
      opt.step(res.projection, l.grad, all);
    }
    res.epoch_losses.push_back(total / static_cast<double>(examples.size()));
  }
  return res;
}

}  // namespace genicl
