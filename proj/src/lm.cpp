#include "genicl/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "genicl/errors.hpp"
#include "genicl/optimizer.hpp"

namespace genicl {

namespace {

constexpr std::string_view kLatentPrefix = "<latent:";

std::string latent_name(std::size_t i) { return std::string(kLatentPrefix) + std::to_string(i) + ">"; }

void check_window(std::size_t context, std::size_t target, int window) {
  if (context + target > static_cast<std::size_t>(window)) {
    throw WindowError("sequence of " + std::to_string(context) + " context + " + std::to_string(target) +
                      " target tokens exceeds context window " + std::to_string(window));
  }
}

std::vector<int> with_bos(const Vocabulary& v) {
  if (v.bos() < 0) throw ConfigError("vocabulary has no <bos> token");
  return {v.bos()};
}

void append(std::vector<int>& out, const std::vector<int>& more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

template <class T>
LatentPrompt find_latent(const ModelState<T>& model) {
  LatentPrompt lp;
  for (std::size_t i = 0;; ++i) {
    const int id = model.vocab.find(latent_name(i));
    if (id < 0) break;
    lp.token_ids.push_back(id);
  }
  if (!lp.token_ids.empty()) {
    const std::size_t d = model.d();
    const auto first = static_cast<std::size_t>(lp.token_ids.front());
    lp.rows = ParamRange{model.tok_emb_offset() + first * d, model.tok_emb_offset() + (first + lp.length()) * d};
  }
  return lp;
}

template <class T>
ScoredSequence<T> score_sequence(const ModelState<T>& model, std::span<const int> context,
                                 std::span<const int> target) {
  ScoredSequence<T> out;
  if (target.empty()) return out;
  if (context.empty()) throw ConfigError("sequence_logprob: context must hold at least one token");
  check_window(context.size(), target.size(), model.config.context_length);

  std::vector<int> tokens(context.begin(), context.end());
  tokens.insert(tokens.end(), target.begin(), target.end() - 1);
  forward(model, tokens, context.size() - 1, out.act);

  const std::size_t vocab = model.vocab_size();
  out.dlogits.resize(out.act.logits.size());
  double total = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    const T* row = out.act.logits.data() + j * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
    const double lse = mx + std::log(z);
    const auto tgt = static_cast<std::size_t>(target[j]);
    total += static_cast<double>(row[tgt]) - lse;
    T* drow = out.dlogits.data() + j * vocab;
    for (std::size_t v = 0; v < vocab; ++v) drow[v] = static_cast<T>(-std::exp(static_cast<double>(row[v]) - lse));
    drow[tgt] += T(1);
  }
  out.logprob = LogProb{total, static_cast<int>(target.size())};
  if (!std::isfinite(total)) throw ScoringError("non-finite log-probability");
  return out;
}

template <class T>
void accumulate_logprob_grad(const ModelState<T>& model, const ScoredSequence<T>& seq, double scale,
                             std::span<T> grad, bool weight_grads) {
  if (seq.dlogits.empty() || scale == 0.0) return;
  std::vector<T> d(seq.dlogits.size());
  const T s = static_cast<T>(scale);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = s * seq.dlogits[i];
  backward(model, seq.act, std::span<const T>(d), grad, weight_grads);
}

template <class T>
LogProb sequence_logprob(const ModelState<T>& model, std::span<const int> context, std::span<const int> target) {
  return score_sequence(model, context, target).logprob;
}

template <class T>
std::vector<double> next_token_logprobs(const ModelState<T>& model, std::span<const int> context) {
  if (context.empty()) throw ConfigError("next_token_logprobs: empty context");
  check_window(context.size(), 0, model.config.context_length);
  Activations<T> act;
  forward(model, context, context.size() - 1, act);
  std::vector<double> out(act.logits.begin(), act.logits.end());
  const double mx = *std::max_element(out.begin(), out.end());
  double z = 0.0;
  for (double v : out) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (double& v : out) v -= lse;
  return out;
}

template <class T>
std::string greedy_generate(const ModelState<T>& model, std::span<const int> context, int max_len) {
  if (max_len < 1) throw ConfigError("greedy_generate: max_len must be >= 1");
  std::vector<int> tokens(context.begin(), context.end());
  std::vector<int> produced;
  const auto window = static_cast<std::size_t>(model.config.context_length);
  for (int step = 0; step < max_len && tokens.size() <= window; ++step) {
    const auto lp = next_token_logprobs(model, tokens);
    const int next = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (next == model.vocab.eos()) break;
    produced.push_back(next);
    if (tokens.size() == window) break;
    tokens.push_back(next);
  }
  return model.vocab.decode(produced);
}

template <class T>
LatentPrompt init_latent(int m, ModelState<T>& model, std::uint64_t seed) {
  if (m < 1) throw ConfigError("init_latent: m must be >= 1");
  const auto existing = find_latent(model).length();
  if (existing + static_cast<std::size_t>(m) > static_cast<std::size_t>(model.config.max_latent)) {
    throw ConfigError("init_latent: " + std::to_string(existing + m) + " latent tokens exceed the configured maximum " +
                      std::to_string(model.config.max_latent));
  }
  const std::size_t d = model.d();
  const std::size_t rows = model.vocab_size();
  const T* emb = model.tok_emb();
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += emb[r * d + i];
  }
  for (double& v : mean) v /= static_cast<double>(rows);
  double var = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) var += (emb[r * d + i] - mean[i]) * (emb[r * d + i] - mean[i]);
  }
  const double scale = std::sqrt(var / static_cast<double>(rows * d));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<T> fresh(static_cast<std::size_t>(m) * d);
  for (int k = 0; k < m; ++k) {
    model.vocab.append_special(latent_name(existing + static_cast<std::size_t>(k)));
    for (std::size_t i = 0; i < d; ++i) fresh[static_cast<std::size_t>(k) * d + i] = static_cast<T>(mean[i] + scale * nd(rng));
  }
  model.append_embedding_rows(fresh);
  LatentPrompt lp = find_latent(model);
  model.trainable = {lp.rows};
  return lp;
}

template <class T>
FrozenModel<T> snapshot_reference(const ModelState<T>& model) {
  auto copy = std::make_shared<ModelState<T>>(model);
  copy->trainable.clear();
  return copy;
}

std::string render_answer(const TaskTemplate& tmpl, const Example& query, std::string_view answer) {
  Example tmp = query;
  tmp.target = std::string(answer);
  TaskTemplate answer_only = tmpl;
  answer_only.input_pattern.clear();
  answer_only.answer_prefix.clear();
  return render_example(answer_only, tmp, true);
}

Encoded latent_given_tokens(const Vocabulary& vocab, const LatentPrompt& latent, const Example& demo,
                            const Example& query, const TaskTemplate& tmpl) {
  if (latent.token_ids.empty()) throw ConfigError("latent prompt has no tokens");
  Encoded e;
  e.context = with_bos(vocab);
  const Example demos[] = {demo};
  append(e.context, vocab.encode(answer_context(demos, query, tmpl)));
  e.target = latent.token_ids;
  return e;
}

Encoded answer_given_tokens(const Vocabulary& vocab, const LatentPrompt& latent, const Example& query,
                            std::string_view answer, const TaskTemplate& tmpl) {
  Encoded e;
  e.context = with_bos(vocab);
  e.context.insert(e.context.end(), latent.token_ids.begin(), latent.token_ids.end());
  append(e.context, vocab.encode(answer_context({}, query, tmpl)));
  if (!answer.empty()) e.target = vocab.encode(render_answer(tmpl, query, answer));
  return e;
}

Encoded icl_tokens(const Vocabulary& vocab, std::span<const Example> demos, const Example& query,
                   std::string_view answer, const TaskTemplate& tmpl) {
  Encoded e;
  e.context = with_bos(vocab);
  append(e.context, vocab.encode(answer_context(demos, query, tmpl)));
  if (!answer.empty()) e.target = vocab.encode(render_answer(tmpl, query, answer));
  return e;
}

template <class T>
LogProb logprob_latent_given(const ModelState<T>& model, const LatentPrompt& latent, const Example& demo,
                             const Example& query, const TaskTemplate& tmpl) {
  const auto e = latent_given_tokens(model.vocab, latent, demo, query, tmpl);
  return sequence_logprob(model, e.context, e.target);
}

template <class T>
LogProb logprob_answer_given(const ModelState<T>& model, const LatentPrompt& latent, const Example& query,
                             std::string_view answer, const TaskTemplate& tmpl) {
  const auto e = answer_given_tokens(model.vocab, latent, query, answer, tmpl);
  return sequence_logprob(model, e.context, e.target);
}

template <class T>
double mean_token_nll(const ModelState<T>& model, std::span<const std::vector<int>> lines) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& line : lines) {
    if (line.size() < 2) continue;
    const auto lp = sequence_logprob(model, std::span<const int>(line).first(1), std::span<const int>(line).subspan(1));
    nll -= lp.value;
    count += static_cast<std::size_t>(lp.token_count);
  }
  return count == 0 ? 0.0 : nll / static_cast<double>(count);
}

PretrainResult pretrain_lm(std::span<const std::string> corpus, const PretrainConfig& cfg, const Vocabulary& vocab) {
  if (corpus.empty()) throw ConfigError("pretrain_lm: corpus is empty");
  if (cfg.batch_size < 1 || cfg.steps < 0) throw ConfigError("pretrain_lm: invalid batch size or step count");
  PretrainResult res;
  res.model = Model::random(cfg.model, vocab, cfg.seed);

  const auto window = static_cast<std::size_t>(cfg.model.context_length);
  std::vector<std::vector<int>> lines;
  lines.reserve(corpus.size());
  for (const auto& text : corpus) {
    std::vector<int> ids{vocab.bos()};
    append(ids, vocab.encode(text));
    ids.push_back(vocab.eos());
    if (ids.size() > window) {
      ids.resize(window);
      ++res.truncated_lines;
    }
    lines.push_back(std::move(ids));
  }
  std::size_t n_held = 0;
  if (lines.size() >= 2) {
    n_held = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.heldout_fraction * lines.size())));
    n_held = std::min(n_held, lines.size() - 1);
  }
  const std::span<const std::vector<int>> train(lines.data(), lines.size() - n_held);
  const std::span<const std::vector<int>> held =
      n_held > 0 ? std::span<const std::vector<int>>(lines.data() + train.size(), n_held) : train;

  res.initial_heldout_loss = mean_token_nll(res.model, held);
  res.final_heldout_loss = res.initial_heldout_loss;
  if (cfg.steps == 0) return res;

  auto& model = res.model;
  model.train_all();
  AdamW<float> opt(model.params.size(), AdamWConfig{cfg.lr, 0.9, 0.95, 1e-8, cfg.weight_decay, cfg.warmup_steps,
                                                    cfg.steps});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<float> grad(model.params.size());
  std::vector<ScoredSequence<float>> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0f);
    double nll = 0.0;
    std::size_t tokens = 0;
    for (auto& seq : batch) {
      const auto& line = train[pick(rng)];
      if (line.size() < 2) {
        seq = {};
        continue;
      }
      seq = score_sequence(model, std::span<const int>(line).first(1), std::span<const int>(line).subspan(1));
      nll -= seq.logprob.value;
      tokens += static_cast<std::size_t>(seq.logprob.token_count);
    }
    if (tokens == 0) continue;
    const double loss = nll / static_cast<double>(tokens);
    if (!std::isfinite(loss)) throw TrainingError("pretraining diverged at step " + std::to_string(step));
    for (const auto& seq : batch) {
      accumulate_logprob_grad(model, seq, -1.0 / static_cast<double>(tokens), std::span<float>(grad), true);
    }
    double norm = 0.0;
    for (float g : grad) norm += static_cast<double>(g) * g;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) throw TrainingError("pretraining gradient non-finite at step " + std::to_string(step));
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
      const auto s = static_cast<float>(cfg.grad_clip / norm);
      for (float& g : grad) g *= s;
    }
    opt.step(model.params, grad, model.trainable);
    res.train_losses.push_back(loss);
  }
  model.trainable.clear();
  res.final_heldout_loss = mean_token_nll(model, held);
  if (!std::isfinite(res.final_heldout_loss)) throw TrainingError("pretraining diverged: held-out loss non-finite");
  return res;
}

#define GENICL_INSTANTIATE(T)                                                                                        \
  template LatentPrompt find_latent<T>(const ModelState<T>&);                                                       \
  template ScoredSequence<T> score_sequence<T>(const ModelState<T>&, std::span<const int>, std::span<const int>);   \
  template void accumulate_logprob_grad<T>(const ModelState<T>&, const ScoredSequence<T>&, double, std::span<T>,    \
                                           bool);                                                                   \
  template LogProb sequence_logprob<T>(const ModelState<T>&, std::span<const int>, std::span<const int>);           \
  template std::vector<double> next_token_logprobs<T>(const ModelState<T>&, std::span<const int>);                  \
  template std::string greedy_generate<T>(const ModelState<T>&, std::span<const int>, int);                         \
  template LatentPrompt init_latent<T>(int, ModelState<T>&, std::uint64_t);                                         \
  template FrozenModel<T> snapshot_reference<T>(const ModelState<T>&);                                              \
  template LogProb logprob_latent_given<T>(const ModelState<T>&, const LatentPrompt&, const Example&,               \
                                           const Example&, const TaskTemplate&);                                    \
  template LogProb logprob_answer_given<T>(const ModelState<T>&, const LatentPrompt&, const Example&,               \
                                           std::string_view, const TaskTemplate&);                                  \
  template double mean_token_nll<T>(const ModelState<T>&, std::span<const std::vector<int>>);

GENICL_INSTANTIATE(float)
GENICL_INSTANTIATE(double)

#undef GENICL_INSTANTIATE

}  // namespace genicl
