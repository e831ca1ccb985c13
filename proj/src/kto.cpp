#include "genicl/kto.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "genicl/errors.hpp"
#include "genicl/optimizer.hpp"

namespace genicl {

void TrainConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("train: beta must be > 0");
  if (lambda_w < 0.0 || lambda_l < 0.0) throw ConfigError("train: lambda_w and lambda_l must be >= 0");
  if (eta1 < 0.0 || eta2 < 0.0) throw ConfigError("train: learning rates must be >= 0");
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
  if (pairs_per_query < 0) throw ConfigError("train: pairs_per_query must be >= 0");
}

double kl_baseline_from_ratios(std::span<const double> ratios, double beta) {
  if (ratios.empty()) return 0.0;
  double sum = 0.0;
  for (double r : ratios) sum += beta * r;
  return std::max(0.0, sum / static_cast<double>(ratios.size()));
}

KTOObjective kto_objective(std::span<const double> r_w, std::span<const double> r_l, double s_ref, double beta,
                           double lambda_w, double lambda_l) {
  if (r_w.size() != r_l.size() || r_w.empty()) throw ConfigError("kto_objective: need equal, non-empty ratio lists");
  KTOObjective out;
  const double n = static_cast<double>(r_w.size());
  out.d_r_w.resize(r_w.size());
  out.d_r_l.resize(r_l.size());
  double total = 0.0;
  for (std::size_t i = 0; i < r_w.size(); ++i) {
    const double sw = sigmoid(beta * r_w[i] - s_ref);
    const double sl = sigmoid(s_ref - beta * r_l[i]);
    total += lambda_w * sw + lambda_l * sl;
    out.d_r_w[i] = -lambda_w * sw * (1.0 - sw) * beta / n;
    out.d_r_l[i] = lambda_l * sl * (1.0 - sl) * beta / n;
  }
  out.loss = -total / n;
  return out;
}

template <class T>
double ReferenceScorer<T>::logprob(const Encoded& enc) {
  std::vector<int> key = enc.context;
  key.push_back(-1);
  key.insert(key.end(), enc.target.begin(), enc.target.end());
  const auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const double v = sequence_logprob(*ref_, enc.context, enc.target).value;
  cache_.emplace(std::move(key), v);
  return v;
}

Encoded encode_item(const Vocabulary& vocab, const LatentPrompt& latent, Direction dir, const Example& query,
                    const Example* demo, std::string_view answer, const TaskTemplate& tmpl) {
  if (dir == Direction::latent_given_demo) {
    if (!demo) throw ConfigError("encode_item: demo-level items need a demonstration");
    return latent_given_tokens(vocab, latent, *demo, query, tmpl);
  }
  return answer_given_tokens(vocab, latent, query, answer, tmpl);
}

namespace {

template <class T>
void check_compatible(const ModelState<T>& model, const ModelState<T>& reference) {
  if (!(model.vocab == reference.vocab) || model.params.size() != reference.params.size()) {
    throw ConfigError("policy and reference models do not share a vocabulary and architecture");
  }
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw TrainingError("non-finite " + what);
}

struct Branch {
  std::vector<Encoded> items;
  std::vector<std::string> labels;
};

template <class T>
KTOBatchStats kto_batch(const Branch& wins, const Branch& losses, const std::vector<Encoded>& mismatched,
                        const ModelState<T>& model, ReferenceScorer<T>& reference, const TrainConfig& cfg,
                        std::vector<T>* grad) {
  check_compatible(model, reference.model());
  const std::size_t n = wins.items.size();
  std::vector<double> r_w(n), r_l(n);
  std::vector<ScoredSequence<T>> seq_w(grad ? n : 0), seq_l(grad ? n : 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto sw = score_sequence(model, wins.items[i].context, wins.items[i].target);
    auto sl = score_sequence(model, losses.items[i].context, losses.items[i].target);
    r_w[i] = sw.logprob.value - reference.logprob(wins.items[i]);
    r_l[i] = sl.logprob.value - reference.logprob(losses.items[i]);
    check_finite(r_w[i], "log-ratio for " + wins.labels[i]);
    check_finite(r_l[i], "log-ratio for " + losses.labels[i]);
    if (grad) {
      seq_w[i] = std::move(sw);
      seq_l[i] = std::move(sl);
    }
  }
  const auto base = estimate_ref_baseline<T>(mismatched, model, reference, cfg.beta);
  const auto obj = kto_objective(r_w, r_l, base.value, cfg.beta, cfg.lambda_w, cfg.lambda_l);
  check_finite(obj.loss, "loss for batch starting at " + wins.labels.front());

  KTOBatchStats st;
  st.ref_baseline = base.value;
  st.baseline_warning = base.warning;
  st.loss_value = obj.loss;
  st.pairs = n;
  st.mean_log_ratio_preferred = std::accumulate(r_w.begin(), r_w.end(), 0.0) / static_cast<double>(n);
  st.mean_log_ratio_nonpreferred = std::accumulate(r_l.begin(), r_l.end(), 0.0) / static_cast<double>(n);
  if (grad) {
    for (std::size_t i = 0; i < n; ++i) {
      accumulate_logprob_grad(model, seq_w[i], obj.d_r_w[i], std::span<T>(*grad), false);
      accumulate_logprob_grad(model, seq_l[i], obj.d_r_l[i], std::span<T>(*grad), false);
    }
  }
  return st;
}

}  // namespace

template <class T>
double log_ratio(const ModelState<T>& model, const ModelState<T>& reference, const Encoded& item) {
  check_compatible(model, reference);
  return sequence_logprob(model, item.context, item.target).value -
         sequence_logprob(reference, item.context, item.target).value;
}

template <class T>
double log_ratio(const ModelState<T>& model, const ModelState<T>& reference, const LatentPrompt& latent,
                 const Example& query, const Example& demo, const TaskTemplate& tmpl) {
  return log_ratio(model, reference,
                   encode_item(model.vocab, latent, Direction::latent_given_demo, query, &demo, {}, tmpl));
}

template <class T>
double log_ratio(const ModelState<T>& model, const ModelState<T>& reference, const LatentPrompt& latent,
                 const Example& query, std::string_view answer, const TaskTemplate& tmpl) {
  return log_ratio(model, reference,
                   encode_item(model.vocab, latent, Direction::answer_given_latent, query, nullptr, answer, tmpl));
}

std::vector<Encoded> mismatched_items(const Vocabulary& vocab, const LatentPrompt& latent, Direction dir,
                                      std::span<const Example> queries, std::span<const Example> demos,
                                      std::span<const std::string> answers, const TaskTemplate& tmpl) {
  const std::size_t n = queries.size();
  std::vector<Encoded> out;
  if (n < 2) return out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Example& other = queries[(i + 1) % n];
    if (dir == Direction::latent_given_demo) {
      out.push_back(encode_item(vocab, latent, dir, other, &demos[i], {}, tmpl));
    } else {
      out.push_back(encode_item(vocab, latent, dir, other, nullptr, answers[i], tmpl));
    }
  }
  return out;
}

template <class T>
BaselineEstimate estimate_ref_baseline(std::span<const Encoded> mismatched, const ModelState<T>& model,
                                       ReferenceScorer<T>& reference, double beta) {
  BaselineEstimate out;
  if (mismatched.size() < 2) {
    out.warning = true;
    return out;
  }
  std::vector<double> ratios;
  ratios.reserve(mismatched.size());
  for (const auto& item : mismatched) {
    ratios.push_back(sequence_logprob(model, item.context, item.target).value - reference.logprob(item));
  }
  double sum = 0.0;
  for (double r : ratios) sum += beta * r;
  out.raw = sum / static_cast<double>(ratios.size());
  out.value = kl_baseline_from_ratios(ratios, beta);
  return out;
}

template <class T>
KTOBatchStats demo_loss(std::span<const PreferencePair> batch, const ModelState<T>& model,
                        ReferenceScorer<T>& reference, const LatentPrompt& latent, const TrainConfig& cfg,
                        const TaskTemplate& tmpl, std::vector<T>* grad) {
  if (batch.empty()) throw ConfigError("demo_loss: empty batch");
  Branch wins, losses;
  std::vector<Example> queries, demos;
  for (const auto& p : batch) {
    wins.items.push_back(encode_item(model.vocab, latent, Direction::latent_given_demo, p.query, &p.preferred, {}, tmpl));
    losses.items.push_back(
        encode_item(model.vocab, latent, Direction::latent_given_demo, p.query, &p.non_preferred, {}, tmpl));
    wins.labels.push_back("pair " + p.query.id + "/" + p.preferred.id);
    losses.labels.push_back("pair " + p.query.id + "/" + p.non_preferred.id);
  }
  for (const auto& p : batch) {
    queries.push_back(p.query);
    demos.push_back(p.preferred);
  }
  for (const auto& p : batch) {
    queries.push_back(p.query);
    demos.push_back(p.non_preferred);
  }
  const auto mism = mismatched_items(model.vocab, latent, Direction::latent_given_demo, queries, demos, {}, tmpl);
  return kto_batch(wins, losses, mism, model, reference, cfg, grad);
}

template <class T>
KTOBatchStats answer_loss(std::span<const AnswerPair> batch, const ModelState<T>& model,
                          ReferenceScorer<T>& reference, const LatentPrompt& latent, const TrainConfig& cfg,
                          const TaskTemplate& tmpl, std::vector<T>* grad) {
  if (batch.empty()) throw ConfigError("answer_loss: empty batch");
  Branch wins, losses;
  std::vector<Example> queries;
  std::vector<std::string> answers;
  for (const auto& p : batch) {
    wins.items.push_back(encode_item(model.vocab, latent, Direction::answer_given_latent, p.query, nullptr, p.y_w, tmpl));
    losses.items.push_back(
        encode_item(model.vocab, latent, Direction::answer_given_latent, p.query, nullptr, p.y_l, tmpl));
    wins.labels.push_back("answer " + p.query.id + "/" + p.y_w);
    losses.labels.push_back("answer " + p.query.id + "/" + p.y_l);
  }
  for (const auto& p : batch) {
    queries.push_back(p.query);
    answers.push_back(p.y_w);
  }
  for (const auto& p : batch) {
    queries.push_back(p.query);
    answers.push_back(p.y_l);
  }
  const auto mism = mismatched_items(model.vocab, latent, Direction::answer_given_latent, queries, {}, answers, tmpl);
  return kto_batch(wins, losses, mism, model, reference, cfg, grad);
}

template <class T>
TrainResult train(std::span<const TrainQuery> queries, const TaskDataset& dataset, ModelState<T>& model,
                  const LatentPrompt& latent, const ModelState<T>& reference, const TrainConfig& cfg,
                  const std::function<void(const TrainLogRecord&)>& on_step) {
  cfg.validate();
  TrainResult res;
  if (cfg.steps == 0) return res;
  if (queries.empty()) throw ConfigError("train: no training queries");
  if (model.trainable.empty()) throw ConfigError("train: model has no trainable parameters (install a latent first)");
  check_compatible(model, reference);

  const auto& tmpl = dataset.template_;
  ReferenceScorer<T> ref(reference);
  AdamW<T> opt_demo(model.params.size(), AdamWConfig{cfg.eta1, 0.9, 0.999, 1e-8, cfg.weight_decay, cfg.warmup_steps, 0});
  AdamW<T> opt_answer(model.params.size(),
                      AdamWConfig{cfg.eta2, 0.9, 0.999, 1e-8, cfg.weight_decay, cfg.warmup_steps, 0});
  std::vector<T> grad(model.params.size());

  std::mt19937_64 rng(cfg.seed * 0x2545f4914f6cdd1dULL + 17);
  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const TrainQuery*> batch;
    for (int b = 0; b < cfg.batch_size && b < static_cast<int>(queries.size()); ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        ++epoch;
      }
      batch.push_back(&queries[order[cursor++]]);
    }

    TrainLogRecord rec;
    rec.step = step;
    if (cfg.use_demo_loss) {
      std::vector<PreferencePair> pairs;
      for (const auto* q : batch) {
        if (cfg.pairs_per_query == 0 || q->pairs.size() <= static_cast<std::size_t>(cfg.pairs_per_query)) {
          pairs.insert(pairs.end(), q->pairs.begin(), q->pairs.end());
        } else {
          std::vector<std::size_t> idx(q->pairs.size());
          std::iota(idx.begin(), idx.end(), std::size_t{0});
          std::shuffle(idx.begin(), idx.end(), rng);
          for (int k = 0; k < cfg.pairs_per_query; ++k) pairs.push_back(q->pairs[idx[static_cast<std::size_t>(k)]]);
        }
      }
      if (pairs.empty()) {
        ++res.skipped_batches;
        res.log.push_back(rec);
        if (on_step) on_step(rec);
        continue;
      }
      std::fill(grad.begin(), grad.end(), T(0));
      rec.demo = demo_loss<T>(pairs, model, ref, latent, cfg, tmpl, &grad);
      rec.lr_demo = opt_demo.step(model.params, grad, model.trainable);
      ++res.demo_updates;
    }
    if (cfg.use_answer_loss) {
      std::vector<AnswerPair> answers;
      for (const auto* q : batch) answers.push_back(build_answer_pair(q->query, dataset, cfg.seed + 1000003 * epoch));
      std::fill(grad.begin(), grad.end(), T(0));
      rec.answer = answer_loss<T>(answers, model, ref, latent, cfg, tmpl, &grad);
      rec.lr_answer = opt_answer.step(model.params, grad, model.trainable);
      ++res.answer_updates;
    }
    rec.total = (rec.demo ? rec.demo->loss_value : 0.0) + (rec.answer ? rec.answer->loss_value : 0.0);
    res.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return res;
}

#define GENICL_INSTANTIATE(T)                                                                                        \
  template class ReferenceScorer<T>;                                                                                 \
  template double log_ratio<T>(const ModelState<T>&, const ModelState<T>&, const Encoded&);                         \
  template double log_ratio<T>(const ModelState<T>&, const ModelState<T>&, const LatentPrompt&, const Example&,     \
                               const Example&, const TaskTemplate&);                                                \
  template double log_ratio<T>(const ModelState<T>&, const ModelState<T>&, const LatentPrompt&, const Example&,     \
                               std::string_view, const TaskTemplate&);                                              \
  template BaselineEstimate estimate_ref_baseline<T>(std::span<const Encoded>, const ModelState<T>&,                \
                                                     ReferenceScorer<T>&, double);                                   \
  template KTOBatchStats demo_loss<T>(std::span<const PreferencePair>, const ModelState<T>&, ReferenceScorer<T>&,   \
                                      const LatentPrompt&, const TrainConfig&, const TaskTemplate&,                 \
                                      std::vector<T>*);                                                             \
  template KTOBatchStats answer_loss<T>(std::span<const AnswerPair>, const ModelState<T>&, ReferenceScorer<T>&,     \
                                        const LatentPrompt&, const TrainConfig&, const TaskTemplate&,               \
                                        std::vector<T>*);                                                           \
  template TrainResult train<T>(std::span<const TrainQuery>, const TaskDataset&, ModelState<T>&,                   \
                                const LatentPrompt&, const ModelState<T>&, const TrainConfig&,                      \
                                const std::function<void(const TrainLogRecord&)>&);

GENICL_INSTANTIATE(float)
GENICL_INSTANTIATE(double)

#undef GENICL_INSTANTIATE

}  // namespace genicl
