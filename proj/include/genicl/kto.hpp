#pragma once

// KTO-style preference losses over the latent prompt and the alternating
// demo-level / answer-level optimization loop.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genicl/corpus.hpp"
#include "genicl/lm.hpp"
#include "genicl/preference.hpp"

namespace genicl {

struct TrainConfig {
  double beta = 0.1;
  double lambda_w = 1.0;
  double lambda_l = 1.0;
  double eta1 = 5e-6;
  double eta2 = 5e-6;
  int steps = 20000;
  int batch_size = 32;
  int warmup_steps = 3000;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  /// Pairs drawn per query and batch; 0 uses all of them.
  int pairs_per_query = 0;
  bool use_demo_loss = true;
  bool use_answer_loss = true;

  void validate() const;
};

struct KTOBatchStats {
  double ref_baseline = 0.0;
  double mean_log_ratio_preferred = 0.0;
  double mean_log_ratio_nonpreferred = 0.0;
  double loss_value = 0.0;
  std::size_t pairs = 0;
  /// Set when the batch was too small for a mismatched baseline estimate.
  bool baseline_warning = false;
};

enum class Direction { latent_given_demo, answer_given_latent };

inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// max(0, mean(beta * r)); 0 for an empty span.
double kl_baseline_from_ratios(std::span<const double> ratios, double beta);

struct KTOObjective {
  double loss = 0.0;
  /// dLoss / d r_w[i] and dLoss / d r_l[i] with the baseline held constant.
  std::vector<double> d_r_w, d_r_l;
};

/// -(1/N) Σ_i [λ_w σ(β r_w[i] - s_ref) + λ_l σ(s_ref - β r_l[i])], N = |r_w| = |r_l|.
KTOObjective kto_objective(std::span<const double> r_w, std::span<const double> r_l, double s_ref, double beta,
                           double lambda_w, double lambda_l);

/// Caches reference log-probabilities by token sequence (the reference never changes).
template <class T>
class ReferenceScorer {
 public:
  explicit ReferenceScorer(const ModelState<T>& reference) : ref_(&reference) {}
  double logprob(const Encoded& enc);
  const ModelState<T>& model() const { return *ref_; }

 private:
  const ModelState<T>* ref_;
  std::map<std::vector<int>, double> cache_;
};

Encoded encode_item(const Vocabulary& vocab, const LatentPrompt& latent, Direction dir, const Example& query,
                    const Example* demo, std::string_view answer, const TaskTemplate& tmpl);

/// log P_model(completion | context) - log P_reference(completion | context).
template <class T>
double log_ratio(const ModelState<T>& model, const ModelState<T>& reference, const Encoded& item);

template <class T>
double log_ratio(const ModelState<T>& model, const ModelState<T>& reference, const LatentPrompt& latent,
                 const Example& query, const Example& demo, const TaskTemplate& tmpl);

template <class T>
double log_ratio(const ModelState<T>& model, const ModelState<T>& reference, const LatentPrompt& latent,
                 const Example& query, std::string_view answer, const TaskTemplate& tmpl);

struct BaselineEstimate {
  double value = 0.0;
  double raw = 0.0;
  bool warning = false;
};

/// Mismatched pairing: item i's demo (or answer) is scored against item
/// (i+1 mod n)'s query. The result is clamped at zero and carries no gradient.
template <class T>
BaselineEstimate estimate_ref_baseline(std::span<const Encoded> mismatched, const ModelState<T>& model,
                                       ReferenceScorer<T>& reference, double beta);

/// Builds the mismatched encodings for a list of (query, demo-or-answer) items.
std::vector<Encoded> mismatched_items(const Vocabulary& vocab, const LatentPrompt& latent, Direction dir,
                                      std::span<const Example> queries, std::span<const Example> demos,
                                      std::span<const std::string> answers, const TaskTemplate& tmpl);

/// Demo-level loss. When `grad` is non-null, dL/dθ is accumulated into it.
template <class T>
KTOBatchStats demo_loss(std::span<const PreferencePair> batch, const ModelState<T>& model,
                        ReferenceScorer<T>& reference, const LatentPrompt& latent, const TrainConfig& cfg,
                        const TaskTemplate& tmpl, std::vector<T>* grad = nullptr);

template <class T>
KTOBatchStats answer_loss(std::span<const AnswerPair> batch, const ModelState<T>& model,
                          ReferenceScorer<T>& reference, const LatentPrompt& latent, const TrainConfig& cfg,
                          const TaskTemplate& tmpl, std::vector<T>* grad = nullptr);

struct TrainLogRecord {
  int step = 0;
  std::optional<KTOBatchStats> demo;
  std::optional<KTOBatchStats> answer;
  double lr_demo = 0.0;
  double lr_answer = 0.0;
  /// L_a + L_d over the losses computed this step.
  double total = 0.0;
};

struct TrainQuery {
  Example query;
  std::vector<PreferencePair> pairs;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  int skipped_batches = 0;
  int demo_updates = 0;
  int answer_updates = 0;
};

/// Per batch: one demo-level step with eta1, then one answer-level step with eta2.
/// Only `model.trainable` changes.
template <class T>
TrainResult train(std::span<const TrainQuery> queries, const TaskDataset& dataset, ModelState<T>& model,
                  const LatentPrompt& latent, const ModelState<T>& reference, const TrainConfig& cfg,
                  const std::function<void(const TrainLogRecord&)>& on_step = {});

}  // namespace genicl
