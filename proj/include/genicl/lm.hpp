#pragma once

// Log-likelihood operations on the tiny LM, the latent prompt z, and the frozen
// reference snapshot. Every log-probability is a teacher-forced sum of natural
// logs over the target tokens.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "genicl/corpus.hpp"
#include "genicl/model.hpp"

namespace genicl {

struct LogProb {
  double value = 0.0;
  int token_count = 0;
  double mean() const { return token_count == 0 ? 0.0 : value / token_count; }
};

/// The latent variable z: m special tokens whose embedding rows are the trainable θ.
struct LatentPrompt {
  std::vector<int> token_ids;
  /// Flat parameter range holding the rows of these tokens.
  ParamRange rows;
  std::size_t length() const { return token_ids.size(); }
};

/// Rebuilds the LatentPrompt view for a model whose vocabulary already carries
/// "<latent:i>" tokens (e.g. after loading a checkpoint). Empty when none exist.
template <class T>
LatentPrompt find_latent(const ModelState<T>& model);

/// Token-level input for one teacher-forced evaluation.
struct Encoded {
  std::vector<int> context;
  std::vector<int> target;
};

template <class T>
LogProb sequence_logprob(const ModelState<T>& model, std::span<const int> context, std::span<const int> target);

/// Log-softmax over the whole vocabulary at the position after `context`.
template <class T>
std::vector<double> next_token_logprobs(const ModelState<T>& model, std::span<const int> context);

/// A forward pass kept alive so its log-likelihood can be differentiated later.
template <class T>
struct ScoredSequence {
  LogProb logprob;
  Activations<T> act;
  /// d logprob / d logits, shaped like act.logits.
  std::vector<T> dlogits;
};

template <class T>
ScoredSequence<T> score_sequence(const ModelState<T>& model, std::span<const int> context,
                                 std::span<const int> target);

/// grad += scale * d(logprob)/d(params).
template <class T>
void accumulate_logprob_grad(const ModelState<T>& model, const ScoredSequence<T>& seq, double scale,
                             std::span<T> grad, bool weight_grads);

/// Argmax decoding; stops at <eos> or after max_len tokens.
template <class T>
std::string greedy_generate(const ModelState<T>& model, std::span<const int> context, int max_len);

/// Appends m latent tokens; rows start at the mean embedding plus seeded noise
/// at the embeddings' per-coordinate scale. trainable becomes exactly these rows.
template <class T>
LatentPrompt init_latent(int m, ModelState<T>& model, std::uint64_t seed);

template <class T>
FrozenModel<T> snapshot_reference(const ModelState<T>& model);

/// bos ⊕ render(demo, with target) ⊕ separator ⊕ render(query) ⊕ answer prefix → z tokens.
Encoded latent_given_tokens(const Vocabulary& vocab, const LatentPrompt& latent, const Example& demo,
                            const Example& query, const TaskTemplate& tmpl);

/// bos ⊕ z tokens ⊕ render(query) ⊕ answer prefix → answer tokens.
Encoded answer_given_tokens(const Vocabulary& vocab, const LatentPrompt& latent, const Example& query,
                            std::string_view answer, const TaskTemplate& tmpl);

/// bos ⊕ demos ⊕ query ⊕ answer prefix → answer tokens (plain in-context scoring).
Encoded icl_tokens(const Vocabulary& vocab, std::span<const Example> demos, const Example& query,
                   std::string_view answer, const TaskTemplate& tmpl);

/// The answer as it appears after the prefix, rendered through answer_pattern.
std::string render_answer(const TaskTemplate& tmpl, const Example& query, std::string_view answer);

template <class T>
LogProb logprob_latent_given(const ModelState<T>& model, const LatentPrompt& latent, const Example& demo,
                             const Example& query, const TaskTemplate& tmpl);

template <class T>
LogProb logprob_answer_given(const ModelState<T>& model, const LatentPrompt& latent, const Example& query,
                             std::string_view answer, const TaskTemplate& tmpl);

// ---------------------------------------------------------------------------
// pretraining

struct PretrainConfig {
  ModelConfig model;
  int steps = 2000;
  int batch_size = 16;
  double lr = 3e-3;
  int warmup_steps = 100;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double heldout_fraction = 0.05;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  Model model;
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
  std::size_t truncated_lines = 0;
  std::vector<double> train_losses;
};

/// Mean next-token NLL over lines (bos ⊕ line ⊕ eos, truncated to the window).
template <class T>
double mean_token_nll(const ModelState<T>& model, std::span<const std::vector<int>> lines);

PretrainResult pretrain_lm(std::span<const std::string> corpus, const PretrainConfig& cfg,
                           const Vocabulary& vocab = Vocabulary::character_default());

}  // namespace genicl
