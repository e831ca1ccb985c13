#pragma once

// Parameter container and the forward/backward passes of the tiny decoder-only
// transformer that stands in for the scoring LM. Pre-norm blocks with RMSNorm,
// causal multi-head attention, a GELU MLP, learned positions, and input/output
// embeddings tied through a single matrix.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "genicl/vocab.hpp"

namespace genicl {

struct ModelConfig {
  int n_layer = 2;
  int d_model = 64;
  int n_head = 4;
  int d_ff = 256;
  int context_length = 96;
  double norm_eps = 1e-5;
  double init_std = 0.05;
  int max_latent = 64;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// A named block of the flat parameter vector, `rows x cols` row-major.
struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Half-open range [begin, end) into the flat parameter vector.
struct ParamRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const ParamRange&, const ParamRange&) = default;
};

enum class Precision { f32, f64 };

template <class T>
constexpr Precision precision_of() {
  return sizeof(T) == sizeof(double) ? Precision::f64 : Precision::f32;
}

template <class T>
class ModelState {
 public:
  using value_type = T;

  ModelConfig config;
  Vocabulary vocab;
  std::vector<T> params;
  /// Parameter positions that receive gradient updates; empty means nothing is trainable.
  std::vector<ParamRange> trainable;
  std::uint64_t seed = 0;

  ModelState() = default;

  /// All weights zero and norm gains one.
  static ModelState zeros(ModelConfig config, Vocabulary vocab);
  /// Seeded random init.
  static ModelState random(ModelConfig config, Vocabulary vocab, std::uint64_t seed);

  std::vector<ParamSlice> layout() const;
  ParamSlice slice(const std::string& name) const;

  std::size_t vocab_size() const { return vocab.size(); }
  std::size_t d() const { return static_cast<std::size_t>(config.d_model); }

  T* tok_emb() { return params.data() + tok_emb_offset(); }
  const T* tok_emb() const { return params.data() + tok_emb_offset(); }
  std::size_t tok_emb_offset() const;

  /// Marks every parameter trainable.
  void train_all() { trainable = {ParamRange{0, params.size()}}; }

  bool is_trainable(std::size_t index) const;

  std::uint64_t content_hash() const;

  template <class U>
  ModelState<U> cast() const {
    ModelState<U> out;
    out.config = config;
    out.vocab = vocab;
    out.params.assign(params.begin(), params.end());
    out.trainable = trainable;
    out.seed = seed;
    return out;
  }

  /// Appends `rows` embedding rows (the vocabulary must already contain the tokens).
  void append_embedding_rows(std::span<const T> rows);
};

using Model = ModelState<float>;
using ModelF64 = ModelState<double>;

/// Frozen, shareable snapshot.
template <class T>
using FrozenModel = std::shared_ptr<const ModelState<T>>;

/// Saved activations of one sequence.
template <class T>
struct Activations {
  std::size_t length = 0;         // tokens fed
  std::size_t logits_begin = 0;   // first position whose logits were computed
  std::vector<int> tokens;
  std::vector<T> x0;              // embeddings, length x d
  struct Layer {
    std::vector<T> x_in, rms1, a, q, k, v, probs, o, x_mid, rms2, b, u, g;
  };
  std::vector<Layer> layers;
  std::vector<T> x_out, rms_f, h;  // h: final normed hidden state, length x d
  std::vector<T> logits;           // (length - logits_begin) x V
};

/// Runs the network over `tokens`; logits are produced for positions >= logits_begin.
template <class T>
void forward(const ModelState<T>& m, std::span<const int> tokens, std::size_t logits_begin, Activations<T>& act);

/// Back-propagates `dlogits` (same shape as act.logits) and accumulates into
/// `grad` (sized like m.params). With weight_grads=false only the token
/// embedding gradient is produced, which is all latent training needs.
template <class T>
void backward(const ModelState<T>& m, const Activations<T>& act, std::span<const T> dlogits, std::span<T> grad,
              bool weight_grads);

}  // namespace genicl
