#include "genicl/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"
#include "genicl/kernels.hpp"

namespace genicl {

void ModelConfig::validate() const {
  if (n_layer < 1 || d_model < 1 || n_head < 1 || d_ff < 1 || context_length < 2) {
    throw ConfigError("model config: all sizes must be positive (context_length >= 2)");
  }
  if (d_model % n_head != 0) throw ConfigError("model config: d_model must be divisible by n_head");
  if (!(norm_eps > 0.0)) throw ConfigError("model config: norm_eps must be positive");
  if (max_latent < 1) throw ConfigError("model config: max_latent must be >= 1");
}

namespace {

std::vector<ParamSlice> build_layout(const ModelConfig& c, std::size_t vocab) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  std::vector<ParamSlice> out;
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    out.push_back(ParamSlice{std::move(name), off, rows, cols});
    off += rows * cols;
  };
  add("pos_emb", static_cast<std::size_t>(c.context_length), d);
  for (int l = 0; l < c.n_layer; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    add(p + "norm1", 1, d);
    add(p + "wq", d, d);
    add(p + "wk", d, d);
    add(p + "wv", d, d);
    add(p + "wo", d, d);
    add(p + "norm2", 1, d);
    add(p + "w1", ff, d);
    add(p + "w2", d, ff);
  }
  add("final_norm", 1, d);
  // Last so that appending vocabulary rows never moves other parameters.
  add("tok_emb", vocab, d);
  return out;
}

std::size_t layout_size(const std::vector<ParamSlice>& l) { return l.back().offset + l.back().size(); }

}  // namespace

template <class T>
std::vector<ParamSlice> ModelState<T>::layout() const {
  return build_layout(config, vocab.size());
}

template <class T>
ParamSlice ModelState<T>::slice(const std::string& name) const {
  for (auto& s : build_layout(config, vocab.size())) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

template <class T>
std::size_t ModelState<T>::tok_emb_offset() const {
  return params.size() - vocab.size() * d();
}

template <class T>
ModelState<T> ModelState<T>::zeros(ModelConfig config, Vocabulary vocab) {
  config.validate();
  ModelState<T> m;
  m.config = config;
  m.vocab = std::move(vocab);
  const auto lay = m.layout();
  m.params.assign(layout_size(lay), T(0));
  for (const auto& s : lay) {
    if (s.name.ends_with("norm1") || s.name.ends_with("norm2") || s.name == "final_norm") {
      std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), T(1));
    }
  }
  return m;
}

template <class T>
ModelState<T> ModelState<T>::random(ModelConfig config, Vocabulary vocab, std::uint64_t seed) {
  ModelState<T> m = zeros(config, std::move(vocab));
  m.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double proj_scale = 1.0 / std::sqrt(2.0 * config.n_layer);
  for (const auto& s : m.layout()) {
    if (s.rows == 1) continue;  // norm gains stay at one
    double stdv = config.init_std;
    if (s.name.ends_with(".wo") || s.name.ends_with(".w2")) stdv *= proj_scale;
    for (std::size_t i = 0; i < s.size(); ++i) m.params[s.offset + i] = static_cast<T>(stdv * nd(rng));
  }
  return m;
}

template <class T>
bool ModelState<T>::is_trainable(std::size_t index) const {
  return std::any_of(trainable.begin(), trainable.end(),
                     [&](const ParamRange& r) { return index >= r.begin && index < r.end; });
}

template <class T>
std::uint64_t ModelState<T>::content_hash() const {
  Hasher h;
  h.value<int>(static_cast<int>(precision_of<T>()));
  h.value(config.n_layer).value(config.d_model).value(config.n_head).value(config.d_ff);
  h.value(config.context_length).value(config.norm_eps);
  for (const auto& t : vocab.tokens()) h.str(t);
  h.values(std::span<const T>(params));
  return h.digest();
}

template <class T>
void ModelState<T>::append_embedding_rows(std::span<const T> rows) {
  const std::size_t expected_rows = vocab.size() * d();
  const std::size_t current_rows = params.size() - (layout_size(build_layout(config, 0)));
  if (current_rows + rows.size() != expected_rows) {
    throw ConfigError("append_embedding_rows: vocabulary and embedding rows disagree");
  }
  params.insert(params.end(), rows.begin(), rows.end());
}

template class ModelState<float>;
template class ModelState<double>;

// ---------------------------------------------------------------------------
// forward / backward

namespace {

template <class T>
void linear(const T* w, std::size_t out, std::size_t in, const T* x, std::size_t n, T* y) {
  for (std::size_t t = 0; t < n; ++t) {
    const T* xt = x + t * in;
    T* yt = y + t * out;
    for (std::size_t o = 0; o < out; ++o) yt[o] = kernels::dot(w + o * in, xt, in);
  }
}

// dx += W^T dy, and optionally dW += dy x^T
template <class T>
void linear_back(const T* w, std::size_t out, std::size_t in, const T* x, const T* dy, std::size_t n, T* dx, T* dw) {
  for (std::size_t t = 0; t < n; ++t) {
    const T* dyt = dy + t * out;
    const T* xt = x + t * in;
    T* dxt = dx + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dyt[o];
      if (g == T(0)) continue;
      kernels::axpy(g, w + o * in, dxt, in);
      if (dw != nullptr) kernels::axpy(g, xt, dw + o * in, in);
    }
  }
}

template <class T>
void rmsnorm(const T* x, const T* gain, std::size_t n, std::size_t d, T eps, T* rms, T* y) {
  for (std::size_t t = 0; t < n; ++t) {
    const T* xt = x + t * d;
    const T ms = kernels::dot(xt, xt, d) / static_cast<T>(d);
    const T r = T(1) / std::sqrt(ms + eps);
    rms[t] = r;
    for (std::size_t i = 0; i < d; ++i) y[t * d + i] = xt[i] * r * gain[i];
  }
}

// dx += d(norm)/dx^T dy ; dgain += dy * x * r
template <class T>
void rmsnorm_back(const T* x, const T* gain, const T* rms, const T* dy, std::size_t n, std::size_t d, T* dx, T* dgain) {
  std::vector<T> gdy(d);
  for (std::size_t t = 0; t < n; ++t) {
    const T* xt = x + t * d;
    const T* dyt = dy + t * d;
    const T r = rms[t];
    for (std::size_t i = 0; i < d; ++i) gdy[i] = gain[i] * dyt[i];
    const T proj = kernels::dot(gdy.data(), xt, d);
    const T c = r * r * r * proj / static_cast<T>(d);
    T* dxt = dx + t * d;
    for (std::size_t i = 0; i < d; ++i) dxt[i] += r * gdy[i] - c * xt[i];
    if (dgain != nullptr) {
      for (std::size_t i = 0; i < d; ++i) dgain[i] += dyt[i] * xt[i] * r;
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class T>
T gelu(T u) {
  const T inner = static_cast<T>(kGeluC) * (u + static_cast<T>(kGeluA) * u * u * u);
  return T(0.5) * u * (T(1) + std::tanh(inner));
}

template <class T>
T gelu_grad(T u) {
  const T inner = static_cast<T>(kGeluC) * (u + static_cast<T>(kGeluA) * u * u * u);
  const T th = std::tanh(inner);
  return T(0.5) * (T(1) + th) +
         T(0.5) * u * (T(1) - th * th) * static_cast<T>(kGeluC) * (T(1) + T(3) * static_cast<T>(kGeluA) * u * u);
}

struct Offsets {
  std::size_t norm1, wq, wk, wv, wo, norm2, w1, w2;
};

// Mirrors build_layout without allocating names.
std::vector<Offsets> layer_offsets(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  std::vector<Offsets> out;
  std::size_t off = static_cast<std::size_t>(c.context_length) * d;
  for (int l = 0; l < c.n_layer; ++l) {
    Offsets o{};
    o.norm1 = off;
    o.wq = off + d;
    o.wk = o.wq + d * d;
    o.wv = o.wk + d * d;
    o.wo = o.wv + d * d;
    o.norm2 = o.wo + d * d;
    o.w1 = o.norm2 + d;
    o.w2 = o.w1 + ff * d;
    off = o.w2 + d * ff;
    out.push_back(o);
  }
  return out;
}

std::size_t final_norm_offset(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  return static_cast<std::size_t>(c.context_length) * d +
         static_cast<std::size_t>(c.n_layer) * (2 * d + 4 * d * d + 2 * ff * d);
}

}  // namespace

template <class T>
void forward(const ModelState<T>& m, std::span<const int> tokens, std::size_t logits_begin, Activations<T>& act) {
  const auto& c = m.config;
  const std::size_t n = tokens.size();
  const std::size_t d = m.d();
  const std::size_t ff = static_cast<std::size_t>(c.d_ff);
  const std::size_t heads = static_cast<std::size_t>(c.n_head);
  const std::size_t hd = d / heads;
  const std::size_t vocab = m.vocab_size();
  if (n == 0) throw WindowError("forward: empty token sequence");
  if (n > static_cast<std::size_t>(c.context_length)) {
    throw WindowError("forward: " + std::to_string(n) + " tokens exceed context length " +
                      std::to_string(c.context_length));
  }
  logits_begin = std::min(logits_begin, n);
  const T* params = m.params.data();
  const T* emb = m.tok_emb();
  const T* pos = params;  // pos_emb leads the layout
  const T eps = static_cast<T>(c.norm_eps);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  act.length = n;
  act.logits_begin = logits_begin;
  act.tokens.assign(tokens.begin(), tokens.end());
  act.x0.assign(n * d, T(0));
  for (std::size_t t = 0; t < n; ++t) {
    const int id = tokens[t];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw ConfigError("forward: token id out of range");
    for (std::size_t i = 0; i < d; ++i) act.x0[t * d + i] = emb[static_cast<std::size_t>(id) * d + i] + pos[t * d + i];
  }

  const auto offs = layer_offsets(c);
  act.layers.resize(offs.size());
  const std::vector<T>* x = &act.x0;
  std::vector<T> scores(n);
  for (std::size_t l = 0; l < offs.size(); ++l) {
    auto& L = act.layers[l];
    const auto& o = offs[l];
    L.x_in = *x;
    L.rms1.resize(n);
    L.a.resize(n * d);
    rmsnorm(L.x_in.data(), params + o.norm1, n, d, eps, L.rms1.data(), L.a.data());
    L.q.resize(n * d);
    L.k.resize(n * d);
    L.v.resize(n * d);
    linear(params + o.wq, d, d, L.a.data(), n, L.q.data());
    linear(params + o.wk, d, d, L.a.data(), n, L.k.data());
    linear(params + o.wv, d, d, L.a.data(), n, L.v.data());
    L.probs.assign(heads * n * n, T(0));
    L.o.assign(n * d, T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        const T* qt = L.q.data() + t * d + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= t; ++j) {
          scores[j] = kernels::dot(qt, L.k.data() + j * d + h * hd, hd) * scale;
          mx = std::max(mx, scores[j]);
        }
        T sum = 0;
        for (std::size_t j = 0; j <= t; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        T* prow = L.probs.data() + (h * n + t) * n;
        T* ot = L.o.data() + t * d + h * hd;
        for (std::size_t j = 0; j <= t; ++j) {
          prow[j] = scores[j] / sum;
          kernels::axpy(prow[j], L.v.data() + j * d + h * hd, ot, hd);
        }
      }
    }
    L.x_mid = L.x_in;
    {
      std::vector<T> proj(n * d);
      linear(params + o.wo, d, d, L.o.data(), n, proj.data());
      for (std::size_t i = 0; i < n * d; ++i) L.x_mid[i] += proj[i];
    }
    L.rms2.resize(n);
    L.b.resize(n * d);
    rmsnorm(L.x_mid.data(), params + o.norm2, n, d, eps, L.rms2.data(), L.b.data());
    L.u.resize(n * ff);
    L.g.resize(n * ff);
    linear(params + o.w1, ff, d, L.b.data(), n, L.u.data());
    for (std::size_t i = 0; i < n * ff; ++i) L.g[i] = gelu(L.u[i]);
    std::vector<T> mlp(n * d);
    linear(params + o.w2, d, ff, L.g.data(), n, mlp.data());
    if (l + 1 < offs.size()) {
      auto& next_in = act.layers[l + 1].x_in;
      next_in = L.x_mid;
      for (std::size_t i = 0; i < n * d; ++i) next_in[i] += mlp[i];
      x = &next_in;
    } else {
      act.x_out = L.x_mid;
      for (std::size_t i = 0; i < n * d; ++i) act.x_out[i] += mlp[i];
    }
  }
  act.rms_f.resize(n);
  act.h.resize(n * d);
  rmsnorm(act.x_out.data(), params + final_norm_offset(c), n, d, eps, act.rms_f.data(), act.h.data());

  const std::size_t np = n - logits_begin;
  act.logits.resize(np * vocab);
  linear(emb, vocab, d, act.h.data() + logits_begin * d, np, act.logits.data());
}

template <class T>
void backward(const ModelState<T>& m, const Activations<T>& act, std::span<const T> dlogits, std::span<T> grad,
              bool weight_grads) {
  const auto& c = m.config;
  const std::size_t n = act.length;
  const std::size_t d = m.d();
  const std::size_t ff = static_cast<std::size_t>(c.d_ff);
  const std::size_t heads = static_cast<std::size_t>(c.n_head);
  const std::size_t hd = d / heads;
  const std::size_t vocab = m.vocab_size();
  const std::size_t np = n - act.logits_begin;
  if (dlogits.size() != np * vocab) throw ConfigError("backward: dlogits shape mismatch");
  if (grad.size() != m.params.size()) throw ConfigError("backward: gradient buffer size mismatch");
  const T* params = m.params.data();
  const T* emb = m.tok_emb();
  T* gemb = grad.data() + m.tok_emb_offset();
  auto wgrad = [&](std::size_t off) -> T* { return weight_grads ? grad.data() + off : nullptr; };
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  // logits = E h
  std::vector<T> dh(n * d, T(0));
  linear_back(emb, vocab, d, act.h.data() + act.logits_begin * d, dlogits.data(), np, dh.data() + act.logits_begin * d,
              gemb);

  std::vector<T> dx(n * d, T(0));
  const auto fn = final_norm_offset(c);
  rmsnorm_back(act.x_out.data(), params + fn, act.rms_f.data(), dh.data(), n, d, dx.data(), wgrad(fn));

  const auto offs = layer_offsets(c);
  std::vector<T> dg(n * ff), db(n * d), dxm(n * d), dO(n * d), dq(n * d), dk(n * d), dv(n * d), da(n * d);
  std::vector<T> dp(n);
  for (std::size_t li = offs.size(); li-- > 0;) {
    const auto& L = act.layers[li];
    const auto& o = offs[li];
    // MLP: x_out = x_mid + W2 gelu(W1 norm(x_mid))
    std::fill(dg.begin(), dg.end(), T(0));
    linear_back(params + o.w2, d, ff, L.g.data(), dx.data(), n, dg.data(), wgrad(o.w2));
    for (std::size_t i = 0; i < n * ff; ++i) dg[i] *= gelu_grad(L.u[i]);
    std::fill(db.begin(), db.end(), T(0));
    linear_back(params + o.w1, ff, d, L.b.data(), dg.data(), n, db.data(), wgrad(o.w1));
    dxm = dx;
    rmsnorm_back(L.x_mid.data(), params + o.norm2, L.rms2.data(), db.data(), n, d, dxm.data(), wgrad(o.norm2));

    // Attention: x_mid = x_in + Wo attn(norm(x_in))
    std::fill(dO.begin(), dO.end(), T(0));
    linear_back(params + o.wo, d, d, L.o.data(), dxm.data(), n, dO.data(), wgrad(o.wo));
    std::fill(dq.begin(), dq.end(), T(0));
    std::fill(dk.begin(), dk.end(), T(0));
    std::fill(dv.begin(), dv.end(), T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        const T* prow = L.probs.data() + (h * n + t) * n;
        const T* dot_ = dO.data() + t * d + h * hd;
        T acc = 0;
        for (std::size_t j = 0; j <= t; ++j) {
          dp[j] = kernels::dot(dot_, L.v.data() + j * d + h * hd, hd);
          acc += prow[j] * dp[j];
          kernels::axpy(prow[j], dot_, dv.data() + j * d + h * hd, hd);
        }
        const T* qt = L.q.data() + t * d + h * hd;
        T* dqt = dq.data() + t * d + h * hd;
        for (std::size_t j = 0; j <= t; ++j) {
          const T ds = prow[j] * (dp[j] - acc) * scale;
          if (ds == T(0)) continue;
          kernels::axpy(ds, L.k.data() + j * d + h * hd, dqt, hd);
          kernels::axpy(ds, qt, dk.data() + j * d + h * hd, hd);
        }
      }
    }
    std::fill(da.begin(), da.end(), T(0));
    linear_back(params + o.wq, d, d, L.a.data(), dq.data(), n, da.data(), wgrad(o.wq));
    linear_back(params + o.wk, d, d, L.a.data(), dk.data(), n, da.data(), wgrad(o.wk));
    linear_back(params + o.wv, d, d, L.a.data(), dv.data(), n, da.data(), wgrad(o.wv));
    dx = dxm;
    rmsnorm_back(L.x_in.data(), params + o.norm1, L.rms1.data(), da.data(), n, d, dx.data(), wgrad(o.norm1));
  }

  // x0 = E[tok] + P[t]
  const std::size_t pos_off = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto id = static_cast<std::size_t>(act.tokens[t]);
    kernels::axpy(T(1), dx.data() + t * d, gemb + id * d, d);
    if (weight_grads) kernels::axpy(T(1), dx.data() + t * d, grad.data() + pos_off + t * d, d);
  }
}

template void forward<float>(const ModelState<float>&, std::span<const int>, std::size_t, Activations<float>&);
template void forward<double>(const ModelState<double>&, std::span<const int>, std::size_t, Activations<double>&);
template void backward<float>(const ModelState<float>&, const Activations<float>&, std::span<const float>,
                              std::span<float>, bool);
template void backward<double>(const ModelState<double>&, const Activations<double>&, std::span<const double>,
                               std::span<double>, bool);

}  // namespace genicl
