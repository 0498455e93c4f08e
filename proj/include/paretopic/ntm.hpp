#pragma once

// Variational topic model: sparse bag-of-words encoder producing a diagonal
// Gaussian over T latent topic coordinates, softmax document-topic mixture,
// and a linear multinomial decoder.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "paretopic/corpus.hpp"
#include "paretopic/diffnet.hpp"
#include "paretopic/error.hpp"
#include "paretopic/rng.hpp"

namespace paretopic::ntm {

using diffnet::Matrix;

inline constexpr double kLogvarMin = -8.0;
inline constexpr double kLogvarMax = 8.0;
inline constexpr double kInitScale = 0.05;

struct EncoderParams {
  Matrix W1, b1;      // V×H, 1×H
  Matrix W_mu, b_mu;  // H×T, 1×T
  Matrix W_lv, b_lv;  // H×T, 1×T

  static EncoderParams zeros(std::size_t V, std::size_t H, std::size_t T) {
    return {Matrix(V, H), Matrix(1, H), Matrix(H, T), Matrix(1, T), Matrix(H, T), Matrix(1, T)};
  }

  template <typename F>
  void for_each(F&& f) {
    f("W1", W1);
    f("b1", b1);
    f("W_mu", W_mu);
    f("b_mu", b_mu);
    f("W_lv", W_lv);
    f("b_lv", b_lv);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<EncoderParams*>(this)->for_each(
        [&](const char* name, const Matrix& m) { f(name, m); });
  }

  std::size_t vocab_size() const { return W1.rows(); }
  std::size_t hidden() const { return W1.cols(); }
  std::size_t topics() const { return W_mu.cols(); }

  std::string layout_id() const {
    return "encoder/V" + std::to_string(vocab_size()) + "/H" + std::to_string(hidden()) + "/T" +
           std::to_string(topics());
  }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

struct DecoderParams {
  Matrix beta;   // T×V topic-word weights
  Matrix b_dec;  // 1×V

  static DecoderParams zeros(std::size_t T, std::size_t V) { return {Matrix(T, V), Matrix(1, V)}; }

  template <typename F>
  void for_each(F&& f) {
    f("beta", beta);
    f("b_dec", b_dec);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<DecoderParams*>(this)->for_each(
        [&](const char* name, const Matrix& m) { f(name, m); });
  }

  std::size_t topics() const { return beta.rows(); }
  std::size_t vocab_size() const { return beta.cols(); }

  std::string layout_id() const {
    return "decoder/T" + std::to_string(topics()) + "/V" + std::to_string(vocab_size());
  }

  friend bool operator==(const DecoderParams&, const DecoderParams&) = default;
};

// Parameter-set helpers shared by encoder and decoder.
template <typename Params>
std::size_t num_params(const Params& p) {
  std::size_t n = 0;
  p.for_each([&](const char*, const Matrix& m) { n += m.size(); });
  return n;
}

template <typename Params>
diffnet::GradientVector flatten(const Params& p) {
  diffnet::GradientVector g;
  g.layout_id = p.layout_id();
  g.values.reserve(num_params(p));
  p.for_each([&](const char*, const Matrix& m) {
    g.values.insert(g.values.end(), m.data().begin(), m.data().end());
  });
  return g;
}

template <typename Params>
void unflatten(std::span<const double> values, Params& p) {
  if (values.size() != num_params(p)) {
    throw ShapeError("unflatten: " + std::to_string(values.size()) + " values for " +
                     std::to_string(num_params(p)) + " parameters");
  }
  std::size_t off = 0;
  p.for_each([&](const char*, Matrix& m) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), m.size(), m.data().begin());
    off += m.size();
  });
}

template <typename Params>
bool all_finite(const Params& p) {
  bool ok = true;
  p.for_each([&](const char*, const Matrix& m) { ok = ok && m.all_finite(); });
  return ok;
}

template <typename Params>
Params zeros_like(const Params& p) {
  Params z = p;
  z.for_each([](const char*, Matrix& m) { m.fill(0.0); });
  return z;
}

struct ModelState {
  EncoderParams enc;
  DecoderParams dec;

  std::size_t vocab_size() const { return enc.vocab_size(); }
  std::size_t hidden() const { return enc.hidden(); }
  std::size_t topics() const { return enc.topics(); }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

// Weights uniform in [-kInitScale, kInitScale], biases zero.
inline ModelState init_model(std::size_t V, std::size_t H, std::size_t T, Rng& rng) {
  if (V == 0 || H == 0 || T == 0) {
    throw ConfigError("init_model: V, H and T must be positive (got V=" + std::to_string(V) +
                      ", H=" + std::to_string(H) + ", T=" + std::to_string(T) + ")");
  }
  ModelState s{EncoderParams::zeros(V, H, T), DecoderParams::zeros(T, V)};
  auto fill = [&](Matrix& m) {
    for (auto& v : m.data()) v = rng.uniform(-kInitScale, kInitScale);
  };
  fill(s.enc.W1);
  fill(s.enc.W_mu);
  fill(s.enc.W_lv);
  fill(s.dec.beta);
  return s;
}

// Raw counts and L1-normalized encoder inputs for a batch of documents.
struct BatchInput {
  diffnet::SparseBatch counts;
  diffnet::SparseBatch normalized;
  std::vector<double> totals;

  std::size_t size() const { return counts.size(); }
};

inline BatchInput make_batch(std::span<const BowDocument* const> docs, std::size_t V) {
  BatchInput in;
  in.counts.cols = V;
  in.normalized.cols = V;
  for (const auto* d : docs) {
    if (d->empty()) throw DataError("encode: empty document");
    const double total = static_cast<double>(d->total());
    std::vector<std::pair<std::uint32_t, double>> c, n;
    c.reserve(d->nnz());
    n.reserve(d->nnz());
    for (const auto& [w, k] : d->counts) {
      if (w >= V) {
        throw DataError("encode: word index " + std::to_string(w) + " outside vocabulary of " +
                        std::to_string(V));
      }
      c.emplace_back(w, static_cast<double>(k));
      n.emplace_back(w, static_cast<double>(k) / total);
    }
    in.counts.rows.push_back(std::move(c));
    in.normalized.rows.push_back(std::move(n));
    in.totals.push_back(total);
  }
  return in;
}

inline BatchInput make_batch(const BowDocument& doc, std::size_t V) {
  const BowDocument* p = &doc;
  return make_batch(std::span<const BowDocument* const>(&p, 1), V);
}

// Forward activations of the encoder and reparameterization for a batch.
struct EncodedBatch {
  BatchInput input;
  Matrix a1, h;
  Matrix mu, logvar_raw, logvar;
  Matrix eps, z;
};

inline EncodedBatch encode_batch(BatchInput input, const EncoderParams& enc, const Matrix& eps) {
  EncodedBatch e;
  e.input = std::move(input);
  e.a1 = diffnet::affine_sparse(e.input.normalized, enc.W1, enc.b1);
  e.h = diffnet::softplus(e.a1);
  e.mu = diffnet::affine(e.h, enc.W_mu, enc.b_mu);
  e.logvar_raw = diffnet::affine(e.h, enc.W_lv, enc.b_lv);
  e.logvar = e.logvar_raw;
  for (auto& v : e.logvar.data()) v = std::clamp(v, kLogvarMin, kLogvarMax);
  if (eps.rows() != e.mu.rows() || eps.cols() != e.mu.cols()) {
    throw ShapeError("encode_batch: eps " + eps.shape() + " for latent " + e.mu.shape());
  }
  e.eps = eps;
  e.z = Matrix(e.mu.rows(), e.mu.cols());
  for (std::size_t i = 0; i < e.z.size(); ++i) {
    e.z.data()[i] =
        e.mu.data()[i] + std::exp(0.5 * e.logvar.data()[i]) * e.eps.data()[i];
  }
  return e;
}

// Backpropagates gradients arriving at z (through the reparameterization)
// and directly at mu / logvar into the encoder parameters. dmu and dlogvar
// may be empty matrices, meaning zero.
inline void encoder_backward(const EncodedBatch& e, const EncoderParams& enc, const Matrix& dz,
                             const Matrix& dmu_direct, const Matrix& dlogvar_direct,
                             EncoderParams& grad) {
  const std::size_t n = e.mu.size();
  Matrix dmu(e.mu.rows(), e.mu.cols());
  Matrix dlv_raw(e.mu.rows(), e.mu.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double g = dz.data()[i];
    double dm = g;
    double dl = g * e.eps.data()[i] * 0.5 * std::exp(0.5 * e.logvar.data()[i]);
    if (!dmu_direct.data().empty()) dm += dmu_direct.data()[i];
    if (!dlogvar_direct.data().empty()) dl += dlogvar_direct.data()[i];
    dmu.data()[i] = dm;
    // The clamp passes gradient only strictly inside its range.
    const double raw = e.logvar_raw.data()[i];
    dlv_raw.data()[i] = (raw > kLogvarMin && raw < kLogvarMax) ? dl : 0.0;
  }
  Matrix dh_mu, dh_lv;
  diffnet::affine_backward_into(e.h, enc.W_mu, dmu, &dh_mu, grad.W_mu, grad.b_mu);
  diffnet::affine_backward_into(e.h, enc.W_lv, dlv_raw, &dh_lv, grad.W_lv, grad.b_lv);
  for (std::size_t i = 0; i < dh_mu.size(); ++i) dh_mu.data()[i] += dh_lv.data()[i];
  const Matrix da1 = diffnet::softplus_backward(e.a1, dh_mu);
  diffnet::affine_sparse_backward_into(e.input.normalized, da1, grad.W1, grad.b1);
}

struct Encoding {
  std::vector<double> mu;
  std::vector<double> logvar;
};

inline Encoding encode(const BowDocument& x, const EncoderParams& enc) {
  const auto e = encode_batch(make_batch(x, enc.vocab_size()), enc, Matrix(1, enc.topics()));
  return {std::vector<double>(e.mu.data()), std::vector<double>(e.logvar.data())};
}

inline std::vector<double> reparameterize(std::span<const double> mu,
                                          std::span<const double> logvar,
                                          std::span<const double> eps) {
  if (mu.size() != logvar.size() || mu.size() != eps.size()) {
    throw ShapeError("reparameterize: mismatched lengths");
  }
  std::vector<double> z(mu.size());
  for (std::size_t t = 0; t < mu.size(); ++t) z[t] = mu[t] + std::exp(0.5 * logvar[t]) * eps[t];
  return z;
}

inline std::vector<double> theta(std::span<const double> z) {
  std::vector<double> out(z.size());
  diffnet::softmax_row(z, out);
  return out;
}

// Document-topic mixture along the mean path (eps = 0).
inline std::vector<double> theta_mean_path(const BowDocument& x, const EncoderParams& enc) {
  return theta(encode(x, enc).mu);
}

inline std::vector<double> word_log_probs(std::span<const double> theta_doc,
                                          const DecoderParams& dec) {
  if (theta_doc.size() != dec.topics()) throw ShapeError("word_log_probs: theta length mismatch");
  std::vector<double> logits(dec.b_dec.data());
  for (std::size_t t = 0; t < dec.topics(); ++t) {
    const auto row = dec.beta.row(t);
    for (std::size_t v = 0; v < logits.size(); ++v) logits[v] += theta_doc[t] * row[v];
  }
  std::vector<double> out(logits.size());
  diffnet::log_softmax_row(logits, out);
  return out;
}

// Negative multinomial log-likelihood of the counts under the decoder.
inline double reconstruction_loss(const BowDocument& x, std::span<const double> theta_doc,
                                  const DecoderParams& dec) {
  const auto logp = word_log_probs(theta_doc, dec);
  double loss = 0.0;
  for (const auto& [w, c] : x.counts) loss -= static_cast<double>(c) * logp.at(w);
  return loss;
}

// KL(N(mu, exp(logvar)) || N(0, I)).
inline double kl_loss(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("kl_loss: mismatched lengths");
  double kl = 0.0;
  for (std::size_t t = 0; t < mu.size(); ++t) {
    kl += mu[t] * mu[t] + std::exp(logvar[t]) - logvar[t] - 1.0;
  }
  return 0.5 * kl;
}

struct ElboTerms {
  double loss = 0.0;   // mean of recon + kl
  double recon = 0.0;  // batch mean
  double kl = 0.0;     // batch mean
};

// Batch-mean ELBO loss. When grads are requested, adds ∂loss/∂params into
// them (they must be shaped like the parameters).
inline ElboTerms elbo_forward_backward(const EncodedBatch& e, const EncoderParams& enc,
                                       const DecoderParams& dec, EncoderParams* enc_grad,
                                       DecoderParams* dec_grad) {
  const std::size_t B = e.z.rows();
  const std::size_t T = e.z.cols();
  const std::size_t V = dec.vocab_size();
  const Matrix theta_b = diffnet::softmax(e.z);
  Matrix logits = diffnet::affine(theta_b, dec.beta, dec.b_dec);
  const Matrix logp = diffnet::log_softmax(logits);

  ElboTerms terms;
  for (std::size_t i = 0; i < B; ++i) {
    double r = 0.0;
    for (const auto& [w, c] : e.input.counts.rows[i]) r -= c * logp(i, w);
    terms.recon += r;
    terms.kl += kl_loss(e.mu.row(i), e.logvar.row(i));
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  terms.recon *= inv_b;
  terms.kl *= inv_b;
  terms.loss = terms.recon + terms.kl;
  if (!enc_grad && !dec_grad) return terms;

  // d(recon_i)/d logits_i = total_i · softmax_i − x_i.
  Matrix dlogits(B, V);
  for (std::size_t i = 0; i < B; ++i) {
    const double total = e.input.totals[i];
    auto dr = dlogits.row(i);
    for (std::size_t v = 0; v < V; ++v) dr[v] = inv_b * total * std::exp(logp(i, v));
    for (const auto& [w, c] : e.input.counts.rows[i]) dr[w] -= inv_b * c;
  }
  Matrix dtheta;
  DecoderParams scratch;
  DecoderParams& dg = dec_grad ? *dec_grad : (scratch = zeros_like(dec));
  diffnet::affine_backward_into(theta_b, dec.beta, dlogits, enc_grad ? &dtheta : nullptr, dg.beta,
                                dg.b_dec);
  if (!enc_grad) return terms;

  const Matrix dz = diffnet::softmax_backward(theta_b, dtheta);
  Matrix dmu(B, T), dlv(B, T);
  for (std::size_t i = 0; i < B * T; ++i) {
    dmu.data()[i] = inv_b * e.mu.data()[i];
    dlv.data()[i] = inv_b * 0.5 * (std::exp(e.logvar.data()[i]) - 1.0);
  }
  encoder_backward(e, enc, dz, dmu, dlv, *enc_grad);
  return terms;
}

// Top-n words per topic with their scores.
struct TopicList {
  std::vector<std::vector<WordId>> topics;
  std::vector<std::vector<double>> scores;
  std::size_t n = 0;
};

// Largest beta entries per topic, descending. Ties go to the
// lexicographically smaller word when a vocabulary is given, otherwise to the
// smaller index.
inline TopicList top_words(const DecoderParams& dec, std::size_t n,
                           const Vocabulary* vocab = nullptr) {
  const std::size_t V = dec.vocab_size();
  if (n == 0 || n > V) {
    throw ConfigError("top_words: n=" + std::to_string(n) + " must be in [1, " +
                      std::to_string(V) + "]");
  }
  if (vocab && vocab->size() != V) throw DataError("top_words: vocabulary size mismatch");
  TopicList out;
  out.n = n;
  std::vector<WordId> order(V);
  for (std::size_t t = 0; t < dec.topics(); ++t) {
    const auto row = dec.beta.row(t);
    std::iota(order.begin(), order.end(), WordId{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](WordId a, WordId b) {
                        if (row[a] != row[b]) return row[a] > row[b];
                        if (vocab) return vocab->word(a) < vocab->word(b);
                        return a < b;
                      });
    out.topics.emplace_back(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<double> sc;
    for (std::size_t k = 0; k < n; ++k) sc.push_back(row[order[k]]);
    out.scores.push_back(std::move(sc));
  }
  return out;
}

}  // namespace paretopic::ntm
