#pragma once

// Training loop: three encoded views per batch, setwise contrastive loss and
// ELBO, per-loss encoder gradients blended by the configured strategy, and
// plain gradient steps. Decoder parameters only ever see the ELBO gradient.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "paretopic/augment.hpp"
#include "paretopic/config.hpp"
#include "paretopic/corpus.hpp"
#include "paretopic/diffnet.hpp"
#include "paretopic/error.hpp"
#include "paretopic/moo.hpp"
#include "paretopic/ntm.hpp"
#include "paretopic/rng.hpp"
#include "paretopic/setcl.hpp"

namespace paretopic::trainer {

using diffnet::Matrix;

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t T = 50;
  std::size_t H = 100;
  std::size_t K = 4;
  std::size_t S = 8;
  double tau = 0.2;
  double lr = 0.002;
  std::size_t batch_size = 200;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool contrastive = true;
  moo::Strategy strategy = moo::Strategy::mgda;
  moo::StrategyParams moo_params;
  setcl::Pooling pooling;
  bool include_own_negative = false;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(T, "model.T");
    positive(H, "model.H");
    positive(K, "setcl.K");
    positive(S, "setcl.S");
    positive(batch_size, "train.batch_size");
    if (K > batch_size) {
      throw ConfigError("set size K=" + std::to_string(K) + " exceeds batch size B=" +
                        std::to_string(batch_size));
    }
    if (!(tau > 0.0)) throw ConfigError("setcl.tau must be positive");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(moo_params.linear_alpha >= 0.0 && moo_params.linear_alpha <= 1.0)) {
      throw ConfigError("moo.linear_alpha must be in [0, 1]");
    }
  }

  static TrainConfig from(const Config& c) {
    TrainConfig t;
    t.T = c.count("model.T");
    t.H = c.count("model.H");
    t.K = c.count("setcl.K");
    t.S = c.count("setcl.S");
    t.tau = c.real("setcl.tau");
    t.pooling.positive = diffnet::parse_pool_mode(c.str("setcl.pooling_positive"));
    t.pooling.negative = diffnet::parse_pool_mode(c.str("setcl.pooling_negative"));
    t.include_own_negative = c.boolean("setcl.include_own_negative");
    t.lr = c.real("train.lr");
    t.batch_size = c.count("train.batch_size");
    t.epochs = c.count("train.epochs");
    if (c.has_value("train.seed")) t.seed = static_cast<std::uint64_t>(c.integer("train.seed"));
    const auto& opt = c.str("train.optimizer");
    if (opt == "sgd") {
      t.optimizer = Optimizer::sgd;
    } else if (opt == "adam") {
      t.optimizer = Optimizer::adam;
    } else {
      throw ConfigError("train.optimizer: expected sgd|adam, got '" + opt + "'");
    }
    t.adam_beta1 = c.real("train.adam_beta1");
    t.adam_beta2 = c.real("train.adam_beta2");
    t.adam_eps = c.real("train.adam_eps");
    t.contrastive = c.boolean("train.contrastive");
    t.strategy = moo::parse_strategy(c.str("moo.strategy"));
    t.moo_params.linear_alpha = c.real("moo.linear_alpha");
    t.moo_params.tie_eps = c.real("moo.tie_eps");
    t.validate();
    return t;
  }
};

// Adam moments; unused (empty) for SGD.
struct OptimizerState {
  std::uint64_t t = 0;
  std::optional<ntm::EncoderParams> m_enc, v_enc;
  std::optional<ntm::DecoderParams> m_dec, v_dec;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct TrainState {
  ntm::ModelState model;
  OptimizerState optimizer;
  Rng rng;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed steps
};

inline TrainState initial_state(std::size_t V, const TrainConfig& cfg) {
  TrainState s;
  s.rng = Rng(cfg.seed);
  s.model = ntm::init_model(V, cfg.H, cfg.T, s.rng);
  return s;
}

struct TrainRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double elbo = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  std::optional<double> infonce;
  std::optional<double> alpha;
  double g_infonce_norm = 0.0;
  double g_elbo_norm = 0.0;
  double direction_norm = 0.0;
  double g_dot = 0.0;
};

inline nlohmann::json to_json(const TrainRecord& r) {
  nlohmann::json j = {{"step", r.step},
                      {"epoch", r.epoch},
                      {"elbo", r.elbo},
                      {"recon", r.recon},
                      {"kl", r.kl},
                      {"infonce", nullptr},
                      {"alpha", nullptr},
                      {"g_infonce_norm", r.g_infonce_norm},
                      {"g_elbo_norm", r.g_elbo_norm},
                      {"direction_norm", r.direction_norm},
                      {"g_dot", r.g_dot}};
  if (r.infonce) j["infonce"] = *r.infonce;
  if (r.alpha) j["alpha"] = *r.alpha;
  return j;
}

using TrainLog = std::vector<TrainRecord>;

inline void save_log(const TrainLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write training log " + path);
  for (const auto& r : log) out << to_json(r).dump() << '\n';
}

// Anchor, positive and negative bag-of-words views of every trainable
// document.
struct TrainingViews {
  std::vector<BowDocument> anchors, positives, negatives;
  std::vector<std::size_t> corpus_ids;

  std::size_t size() const { return anchors.size(); }
};

// Pairs each non-empty corpus document with its cached augmentations. Views
// that vectorize to nothing are replaced by dropout views of the anchor.
inline TrainingViews prepare_views(const Corpus& corpus,
                                   const std::vector<augment::AugmentedTriple>& cache,
                                   double drop_frac = augment::kDefaultDropFrac,
                                   std::uint64_t seed = 0) {
  std::vector<const augment::AugmentedTriple*> by_id(corpus.documents.size(), nullptr);
  for (const auto& t : cache) {
    if (t.anchor_id >= corpus.documents.size()) {
      throw DataError("augmentation cache references document " + std::to_string(t.anchor_id) +
                      " of a " + std::to_string(corpus.documents.size()) + "-document corpus");
    }
    by_id[t.anchor_id] = &t;
  }
  TrainingViews v;
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    const auto& doc = corpus.documents[i];
    if (doc.empty()) continue;
    if (!by_id[i]) {
      throw DataError("augmentation cache has no entry for document " + std::to_string(i));
    }
    auto view = [&](const std::string& text, std::uint64_t salt) {
      auto d = vectorize(text, corpus.vocabulary);
      if (d.empty()) d = augment::dropout_augment(doc, drop_frac, augment::mix_seed(seed, i, salt));
      d.raw_text.reset();
      return d;
    };
    v.anchors.push_back(doc);
    v.positives.push_back(view(by_id[i]->positive_text, 2));
    v.negatives.push_back(view(by_id[i]->negative_text, 3));
    v.corpus_ids.push_back(i);
  }
  return v;
}

namespace detail {

inline Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = rng.normal();
  return m;
}

inline std::vector<const BowDocument*> gather(const std::vector<BowDocument>& docs,
                                              std::span<const std::size_t> batch) {
  std::vector<const BowDocument*> out;
  out.reserve(batch.size());
  for (const auto i : batch) out.push_back(&docs.at(i));
  return out;
}

template <typename Params>
void sgd_update(Params& p, const Params& g, double lr) {
  std::vector<Matrix*> ps;
  p.for_each([&](const char*, Matrix& m) { ps.push_back(&m); });
  std::size_t k = 0;
  g.for_each([&](const char*, const Matrix& gm) {
    auto& pm = *ps[k++];
    for (std::size_t i = 0; i < pm.size(); ++i) pm.data()[i] -= lr * gm.data()[i];
  });
}

template <typename Params>
void adam_update(Params& p, const Params& g, Params& m, Params& v, std::uint64_t t,
                 const TrainConfig& cfg) {
  std::vector<Matrix*> ps, ms, vs;
  p.for_each([&](const char*, Matrix& x) { ps.push_back(&x); });
  m.for_each([&](const char*, Matrix& x) { ms.push_back(&x); });
  v.for_each([&](const char*, Matrix& x) { vs.push_back(&x); });
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  std::size_t k = 0;
  g.for_each([&](const char*, const Matrix& gm) {
    auto& pd = ps[k]->data();
    auto& md = ms[k]->data();
    auto& vd = vs[k]->data();
    ++k;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = gm.data()[i];
      md[i] = cfg.adam_beta1 * md[i] + (1.0 - cfg.adam_beta1) * gi;
      vd[i] = cfg.adam_beta2 * vd[i] + (1.0 - cfg.adam_beta2) * gi * gi;
      pd[i] -= cfg.lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + cfg.adam_eps);
    }
  });
}

inline std::string describe_batch(const TrainingViews& views, std::span<const std::size_t> batch) {
  std::ostringstream os;
  os << "batch corpus ids [";
  for (std::size_t i = 0; i < batch.size(); ++i) os << (i ? "," : "") << views.corpus_ids.at(batch[i]);
  os << "]";
  return os.str();
}

}  // namespace detail

// Applies the blended encoder direction and the ELBO decoder gradient.
inline void apply_update(TrainState& state, const ntm::EncoderParams& enc_dir,
                         const ntm::DecoderParams& dec_grad, const TrainConfig& cfg) {
  if (cfg.optimizer == Optimizer::sgd) {
    detail::sgd_update(state.model.enc, enc_dir, cfg.lr);
    detail::sgd_update(state.model.dec, dec_grad, cfg.lr);
    return;
  }
  auto& o = state.optimizer;
  if (!o.m_enc) {
    o.m_enc = ntm::zeros_like(state.model.enc);
    o.v_enc = ntm::zeros_like(state.model.enc);
    o.m_dec = ntm::zeros_like(state.model.dec);
    o.v_dec = ntm::zeros_like(state.model.dec);
  }
  ++o.t;
  detail::adam_update(state.model.enc, enc_dir, *o.m_enc, *o.v_enc, o.t, cfg);
  detail::adam_update(state.model.dec, dec_grad, *o.m_dec, *o.v_dec, o.t, cfg);
}

// Per-loss gradients for one batch, before blending.
struct StepGradients {
  ntm::ElboTerms elbo;
  std::optional<double> infonce;
  ntm::EncoderParams enc_infonce;  // ∇θ L_InfoNCE (zeros when contrastive is off)
  ntm::EncoderParams enc_elbo;     // ∇θ L_ELBO
  ntm::DecoderParams dec_elbo;     // ∇φ L_ELBO
};

namespace detail {

inline StepGradients compute_gradients_unchecked(std::span<const std::size_t> batch, TrainState& state,
                                       const TrainingViews& views, const TrainConfig& cfg) {
  const std::size_t B = batch.size();
  const std::size_t T = state.model.topics();
  const std::size_t V = state.model.vocab_size();
  if (B < cfg.K) {
    throw ConfigError("batch of " + std::to_string(B) + " documents is smaller than set size K=" +
                      std::to_string(cfg.K));
  }
  const auto& enc = state.model.enc;
  const auto& dec = state.model.dec;

  StepGradients g{{}, std::nullopt, ntm::zeros_like(enc), ntm::zeros_like(enc),
                  ntm::zeros_like(dec)};
  const auto x_docs = detail::gather(views.anchors, batch);
  const auto ex = ntm::encode_batch(ntm::make_batch(x_docs, V), enc,
                                    detail::normal_matrix(B, T, state.rng));
  if (cfg.contrastive) {
    const auto p_docs = detail::gather(views.positives, batch);
    const auto n_docs = detail::gather(views.negatives, batch);
    const auto ep = ntm::encode_batch(ntm::make_batch(p_docs, V), enc,
                                      detail::normal_matrix(B, T, state.rng));
    const auto en = ntm::encode_batch(ntm::make_batch(n_docs, V), enc,
                                      detail::normal_matrix(B, T, state.rng));
    const auto index = setcl::build_index_matrix(B, cfg.S, state.rng);
    const auto sets = setcl::build_sets(index, cfg.K);
    const auto cl = setcl::setwise_infonce_backward(sets, ex.z, ep.z, en.z, cfg.tau, cfg.pooling,
                                                    cfg.include_own_negative);
    g.infonce = cl.loss;
    const Matrix none;
    ntm::encoder_backward(ex, enc, cl.dZ, none, none, g.enc_infonce);
    ntm::encoder_backward(ep, enc, cl.dZp, none, none, g.enc_infonce);
    ntm::encoder_backward(en, enc, cl.dZn, none, none, g.enc_infonce);
  }
  g.elbo = ntm::elbo_forward_backward(ex, enc, dec, &g.enc_elbo, &g.dec_elbo);

  const bool finite = std::isfinite(g.elbo.loss) && (!g.infonce || std::isfinite(*g.infonce)) &&
                      ntm::all_finite(g.enc_elbo) && ntm::all_finite(g.enc_infonce) &&
                      ntm::all_finite(g.dec_elbo);
  if (!finite) {
    std::ostringstream os;
    os << "non-finite loss or gradient at step " << state.step << ": elbo=" << g.elbo.loss
       << " infonce=" << (g.infonce ? *g.infonce : 0.0) << "; "
       << detail::describe_batch(views, batch);
    throw NumericError(os.str());
  }
  return g;
}

}  // namespace detail

// Draws noise for the three views (anchor first) and the index matrix from
// state.rng, then computes both losses and their gradients.
inline StepGradients compute_gradients(std::span<const std::size_t> batch, TrainState& state,
                                       const TrainingViews& views, const TrainConfig& cfg) {
  try {
    return detail::compute_gradients_unchecked(batch, state, views, cfg);
  } catch (const NumericError& e) {
    const std::string what = e.what();
    if (what.find("batch corpus ids") != std::string::npos) throw;
    throw NumericError(what + " at step " + std::to_string(state.step) + "; " +
                       detail::describe_batch(views, batch));
  }
}

inline TrainRecord train_step(std::span<const std::size_t> batch, TrainState& state,
                              const TrainingViews& views, const TrainConfig& cfg) {
  auto g = compute_gradients(batch, state, views, cfg);

  TrainRecord rec;
  rec.step = state.step;
  rec.epoch = state.epoch;
  rec.elbo = g.elbo.loss;
  rec.recon = g.elbo.recon;
  rec.kl = g.elbo.kl;
  rec.infonce = g.infonce;

  ntm::EncoderParams direction = g.enc_elbo;
  const auto g_elbo = ntm::flatten(g.enc_elbo);
  if (cfg.contrastive) {
    const auto g_cl = ntm::flatten(g.enc_infonce);
    const auto decision = moo::strategy_dispatch(cfg.strategy, g_cl, g_elbo, cfg.moo_params, state.rng);
    ntm::unflatten(decision.direction.values, direction);
    rec.alpha = decision.alpha;
    rec.g_infonce_norm = decision.diagnostics.g1_norm;
    rec.g_elbo_norm = decision.diagnostics.g2_norm;
    rec.direction_norm = decision.diagnostics.direction_norm;
    rec.g_dot = decision.diagnostics.g1_dot_g2;
  } else {
    rec.g_elbo_norm = diffnet::norm(g_elbo.values);
    rec.direction_norm = rec.g_elbo_norm;
  }
  apply_update(state, direction, g.dec_elbo, cfg);
  ++state.step;
  return rec;
}

struct FitCallbacks {
  std::function<void(const TrainRecord&)> on_step;
  std::function<void(const TrainState&)> on_epoch_end;  // checkpoint hook
};

// Runs epochs state.epoch .. cfg.epochs-1. Each epoch shuffles the document
// order from state.rng and drops the ragged final batch.
inline TrainLog fit(const TrainingViews& views, const TrainConfig& cfg, TrainState& state,
                    const FitCallbacks& cb = {}) {
  cfg.validate();
  if (views.size() == 0) throw DataError("fit: no trainable documents");
  if (views.size() < cfg.batch_size) {
    throw ConfigError("fit: " + std::to_string(views.size()) +
                      " trainable documents are fewer than batch size B=" +
                      std::to_string(cfg.batch_size));
  }
  TrainLog log;
  std::vector<std::size_t> order(views.size());
  while (state.epoch < cfg.epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    state.rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start + cfg.batch_size <= order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, cfg.batch_size);
      auto rec = train_step(batch, state, views, cfg);
      if (cb.on_step) cb.on_step(rec);
      log.push_back(std::move(rec));
    }
    ++state.epoch;
    if (cb.on_epoch_end) cb.on_epoch_end(state);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline void matrix_from_json(const nlohmann::json& j, Matrix& m, const std::string& name) {
  if (!j.is_array() || j.size() != m.rows()) {
    throw DataError("checkpoint: " + name + " should have " + std::to_string(m.rows()) + " rows");
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != m.cols()) {
      throw DataError("checkpoint: " + name + " row " + std::to_string(r) + " should have " +
                      std::to_string(m.cols()) + " columns");
    }
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!row[c].is_number()) throw DataError("checkpoint: " + name + " has a non-numeric entry");
      m(r, c) = row[c].get<double>();
    }
  }
}

template <typename Params>
nlohmann::json params_json(const Params& p) {
  nlohmann::json j = nlohmann::json::object();
  p.for_each([&](const char* name, const Matrix& m) { j[name] = matrix_json(m); });
  return j;
}

template <typename Params>
void params_from_json(const nlohmann::json& j, Params& p, const std::string& group) {
  if (!j.is_object()) throw DataError("checkpoint: " + group + " must be an object");
  p.for_each([&](const char* name, Matrix& m) {
    if (!j.contains(name)) throw DataError("checkpoint: missing " + group + "." + name);
    matrix_from_json(j[name], m, group + "." + name);
  });
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const TrainState& s, const std::string& vocab_hash) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["V"] = s.model.vocab_size();
  j["H"] = s.model.hidden();
  j["T"] = s.model.topics();
  j["vocab_hash"] = vocab_hash;
  j["encoder"] = detail::params_json(s.model.enc);
  j["decoder"] = detail::params_json(s.model.dec);
  j["rng_state"] = s.rng.state();
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  nlohmann::json opt = {{"kind", s.optimizer.m_enc ? "adam" : "sgd"}, {"t", s.optimizer.t}};
  if (s.optimizer.m_enc) {
    opt["m_enc"] = detail::params_json(*s.optimizer.m_enc);
    opt["v_enc"] = detail::params_json(*s.optimizer.v_enc);
    opt["m_dec"] = detail::params_json(*s.optimizer.m_dec);
    opt["v_dec"] = detail::params_json(*s.optimizer.v_dec);
  }
  j["optimizer"] = opt;
  return j;
}

// Doubles are written in shortest round-trip form, so loading restores every
// parameter bit for bit.
inline void save_checkpoint(const TrainState& s, const std::string& vocab_hash,
                            const std::string& path) {
  const auto text = checkpoint_json(s, vocab_hash).dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << text << '\n';
  if (!out) throw DataError("failed writing checkpoint " + path);
}

inline TrainState checkpoint_from_json(const nlohmann::json& j,
                                       const std::optional<std::string>& expected_vocab_hash) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported format_version " + j.at("format_version").dump());
    }
    const auto hash = j.at("vocab_hash").get<std::string>();
    if (expected_vocab_hash && hash != *expected_vocab_hash) {
      throw DataError("checkpoint: vocab_hash " + hash + " does not match vocabulary " +
                      *expected_vocab_hash);
    }
    const auto V = j.at("V").get<std::size_t>();
    const auto H = j.at("H").get<std::size_t>();
    const auto T = j.at("T").get<std::size_t>();
    if (V == 0 || H == 0 || T == 0) throw DataError("checkpoint: zero dimension");
    TrainState s;
    s.model = {ntm::EncoderParams::zeros(V, H, T), ntm::DecoderParams::zeros(T, V)};
    detail::params_from_json(j.at("encoder"), s.model.enc, "encoder");
    detail::params_from_json(j.at("decoder"), s.model.dec, "decoder");
    s.rng.set_state(j.at("rng_state").get<std::string>());
    s.epoch = j.value("epoch", std::size_t{0});
    s.step = j.value("step", std::size_t{0});
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      s.optimizer.t = o.value("t", std::uint64_t{0});
      if (o.value("kind", std::string("sgd")) == "adam") {
        s.optimizer.m_enc = ntm::zeros_like(s.model.enc);
        s.optimizer.v_enc = ntm::zeros_like(s.model.enc);
        s.optimizer.m_dec = ntm::zeros_like(s.model.dec);
        s.optimizer.v_dec = ntm::zeros_like(s.model.dec);
        detail::params_from_json(o.at("m_enc"), *s.optimizer.m_enc, "optimizer.m_enc");
        detail::params_from_json(o.at("v_enc"), *s.optimizer.v_enc, "optimizer.v_enc");
        detail::params_from_json(o.at("m_dec"), *s.optimizer.m_dec, "optimizer.m_dec");
        detail::params_from_json(o.at("v_dec"), *s.optimizer.v_dec, "optimizer.v_dec");
      }
    }
    if (!ntm::all_finite(s.model.enc) || !ntm::all_finite(s.model.dec)) {
      throw DataError("checkpoint: non-finite parameter");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline TrainState load_checkpoint(const std::string& path,
                                  const std::optional<std::string>& expected_vocab_hash = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j, expected_vocab_hash);
}

}  // namespace paretopic::trainer
