#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "btc/corpus.hpp"
#include "btc/lora.hpp"
#include "btc/unimodal.hpp"

namespace btc {

struct CrossModalConfig {
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int dec_dim = 64;
  int dec_layers = 1;
  int dec_heads = 4;
  double mask_ratio = 0.5;
  int proj_dim = 32;
  double temperature = 0.5;
  int film_hidden = 32;
  bool time_aware = true;

  void validate(int embed_dim) const;

  static CrossModalConfig desk();
  static CrossModalConfig paper_scale();
};

// Unordered pair uniform over C(M, 2); order within the pair randomised.
std::pair<int, int> sample_modality_pair(int modality_count, Rng& rng);

// Single-example stacked state: one (tokens x D) matrix per stream, CLS at row 0.
template <typename T>
struct BimodalState {
  std::array<Matrix<T>, 2> tokens;
  std::array<int, 2> pair{0, 1};
  double t_hat = 0.0;
  std::array<MaskPlan, 2> plans;  // over patch rows only
  bool masked = false;
};

// Spatial (per modality), temporal (per patch) and token (per modality and
// patch) tables. CLS rows receive the spatial row only.
template <typename T>
class PositionalTriplet {
 public:
  PositionalTriplet(ParamStore<T>& store, const std::string& prefix, int modalities, int patches, int dim)
      : modalities_(modalities), patches_(patches) {
    spatial_ = &store.create(prefix + ".spatial", modalities, dim, Init::normal(kInitStd));
    temporal_ = &store.create(prefix + ".temporal", patches, dim, Init::normal(kInitStd));
    token_ = &store.create(prefix + ".token", static_cast<Eigen::Index>(modalities) * patches, dim,
                           Init::normal(kInitStd));
  }

  int modalities() const { return modalities_; }
  Parameter<T>& spatial() { return *spatial_; }
  Parameter<T>& temporal() { return *temporal_; }
  Parameter<T>& token() { return *token_; }

  // tokens: (batch * (P + 1)) x D for modality m.
  ag::Var apply(ag::Tape<T>& t, ag::Var tokens, int modality, int batch) const {
    if (modality < 0 || modality >= modalities_)
      throw LookupError("positional triplet: unknown modality id " + std::to_string(modality));
    const int p = patches_;
    if (t.value(tokens).rows() != static_cast<Eigen::Index>(batch) * (p + 1))
      throw ShapeError("positional triplet: token rows do not match batch * (P + 1)");
    const Eigen::Index d = t.value(tokens).cols();
    ag::Var zero = t.constant(Matrix<T>::Zero(1, d));
    std::vector<int> sp(static_cast<std::size_t>(batch) * (p + 1), modality);
    std::vector<int> tp(sp.size()), tk(sp.size());
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * (p + 1);
      tp[base] = p;
      tk[base] = modalities_ * p;
      for (int i = 0; i < p; ++i) {
        tp[base + 1 + static_cast<std::size_t>(i)] = i;
        tk[base + 1 + static_cast<std::size_t>(i)] = modality * p + i;
      }
    }
    ag::Var add = t.gather_rows(t.param(*spatial_), std::move(sp));
    add = t.add(add, t.gather_rows(t.concat_rows({t.param(*temporal_), zero}), std::move(tp)));
    add = t.add(add, t.gather_rows(t.concat_rows({t.param(*token_), zero}), std::move(tk)));
    return t.add(tokens, add);
  }

 private:
  int modalities_, patches_;
  Parameter<T>* spatial_ = nullptr;
  Parameter<T>* temporal_ = nullptr;
  Parameter<T>* token_ = nullptr;
};

// Maps the standardised session index to per-example (gamma, beta):
// gamma = 1 + gate_gamma * LN(raw_gamma), beta = gate_beta * LN(raw_beta).
template <typename T>
class TimeConditioner {
 public:
  TimeConditioner(ParamStore<T>& store, const std::string& prefix, int dim, int hidden)
      : dim_(dim),
        fc1_(store, prefix + ".fc1", 1, hidden),
        fc2_(store, prefix + ".fc2", hidden, 2 * dim),
        ln_gamma_(store, prefix + ".ln_gamma", dim),
        ln_beta_(store, prefix + ".ln_beta", dim) {
    // fc1 sees a unit-scale scalar. With a small init, or a zero bias, the
    // hidden layer is nearly homogeneous in t_hat and the layer norms below
    // reduce it to sign(t_hat); unit-scale weights and biases keep it rich.
    Rng rng(child_seed(store.seed(), fnv1a(prefix + ".fc1.init")));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index i = 0; i < fc1_.weight->value.size(); ++i)
      fc1_.weight->value.data()[i] = static_cast<T>(nd(rng));
    for (Eigen::Index i = 0; i < fc1_.bias->value.size(); ++i) fc1_.bias->value.data()[i] = static_cast<T>(nd(rng));
    gate_gamma_ = &store.create(prefix + ".gate_gamma", 1, 1, Init::zeros());
    gate_beta_ = &store.create(prefix + ".gate_beta", 1, 1, Init::zeros());
  }

  Parameter<T>& gate_gamma() { return *gate_gamma_; }
  Parameter<T>& gate_beta() { return *gate_beta_; }
  Linear<T>& fc1() { return fc1_; }
  Linear<T>& fc2() { return fc2_; }

  // t_hat: batch x 1. Returns (gamma, beta), each batch x D.
  std::pair<ag::Var, ag::Var> film(ag::Tape<T>& t, ag::Var t_hat, const RunMode& mode) const {
    ag::Var raw = fc2_(t, t.gelu(fc1_(t, t_hat, mode)), mode);
    ag::Var g = ln_gamma_(t, t.slice_cols(raw, 0, dim_));
    ag::Var b = ln_beta_(t, t.slice_cols(raw, dim_, dim_));
    ag::Var gamma = t.add_const(t.mul_scalar(g, t.param(*gate_gamma_)), T(1));
    ag::Var beta = t.mul_scalar(b, t.param(*gate_beta_));
    return {gamma, beta};
  }

 private:
  int dim_;
  Linear<T> fc1_, fc2_;
  LayerNorm<T> ln_gamma_, ln_beta_;
  Parameter<T>* gate_gamma_ = nullptr;
  Parameter<T>* gate_beta_ = nullptr;
};

// z <- gamma[e] * z + beta[e] for every row of example e. gamma/beta: batch x D.
template <typename T>
ag::Var apply_film_rows(ag::Tape<T>& t, ag::Var tokens, ag::Var gamma, ag::Var beta, int batch) {
  const Eigen::Index rows = t.value(tokens).rows();
  if (t.value(gamma).cols() != t.value(tokens).cols() || t.value(beta).cols() != t.value(tokens).cols())
    throw ShapeError("time FiLM: gamma/beta length differs from the feature dimension");
  if (batch <= 0 || rows % batch != 0) throw ShapeError("time FiLM: rows not divisible by batch");
  const int per = static_cast<int>(rows / batch);
  std::vector<int> ex(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) ex[static_cast<std::size_t>(r)] = static_cast<int>(r) / per;
  return t.add(t.mul(tokens, t.gather_rows(gamma, ex)), t.gather_rows(beta, ex));
}

// Directional flow target <- source: pre-norm multi-head cross-attention with
// a sigmoid gate from the (normalised) target stream applied to the projected
// attention output, then a pre-norm residual feed-forward sublayer.
template <typename T>
class GatedCrossBlock {
 public:
  GatedCrossBlock(ParamStore<T>& store, const std::string& prefix, int dim, int heads, int hidden)
      : ln_q_(store, prefix + ".ln_q", dim),
        ln_kv_(store, prefix + ".ln_kv", dim),
        attn_(store, prefix + ".attn", dim, heads),
        gate_(store, prefix + ".gate", dim, dim, true, Init::zeros()),
        ln_ffn_(store, prefix + ".ln_ffn", dim),
        ffn_(store, prefix + ".ffn", dim, hidden) {}

  ag::Var operator()(ag::Tape<T>& t, ag::Var target, ag::Var source, int batch, const RunMode& mode,
                     std::vector<Matrix<T>>* probs = nullptr, ag::Var* gate_out = nullptr) const {
    if (t.value(target).cols() != t.value(source).cols())
      throw ShapeError("gated cross-attention: target and source feature dims differ");
    ag::Var q = ln_q_(t, target);
    ag::Var kv = ln_kv_(t, source);
    ag::Var gate = t.sigmoid(gate_(t, q, mode));
    if (gate_out != nullptr) *gate_out = gate;
    ag::Var u = t.mul(gate, attn_(t, q, kv, batch, mode, probs));
    ag::Var x = t.add(target, u);
    return t.add(x, ffn_(t, ln_ffn_(t, x), mode));
  }

  MultiHeadAttention<T>& attention() { return attn_; }
  Linear<T>& gate() { return gate_; }
  FeedForward<T>& ffn() { return ffn_; }

 private:
  LayerNorm<T> ln_q_, ln_kv_;
  MultiHeadAttention<T> attn_;
  Linear<T> gate_;
  LayerNorm<T> ln_ffn_;
  FeedForward<T> ffn_;
};

// Batched bimodal input: both streams share (session, segment) per example.
template <typename T>
struct BimodalBatch {
  std::array<int, 2> pair{0, 1};
  std::array<Matrix<T>, 2> patches;  // (B * P) x patch_size per stream
  std::vector<double> t_hat;         // one per example
  int batch() const { return static_cast<int>(t_hat.size()); }
};

template <typename T>
struct CrossForward {
  std::array<ag::Var, 2> fused;  // (B * (V + 1)) x D per stream
  std::array<ag::Var, 2> recon;  // (B * P) x patch_size per stream (if decoded)
  ag::Var cls;                   // B x 2D, stream order = pair order
};

template <typename T>
class CrossModalModel {
 public:
  CrossModalModel(const EncoderConfig& enc_cfg, const CrossModalConfig& cfg, int modalities,
                  std::uint64_t seed)
      : enc_cfg_(enc_cfg), cfg_(cfg), modalities_(modalities), store_(seed) {
    enc_cfg.validate();
    cfg.validate(enc_cfg.embed_dim);
    if (modalities < 2) throw InvalidInput("cross-modal model needs at least two modalities");
    const int d = enc_cfg.embed_dim;
    for (int m = 0; m < modalities; ++m)
      encoders_.push_back(std::make_unique<UnimodalEncoder<T>>(store_, unimodal_prefix(m), enc_cfg));
    triplet_ = std::make_unique<PositionalTriplet<T>>(store_, "cross.triplet", modalities,
                                                      enc_cfg.patch_count(), d);
    if (cfg.time_aware)
      time_ = std::make_unique<TimeConditioner<T>>(store_, "cross.time", d, cfg.film_hidden);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "cross.layers." + std::to_string(l);
      layers_.push_back({GatedCrossBlock<T>(store_, p + ".first", d, cfg.heads, d * cfg.mlp_ratio),
                         GatedCrossBlock<T>(store_, p + ".second", d, cfg.heads, d * cfg.mlp_ratio)});
    }
    norm_ = LayerNorm<T>(store_, "cross.norm", d);
    EncoderConfig dec_cfg = enc_cfg;
    dec_cfg.dec_dim = cfg.dec_dim;
    dec_cfg.dec_layers = cfg.dec_layers;
    dec_cfg.dec_heads = cfg.dec_heads;
    dec_cfg.mlp_ratio = cfg.mlp_ratio;
    decoder_ = std::make_unique<ReconDecoder<T>>(store_, "cross.dec", d, dec_cfg);
    dec_modality_ = &store_.create("cross.dec_modality", modalities, cfg.dec_dim, Init::normal(kInitStd));
    head_ = std::make_unique<ContrastiveHead<T>>(store_, "cross.head", 2 * d, cfg.proj_dim);
  }

  static std::string unimodal_prefix(int m) { return "uni." + std::to_string(m); }

  const EncoderConfig& encoder_config() const { return enc_cfg_; }
  const CrossModalConfig& config() const { return cfg_; }
  bool time_aware() const { return time_ != nullptr; }
  int modality_count() const { return modalities_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  UnimodalEncoder<T>& encoder(int m) { return *encoders_.at(static_cast<std::size_t>(m)); }
  const UnimodalEncoder<T>& encoder(int m) const { return *encoders_.at(static_cast<std::size_t>(m)); }
  PositionalTriplet<T>& triplet() { return *triplet_; }
  const PositionalTriplet<T>& triplet() const { return *triplet_; }
  TimeConditioner<T>* time_conditioner() { return time_.get(); }
  const TimeConditioner<T>* time_conditioner() const { return time_.get(); }
  GatedCrossBlock<T>& block(int layer, int direction) {
    return layers_.at(static_cast<std::size_t>(layer))[static_cast<std::size_t>(direction)];
  }

  // Every fusion-side linear map (attention projections and feed-forward).
  std::vector<Linear<T>*> fusion_attention_maps() {
    std::vector<Linear<T>*> out;
    for (auto& layer : layers_)
      for (auto& blk : layer)
        for (Linear<T>* l : blk.attention().projections()) out.push_back(l);
    return out;
  }
  std::vector<Linear<T>*> fusion_mlp_maps() {
    std::vector<Linear<T>*> out;
    for (auto& layer : layers_)
      for (auto& blk : layer) {
        out.push_back(&blk.ffn().fc1);
        out.push_back(&blk.ffn().fc2);
      }
    return out;
  }

  std::vector<const LoraAdapter<T>*> adapters() {
    std::vector<const LoraAdapter<T>*> out;
    for (Linear<T>* l : all_linear_maps())
      if (l->lora) out.push_back(l->lora.get());
    return out;
  }

  std::vector<const LoraAdapter<T>*> adapters() const {
    return const_cast<CrossModalModel*>(this)->adapters();
  }

  std::vector<Linear<T>*> all_linear_maps() {
    std::vector<Linear<T>*> out;
    for (auto& enc : encoders_) {
      for (Linear<T>* l : enc->attention_maps()) out.push_back(l);
      for (Linear<T>* l : enc->mlp_maps()) out.push_back(l);
    }
    for (Linear<T>* l : fusion_attention_maps()) out.push_back(l);
    for (Linear<T>* l : fusion_mlp_maps()) out.push_back(l);
    return out;
  }

  // ----- pipeline stages (batched, on a tape) -----

  // Full-visibility Stage-1 encoding of one stream: (B * (P + 1)) x D.
  ag::Var encode_stream(ag::Tape<T>& t, const Matrix<T>& patches, int modality, int batch,
                        const RunMode& mode) const {
    std::vector<MaskPlan> plans(static_cast<std::size_t>(batch), full_visibility(enc_cfg_.patch_count()));
    return encoder(modality).encode(t, patches, plans, mode);
  }

  ag::Var add_positions(ag::Tape<T>& t, ag::Var tokens, int modality, int batch) const {
    return triplet_->apply(t, tokens, modality, batch);
  }

  // Identity when the model is not time-aware (the conditioner is absent).
  void apply_time(ag::Tape<T>& t, std::array<ag::Var, 2>& streams, const std::vector<double>& t_hat,
                  const RunMode& mode) const {
    if (!time_) return;
    const int batch = static_cast<int>(t_hat.size());
    Matrix<T> th(batch, 1);
    for (int b = 0; b < batch; ++b) th(b, 0) = static_cast<T>(t_hat[static_cast<std::size_t>(b)]);
    auto [gamma, beta] = time_->film(t, t.constant(std::move(th)), mode);
    for (auto& s : streams) s = apply_film_rows(t, s, gamma, beta, batch);
  }

  // Keeps CLS plus the visible patch rows of each example.
  static ag::Var keep_visible(ag::Tape<T>& t, ag::Var tokens, const std::vector<MaskPlan>& plans,
                              int patch_count) {
    check_plans(plans, patch_count);
    std::vector<int> keep;
    for (std::size_t b = 0; b < plans.size(); ++b) {
      const int base = static_cast<int>(b) * (patch_count + 1);
      keep.push_back(base);
      for (int i : plans[b].visible) keep.push_back(base + 1 + i);
    }
    return t.gather_rows(tokens, std::move(keep));
  }

  // Cross-attention layers. Both directional flows of a layer read the
  // layer input, so the first stream's update does not leak into the second.
  std::array<ag::Var, 2> fuse(ag::Tape<T>& t, std::array<ag::Var, 2> streams, int batch,
                              const RunMode& mode) const {
    for (const auto& layer : layers_) {
      ag::Var a = layer[0](t, streams[0], streams[1], batch, mode);
      ag::Var b = layer[1](t, streams[1], streams[0], batch, mode);
      streams = {a, b};
    }
    return {norm_(t, streams[0]), norm_(t, streams[1])};
  }

  ag::Var decode(ag::Tape<T>& t, ag::Var fused, int modality, const std::vector<MaskPlan>& plans,
                 const RunMode& mode) const {
    ag::Var bias = t.gather_rows(t.param(*dec_modality_), {modality});
    return decoder_->decode(t, fused, plans, mode, bias);
  }

  ag::Var cls_pair(ag::Tape<T>& t, const std::array<ag::Var, 2>& fused, int batch) const {
    const int per = static_cast<int>(t.value(fused[0]).rows()) / batch;
    return t.concat_cols(t.gather_rows(fused[0], cls_rows(batch, per)),
                         t.gather_rows(fused[1], cls_rows(batch, per)));
  }

  ag::Var project(ag::Tape<T>& t, ag::Var cls, const RunMode& mode) const { return (*head_)(t, cls, mode); }

  // Stack -> positional triplet -> time FiLM -> mask -> fuse -> decode.
  CrossForward<T> forward(ag::Tape<T>& t, const BimodalBatch<T>& in,
                          const std::array<std::vector<MaskPlan>, 2>& plans, const RunMode& mode,
                          bool with_decoder) const {
    const int batch = in.batch();
    const int p = enc_cfg_.patch_count();
    if (in.pair[0] == in.pair[1]) throw InvalidInput("bimodal batch needs two distinct modalities");
    std::array<ag::Var, 2> s;
    for (int i = 0; i < 2; ++i) {
      const auto si = static_cast<std::size_t>(i);
      if (static_cast<int>(plans[si].size()) != batch) throw ShapeError("one mask plan per example required");
      s[si] = add_positions(t, encode_stream(t, in.patches[si], in.pair[si], batch, mode), in.pair[si], batch);
    }
    apply_time(t, s, in.t_hat, mode);
    for (int i = 0; i < 2; ++i) s[static_cast<std::size_t>(i)] = keep_visible(t, s[static_cast<std::size_t>(i)], plans[static_cast<std::size_t>(i)], p);
    CrossForward<T> out;
    out.fused = fuse(t, s, batch, mode);
    if (with_decoder)
      for (int i = 0; i < 2; ++i)
        out.recon[static_cast<std::size_t>(i)] =
            decode(t, out.fused[static_cast<std::size_t>(i)], in.pair[static_cast<std::size_t>(i)], plans[static_cast<std::size_t>(i)], mode);
    out.cls = cls_pair(t, out.fused, batch);
    return out;
  }

 private:
  EncoderConfig enc_cfg_;
  CrossModalConfig cfg_;
  int modalities_;
  ParamStore<T> store_;
  std::vector<std::unique_ptr<UnimodalEncoder<T>>> encoders_;
  std::unique_ptr<PositionalTriplet<T>> triplet_;
  std::unique_ptr<TimeConditioner<T>> time_;
  std::vector<std::array<GatedCrossBlock<T>, 2>> layers_;
  LayerNorm<T> norm_;
  std::unique_ptr<ReconDecoder<T>> decoder_;
  Parameter<T>* dec_modality_ = nullptr;
  std::unique_ptr<ContrastiveHead<T>> head_;
};

// Two augmented views of the same window pairs plus clean reconstruction targets.
template <typename T>
struct Stage2Batch {
  BimodalBatch<T> view1, view2;
  std::array<Matrix<T>, 2> targets;
  std::array<std::vector<MaskPlan>, 2> plans1, plans2;
};

struct Stage2Terms {
  ag::Var total, recon, contrast;
};

// Mean of the two per-stream masked reconstruction losses (view 1) plus
// lambda * NT-Xent between projected concatenated CLS of the two views.
template <typename T>
Stage2Terms stage2_objective(ag::Tape<T>& t, const CrossModalModel<T>& m, const Stage2Batch<T>& b,
                             double lambda_con, const RunMode& mode) {
  const int p = m.encoder_config().patch_count();
  CrossForward<T> f1 = m.forward(t, b.view1, b.plans1, mode, true);
  CrossForward<T> f2 = m.forward(t, b.view2, b.plans2, mode, false);
  ag::Var r0 = t.masked_mse(f1.recon[0], b.targets[0], masked_rows(b.plans1[0], p));
  ag::Var r1 = t.masked_mse(f1.recon[1], b.targets[1], masked_rows(b.plans1[1], p));
  Stage2Terms out;
  out.recon = t.scale(t.add(r0, r1), T(0.5));
  ag::Var z = t.concat_rows({m.project(t, f1.cls, mode), m.project(t, f2.cls, mode)});
  out.contrast = t.nt_xent(z, static_cast<T>(m.config().temperature));
  out.total = t.add(out.recon, t.scale(out.contrast, static_cast<T>(lambda_con)));
  return out;
}

inline double stage2_loss(double recon_a, double recon_b, double contrast, double lambda_con) {
  return stage1_loss(0.5 * (recon_a + recon_b), contrast, lambda_con);
}

// ----- single-example operations (non-recording) -----

template <typename T>
BimodalState<T> stack_bimodal(const CrossModalModel<T>& model, const Epoch& ej, const Epoch& ek,
                              const SessionStats& stats) {
  if (ej.session_id != ek.session_id || ej.segment_index != ek.segment_index)
    throw AlignmentError("stack_bimodal: windows come from different (session, segment) positions");
  if (ej.modality_id == ek.modality_id) throw InvalidInput("stack_bimodal: modalities must differ");
  const int ps = model.encoder_config().patch_size;
  BimodalState<T> st;
  st.pair = {ej.modality_id, ek.modality_id};
  st.t_hat = normalize_session_index(ej.segment_index, stats);
  ag::Tape<T> t(false);
  const Epoch* eps[2] = {&ej, &ek};
  for (int i = 0; i < 2; ++i) {
    Matrix<T> patches = patchify(*eps[i], ps).patches.template cast<T>();
    st.tokens[static_cast<std::size_t>(i)] =
        t.value(model.encode_stream(t, patches, eps[i]->modality_id, 1, RunMode{}));
  }
  const int p = model.encoder_config().patch_count();
  st.plans = {full_visibility(p), full_visibility(p)};
  return st;
}

template <typename T>
BimodalState<T> apply_positional_triplet(const BimodalState<T>& st, const PositionalTriplet<T>& tri) {
  BimodalState<T> out = st;
  ag::Tape<T> t(false);
  for (int i = 0; i < 2; ++i) {
    const auto si = static_cast<std::size_t>(i);
    out.tokens[si] = t.value(tri.apply(t, t.constant(st.tokens[si]), st.pair[si], 1));
  }
  return out;
}

template <typename T>
std::pair<RowVec<T>, RowVec<T>> film_params(const TimeConditioner<T>& cond, double t_hat) {
  ag::Tape<T> t(false);
  auto [g, b] = cond.film(t, t.constant(Matrix<T>::Constant(1, 1, static_cast<T>(t_hat))), RunMode{});
  return {t.value(g).row(0), t.value(b).row(0)};
}

template <typename T>
BimodalState<T> apply_time_film(const BimodalState<T>& st, const RowVec<T>& gamma, const RowVec<T>& beta) {
  const Eigen::Index d = st.tokens[0].cols();
  if (gamma.size() != d || beta.size() != d)
    throw ShapeError("apply_time_film: gamma/beta length differs from the feature dimension");
  BimodalState<T> out = st;
  for (auto& m : out.tokens) {
    m = m.array().rowwise() * gamma.array();
    m.rowwise() += beta;
  }
  return out;
}

template <typename T>
BimodalState<T> mask_stage2(const BimodalState<T>& st, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidInput("mask_stage2: ratio must be in (0,1)");
  if (st.masked) throw InvalidInput("mask_stage2: state is already masked");
  BimodalState<T> out = st;
  const int p = static_cast<int>(st.tokens[0].rows()) - 1;
  ag::Tape<T> t(false);
  for (int i = 0; i < 2; ++i) {
    const auto si = static_cast<std::size_t>(i);
    out.plans[si] = sample_mask(p, ratio, rng);
    out.tokens[si] = t.value(CrossModalModel<T>::keep_visible(t, t.constant(st.tokens[si]), {out.plans[si]}, p));
  }
  out.masked = true;
  return out;
}

template <typename T>
Matrix<T> gated_cross_attention(const GatedCrossBlock<T>& blk, const Matrix<T>& target, const Matrix<T>& source,
                                std::vector<Matrix<T>>* probs = nullptr) {
  ag::Tape<T> t(false);
  return t.value(blk(t, t.constant(target), t.constant(source), 1, RunMode{}, probs));
}

template <typename T>
struct CrossModalOutput {
  BimodalState<T> fused;
  std::array<PatchSequence, 2> recon;
  RowVec<T> cls;         // concatenated CLS, length 2D
  RowVec<T> projection;  // contrastive-space vector
};

// state: stacked tokens with the positional triplet applied, unmasked.
// Applies time FiLM (time-aware models only), masks per state.plans, fuses,
// decodes both streams and projects the CLS pair.
template <typename T>
CrossModalOutput<T> crossmodal_forward(const CrossModalModel<T>& model, const BimodalState<T>& state) {
  if (state.masked) throw InvalidInput("crossmodal_forward expects an unmasked state with plans attached");
  const int p = model.encoder_config().patch_count();
  ag::Tape<T> t(false);
  RunMode mode;
  std::array<ag::Var, 2> s = {t.constant(state.tokens[0]), t.constant(state.tokens[1])};
  model.apply_time(t, s, {state.t_hat}, mode);
  std::array<std::vector<MaskPlan>, 2> plans = {std::vector<MaskPlan>{state.plans[0]},
                                                std::vector<MaskPlan>{state.plans[1]}};
  for (int i = 0; i < 2; ++i)
    s[static_cast<std::size_t>(i)] =
        CrossModalModel<T>::keep_visible(t, s[static_cast<std::size_t>(i)], plans[static_cast<std::size_t>(i)], p);
  auto fused = model.fuse(t, s, 1, mode);
  CrossModalOutput<T> out;
  out.fused = state;
  out.fused.masked = true;
  for (int i = 0; i < 2; ++i) {
    const auto si = static_cast<std::size_t>(i);
    out.fused.tokens[si] = t.value(fused[si]);
    out.recon[si].patches = t.value(model.decode(t, fused[si], state.pair[si], plans[si], mode)).template cast<float>();
  }
  ag::Var cls = model.cls_pair(t, fused, 1);
  out.cls = t.value(cls).row(0);
  out.projection = t.value(model.project(t, cls, mode)).row(0);
  return out;
}

struct Stage2Hyper {
  int batch_size = 8;
  long total_steps = 600;
  long warmup_steps = 60;
  long lambda_ramp_steps = 60;
  double lr = 1e-3;
  AdamConfig adam{};
  std::optional<std::pair<int, int>> fixed_pair;  // fine-tuning on a selected pair
};

struct Stage2Eval {
  double recon = 0.0, contrast = 0.0, total = 0.0;  // lambda = 1
};

struct Stage2Result {
  std::vector<double> step_loss;
  std::vector<std::pair<int, int>> step_pairs;
};

// Assembles one Stage-2 batch for a fixed modality pair.
Stage2Batch<float> make_stage2_batch(const Corpus& corpus, const std::vector<EpochRef>& refs,
                                     std::pair<int, int> pair, const SessionStats& stats,
                                     const EncoderConfig& enc, double mask_ratio,
                                     const NoisePolicy& noise, Rng& rng, int batch_size);

// Pair resampled every iteration; only parameters marked trainable move.
Stage2Result train_stage2(CrossModalModel<float>& model, const Corpus& corpus, const SessionStats& stats,
                          const Stage2Hyper& hyper, const NoisePolicy& noise, std::uint64_t seed,
                          Split split = Split::kTrain);

// Mean Stage-2 losses over fixed random batches of a split; no parameter changes.
Stage2Eval evaluate_stage2(const CrossModalModel<float>& model, const Corpus& corpus, const SessionStats& stats,
                           const NoisePolicy& noise, std::uint64_t seed, Split split, int batches, int batch_size);

}  // namespace btc
