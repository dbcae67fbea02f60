#pragma once

#include <map>
#include <string>
#include <vector>

#include "btc/lora.hpp"
#include "btc/nn.hpp"
#include "btc/optim.hpp"
#include "btc/signal.hpp"

namespace btc {

struct EncoderConfig {
  int samples = 256;  // L
  int patch_size = 8;
  int embed_dim = 64;  // D
  int enc_layers = 2;
  int enc_heads = 4;
  int mlp_ratio = 4;
  int dec_dim = 64;
  int dec_layers = 1;
  int dec_heads = 4;
  double mask_ratio = 0.5;
  int proj_dim = 32;
  double temperature = 0.5;

  int patch_count() const { return samples / patch_size; }
  int visible_count() const { return patch_count() - masked_count(patch_count(), mask_ratio); }
  void validate() const;

  static EncoderConfig desk();
  static EncoderConfig paper_scale();
};

// Per-modality augmentation: additive Gaussian noise with std = sigma *
// (sample std of the window). sigma == 0 is the identity.
struct NoisePolicy {
  std::map<int, double> sigma_by_modality;
  double sigma_for(int modality) const {
    auto it = sigma_by_modality.find(modality);
    return it == sigma_by_modality.end() ? 0.0 : it->second;
  }
};

Epoch augment_view(const Epoch& epoch, const NoisePolicy& policy, Rng& rng);

double masked_recon_loss(const PatchSequence& pred, const PatchSequence& target, const MaskPlan& plan);

// Reference NT-Xent on already-normalised rows (row i of a pairs with row i of b).
double nt_xent(const Matrix<double>& za, const Matrix<double>& zb, double tau);

inline double stage1_loss(double recon, double contrast, double lambda_con) {
  if (lambda_con < 0.0) throw InvalidInput("stage1_loss: lambda must be non-negative");
  return recon + lambda_con * contrast;
}

// Linear ramp 0 -> 1 over ramp_steps, 1 afterwards.
inline double lambda_ramp(long step, long ramp_steps) {
  if (ramp_steps <= 0 || step >= ramp_steps) return 1.0;
  if (step <= 0) return 0.0;
  return static_cast<double>(step) / static_cast<double>(ramp_steps);
}

// Stacks windows into a (B * P) x patch_size matrix.
template <typename T>
Matrix<T> stack_patches(const std::vector<const std::vector<float>*>& windows, int patch_size) {
  if (windows.empty()) throw InvalidInput("stack_patches: empty batch");
  const std::size_t len = windows.front()->size();
  if (len == 0 || len % static_cast<std::size_t>(patch_size) != 0)
    throw ShapeError("stack_patches: window length not a multiple of the patch size");
  const auto p = static_cast<Eigen::Index>(len / static_cast<std::size_t>(patch_size));
  Matrix<T> out(p * static_cast<Eigen::Index>(windows.size()), patch_size);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b]->size() != len) throw ShapeError("stack_patches: ragged batch");
    out.middleRows(static_cast<Eigen::Index>(b) * p, p) =
        Eigen::Map<const Matrix<float>>(windows[b]->data(), p, patch_size).template cast<T>();
  }
  return out;
}

inline void check_plans(const std::vector<MaskPlan>& plans, int patch_count) {
  if (plans.empty()) throw ShapeError("no mask plans supplied");
  for (const MaskPlan& p : plans) {
    validate_plan(p, patch_count);
    if (p.visible.size() != plans.front().visible.size())
      throw ShapeError("mask plans in one batch must keep the same number of patches");
  }
}

// Patch embedding + token positional table + CLS + pre-norm transformer.
template <typename T>
class UnimodalEncoder {
 public:
  UnimodalEncoder(ParamStore<T>& store, const std::string& prefix, const EncoderConfig& cfg)
      : cfg_(cfg), prefix_(prefix) {
    cfg.validate();
    const int d = cfg.embed_dim;
    patch_embed_ = Linear<T>(store, prefix + ".patch_embed", cfg.patch_size, d);
    token_pos_ = &store.create(prefix + ".token_pos", cfg.patch_count(), d, Init::normal(kInitStd));
    cls_ = &store.create(prefix + ".cls", 1, d, Init::normal(kInitStd));
    for (int l = 0; l < cfg.enc_layers; ++l)
      blocks_.emplace_back(store, prefix + ".blocks." + std::to_string(l), d, cfg.enc_heads,
                           d * cfg.mlp_ratio);
    final_norm_ = LayerNorm<T>(store, prefix + ".norm", d);
  }

  const EncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  // patches: (B * P) x patch_size. Positional embeddings are added before the
  // masked patches are dropped. Output: (B * (V + 1)) x D, CLS first per example.
  ag::Var encode(ag::Tape<T>& t, const Matrix<T>& patches, const std::vector<MaskPlan>& plans,
                 const RunMode& mode) const {
    const int p = cfg_.patch_count();
    const int batch = static_cast<int>(plans.size());
    if (patches.rows() != static_cast<Eigen::Index>(batch) * p || patches.cols() != cfg_.patch_size)
      throw ShapeError("encode: patch matrix does not match batch / patch geometry");
    check_plans(plans, p);
    const int v = static_cast<int>(plans.front().visible.size());

    ag::Var x = patch_embed_(t, t.constant(patches), mode);
    std::vector<int> pos_idx(static_cast<std::size_t>(batch) * p);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < p; ++i) pos_idx[static_cast<std::size_t>(b * p + i)] = i;
    x = t.add(x, t.gather_rows(t.param(*token_pos_), std::move(pos_idx)));

    ag::Var all = t.concat_rows({t.param(*cls_), x});
    std::vector<int> keep;
    keep.reserve(static_cast<std::size_t>(batch) * (v + 1));
    for (int b = 0; b < batch; ++b) {
      keep.push_back(0);
      for (int i : plans[static_cast<std::size_t>(b)].visible) keep.push_back(1 + b * p + i);
    }
    x = t.gather_rows(all, std::move(keep));
    for (const auto& blk : blocks_) x = blk(t, x, batch, mode);
    return final_norm_(t, x);
  }

  std::vector<Linear<T>*> attention_maps() {
    std::vector<Linear<T>*> out;
    for (auto& blk : blocks_)
      for (Linear<T>* l : blk.attn.projections()) out.push_back(l);
    return out;
  }
  std::vector<Linear<T>*> mlp_maps() {
    std::vector<Linear<T>*> out;
    for (auto& blk : blocks_) {
      out.push_back(&blk.ffn.fc1);
      out.push_back(&blk.ffn.fc2);
    }
    return out;
  }

 private:
  EncoderConfig cfg_;
  std::string prefix_;
  Linear<T> patch_embed_;
  Parameter<T>* token_pos_ = nullptr;
  Parameter<T>* cls_ = nullptr;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> final_norm_;
};

// Lightweight decoder reconstructing all P patches from the visible latent.
template <typename T>
class ReconDecoder {
 public:
  ReconDecoder(ParamStore<T>& store, const std::string& prefix, int in_dim, const EncoderConfig& cfg)
      : cfg_(cfg) {
    const int dd = cfg.dec_dim;
    embed_ = Linear<T>(store, prefix + ".embed", in_dim, dd);
    mask_token_ = &store.create(prefix + ".mask_token", 1, dd, Init::normal(kInitStd));
    pos_ = &store.create(prefix + ".pos", cfg.patch_count() + 1, dd, Init::normal(kInitStd));
    for (int l = 0; l < cfg.dec_layers; ++l)
      blocks_.emplace_back(store, prefix + ".blocks." + std::to_string(l), dd, cfg.dec_heads,
                           dd * cfg.mlp_ratio);
    norm_ = LayerNorm<T>(store, prefix + ".norm", dd);
    head_ = Linear<T>(store, prefix + ".head", dd, cfg.patch_size);
  }

  // latent: (B * (V + 1)) x in_dim from the encoder. `row_bias`, when valid,
  // is a 1 x dec_dim row added to every decoder token. Output: (B * P) x patch_size.
  ag::Var decode(ag::Tape<T>& t, ag::Var latent, const std::vector<MaskPlan>& plans,
                 const RunMode& mode, ag::Var row_bias = {}) const {
    const int p = cfg_.patch_count();
    const int batch = static_cast<int>(plans.size());
    check_plans(plans, p);
    const int v = static_cast<int>(plans.front().visible.size());
    if (t.value(latent).rows() != static_cast<Eigen::Index>(batch) * (v + 1))
      throw ShapeError("decode: latent rows do not match the mask plans");

    ag::Var src = t.concat_rows({embed_(t, latent, mode), t.param(*mask_token_)});
    const int mask_row = batch * (v + 1);
    std::vector<int> idx(static_cast<std::size_t>(batch) * (p + 1), mask_row);
    std::vector<int> pos_idx(idx.size());
    for (int b = 0; b < batch; ++b) {
      const int base = b * (p + 1);
      idx[static_cast<std::size_t>(base)] = b * (v + 1);
      const auto& vis = plans[static_cast<std::size_t>(b)].visible;
      for (std::size_t j = 0; j < vis.size(); ++j)
        idx[static_cast<std::size_t>(base + 1 + vis[j])] = b * (v + 1) + 1 + static_cast<int>(j);
      for (int i = 0; i <= p; ++i) pos_idx[static_cast<std::size_t>(base + i)] = i;
    }
    ag::Var x = t.gather_rows(src, std::move(idx));
    x = t.add(x, t.gather_rows(t.param(*pos_), std::move(pos_idx)));
    if (row_bias.valid()) x = t.add_row(x, row_bias);
    for (const auto& blk : blocks_) x = blk(t, x, batch, mode);
    x = head_(t, norm_(t, x), mode);
    std::vector<int> patch_rows;
    patch_rows.reserve(static_cast<std::size_t>(batch) * p);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < p; ++i) patch_rows.push_back(b * (p + 1) + 1 + i);
    return t.gather_rows(x, std::move(patch_rows));
  }

 private:
  EncoderConfig cfg_;
  Linear<T> embed_;
  Parameter<T>* mask_token_ = nullptr;
  Parameter<T>* pos_ = nullptr;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

// Two-layer projection MLP followed by row L2 normalisation.
template <typename T>
class ContrastiveHead {
 public:
  ContrastiveHead(ParamStore<T>& store, const std::string& prefix, int in_dim, int proj_dim)
      : fc1_(store, prefix + ".fc1", in_dim, in_dim), fc2_(store, prefix + ".fc2", in_dim, proj_dim) {}

  ag::Var operator()(ag::Tape<T>& t, ag::Var x, const RunMode& mode) const {
    return t.l2_normalize_rows(fc2_(t, t.gelu(fc1_(t, x, mode)), mode));
  }

 private:
  Linear<T> fc1_, fc2_;
};

// Rows of the masked patches of every example in a stacked (B * P) matrix.
inline std::vector<int> masked_rows(const std::vector<MaskPlan>& plans, int patch_count) {
  std::vector<int> rows;
  for (std::size_t b = 0; b < plans.size(); ++b)
    for (int i : plans[b].masked) rows.push_back(static_cast<int>(b) * patch_count + i);
  return rows;
}

// Row index of each example's CLS token in a (B * (V + 1)) token matrix.
inline std::vector<int> cls_rows(int batch, int tokens_per_example) {
  std::vector<int> rows(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)] = b * tokens_per_example;
  return rows;
}

template <typename T>
struct Stage1Model {
  EncoderConfig cfg;
  ParamStore<T> store;
  UnimodalEncoder<T> encoder;
  ReconDecoder<T> decoder;
  ContrastiveHead<T> head;

  Stage1Model(const EncoderConfig& c, std::uint64_t seed)
      : cfg(c),
        store(seed),
        encoder(store, "enc", c),
        decoder(store, "dec", c.embed_dim, c),
        head(store, "head", c.embed_dim, c.proj_dim) {}
};

struct Stage1Terms {
  ag::Var total, recon, contrast;
};

// Combined objective on one batch: masked reconstruction of the clean view
// plus lambda * NT-Xent between CLS projections of the clean and augmented views.
template <typename T>
Stage1Terms stage1_objective(ag::Tape<T>& t, const Stage1Model<T>& m, const Matrix<T>& clean,
                             const Matrix<T>& augmented, const std::vector<MaskPlan>& plans_clean,
                             const std::vector<MaskPlan>& plans_aug, double lambda_con,
                             const RunMode& mode) {
  const int batch = static_cast<int>(plans_clean.size());
  const int p = m.cfg.patch_count();
  ag::Var lat1 = m.encoder.encode(t, clean, plans_clean, mode);
  ag::Var lat2 = m.encoder.encode(t, augmented, plans_aug, mode);
  ag::Var pred = m.decoder.decode(t, lat1, plans_clean, mode);
  Stage1Terms out;
  out.recon = t.masked_mse(pred, clean, masked_rows(plans_clean, p));
  const int v1 = static_cast<int>(plans_clean.front().visible.size()) + 1;
  const int v2 = static_cast<int>(plans_aug.front().visible.size()) + 1;
  ag::Var cls = t.concat_rows({t.gather_rows(lat1, cls_rows(batch, v1)),
                               t.gather_rows(lat2, cls_rows(batch, v2))});
  out.contrast = t.nt_xent(m.head(t, cls, mode), static_cast<T>(m.cfg.temperature));
  out.total = t.add(out.recon, t.scale(out.contrast, static_cast<T>(lambda_con)));
  return out;
}

// Single-window convenience wrappers (non-recording).
template <typename T>
Matrix<T> encode_visible(const UnimodalEncoder<T>& enc, const PatchSequence& seq, const MaskPlan& plan) {
  if (seq.patch_size() != enc.config().patch_size || seq.count() != enc.config().patch_count())
    throw ShapeError("encode_visible: sequence geometry does not match the encoder");
  ag::Tape<T> t(false);
  ag::Var out = enc.encode(t, seq.patches.template cast<T>(), {plan}, RunMode{});
  return t.value(out);
}

template <typename T>
PatchSequence reconstruct(const ReconDecoder<T>& dec, const Matrix<T>& latent, const MaskPlan& plan) {
  ag::Tape<T> t(false);
  ag::Var out = dec.decode(t, t.constant(latent), {plan}, RunMode{});
  PatchSequence seq;
  seq.patches = t.value(out).template cast<float>();
  return seq;
}

struct Stage1Hyper {
  int batch_size = 16;
  long total_steps = 300;
  long iters_per_epoch = 50;
  long warmup_steps = 50;
  long lambda_ramp_steps = 50;
  int patience_epochs = 3;
  double lr = 1e-3;
  AdamConfig adam{};
  int val_examples = 64;
  int max_epochs = 0;  // 0: derived from total_steps / iters_per_epoch
};

struct Stage1Result {
  std::vector<double> step_loss;        // combined loss per optimisation step
  std::vector<double> epoch_train_loss; // mean combined loss per epoch
  std::vector<double> epoch_val_loss;   // validation loss (lambda = 1) per epoch
  int best_epoch = -1;
  bool early_stopped = false;
};

Stage1Result train_stage1(Stage1Model<float>& model, const std::vector<const Epoch*>& train,
                          const std::vector<const Epoch*>& val, const Stage1Hyper& hyper,
                          const NoisePolicy& noise, std::uint64_t seed);

}  // namespace btc
