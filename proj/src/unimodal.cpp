#include "btc/unimodal.hpp"

#include <cmath>
#include <limits>

namespace btc {

void EncoderConfig::validate() const {
  if (patch_size <= 0 || samples <= 0 || samples % patch_size != 0)
    throw InvalidConfig("encoder: samples must be a positive multiple of patch_size");
  if (embed_dim <= 0 || enc_heads <= 0 || embed_dim % enc_heads != 0)
    throw InvalidConfig("encoder: embed_dim must be divisible by enc_heads");
  if (dec_dim <= 0 || dec_heads <= 0 || dec_dim % dec_heads != 0)
    throw InvalidConfig("encoder: dec_dim must be divisible by dec_heads");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw InvalidConfig("encoder: mask_ratio must be in (0,1)");
  if (enc_layers < 1 || dec_layers < 1 || mlp_ratio < 1 || proj_dim < 1)
    throw InvalidConfig("encoder: layer counts and widths must be positive");
  if (!(temperature > 0.0)) throw InvalidConfig("encoder: temperature must be positive");
}

EncoderConfig EncoderConfig::desk() {
  EncoderConfig c;
  c.mlp_ratio = 2;  // keeps the ablation inside its CPU budget
  return c;
}

EncoderConfig EncoderConfig::paper_scale() {
  EncoderConfig c;
  c.samples = 3840;  // 30 s at 128 Hz
  c.patch_size = 8;
  c.embed_dim = 512;
  c.enc_layers = 6;
  c.enc_heads = 8;
  c.dec_dim = 512;
  c.dec_layers = 4;
  c.dec_heads = 4;
  c.mask_ratio = 0.5;
  c.proj_dim = 128;
  return c;
}

Epoch augment_view(const Epoch& epoch, const NoisePolicy& policy, Rng& rng) {
  Epoch out = epoch;
  const double sigma = policy.sigma_for(epoch.modality_id);
  if (sigma <= 0.0 || epoch.samples.empty()) return out;
  double mean = 0.0;
  for (float v : epoch.samples) mean += v;
  mean /= static_cast<double>(epoch.samples.size());
  double var = 0.0;
  for (float v : epoch.samples) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(epoch.samples.size()));
  std::normal_distribution<double> noise(0.0, sigma * sd);
  for (float& v : out.samples) v = static_cast<float>(v + noise(rng));
  return out;
}

double masked_recon_loss(const PatchSequence& pred, const PatchSequence& target, const MaskPlan& plan) {
  if (pred.patches.rows() != target.patches.rows() || pred.patches.cols() != target.patches.cols())
    throw ShapeError("masked_recon_loss: prediction and target shapes differ");
  validate_plan(plan, target.count());
  if (plan.masked.empty()) throw InvalidInput("masked_recon_loss: empty masked set");
  // Sequential accumulation keeps the result independent of vectorisation.
  double total = 0.0;
  for (int r : plan.masked)
    for (Eigen::Index c = 0; c < target.patches.cols(); ++c) {
      const double d = static_cast<double>(pred.patches(r, c)) - static_cast<double>(target.patches(r, c));
      total += d * d;
    }
  return total / (static_cast<double>(plan.masked.size()) * static_cast<double>(target.patch_size()));
}

double nt_xent(const Matrix<double>& za, const Matrix<double>& zb, double tau) {
  if (!(tau > 0.0)) throw InvalidInput("nt_xent: temperature must be positive");
  if (za.rows() != zb.rows() || za.cols() != zb.cols() || za.rows() < 1)
    throw ShapeError("nt_xent: view matrices must have matching non-empty shapes");
  ag::Tape<double> t(false);
  Matrix<double> z(za.rows() * 2, za.cols());
  z << za, zb;
  return t.scalar(t.nt_xent(t.constant(std::move(z)), tau));
}

namespace {

struct PreparedBatch {
  Matrix<float> clean, augmented;
  std::vector<MaskPlan> plans_clean, plans_aug;
};

PreparedBatch prepare(const std::vector<const Epoch*>& epochs, const EncoderConfig& cfg,
                      const NoisePolicy& noise, Rng& rng) {
  PreparedBatch b;
  std::vector<Epoch> aug;
  aug.reserve(epochs.size());
  std::vector<const std::vector<float>*> cw, aw;
  for (const Epoch* e : epochs) {
    aug.push_back(augment_view(*e, noise, rng));
    cw.push_back(&e->samples);
  }
  for (const Epoch& e : aug) aw.push_back(&e.samples);
  b.clean = stack_patches<float>(cw, cfg.patch_size);
  b.augmented = stack_patches<float>(aw, cfg.patch_size);
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    b.plans_clean.push_back(sample_mask(cfg.patch_count(), cfg.mask_ratio, rng));
    b.plans_aug.push_back(sample_mask(cfg.patch_count(), cfg.mask_ratio, rng));
  }
  return b;
}

}  // namespace

Stage1Result train_stage1(Stage1Model<float>& model, const std::vector<const Epoch*>& train,
                          const std::vector<const Epoch*>& val, const Stage1Hyper& hyper,
                          const NoisePolicy& noise, std::uint64_t seed) {
  if (train.empty()) throw InvalidInput("train_stage1: empty training set");
  if (hyper.batch_size < 1 || hyper.total_steps < 2 || hyper.iters_per_epoch < 1)
    throw InvalidInput("train_stage1: batch size and step budget must be positive");
  const EncoderConfig& cfg = model.cfg;
  Rng rng = make_rng(seed);
  Adam<float> opt(hyper.adam);

  // Fixed validation batches: content, masks and views depend only on the seed.
  std::vector<PreparedBatch> val_batches;
  {
    Rng vrng = make_rng(child_seed(seed, 1));
    const std::size_t n = std::min<std::size_t>(val.size(), static_cast<std::size_t>(hyper.val_examples));
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(hyper.batch_size));
      if (end - start < 2 && start > 0) break;
      std::vector<const Epoch*> chunk(val.begin() + static_cast<std::ptrdiff_t>(start),
                                      val.begin() + static_cast<std::ptrdiff_t>(end));
      val_batches.push_back(prepare(chunk, cfg, noise, vrng));
    }
  }
  auto validation_loss = [&]() {
    double total = 0.0;
    for (const PreparedBatch& b : val_batches) {
      ag::Tape<float> t(false);
      auto terms = stage1_objective(t, model, b.clean, b.augmented, b.plans_clean, b.plans_aug, 1.0, RunMode{});
      total += t.scalar(terms.total);
    }
    return total / static_cast<double>(val_batches.size());
  };

  Stage1Result res;
  const long max_epochs = hyper.max_epochs > 0
                              ? hyper.max_epochs
                              : (hyper.total_steps + hyper.iters_per_epoch - 1) / hyper.iters_per_epoch;
  const long warmup = std::clamp<long>(hyper.warmup_steps, 1, hyper.total_steps - 1);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  auto best_params = snapshot(model.store);
  long step = 0;
  for (long epoch = 0; epoch < max_epochs && step < hyper.total_steps; ++epoch) {
    double epoch_sum = 0.0;
    long epoch_n = 0;
    for (long it = 0; it < hyper.iters_per_epoch && step < hyper.total_steps; ++it) {
      ++step;
      std::vector<const Epoch*> batch;
      for (int i = 0; i < hyper.batch_size; ++i) batch.push_back(train[pick(rng)]);
      PreparedBatch b = prepare(batch, cfg, noise, rng);
      ag::Tape<float> t(true);
      RunMode mode{true, &rng};
      auto terms = stage1_objective(t, model, b.clean, b.augmented, b.plans_clean, b.plans_aug,
                                    lambda_ramp(step, hyper.lambda_ramp_steps), mode);
      model.store.zero_grad();
      t.backward(terms.total);
      opt.step(model.store, lr_schedule(step, warmup, hyper.total_steps, hyper.lr));
      const double loss = t.scalar(terms.total);
      res.step_loss.push_back(loss);
      epoch_sum += loss;
      ++epoch_n;
    }
    res.epoch_train_loss.push_back(epoch_sum / static_cast<double>(std::max<long>(epoch_n, 1)));
    if (val_batches.empty()) {
      res.best_epoch = static_cast<int>(epoch);
      best_params = snapshot(model.store);
      continue;
    }
    const double vl = validation_loss();
    res.epoch_val_loss.push_back(vl);
    if (vl < best) {
      best = vl;
      since_best = 0;
      res.best_epoch = static_cast<int>(epoch);
      best_params = snapshot(model.store);
    } else if (++since_best >= hyper.patience_epochs) {
      res.early_stopped = true;
      break;
    }
  }
  restore(model.store, best_params);
  return res;
}

}  // namespace btc
