#include "btc/crossmodal.hpp"

namespace btc {

void CrossModalConfig::validate(int embed_dim) const {
  if (layers < 1 || heads < 1 || embed_dim % heads != 0)
    throw InvalidConfig("cross-modal: embed_dim must be divisible by heads and layers >= 1");
  if (dec_dim < 1 || dec_heads < 1 || dec_dim % dec_heads != 0 || dec_layers < 1)
    throw InvalidConfig("cross-modal: dec_dim must be divisible by dec_heads");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw InvalidConfig("cross-modal: mask_ratio must be in (0,1)");
  if (proj_dim < 1 || film_hidden < 1 || mlp_ratio < 1) throw InvalidConfig("cross-modal: widths must be positive");
  if (!(temperature > 0.0)) throw InvalidConfig("cross-modal: temperature must be positive");
}

CrossModalConfig CrossModalConfig::desk() {
  CrossModalConfig c;
  c.mlp_ratio = 2;
  return c;
}

CrossModalConfig CrossModalConfig::paper_scale() {
  CrossModalConfig c;
  c.layers = 10;
  c.heads = 8;
  c.dec_dim = 512;
  c.dec_layers = 4;
  c.dec_heads = 4;
  c.mask_ratio = 0.5;
  c.proj_dim = 128;
  c.film_hidden = 256;
  return c;
}

std::pair<int, int> sample_modality_pair(int modality_count, Rng& rng) {
  if (modality_count < 2) throw InvalidInput("sample_modality_pair: need at least two modalities");
  std::uniform_int_distribution<int> first(0, modality_count - 1);
  std::uniform_int_distribution<int> other(0, modality_count - 2);
  const int j = first(rng);
  int k = other(rng);
  if (k >= j) ++k;
  return {j, k};
}

Stage2Batch<float> make_stage2_batch(const Corpus& corpus, const std::vector<EpochRef>& refs,
                                     std::pair<int, int> pair, const SessionStats& stats,
                                     const EncoderConfig& enc, double mask_ratio,
                                     const NoisePolicy& noise, Rng& rng, int batch_size) {
  if (refs.empty()) throw InvalidInput("make_stage2_batch: no windows to sample from");
  if (batch_size < 1) throw InvalidInput("make_stage2_batch: batch size must be positive");
  std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
  const int p = enc.patch_count();
  const std::array<int, 2> ids = {pair.first, pair.second};
  Stage2Batch<float> b;
  b.view1.pair = b.view2.pair = ids;
  std::array<std::vector<const std::vector<float>*>, 2> clean;
  std::array<std::vector<Epoch>, 2> v1, v2;
  for (int i = 0; i < batch_size; ++i) {
    const EpochRef& r = refs[pick(rng)];
    for (std::size_t s = 0; s < 2; ++s) {
      const Epoch& e = corpus.at(ids[s], r);
      clean[s].push_back(&e.samples);
      v1[s].push_back(augment_view(e, noise, rng));
      v2[s].push_back(augment_view(e, noise, rng));
    }
    const double th = normalize_session_index(r.segment, stats);
    b.view1.t_hat.push_back(th);
    b.view2.t_hat.push_back(th);
  }
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<const std::vector<float>*> w1, w2;
    for (const Epoch& e : v1[s]) w1.push_back(&e.samples);
    for (const Epoch& e : v2[s]) w2.push_back(&e.samples);
    b.targets[s] = stack_patches<float>(clean[s], enc.patch_size);
    b.view1.patches[s] = stack_patches<float>(w1, enc.patch_size);
    b.view2.patches[s] = stack_patches<float>(w2, enc.patch_size);
    for (int i = 0; i < batch_size; ++i) {
      b.plans1[s].push_back(sample_mask(p, mask_ratio, rng));
      b.plans2[s].push_back(sample_mask(p, mask_ratio, rng));
    }
  }
  return b;
}

Stage2Result train_stage2(CrossModalModel<float>& model, const Corpus& corpus, const SessionStats& stats,
                          const Stage2Hyper& hyper, const NoisePolicy& noise, std::uint64_t seed,
                          Split split) {
  if (corpus.modality_count() != model.modality_count())
    throw InvalidInput("train_stage2: corpus and model disagree on the modality registry");
  const std::vector<EpochRef> refs = corpus.refs(split);
  if (refs.empty()) throw InvalidInput("train_stage2: empty training split");
  if (hyper.total_steps < 2) throw InvalidInput("train_stage2: step budget too small");
  Rng rng = make_rng(seed);
  Adam<float> opt(hyper.adam);
  const long warmup = std::clamp<long>(hyper.warmup_steps, 1, hyper.total_steps - 1);
  Stage2Result res;
  for (long step = 1; step <= hyper.total_steps; ++step) {
    const auto pair = hyper.fixed_pair ? *hyper.fixed_pair : sample_modality_pair(model.modality_count(), rng);
    Stage2Batch<float> b = make_stage2_batch(corpus, refs, pair, stats, model.encoder_config(),
                                             model.config().mask_ratio, noise, rng, hyper.batch_size);
    ag::Tape<float> t(true);
    RunMode mode{true, &rng};
    Stage2Terms terms = stage2_objective(t, model, b, lambda_ramp(step, hyper.lambda_ramp_steps), mode);
    model.store().zero_grad();
    t.backward(terms.total);
    opt.step(model.store(), lr_schedule(step, warmup, hyper.total_steps, hyper.lr));
    res.step_loss.push_back(t.scalar(terms.total));
    res.step_pairs.push_back(pair);
  }
  return res;
}

Stage2Eval evaluate_stage2(const CrossModalModel<float>& model, const Corpus& corpus, const SessionStats& stats,
                           const NoisePolicy& noise, std::uint64_t seed, Split split, int batches, int batch_size) {
  if (corpus.modality_count() != model.modality_count())
    throw InvalidInput("evaluate_stage2: corpus and model disagree on the modality registry");
  const std::vector<EpochRef> refs = corpus.refs(split);
  if (refs.empty()) throw InvalidInput("evaluate_stage2: empty split");
  if (batches < 1 || batch_size < 2) throw InvalidInput("evaluate_stage2: need >= 1 batch of >= 2 windows");
  Rng rng = make_rng(seed);
  Stage2Eval out;
  for (int i = 0; i < batches; ++i) {
    const auto pair = sample_modality_pair(model.modality_count(), rng);
    Stage2Batch<float> b = make_stage2_batch(corpus, refs, pair, stats, model.encoder_config(),
                                             model.config().mask_ratio, noise, rng, batch_size);
    ag::Tape<float> t(false);
    Stage2Terms terms = stage2_objective(t, model, b, 1.0, RunMode{});
    out.recon += t.scalar(terms.recon) / batches;
    out.contrast += t.scalar(terms.contrast) / batches;
    out.total += t.scalar(terms.total) / batches;
  }
  return out;
}

}  // namespace btc
