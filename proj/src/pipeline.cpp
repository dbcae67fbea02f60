#include "btc/pipeline.hpp"

namespace btc {

std::unique_ptr<Stage1Model<float>> pretrain_modality(const Corpus& corpus, int modality, const EncoderConfig& cfg,
                                                      const Stage1Hyper& hyper, const NoisePolicy& noise,
                                                      std::uint64_t seed, Stage1Result* result) {
  const std::uint64_t s = child_seed(seed, 100 + static_cast<std::uint64_t>(modality));
  auto model = std::make_unique<Stage1Model<float>>(cfg, s);
  Stage1Result r = train_stage1(*model, corpus.epochs_of(modality, Split::kTrain),
                                corpus.epochs_of(modality, Split::kVal), hyper, noise, child_seed(s, 1));
  if (result != nullptr) *result = std::move(r);
  return model;
}

Stage1Bundle pretrain_stage1(const Corpus& corpus, const EncoderConfig& cfg, const Stage1Hyper& hyper,
                             const NoisePolicy& noise, std::uint64_t seed) {
  Stage1Bundle b;
  for (int m = 0; m < corpus.modality_count(); ++m) {
    Stage1Result r;
    b.models.push_back(pretrain_modality(corpus, m, cfg, hyper, noise, seed, &r));
    b.results.push_back(std::move(r));
  }
  return b;
}

void load_unimodal_encoder(CrossModalModel<float>& model, int modality, const Stage1Model<float>& stage1) {
  const std::string src_prefix = "enc.";
  const std::string dst_prefix = CrossModalModel<float>::unimodal_prefix(modality) + ".";
  int copied = 0;
  for (const Parameter<float>* p : stage1.store.all()) {
    if (p->name.rfind(src_prefix, 0) != 0) continue;
    Parameter<float>& dst = model.store().at(dst_prefix + p->name.substr(src_prefix.size()));
    if (dst.value.rows() != p->value.rows() || dst.value.cols() != p->value.cols())
      throw ShapeError("load_unimodal_encoder: shape mismatch for " + p->name);
    dst.value = p->value;
    ++copied;
  }
  if (copied == 0) throw MissingDependency("load_unimodal_encoder: Stage-1 model has no encoder parameters");
}

void attach_stage2_adapters(CrossModalModel<float>& model, const LoraConfig& lora) {
  for (int m = 0; m < model.modality_count(); ++m) {
    if (lora.attention)
      for (Linear<float>* l : model.encoder(m).attention_maps()) attach_lora(model.store(), *l, lora);
    if (lora.mlp)
      for (Linear<float>* l : model.encoder(m).mlp_maps()) attach_lora(model.store(), *l, lora);
  }
  mark_trainable(model.store(), model.adapters(), {"cross."});
}

std::unique_ptr<CrossModalModel<float>> build_stage2_model(const std::vector<const Stage1Model<float>*>& stage1,
                                                           const CrossModalConfig& cfg, const LoraConfig& lora,
                                                           std::uint64_t seed) {
  if (stage1.size() < 2) throw MissingDependency("build_stage2_model: need Stage-1 encoders for >= 2 modalities");
  for (const auto* s : stage1)
    if (s == nullptr) throw MissingDependency("build_stage2_model: missing Stage-1 encoder");
  auto model = std::make_unique<CrossModalModel<float>>(stage1[0]->cfg, cfg, static_cast<int>(stage1.size()),
                                                        child_seed(seed, 200));
  for (std::size_t m = 0; m < stage1.size(); ++m) load_unimodal_encoder(*model, static_cast<int>(m), *stage1[m]);
  attach_stage2_adapters(*model, lora);
  return model;
}

void prepare_finetune(CrossModalModel<float>& model, const LoraConfig& lora, std::pair<int, int> pair) {
  for (Linear<float>* l : model.all_linear_maps()) merge_lora(model.store(), *l);
  for (int m : {pair.first, pair.second}) {
    if (m < 0 || m >= model.modality_count()) throw LookupError("prepare_finetune: unknown modality id");
    if (lora.attention)
      for (Linear<float>* l : model.encoder(m).attention_maps()) attach_lora(model.store(), *l, lora);
    if (lora.mlp)
      for (Linear<float>* l : model.encoder(m).mlp_maps()) attach_lora(model.store(), *l, lora);
  }
  if (lora.attention)
    for (Linear<float>* l : model.fusion_attention_maps()) attach_lora(model.store(), *l, lora);
  if (lora.mlp)
    for (Linear<float>* l : model.fusion_mlp_maps()) attach_lora(model.store(), *l, lora);
  mark_trainable(model.store(), model.adapters());
}

ProbeOutcome probe_pair(const CrossModalModel<float>& model, const Corpus& corpus, std::pair<int, int> pair,
                        const std::string& task, int classes, const SessionStats& stats, const ProbeHyper& hyper,
                        std::uint64_t seed, const std::string& model_tag) {
  std::vector<EpochRef> refs = corpus.refs(Split::kTrain);
  const std::size_t n_train = refs.size();
  for (Split s : {Split::kVal, Split::kTest}) {
    auto r = corpus.refs(s);
    refs.insert(refs.end(), r.begin(), r.end());
  }
  const std::size_t n_val = corpus.refs(Split::kVal).size();
  const Matrix<double> x = extract_embeddings(model, corpus, refs, pair, stats).cast<double>();
  const std::vector<int> y = task_labels(corpus, refs, task);
  std::vector<int> train_idx, val_idx;
  for (std::size_t i = 0; i < n_train; ++i) train_idx.push_back(static_cast<int>(i));
  for (std::size_t i = n_train; i < n_train + n_val; ++i) val_idx.push_back(static_cast<int>(i));
  ProbeFit fit = train_probe(x, y, classes, train_idx, val_idx, hyper, seed);

  const Eigen::Index n_test = static_cast<Eigen::Index>(refs.size() - n_train - n_val);
  const Matrix<double> p = fit.probe.probabilities(x.bottomRows(n_test));
  const std::vector<int> yt(y.end() - n_test, y.end());
  ProbeOutcome out;
  out.run.task = task;
  out.run.pair = pair_name(corpus, pair);
  out.run.model = model_tag;
  out.run.seed = seed;
  if (classes == 2) {
    BinaryMetrics m = binary_metrics(p, yt);
    if (!m.auroc_defined) throw UndefinedMetric("probe_pair: test split holds a single class");
    out.run.accuracy = m.accuracy;
    out.run.auroc = m.auroc;
    out.run.f1 = m.f1;
  } else {
    MulticlassMetrics m = weighted_multiclass_metrics(p, yt);
    out.run.accuracy = m.accuracy;
    out.run.auroc = m.weighted_auroc;
    out.run.f1 = m.weighted_f1;
  }
  out.trace = std::move(fit.trace);
  return out;
}

std::string pair_name(const Corpus& corpus, std::pair<int, int> pair) {
  return corpus.modalities.at(static_cast<std::size_t>(pair.first)) + "+" +
         corpus.modalities.at(static_cast<std::size_t>(pair.second));
}

}  // namespace btc
