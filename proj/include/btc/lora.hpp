#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "btc/nn.hpp"

namespace btc {

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
  double dropout = 0.05;
  bool attention = true;  // q/k/v/o projections
  bool mlp = false;       // feed-forward fc1/fc2

  // Adapters on the unimodal attention projections during cross-modal pretraining.
  static LoraConfig stage2() { return {8, 16.0, 0.05, true, false}; }
  // Adapters on attention and feed-forward maps of both encoders and fusion model.
  static LoraConfig finetune() { return {64, 128.0, 0.05, true, true}; }
};

inline std::string lora_param_prefix(const std::string& target) { return "lora." + target; }

template <typename T>
LoraAdapter<T>& attach_lora(ParamStore<T>& store, Linear<T>& lin, const LoraConfig& cfg) {
  if (cfg.rank <= 0) throw InvalidInput("LoRA rank must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw InvalidInput("LoRA dropout must be in [0,1)");
  if (lin.lora) throw InvalidInput("linear map already carries an adapter: " + lin.name);
  auto ad = std::make_unique<LoraAdapter<T>>();
  ad->target = lin.name;
  ad->rank = cfg.rank;
  ad->alpha = cfg.alpha;
  ad->dropout = cfg.dropout;
  const std::string prefix = lora_param_prefix(lin.name);
  ad->a = &store.create(prefix + ".A", cfg.rank, lin.in_dim(),
                        Init::normal(1.0 / std::sqrt(static_cast<double>(lin.in_dim()))));
  ad->b = &store.create(prefix + ".B", lin.out_dim(), cfg.rank, Init::zeros());
  lin.lora = std::move(ad);
  return *lin.lora;
}

// Delta W in the (in x out) storage convention: scaling * (B A)^T.
template <typename T>
Matrix<T> lora_delta(const LoraAdapter<T>& ad) {
  return (ad.b->value * ad.a->value).transpose() * static_cast<T>(ad.scaling());
}

// Folds the adapter into the base weight and removes its parameters.
template <typename T>
void merge_lora(ParamStore<T>& store, Linear<T>& lin) {
  if (!lin.lora) return;
  lin.weight->value += lora_delta(*lin.lora);
  const std::string prefix = lora_param_prefix(lin.name);
  lin.lora.reset();
  store.remove(prefix + ".A");
  store.remove(prefix + ".B");
}

// base_out + (alpha / r) * B (A drop(x)); dropout only in training.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 1> lora_forward(const LoraAdapter<T>& ad,
                                                  const Eigen::Matrix<T, Eigen::Dynamic, 1>& base_out,
                                                  const Eigen::Matrix<T, Eigen::Dynamic, 1>& x,
                                                  bool training, Rng& rng) {
  if (x.size() != ad.a->value.cols() || base_out.size() != ad.b->value.rows())
    throw ShapeError("lora_forward: dimension mismatch with adapter " + ad.target);
  Eigen::Matrix<T, Eigen::Dynamic, 1> u = x;
  if (training && ad.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - ad.dropout);
    const T s = static_cast<T>(1.0 / (1.0 - ad.dropout));
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = keep(rng) ? u(i) * s : T(0);
  }
  return base_out + (ad.b->value * (ad.a->value * u)) * static_cast<T>(ad.scaling());
}

struct ParamPartition {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
};

// Exactly the adapter matrices plus parameters under `extra_prefixes` become
// trainable; everything else is frozen. Each adapter target must name a
// linear map present in the store.
template <typename T>
ParamPartition mark_trainable(ParamStore<T>& store, const std::vector<const LoraAdapter<T>*>& adapters,
                              const std::vector<std::string>& extra_prefixes = {}) {
  std::vector<std::string> adapter_names;
  for (const LoraAdapter<T>* ad : adapters) {
    if (store.find(ad->target + ".weight") == nullptr)
      throw LookupError("LoRA adapter targets unknown linear map: " + ad->target);
    if (ad->a == nullptr || ad->b == nullptr || store.find(ad->a->name) == nullptr ||
        store.find(ad->b->name) == nullptr)
      throw LookupError("LoRA adapter parameters not registered: " + ad->target);
    adapter_names.push_back(ad->a->name);
    adapter_names.push_back(ad->b->name);
  }
  ParamPartition part;
  for (Parameter<T>* p : store.all()) {
    bool train = std::find(adapter_names.begin(), adapter_names.end(), p->name) != adapter_names.end();
    for (const std::string& pre : extra_prefixes)
      if (p->name.rfind(pre, 0) == 0) train = true;
    p->trainable = train;
    (train ? part.trainable : part.frozen).push_back(p->name);
  }
  return part;
}

}  // namespace btc
