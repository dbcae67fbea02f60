#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "btc/autograd.hpp"

namespace btc {

struct Init {
  enum class Kind { kZeros, kOnes, kNormal, kXavierUniform };
  Kind kind = Kind::kZeros;
  double stddev = 0.0;

  static Init zeros() { return {Kind::kZeros, 0.0}; }
  static Init ones() { return {Kind::kOnes, 0.0}; }
  static Init normal(double s) { return {Kind::kNormal, s}; }
  // U(-a, a), a = sqrt(6 / (rows + cols)); the default for linear weights.
  static Init xavier() { return {Kind::kXavierUniform, 0.0}; }
};

inline constexpr double kInitStd = 0.02;

// Owns every parameter of a model. Parameters are heap-allocated so pointers
// handed to modules stay valid when the store (or its owner) is moved.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  std::uint64_t seed() const { return seed_; }

  // Initial values depend only on (store seed, name), never on creation order.
  Parameter<T>& create(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init) {
    if (index_.count(name) != 0) throw InvalidInput("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    switch (init.kind) {
      case Init::Kind::kZeros:
        p->value = Matrix<T>::Zero(rows, cols);
        break;
      case Init::Kind::kOnes:
        p->value = Matrix<T>::Ones(rows, cols);
        break;
      case Init::Kind::kNormal: {
        Rng rng(child_seed(seed_, fnv1a(name)));
        std::normal_distribution<double> dist(0.0, init.stddev);
        p->value.resize(rows, cols);
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = static_cast<T>(dist(rng));
        break;
      }
      case Init::Kind::kXavierUniform: {
        Rng rng(child_seed(seed_, fnv1a(name)));
        const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> dist(-a, a);
        p->value.resize(rows, cols);
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = static_cast<T>(dist(rng));
        break;
      }
    }
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  Parameter<T>& at(const std::string& name) {
    Parameter<T>* p = find(name);
    if (p == nullptr) throw LookupError("unknown parameter: " + name);
    return *p;
  }

  void remove(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    params_.erase(params_.begin() + static_cast<std::ptrdiff_t>(it->second));
    rebuild_index();
  }

  // Creation order.
  std::vector<Parameter<T>*> all() const {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto& p : params_) p->trainable = trainable;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i]->name] = i;
  }

  std::uint64_t seed_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

// Forward-pass switches shared by every module.
struct RunMode {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

template <typename T>
struct LoraAdapter {
  std::string target;  // name of the wrapped linear map
  Parameter<T>* a = nullptr;  // rank x in
  Parameter<T>* b = nullptr;  // out x rank
  int rank = 0;
  double alpha = 0.0;
  double dropout = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

template <typename T>
struct Linear {
  std::string name;
  Parameter<T>* weight = nullptr;  // in x out, y = x W + b
  Parameter<T>* bias = nullptr;
  std::unique_ptr<LoraAdapter<T>> lora;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& prefix, int in, int out, bool with_bias = true,
         Init w_init = Init::xavier())
      : name(prefix) {
    weight = &store.create(prefix + ".weight", in, out, w_init);
    if (with_bias) bias = &store.create(prefix + ".bias", 1, out, Init::zeros());
  }

  int in_dim() const { return static_cast<int>(weight->value.rows()); }
  int out_dim() const { return static_cast<int>(weight->value.cols()); }

  ag::Var operator()(ag::Tape<T>& t, ag::Var x, const RunMode& mode) const {
    ag::Var base = t.affine(x, t.param(*weight), bias ? t.param(*bias) : ag::Var{});
    if (!lora) return base;
    ag::Var u = x;
    if (mode.training && lora->dropout > 0.0) {
      if (mode.rng == nullptr) throw InvalidInput("LoRA dropout in training mode needs an rng");
      u = t.dropout(x, lora->dropout, *mode.rng);
    }
    ag::Var h = t.matmul_nt(u, t.param(*lora->a));
    ag::Var delta = t.matmul_nt(h, t.param(*lora->b));
    return t.add(base, t.scale(delta, static_cast<T>(lora->scaling())));
  }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& prefix, int dim) {
    gamma = &store.create(prefix + ".gamma", 1, dim, Init::ones());
    beta = &store.create(prefix + ".beta", 1, dim, Init::zeros());
  }

  ag::Var operator()(ag::Tape<T>& t, ag::Var x) const {
    return t.layer_norm(x, t.param(*gamma), t.param(*beta));
  }
};

template <typename T>
struct FeedForward {
  Linear<T> fc1;
  Linear<T> fc2;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& prefix, int dim, int hidden)
      : fc1(store, prefix + ".fc1", dim, hidden), fc2(store, prefix + ".fc2", hidden, dim) {}

  ag::Var operator()(ag::Tape<T>& t, ag::Var x, const RunMode& mode) const {
    return fc2(t, t.gelu(fc1(t, x, mode)), mode);
  }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& prefix, int dim, int n_heads)
      : q(store, prefix + ".q", dim, dim),
        k(store, prefix + ".k", dim, dim),
        v(store, prefix + ".v", dim, dim),
        o(store, prefix + ".o", dim, dim),
        heads(n_heads) {
    if (dim % n_heads != 0) throw InvalidInput(prefix + ": dim not divisible by heads");
  }

  // Concatenated head outputs before the output projection.
  ag::Var attend(ag::Tape<T>& t, ag::Var query_src, ag::Var kv_src, int n_seq,
                 const RunMode& mode, std::vector<Matrix<T>>* probs = nullptr) const {
    return t.attention(q(t, query_src, mode), k(t, kv_src, mode), v(t, kv_src, mode), n_seq,
                       heads, probs);
  }

  ag::Var operator()(ag::Tape<T>& t, ag::Var query_src, ag::Var kv_src, int n_seq,
                     const RunMode& mode, std::vector<Matrix<T>>* probs = nullptr) const {
    return o(t, attend(t, query_src, kv_src, n_seq, mode, probs), mode);
  }

  std::vector<Linear<T>*> projections() { return {&q, &k, &v, &o}; }
};

// Pre-norm self-attention block: x + MHA(LN(x)), then x + FFN(LN(x)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& store, const std::string& prefix, int dim, int heads, int hidden)
      : ln1(store, prefix + ".ln1", dim),
        ln2(store, prefix + ".ln2", dim),
        attn(store, prefix + ".attn", dim, heads),
        ffn(store, prefix + ".ffn", dim, hidden) {}

  ag::Var operator()(ag::Tape<T>& t, ag::Var x, int n_seq, const RunMode& mode) const {
    ag::Var h = ln1(t, x);
    x = t.add(x, attn(t, h, h, n_seq, mode));
    return t.add(x, ffn(t, ln2(t, x), mode));
  }
};

// Snapshot of parameter values keyed by name (best-validation retention).
template <typename T>
std::map<std::string, Matrix<T>> snapshot(const ParamStore<T>& store) {
  std::map<std::string, Matrix<T>> out;
  for (Parameter<T>* p : store.all()) out[p->name] = p->value;
  return out;
}

template <typename T>
void restore(ParamStore<T>& store, const std::map<std::string, Matrix<T>>& snap) {
  for (Parameter<T>* p : store.all()) {
    auto it = snap.find(p->name);
    if (it != snap.end()) p->value = it->second;
  }
}

// Copies values between stores of possibly different scalar types by name.
template <typename To, typename From>
void copy_values(ParamStore<To>& dst, const ParamStore<From>& src) {
  for (Parameter<To>* p : dst.all()) {
    const Parameter<From>* s = src.find(p->name);
    if (s == nullptr) throw LookupError("copy_values: missing parameter " + p->name);
    if (s->value.rows() != p->value.rows() || s->value.cols() != p->value.cols())
      throw ShapeError("copy_values: shape mismatch for " + p->name);
    p->value = s->value.template cast<To>();
  }
}

}  // namespace btc
