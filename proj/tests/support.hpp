#pragma once

#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "btc/config.hpp"
#include "btc/crossmodal.hpp"
#include "btc/synthdata.hpp"

namespace btc::testing {

// Small geometry so whole-model tests stay in the millisecond range.
inline EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.samples = 64;
  c.patch_size = 8;
  c.embed_dim = 16;
  c.enc_layers = 1;
  c.enc_heads = 2;
  c.mlp_ratio = 2;
  c.dec_dim = 16;
  c.dec_layers = 1;
  c.dec_heads = 2;
  c.proj_dim = 8;
  return c;
}

inline CrossModalConfig tiny_cross() {
  CrossModalConfig c;
  c.layers = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.dec_dim = 16;
  c.dec_layers = 1;
  c.dec_heads = 2;
  c.proj_dim = 8;
  c.film_hidden = 8;
  return c;
}

inline GeneratorConfig tiny_generator(std::uint64_t seed = 1) {
  GeneratorConfig g = GeneratorConfig::desk();
  g.n_sessions = 10;
  g.session_len_mean = 24.0;
  g.session_len_std = 4.0;
  g.epoch_len = 64;
  g.seed = seed;
  return g;
}

inline Matrix<float> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(nd(rng));
  return m;
}

inline std::vector<float> random_samples(int n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (float& x : v) x = static_cast<float>(nd(rng));
  return v;
}

template <typename T>
std::uint64_t hash_params(const ParamStore<T>& store, const std::string& prefix = "") {
  std::uint64_t h = fnv1a("");
  for (const Parameter<T>* p : store.all()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    h = fnv1a(p->name, h);
    h = fnv1a_bytes(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(T), h);
  }
  return h;
}

template <typename A, typename B>
bool bit_equal(const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::memcmp(a.data() + i, b.data() + i, sizeof(*a.data())) != 0) return false;
  return true;
}

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("btc-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace btc::testing
