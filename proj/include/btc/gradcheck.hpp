#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "btc/crossmodal.hpp"

namespace btc {

struct GradcheckOptions {
  double step = 1e-3;        // central-difference perturbation
  double tolerance = 1e-4;   // on the relative error below
  double floor = 1e-6;       // denominator floor for near-zero gradients
  int entries_per_tensor = 0;  // 0: every entry
  std::uint64_t seed = 1;
};

struct GradcheckResult {
  std::string suite;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // worst tensor, with its largest-gap entry
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = false;
};

// Per tensor: ||analytic - numeric|| / max(sqrt(||analytic||^2 + ||numeric||^2), floor)
// over sampled entries; the result is the maximum over trainable tensors.
GradcheckResult check_gradients(const std::string& suite, ParamStore<double>& store,
                                const std::function<ag::Var(ag::Tape<double>&)>& loss,
                                const GradcheckOptions& opt);

// Stage-1 loss, Stage-2 loss (FiLM, gates, gated cross-attention, LoRA), and
// the fine-tune adapter layout.
std::vector<GradcheckResult> run_gradchecks(const GradcheckOptions& opt = {});

}  // namespace btc
