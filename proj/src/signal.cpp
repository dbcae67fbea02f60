#include "btc/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "btc/errors.hpp"

namespace btc {

Normalized zscore_normalize(std::span<const float> samples) {
  if (samples.empty()) throw InvalidInput("zscore_normalize: empty input");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (float v : samples) mean += v;
  mean /= n;
  double var = 0.0;
  for (float v : samples) var += (v - mean) * (v - mean);
  var /= n;
  Normalized out;
  out.values.resize(samples.size());
  if (var < 1e-12) {
    std::fill(out.values.begin(), out.values.end(), 0.0f);
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.values[i] = static_cast<float>((samples[i] - mean) * inv);
  return out;
}

PatchSequence patchify(std::span<const float> samples, int patch_size) {
  if (patch_size <= 0) throw InvalidInput("patchify: patch size must be positive");
  if (samples.empty() || samples.size() % static_cast<std::size_t>(patch_size) != 0)
    throw ShapeError("patchify: length " + std::to_string(samples.size()) +
                     " is not a positive multiple of patch size " + std::to_string(patch_size));
  const auto p = static_cast<Eigen::Index>(samples.size()) / patch_size;
  PatchSequence seq;
  seq.patches = Eigen::Map<const Matrix<float>>(samples.data(), p, patch_size);
  return seq;
}

std::vector<float> depatchify(const PatchSequence& seq) {
  std::vector<float> out(static_cast<std::size_t>(seq.patches.size()));
  Eigen::Map<Matrix<float>>(out.data(), seq.patches.rows(), seq.patches.cols()) = seq.patches;
  return out;
}

int masked_count(int patch_count, double ratio) {
  return static_cast<int>(std::floor(ratio * patch_count + 0.5));
}

MaskPlan sample_mask(int patch_count, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidInput("sample_mask: ratio must be in (0,1)");
  const int k = masked_count(patch_count, ratio);
  if (k < 1 || k > patch_count - 1)
    throw InvalidInput("sample_mask: ratio " + std::to_string(ratio) + " masks " +
                       std::to_string(k) + " of " + std::to_string(patch_count) + " patches");
  std::vector<int> idx(static_cast<std::size_t>(patch_count));
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, patch_count - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  MaskPlan plan;
  plan.ratio = ratio;
  plan.masked.assign(idx.begin(), idx.begin() + k);
  plan.visible.assign(idx.begin() + k, idx.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

MaskPlan full_visibility(int patch_count) {
  MaskPlan plan;
  plan.ratio = 0.0;
  plan.visible.resize(static_cast<std::size_t>(patch_count));
  std::iota(plan.visible.begin(), plan.visible.end(), 0);
  return plan;
}

void validate_plan(const MaskPlan& plan, int patch_count) {
  if (plan.patch_count() != patch_count)
    throw ShapeError("mask plan covers " + std::to_string(plan.patch_count()) +
                     " patches, sequence has " + std::to_string(patch_count));
  std::vector<char> seen(static_cast<std::size_t>(patch_count), 0);
  for (const auto* set : {&plan.masked, &plan.visible}) {
    for (int i : *set) {
      if (i < 0 || i >= patch_count || seen[static_cast<std::size_t>(i)])
        throw ShapeError("mask plan is not a partition of the patch indices");
      seen[static_cast<std::size_t>(i)] = 1;
    }
  }
}

SessionStats compute_session_stats(std::span<const int> lengths) {
  if (lengths.size() < 2) throw InvalidInput("compute_session_stats: need at least 2 sessions");
  const double n = static_cast<double>(lengths.size());
  double mean = 0.0;
  for (int l : lengths) mean += l;
  mean /= n;
  double var = 0.0;
  for (int l : lengths) var += (l - mean) * (l - mean);
  var /= n;
  if (var <= 0.0) throw DegenerateStats("compute_session_stats: all session lengths are equal");
  return SessionStats{mean, std::sqrt(var)};
}

}  // namespace btc
