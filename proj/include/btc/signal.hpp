#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "btc/autograd.hpp"
#include "btc/rng.hpp"

namespace btc {

// One fixed-length single-channel window.
struct Epoch {
  int modality_id = 0;
  std::vector<float> samples;
  std::string session_id;
  int segment_index = 0;
  std::map<std::string, int> labels;
};

struct PatchSequence {
  Matrix<float> patches;  // P x patch_size

  int count() const { return static_cast<int>(patches.rows()); }
  int patch_size() const { return static_cast<int>(patches.cols()); }
};

struct MaskPlan {
  std::vector<int> masked;   // sorted
  std::vector<int> visible;  // sorted
  double ratio = 0.5;

  int patch_count() const { return static_cast<int>(masked.size() + visible.size()); }
};

struct SessionStats {
  double mean_len = 0.0;
  double std_len = 1.0;
};

struct Normalized {
  std::vector<float> values;
  bool degenerate = false;
};

// Zero mean, unit population std. Variance below 1e-12 yields all zeros and
// sets the degenerate flag.
Normalized zscore_normalize(std::span<const float> samples);

PatchSequence patchify(std::span<const float> samples, int patch_size);
inline PatchSequence patchify(const Epoch& e, int patch_size) { return patchify(e.samples, patch_size); }

std::vector<float> depatchify(const PatchSequence& seq);

// Number of masked patches: round-half-up of ratio * P.
int masked_count(int patch_count, double ratio);

MaskPlan sample_mask(int patch_count, double ratio, Rng& rng);

// Every patch visible; used for embedding extraction and Stage-2 stacking.
MaskPlan full_visibility(int patch_count);

void validate_plan(const MaskPlan& plan, int patch_count);

SessionStats compute_session_stats(std::span<const int> train_session_lengths);

inline double normalize_session_index(int segment_index, const SessionStats& stats) {
  return (static_cast<double>(segment_index) - stats.mean_len) / stats.std_len;
}

}  // namespace btc
