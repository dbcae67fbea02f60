#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "btc/corpus.hpp"
#include "btc/unimodal.hpp"

namespace btc {

enum class SignalKind { kEeg, kSpo2, kResp, kNoise };

std::string signal_kind_name(SignalKind k);
SignalKind parse_signal_kind(const std::string& s);

struct ModalitySpec {
  std::string name;
  SignalKind kind = SignalKind::kNoise;
  double noise_std = 0.5;  // additive measurement noise before z-normalisation
  bool augment = true;     // false: views are identical (respiratory-like rule)
};

struct GeneratorConfig {
  int n_sessions = 40;
  double session_len_mean = 120.0;
  double session_len_std = 20.0;
  int epoch_len = 256;
  std::vector<ModalitySpec> modalities;
  double event_base_rate = 0.04;
  double event_time_boost = 3.0;
  std::vector<std::string> event_channels;
  // Dip depth of the event signature relative to the channel amplitude. Zero
  // leaves labels untouched but removes every trace of events from the signals.
  double signature_depth = 0.4;
  std::array<std::array<double, 5>, 5> stage_transition{};
  double augment_sigma = 0.05;
  std::uint64_t seed = 0;

  static GeneratorConfig desk();
  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// Probability that an epoch carries an event.
double event_prior(int segment_index, int session_len, const GeneratorConfig& cfg);

Corpus generate_corpus(const GeneratorConfig& cfg);

// Augmentation policy implied by a corpus' modality registry.
NoisePolicy noise_policy_for(const Corpus& corpus);

}  // namespace btc
