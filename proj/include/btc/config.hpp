#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "btc/crossmodal.hpp"
#include "btc/lora.hpp"
#include "btc/probe.hpp"
#include "btc/synthdata.hpp"

namespace btc {

// Budgets are expressed as epochs of a fixed iteration count, warm-up in epochs.
struct Stage1Schedule {
  int batch_size = 16;
  long iters_per_epoch = 50;
  long max_epochs = 6;
  long warmup_epochs = 1;
  int patience_epochs = 3;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int val_examples = 64;
};

struct Stage2Schedule {
  int batch_size = 8;
  long iters_per_epoch = 60;
  long epochs = 10;
  long warmup_epochs = 1;
  double lr = 1e-3;
  double weight_decay = 1e-5;
};

// Epochs are full passes over the training windows.
struct FinetuneSchedule {
  int batch_size = 8;
  long epochs = 1;
  long warmup_epochs = 0;  // 0: one tenth of the run
  double lr = 3e-4;
  double weight_decay = 1e-5;
};

struct ProbeSchedule {
  int batch_size = 128;
  long iters_per_epoch = 50;
  long epochs = 10;
  double lr = 4e-3;
  double weight_decay = 1e-5;
};

struct RunConfig {
  std::string preset = "desk";
  EncoderConfig encoder = EncoderConfig::desk();
  CrossModalConfig cross = CrossModalConfig::desk();
  Stage1Schedule stage1;
  Stage2Schedule stage2;
  FinetuneSchedule finetune;
  ProbeSchedule probe;
  ScreenHyper screen;
  LoraConfig lora_stage2 = LoraConfig::stage2();
  LoraConfig lora_finetune = LoraConfig::finetune();
  GeneratorConfig generator = GeneratorConfig::desk();
  bool time_aware = true;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string task = "event";
  std::string corpus_dir = "corpus";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";

  static RunConfig desk();
  static RunConfig paper_scale();
  static RunConfig preset_named(const std::string& name);

  void validate() const;
  nlohmann::json to_json() const;
  // Overlays `j` onto `base`; unknown keys and type mismatches are InvalidConfig.
  static RunConfig merge(const RunConfig& base, const nlohmann::json& j);

  Stage1Hyper stage1_hyper() const;
  Stage2Hyper stage2_hyper() const;
  Stage2Hyper finetune_hyper(long train_windows) const;
  ProbeHyper probe_hyper() const;
};

// Preset, then file, then flag overrides (a flat or nested JSON object).
RunConfig load_run_config(const std::string& preset, const std::filesystem::path& file,
                          const nlohmann::json& overrides);

// Stable hash of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

nlohmann::json encoder_to_json(const EncoderConfig& c);
EncoderConfig encoder_from_json(const nlohmann::json& j, EncoderConfig base = EncoderConfig::desk());
nlohmann::json cross_to_json(const CrossModalConfig& c);
CrossModalConfig cross_from_json(const nlohmann::json& j, CrossModalConfig base = CrossModalConfig::desk());
nlohmann::json lora_to_json(const LoraConfig& c);
LoraConfig lora_from_json(const nlohmann::json& j, LoraConfig base = LoraConfig::stage2());

}  // namespace btc
