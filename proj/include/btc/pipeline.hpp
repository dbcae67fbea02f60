#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "btc/probe.hpp"

namespace btc {

struct Stage1Bundle {
  std::vector<std::unique_ptr<Stage1Model<float>>> models;  // one per modality
  std::vector<Stage1Result> results;
};

// Independent Stage-1 run per modality with child seeds.
Stage1Bundle pretrain_stage1(const Corpus& corpus, const EncoderConfig& cfg, const Stage1Hyper& hyper,
                             const NoisePolicy& noise, std::uint64_t seed);
std::unique_ptr<Stage1Model<float>> pretrain_modality(const Corpus& corpus, int modality, const EncoderConfig& cfg,
                                                      const Stage1Hyper& hyper, const NoisePolicy& noise,
                                                      std::uint64_t seed, Stage1Result* result = nullptr);

// Copies the Stage-1 encoder of modality m into the cross-modal model.
void load_unimodal_encoder(CrossModalModel<float>& model, int modality, const Stage1Model<float>& stage1);

// Stage-2 model on top of trained Stage-1 encoders: LoRA on the encoder
// attention projections; adapters plus the cross-modal module are trainable.
std::unique_ptr<CrossModalModel<float>> build_stage2_model(const std::vector<const Stage1Model<float>*>& stage1,
                                                           const CrossModalConfig& cfg, const LoraConfig& lora,
                                                           std::uint64_t seed);
void attach_stage2_adapters(CrossModalModel<float>& model, const LoraConfig& lora);

// Folds existing adapters into their base maps, then attaches the fine-tune
// adapters to the selected encoders and the fusion model; only they train.
void prepare_finetune(CrossModalModel<float>& model, const LoraConfig& lora, std::pair<int, int> pair);

struct ProbeOutcome {
  ProbeRun run;
  ProbeTrace trace;
};

// Frozen-embedding linear probe: fit on train, select on val, report on test.
ProbeOutcome probe_pair(const CrossModalModel<float>& model, const Corpus& corpus, std::pair<int, int> pair,
                        const std::string& task, int classes, const SessionStats& stats, const ProbeHyper& hyper,
                        std::uint64_t seed, const std::string& model_tag);

std::string pair_name(const Corpus& corpus, std::pair<int, int> pair);

}  // namespace btc
