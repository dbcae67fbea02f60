#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "btc/crossmodal.hpp"

namespace btc {

// Checkpoint directory: manifest.json, params.bin and (when adapters exist)
// lora.bin. Blobs are little-endian float32 in manifest tensor order. A Stage-2
// checkpoint stores the fusion module and adapters; its encoders come from the
// Stage-1 checkpoints named in `dependencies`, resolved under the same root.
// A fine-tune checkpoint stores the merged encoders as well.
struct CheckpointMeta {
  std::string id;
  std::uint64_t seed = 0;
  nlohmann::json config;  // effective run config
};

struct LoadedStage1 {
  std::unique_ptr<Stage1Model<float>> model;
  nlohmann::json manifest;
};

struct LoadedStage2 {
  std::unique_ptr<CrossModalModel<float>> model;
  SessionStats stats;
  nlohmann::json manifest;
};

void save_stage1_checkpoint(const std::filesystem::path& root, const CheckpointMeta& meta,
                            const Stage1Model<float>& model, int modality, const std::string& modality_name);
LoadedStage1 load_stage1_checkpoint(const std::filesystem::path& root, const std::string& id);

// `stage` is "stage2" or "finetune"; dependencies are Stage-1 ids in modality order.
void save_stage2_checkpoint(const std::filesystem::path& root, const CheckpointMeta& meta,
                            const CrossModalModel<float>& model, const SessionStats& stats,
                            const std::vector<std::string>& dependencies, const std::string& stage = "stage2");
LoadedStage2 load_stage2_checkpoint(const std::filesystem::path& root, const std::string& id);

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& root, const std::string& id);

}  // namespace btc
