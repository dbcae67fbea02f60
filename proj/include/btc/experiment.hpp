#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "btc/config.hpp"
#include "btc/pipeline.hpp"

namespace btc {

int task_classes(const std::string& task);

// The configured generator with its seed replaced.
Corpus corpus_for_seed(const RunConfig& cfg, std::uint64_t seed);

std::pair<int, int> parse_pair(const Corpus& corpus, const std::string& spec);

// Screening on frozen Stage-1 CLS embeddings of both streams.
std::vector<PairScore> screen_stage1(const Stage1Bundle& stage1, const Corpus& corpus, const RunConfig& cfg,
                                     std::uint64_t seed);

struct AblationSeed {
  std::uint64_t seed = 0;
  std::pair<int, int> pair{0, 1};
  std::vector<PairScore> screening;
  ProbeRun time_aware, baseline;
  std::vector<double> gates;  // final FiLM gate values (gamma, beta)
  double seconds = 0.0;
};

struct AblationResult {
  std::vector<AblationSeed> seeds;
  ProbeReport time_aware, baseline;  // aggregated when >= 2 seeds
  double seconds = 0.0;
};

struct AblationOptions {
  std::optional<std::pair<int, int>> pair;     // default: top screened pair
  std::optional<std::filesystem::path> checkpoints;  // saves every model when set
  std::function<void(const std::string&)> log;
};

// Per seed: corpus, Stage-1 per modality, screening, then Stage-2 with and
// without time conditioning from the same initial parameters, and a frozen
// linear probe of each on the probed pair.
AblationResult run_ablation(const RunConfig& cfg, const AblationOptions& opt = {});

// Single-seed report (SD 0); aggregate_seeds otherwise.
ProbeReport summarize_runs(const std::vector<ProbeRun>& runs);

std::string stage1_id(const Corpus& corpus, int modality, std::uint64_t seed);
std::string stage2_id(bool time_aware, std::uint64_t seed);

}  // namespace btc
