#include "btc/experiment.hpp"

#include <chrono>

#include "btc/checkpoint.hpp"

namespace btc {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int task_classes(const std::string& task) {
  if (task == "event") return 2;
  if (task == "stage") return 5;
  throw InvalidConfig("task: expected event or stage, got " + task);
}

Corpus corpus_for_seed(const RunConfig& cfg, std::uint64_t seed) {
  GeneratorConfig g = cfg.generator;
  g.seed = seed;
  return generate_corpus(g);
}

std::pair<int, int> parse_pair(const Corpus& corpus, const std::string& spec) {
  const auto sep = spec.find_first_of(",+");
  if (sep == std::string::npos) throw InvalidConfig("pair: expected two modality names separated by ',' or '+'");
  int a = 0, b = 0;
  try {
    a = corpus.modality_index(spec.substr(0, sep));
    b = corpus.modality_index(spec.substr(sep + 1));
  } catch (const LookupError& e) {
    throw InvalidConfig(std::string("pair: ") + e.what());
  }
  if (a == b) throw InvalidConfig("pair: modalities must differ");
  return {a, b};
}

std::vector<PairScore> screen_stage1(const Stage1Bundle& stage1, const Corpus& corpus, const RunConfig& cfg,
                                     std::uint64_t seed) {
  const PairEmbedder embed = [&](std::pair<int, int> pr, const std::vector<EpochRef>& refs) {
    return unimodal_embeddings(stage1.models.at(static_cast<std::size_t>(pr.first))->encoder,
                               stage1.models.at(static_cast<std::size_t>(pr.second))->encoder, corpus, refs, pr,
                               cfg.encoder.patch_size);
  };
  return screen_pairs(embed, corpus, cfg.task, task_classes(cfg.task), cfg.screen, child_seed(seed, 500));
}

ProbeReport summarize_runs(const std::vector<ProbeRun>& runs) {
  if (runs.size() >= 2) return aggregate_seeds(runs);
  if (runs.empty()) throw InvalidInput("summarize_runs: no runs");
  ProbeReport r;
  r.task = runs[0].task;
  r.pair = runs[0].pair;
  r.model = runs[0].model;
  r.runs = runs;
  r.accuracy = {runs[0].accuracy, 0.0};
  r.auroc = {runs[0].auroc, 0.0};
  r.f1 = {runs[0].f1, 0.0};
  return r;
}

std::string stage1_id(const Corpus& corpus, int modality, std::uint64_t seed) {
  return "stage1-" + corpus.modalities.at(static_cast<std::size_t>(modality)) + "-s" + std::to_string(seed);
}

std::string stage2_id(bool time_aware, std::uint64_t seed) {
  return std::string(time_aware ? "stage2-btcnet-s" : "stage2-bcnet-s") + std::to_string(seed);
}

AblationResult run_ablation(const RunConfig& cfg, const AblationOptions& opt) {
  cfg.validate();
  const auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  const auto t_all = std::chrono::steady_clock::now();
  const int classes = task_classes(cfg.task);
  AblationResult res;
  std::optional<std::pair<int, int>> pair = opt.pair;
  std::vector<ProbeRun> ta_runs, bc_runs;
  for (std::uint64_t seed : cfg.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    AblationSeed out;
    out.seed = seed;
    const Corpus corpus = corpus_for_seed(cfg, seed);
    const NoisePolicy noise = noise_policy_for(corpus);
    const SessionStats stats = compute_session_stats(corpus.session_lengths(Split::kTrain));
    Stage1Bundle s1 = pretrain_stage1(corpus, cfg.encoder, cfg.stage1_hyper(), noise, seed);
    log("seed " + std::to_string(seed) + ": stage-1 done");
    out.screening = screen_stage1(s1, corpus, cfg, seed);
    // The probed pair is fixed by the first seed's screening, as one pair per task.
    if (!pair) pair = out.screening.front().pair;
    out.pair = *pair;

    std::vector<const Stage1Model<float>*> ptrs;
    std::vector<std::string> deps;
    for (int m = 0; m < corpus.modality_count(); ++m) {
      ptrs.push_back(s1.models[static_cast<std::size_t>(m)].get());
      deps.push_back(stage1_id(corpus, m, seed));
      if (opt.checkpoints)
        save_stage1_checkpoint(*opt.checkpoints, {deps.back(), seed, cfg.to_json()},
                               *s1.models[static_cast<std::size_t>(m)], m, corpus.modalities[static_cast<std::size_t>(m)]);
    }
    for (bool time_aware : {true, false}) {
      CrossModalConfig cc = cfg.cross;
      cc.time_aware = time_aware;
      auto model = build_stage2_model(ptrs, cc, cfg.lora_stage2, seed);
      train_stage2(*model, corpus, stats, cfg.stage2_hyper(), noise, child_seed(seed, 300));
      ProbeOutcome po = probe_pair(*model, corpus, *pair, cfg.task, classes, stats, cfg.probe_hyper(),
                                   child_seed(seed, 400), time_aware ? "BTCNet" : "BCNet");
      po.run.seed = seed;
      if (time_aware) {
        TimeConditioner<float>* tc = model->time_conditioner();
        out.gates = {tc->gate_gamma().value(0, 0), tc->gate_beta().value(0, 0)};
        out.time_aware = po.run;
      } else {
        out.baseline = po.run;
      }
      if (opt.checkpoints) {
        RunConfig rc = cfg;
        rc.time_aware = time_aware;
        rc.cross.time_aware = time_aware;
        save_stage2_checkpoint(*opt.checkpoints, {stage2_id(time_aware, seed), seed, rc.to_json()}, *model, stats,
                               deps);
      }
      log("seed " + std::to_string(seed) + ": " + po.run.model + " auroc " + std::to_string(po.run.auroc));
    }
    ta_runs.push_back(out.time_aware);
    bc_runs.push_back(out.baseline);
    out.seconds = seconds_since(t0);
    res.seeds.push_back(std::move(out));
  }
  res.time_aware = summarize_runs(ta_runs);
  res.baseline = summarize_runs(bc_runs);
  res.time_aware.provenance = res.baseline.provenance = {{"config", cfg.to_json()},
                                                         {"config_hash", config_hash(cfg.to_json())}};
  res.seconds = seconds_since(t_all);
  return res;
}

}  // namespace btc
