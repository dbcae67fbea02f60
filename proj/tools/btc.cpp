#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "btc/checkpoint.hpp"
#include "btc/experiment.hpp"
#include "btc/gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace btc;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitGradcheck = 3;

struct Common {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> sets;
  std::string root;
  std::vector<std::uint64_t> seeds;
  bool dry_run = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--preset", c.preset, "desk or paper-scale")->capture_default_str();
  app->add_option("--config", c.config_file, "JSON config file layered over the preset");
  app->add_option("--set", c.sets, "override, e.g. --set stage2.lr=1e-4 (repeatable)");
  app->add_option("--out", c.root, "output root (default $BTC_OUTPUT_ROOT or ./btc-out)");
  app->add_option("--seed", c.seeds, "seed(s), replacing the config seed list");
  app->add_flag("--dry-run", c.dry_run, "print the effective config and exit");
}

// --set values parse as JSON when possible, otherwise as strings.
json parse_sets(const std::vector<std::string>& sets) {
  json out = json::object();
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidConfig("--set expects key=value, got " + s);
    const std::string value = s.substr(eq + 1);
    json v = json::parse(value, nullptr, false);
    out[s.substr(0, eq)] = v.is_discarded() ? json(value) : v;
  }
  return out;
}

struct Context {
  RunConfig cfg;
  fs::path root;

  fs::path resolve(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : root / p; }
  fs::path corpus_dir() const { return resolve(cfg.corpus_dir); }
  fs::path checkpoints() const { return resolve(cfg.checkpoint_dir); }
  fs::path reports() const { return resolve(cfg.report_dir); }
  std::uint64_t seed() const { return cfg.seeds.front(); }
};

Context make_context(const Common& c) {
  Context ctx;
  ctx.cfg = load_run_config(c.preset, c.config_file, parse_sets(c.sets));
  if (!c.seeds.empty()) ctx.cfg.seeds = c.seeds;
  ctx.cfg.validate();
  if (!c.root.empty()) ctx.root = c.root;
  else if (const char* env = std::getenv("BTC_OUTPUT_ROOT"); env != nullptr && *env != '\0') ctx.root = env;
  else ctx.root = "btc-out";
  return ctx;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(fs::absolute(path).parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw InvalidInput("cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(fs::absolute(path).parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw InvalidInput("cannot write " + path.string());
}

json provenance(const Context& ctx, const std::vector<std::string>& checkpoints = {}) {
  const json c = ctx.cfg.to_json();
  return {{"config", c}, {"config_hash", config_hash(c)}, {"seeds", ctx.cfg.seeds}, {"checkpoints", checkpoints}};
}

void log(const std::string& s) { std::cerr << s << "\n"; }

// ----- subcommands -----

int cmd_gen_data(const Context& ctx) {
  GeneratorConfig g = ctx.cfg.generator;
  g.seed = ctx.seed();
  Corpus corpus = generate_corpus(g);
  corpus.run_config = ctx.cfg.to_json();
  save_corpus(corpus, ctx.corpus_dir());
  std::size_t windows = 0;
  for (const Session& s : corpus.sessions) windows += static_cast<std::size_t>(s.length);
  std::cout << "corpus " << ctx.corpus_dir().string() << ": " << corpus.sessions.size() << " sessions, " << windows
            << " windows, " << corpus.modality_count() << " modalities\n";
  return 0;
}

int cmd_pretrain1(const Context& ctx) {
  const Corpus corpus = load_corpus(ctx.corpus_dir());
  const NoisePolicy noise = noise_policy_for(corpus);
  const std::uint64_t seed = ctx.seed();
  json traces = json::object();
  for (int m = 0; m < corpus.modality_count(); ++m) {
    Stage1Result r;
    auto model = pretrain_modality(corpus, m, ctx.cfg.encoder, ctx.cfg.stage1_hyper(), noise, seed, &r);
    const std::string id = stage1_id(corpus, m, seed);
    save_stage1_checkpoint(ctx.checkpoints(), {id, seed, ctx.cfg.to_json()}, *model, m,
                           corpus.modalities[static_cast<std::size_t>(m)]);
    traces[id] = {{"step_loss", r.step_loss},
                  {"epoch_train_loss", r.epoch_train_loss},
                  {"epoch_val_loss", r.epoch_val_loss},
                  {"best_epoch", r.best_epoch},
                  {"early_stopped", r.early_stopped}};
    std::cout << id << ": loss " << r.step_loss.front() << " -> " << r.step_loss.back() << ", best epoch "
              << r.best_epoch << "\n";
  }
  write_json(ctx.reports() / ("pretrain1-s" + std::to_string(seed) + ".json"),
             {{"traces", traces}, {"provenance", provenance(ctx)}});
  return 0;
}

int cmd_pretrain2(const Context& ctx) {
  const Corpus corpus = load_corpus(ctx.corpus_dir());
  const NoisePolicy noise = noise_policy_for(corpus);
  const SessionStats stats = compute_session_stats(corpus.session_lengths(Split::kTrain));
  const std::uint64_t seed = ctx.seed();
  std::vector<LoadedStage1> s1;
  std::vector<const Stage1Model<float>*> ptrs;
  std::vector<std::string> deps;
  for (int m = 0; m < corpus.modality_count(); ++m) {
    deps.push_back(stage1_id(corpus, m, seed));
    s1.push_back(load_stage1_checkpoint(ctx.checkpoints(), deps.back()));
    ptrs.push_back(s1.back().model.get());
  }
  CrossModalConfig cc = ctx.cfg.cross;
  cc.time_aware = ctx.cfg.time_aware;
  auto model = build_stage2_model(ptrs, cc, ctx.cfg.lora_stage2, seed);
  const Stage2Result r = train_stage2(*model, corpus, stats, ctx.cfg.stage2_hyper(), noise, child_seed(seed, 300));
  const std::string id = stage2_id(cc.time_aware, seed);
  save_stage2_checkpoint(ctx.checkpoints(), {id, seed, ctx.cfg.to_json()}, *model, stats, deps);
  json pairs = json::array();
  for (const auto& p : r.step_pairs) pairs.push_back({p.first, p.second});
  write_json(ctx.reports() / (id + "-trace.json"),
             {{"step_loss", r.step_loss}, {"step_pairs", pairs}, {"provenance", provenance(ctx, deps)}});
  std::cout << id << ": loss " << r.step_loss.front() << " -> " << r.step_loss.back() << "\n";
  return 0;
}

int cmd_finetune(const Context& ctx, const std::string& from, const std::string& pair_spec, const std::string& id_arg) {
  const Corpus corpus = load_corpus(ctx.corpus_dir());
  const NoisePolicy noise = noise_policy_for(corpus);
  // Session statistics are recomputed on the fine-tune corpus.
  const SessionStats stats = compute_session_stats(corpus.session_lengths(Split::kTrain));
  LoadedStage2 loaded = load_stage2_checkpoint(ctx.checkpoints(), from);
  const auto pair = parse_pair(corpus, pair_spec);
  prepare_finetune(*loaded.model, ctx.cfg.lora_finetune, pair);
  Stage2Hyper h = ctx.cfg.finetune_hyper(static_cast<long>(corpus.refs(Split::kTrain).size()));
  h.fixed_pair = pair;
  const Stage2Result r = train_stage2(*loaded.model, corpus, stats, h, noise, child_seed(ctx.seed(), 600));
  const std::string id = id_arg.empty() ? "finetune-" + from : id_arg;
  save_stage2_checkpoint(ctx.checkpoints(), {id, ctx.seed(), ctx.cfg.to_json()}, *loaded.model, stats,
                         loaded.manifest.at("dependencies").get<std::vector<std::string>>(), "finetune");
  write_json(ctx.reports() / (id + "-trace.json"), {{"step_loss", r.step_loss}, {"provenance", provenance(ctx, {from})}});
  std::cout << id << ": " << r.step_loss.size() << " steps, loss " << r.step_loss.front() << " -> "
            << r.step_loss.back() << "\n";
  return 0;
}

json screening_json(const Corpus& corpus, const std::vector<PairScore>& scores) {
  json rows = json::array();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const PairScore& s = scores[i];
    rows.push_back({{"rank", i + 1},
                    {"pair", pair_name(corpus, s.pair)},
                    {"f1", s.f1},
                    {"auroc", s.auroc},
                    {"score", s.score},
                    {"undefined", s.undefined}});
  }
  return rows;
}

int cmd_screen(const Context& ctx, const std::string& from) {
  const Corpus corpus = load_corpus(ctx.corpus_dir());
  const std::uint64_t seed = ctx.seed();
  std::vector<PairScore> scores;
  std::vector<std::string> used;
  if (from.empty()) {
    Stage1Bundle b;
    for (int m = 0; m < corpus.modality_count(); ++m) {
      used.push_back(stage1_id(corpus, m, seed));
      b.models.push_back(std::move(load_stage1_checkpoint(ctx.checkpoints(), used.back()).model));
    }
    scores = screen_stage1(b, corpus, ctx.cfg, seed);
  } else {
    used.push_back(from);
    LoadedStage2 loaded = load_stage2_checkpoint(ctx.checkpoints(), from);
    const PairEmbedder embed = [&](std::pair<int, int> pr, const std::vector<EpochRef>& refs) {
      return extract_embeddings(*loaded.model, corpus, refs, pr, loaded.stats);
    };
    scores = screen_pairs(embed, corpus, ctx.cfg.task, task_classes(ctx.cfg.task), ctx.cfg.screen,
                          child_seed(seed, 500));
  }
  for (std::size_t i = 0; i < scores.size(); ++i)
    std::cout << i + 1 << ". " << pair_name(corpus, scores[i].pair) << "  score " << scores[i].score << "  f1 "
              << scores[i].f1 << "  auroc " << scores[i].auroc << (scores[i].undefined ? "  (undefined)" : "")
              << "\n";
  write_json(ctx.reports() / ("screen-" + ctx.cfg.task + "-s" + std::to_string(seed) + ".json"),
             {{"task", ctx.cfg.task}, {"ranking", screening_json(corpus, scores)}, {"provenance", provenance(ctx, used)}});
  return 0;
}

void emit_reports(const Context& ctx, const std::string& name, std::vector<ProbeReport> reports,
                  const std::string& csv, const json& extra) {
  json arr = json::array();
  for (const ProbeReport& r : reports) arr.push_back(report_json(r));
  json doc = {{"reports", arr}};
  for (const auto& [k, v] : extra.items()) doc[k] = v;
  write_json(ctx.reports() / (name + ".json"), doc);
  const std::string table = reports_csv(reports);
  std::cout << table;
  if (!csv.empty()) write_text(csv, table);
}

int cmd_probe(const Context& ctx, const std::string& from, const std::string& pairs, bool compare,
              const std::string& csv) {
  if (compare) {
    AblationOptions opt;
    opt.checkpoints = ctx.checkpoints();
    opt.log = log;
    if (!pairs.empty() && pairs != "auto") {
      // Modality names come from the generator registry.
      Corpus names;
      for (const ModalitySpec& m : ctx.cfg.generator.modalities) names.modalities.push_back(m.name);
      opt.pair = parse_pair(names, pairs);
    }
    AblationResult res = run_ablation(ctx.cfg, opt);
    json per_seed = json::array();
    for (const AblationSeed& s : res.seeds)
      per_seed.push_back({{"seed", s.seed},
                          {"btcnet_auroc", s.time_aware.auroc},
                          {"bcnet_auroc", s.baseline.auroc},
                          {"film_gates", s.gates},
                          {"seconds", s.seconds}});
    const double delta = res.time_aware.auroc.mean - res.baseline.auroc.mean;
    emit_reports(ctx, "compare-" + ctx.cfg.task, {res.baseline, res.time_aware}, csv,
                 {{"auroc_gain_points", 100.0 * delta}, {"per_seed", per_seed}, {"seconds", res.seconds}});
    std::cerr << "BTCNet - BCNet AUROC: " << 100.0 * delta << " points over " << res.seeds.size() << " seed(s)\n";
    return 0;
  }
  const Corpus corpus = load_corpus(ctx.corpus_dir());
  const std::string id = from.empty() ? stage2_id(ctx.cfg.time_aware, ctx.seed()) : from;
  LoadedStage2 loaded = load_stage2_checkpoint(ctx.checkpoints(), id);
  std::vector<std::pair<int, int>> todo;
  if (pairs.empty() || pairs == "all") todo = all_pairs(corpus.modality_count());
  else todo.push_back(parse_pair(corpus, pairs));
  const std::string tag = loaded.model->time_aware() ? "BTCNet" : "BCNet";
  std::vector<ProbeReport> reports;
  for (const auto& pr : todo) {
    std::vector<ProbeRun> runs;
    for (std::uint64_t s : ctx.cfg.seeds) {
      ProbeOutcome po = probe_pair(*loaded.model, corpus, pr, ctx.cfg.task, task_classes(ctx.cfg.task), loaded.stats,
                                   ctx.cfg.probe_hyper(), child_seed(s, 400), tag);
      po.run.seed = s;
      runs.push_back(po.run);
    }
    ProbeReport r = summarize_runs(runs);
    r.provenance = provenance(ctx, {id});
    reports.push_back(std::move(r));
  }
  emit_reports(ctx, "probe-" + ctx.cfg.task + "-" + id, reports, csv, {{"checkpoint", id}});
  return 0;
}

int cmd_eval(const Context& ctx, const std::string& from, const std::string& split_name_arg) {
  Split split = Split::kVal;
  try {
    split = parse_split(split_name_arg);
  } catch (const InvalidInput& e) {
    throw InvalidConfig(std::string("--split: ") + e.what());
  }
  const Corpus corpus = load_corpus(ctx.corpus_dir());
  const std::string id = from.empty() ? stage2_id(ctx.cfg.time_aware, ctx.seed()) : from;
  LoadedStage2 loaded = load_stage2_checkpoint(ctx.checkpoints(), id);
  const Stage2Eval e = evaluate_stage2(*loaded.model, corpus, loaded.stats, noise_policy_for(corpus),
                                       child_seed(ctx.seed(), 700), split, 16, ctx.cfg.stage2.batch_size);
  const json out = {{"checkpoint", id},
                    {"split", split_name(split)},
                    {"recon", e.recon},
                    {"contrast", e.contrast},
                    {"total", e.total},
                    {"provenance", provenance(ctx, {id})}};
  write_json(ctx.reports() / ("eval-" + id + "-" + split_name(split) + ".json"), out);
  std::cout << id << " " << split_name(split) << ": recon " << e.recon << " contrast " << e.contrast << " total "
            << e.total << "\n";
  return 0;
}

int cmd_dump(const Context& ctx, const std::string& from, const std::string& pair_spec, const std::string& file) {
  const Corpus corpus = load_corpus(ctx.corpus_dir());
  const std::string id = from.empty() ? stage2_id(ctx.cfg.time_aware, ctx.seed()) : from;
  LoadedStage2 loaded = load_stage2_checkpoint(ctx.checkpoints(), id);
  const auto pair = parse_pair(corpus, pair_spec);
  std::vector<EpochRef> refs;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    for (const EpochRef& r : corpus.refs(s)) refs.push_back(r);
  const Matrix<float> x = extract_embeddings(*loaded.model, corpus, refs, pair, loaded.stats);
  const auto events = task_labels(corpus, refs, "event");
  const auto stages = task_labels(corpus, refs, "stage");
  std::ostringstream os;
  os << "session_id,segment_index,split,t_hat,event,stage";
  for (Eigen::Index c = 0; c < x.cols(); ++c) os << ",e" << c;
  os << "\n";
  os.precision(9);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Session& s = corpus.sessions[static_cast<std::size_t>(refs[i].session)];
    os << s.id << "," << refs[i].segment << "," << split_name(s.split) << ","
       << normalize_session_index(refs[i].segment, loaded.stats) << "," << events[i] << "," << stages[i];
    for (Eigen::Index c = 0; c < x.cols(); ++c) os << "," << x(static_cast<Eigen::Index>(i), c);
    os << "\n";
  }
  const fs::path out = file.empty() ? ctx.reports() / ("embeddings-" + id + ".csv") : fs::path(file);
  write_text(out, os.str());
  write_json(fs::path(out.string() + ".json"), {{"pair", pair_name(corpus, pair)}, {"provenance", provenance(ctx, {id})}});
  std::cout << "wrote " << refs.size() << " rows to " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck(int entries) {
  GradcheckOptions opt;
  opt.entries_per_tensor = entries;
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradchecks(opt);
  bool ok = true;
  for (const GradcheckResult& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.suite << ": " << r.checked << " entries, max rel error "
              << r.max_rel_error << " (" << r.worst << ")\n";
    ok = ok && r.pass;
  }
  std::cout << "elapsed " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  return ok ? 0 : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage multimodal self-supervised pretraining with global time conditioning"};
  app.require_subcommand(1);

  Common common;
  std::string from, pairs, csv, pair, out_file, split = "val", finetune_id;
  bool compare = false;
  int entries = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic session corpus");
  auto* p1 = app.add_subcommand("pretrain1", "Stage-1 unimodal pretraining, one encoder per modality");
  auto* p2 = app.add_subcommand("pretrain2", "Stage-2 cross-modal pretraining on Stage-1 checkpoints");
  auto* ft = app.add_subcommand("finetune", "LoRA fine-tuning of a Stage-2 checkpoint on a modality pair");
  auto* sc = app.add_subcommand("screen", "rank modality pairs with quick linear classifiers");
  auto* pr = app.add_subcommand("probe", "frozen-embedding linear probing");
  auto* ev = app.add_subcommand("eval", "held-out Stage-2 losses of a checkpoint");
  auto* dump = app.add_subcommand("dump-embeddings", "write frozen embeddings with positions and labels");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");

  for (auto* sub : {gen, p1, p2, ft, sc, pr, ev, dump}) add_common(sub, common);
  ft->add_option("--from", from, "Stage-2 checkpoint id")->required();
  ft->add_option("--pair", pair, "modality pair, e.g. spo2-like,resp-like")->required();
  ft->add_option("--id", finetune_id, "id of the fine-tuned checkpoint");
  sc->add_option("--from", from, "Stage-2 checkpoint id (default: Stage-1 encoders of the seed)");
  pr->add_option("--from", from, "Stage-2 checkpoint id");
  pr->add_option("--pairs", pairs, "all, or one pair such as spo2-like,resp-like");
  pr->add_flag("--compare-time-aware", compare, "run the time-aware vs non-time-aware ablation end to end");
  pr->add_option("--csv", csv, "also write the report table as CSV");
  ev->add_option("--from", from, "Stage-2 checkpoint id");
  ev->add_option("--split", split, "train, val or test")->capture_default_str();
  dump->add_option("--from", from, "Stage-2 checkpoint id");
  dump->add_option("--pair", pair, "modality pair")->required();
  dump->add_option("--file", out_file, "CSV output path");
  gc->add_option("--entries", entries, "entries checked per tensor (0: all)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(entries);
    const Context ctx = make_context(common);
    if (common.dry_run) {
      std::cout << json{{"config", ctx.cfg.to_json()},
                        {"config_hash", config_hash(ctx.cfg.to_json())},
                        {"output_root", ctx.root.string()}}
                       .dump(2)
                << "\n";
      return 0;
    }
    if (gen->parsed()) return cmd_gen_data(ctx);
    if (p1->parsed()) return cmd_pretrain1(ctx);
    if (p2->parsed()) return cmd_pretrain2(ctx);
    if (ft->parsed()) return cmd_finetune(ctx, from, pair, finetune_id);
    if (sc->parsed()) return cmd_screen(ctx, from);
    if (pr->parsed()) return cmd_probe(ctx, from, pairs, compare, csv);
    if (ev->parsed()) return cmd_eval(ctx, from, split);
    if (dump->parsed()) return cmd_dump(ctx, from, pair, out_file);
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
