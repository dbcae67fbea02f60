#include "btc/config.hpp"

#include <cstdio>
#include <fstream>

namespace btc {

using nlohmann::json;

namespace {

// Visits every key of an object section; `set` returns false for unknown keys.
template <typename F>
void apply_keys(const json& j, const std::string& section, F&& set) {
  if (!j.is_object()) throw InvalidConfig(section + ": expected an object");
  for (const auto& [key, v] : j.items()) {
    bool known = false;
    try {
      known = set(key, v);
    } catch (const json::exception& e) {
      throw InvalidConfig(section + "." + key + ": " + e.what());
    }
    if (!known) throw InvalidConfig(section + ": unknown key " + key);
  }
}

template <typename T>
bool take(const std::string& key, const char* name, const json& v, T& out) {
  if (key != name) return false;
  out = v.get<T>();
  return true;
}

json stage1_to_json(const Stage1Schedule& s) {
  return {{"batch_size", s.batch_size},         {"iters_per_epoch", s.iters_per_epoch},
          {"max_epochs", s.max_epochs},         {"warmup_epochs", s.warmup_epochs},
          {"patience_epochs", s.patience_epochs}, {"lr", s.lr},
          {"weight_decay", s.weight_decay},     {"val_examples", s.val_examples}};
}

Stage1Schedule stage1_from_json(const json& j, Stage1Schedule s) {
  apply_keys(j, "stage1", [&](const std::string& k, const json& v) {
    return take(k, "batch_size", v, s.batch_size) || take(k, "iters_per_epoch", v, s.iters_per_epoch) ||
           take(k, "max_epochs", v, s.max_epochs) || take(k, "warmup_epochs", v, s.warmup_epochs) ||
           take(k, "patience_epochs", v, s.patience_epochs) || take(k, "lr", v, s.lr) ||
           take(k, "weight_decay", v, s.weight_decay) || take(k, "val_examples", v, s.val_examples);
  });
  return s;
}

json stage2_to_json(const Stage2Schedule& s) {
  return {{"batch_size", s.batch_size}, {"iters_per_epoch", s.iters_per_epoch}, {"epochs", s.epochs},
          {"warmup_epochs", s.warmup_epochs}, {"lr", s.lr}, {"weight_decay", s.weight_decay}};
}

Stage2Schedule stage2_from_json(const json& j, Stage2Schedule s) {
  apply_keys(j, "stage2", [&](const std::string& k, const json& v) {
    return take(k, "batch_size", v, s.batch_size) || take(k, "iters_per_epoch", v, s.iters_per_epoch) ||
           take(k, "epochs", v, s.epochs) || take(k, "warmup_epochs", v, s.warmup_epochs) ||
           take(k, "lr", v, s.lr) || take(k, "weight_decay", v, s.weight_decay);
  });
  return s;
}

json finetune_to_json(const FinetuneSchedule& s) {
  return {{"batch_size", s.batch_size}, {"epochs", s.epochs}, {"warmup_epochs", s.warmup_epochs},
          {"lr", s.lr}, {"weight_decay", s.weight_decay}};
}

FinetuneSchedule finetune_from_json(const json& j, FinetuneSchedule s) {
  apply_keys(j, "finetune", [&](const std::string& k, const json& v) {
    return take(k, "batch_size", v, s.batch_size) || take(k, "epochs", v, s.epochs) ||
           take(k, "warmup_epochs", v, s.warmup_epochs) || take(k, "lr", v, s.lr) ||
           take(k, "weight_decay", v, s.weight_decay);
  });
  return s;
}

json probe_to_json(const ProbeSchedule& s) {
  return {{"batch_size", s.batch_size}, {"iters_per_epoch", s.iters_per_epoch}, {"epochs", s.epochs},
          {"lr", s.lr}, {"weight_decay", s.weight_decay}};
}

ProbeSchedule probe_from_json(const json& j, ProbeSchedule s) {
  apply_keys(j, "probe", [&](const std::string& k, const json& v) {
    return take(k, "batch_size", v, s.batch_size) || take(k, "iters_per_epoch", v, s.iters_per_epoch) ||
           take(k, "epochs", v, s.epochs) || take(k, "lr", v, s.lr) || take(k, "weight_decay", v, s.weight_decay);
  });
  return s;
}

json screen_to_json(const ScreenHyper& s) {
  return {{"subsample", s.subsample}, {"steps", s.steps}, {"batch_size", s.batch_size}, {"lr", s.lr}, {"l2", s.l2}};
}

ScreenHyper screen_from_json(const json& j, ScreenHyper s) {
  apply_keys(j, "screen", [&](const std::string& k, const json& v) {
    return take(k, "subsample", v, s.subsample) || take(k, "steps", v, s.steps) ||
           take(k, "batch_size", v, s.batch_size) || take(k, "lr", v, s.lr) || take(k, "l2", v, s.l2);
  });
  return s;
}

// Dotted flag overrides ("stage2.lr": 1e-4) become nested objects.
json nest(const json& flat) {
  json out = json::object();
  for (const auto& [key, v] : flat.items()) {
    json* node = &out;
    std::size_t start = 0;
    for (std::size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
      node = &(*node)[key.substr(start, dot - start)];
      start = dot + 1;
    }
    (*node)[key.substr(start)] = v;
  }
  return out;
}

}  // namespace

json encoder_to_json(const EncoderConfig& c) {
  return {{"samples", c.samples},       {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
          {"enc_layers", c.enc_layers}, {"enc_heads", c.enc_heads},   {"mlp_ratio", c.mlp_ratio},
          {"dec_dim", c.dec_dim},       {"dec_layers", c.dec_layers}, {"dec_heads", c.dec_heads},
          {"mask_ratio", c.mask_ratio}, {"proj_dim", c.proj_dim},     {"temperature", c.temperature}};
}

EncoderConfig encoder_from_json(const json& j, EncoderConfig c) {
  apply_keys(j, "encoder", [&](const std::string& k, const json& v) {
    return take(k, "samples", v, c.samples) || take(k, "patch_size", v, c.patch_size) ||
           take(k, "embed_dim", v, c.embed_dim) || take(k, "enc_layers", v, c.enc_layers) ||
           take(k, "enc_heads", v, c.enc_heads) || take(k, "mlp_ratio", v, c.mlp_ratio) ||
           take(k, "dec_dim", v, c.dec_dim) || take(k, "dec_layers", v, c.dec_layers) ||
           take(k, "dec_heads", v, c.dec_heads) || take(k, "mask_ratio", v, c.mask_ratio) ||
           take(k, "proj_dim", v, c.proj_dim) || take(k, "temperature", v, c.temperature);
  });
  return c;
}

json cross_to_json(const CrossModalConfig& c) {
  return {{"layers", c.layers},         {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
          {"dec_dim", c.dec_dim},       {"dec_layers", c.dec_layers}, {"dec_heads", c.dec_heads},
          {"mask_ratio", c.mask_ratio}, {"proj_dim", c.proj_dim},     {"temperature", c.temperature},
          {"film_hidden", c.film_hidden}, {"time_aware", c.time_aware}};
}

CrossModalConfig cross_from_json(const json& j, CrossModalConfig c) {
  apply_keys(j, "cross", [&](const std::string& k, const json& v) {
    return take(k, "layers", v, c.layers) || take(k, "heads", v, c.heads) || take(k, "mlp_ratio", v, c.mlp_ratio) ||
           take(k, "dec_dim", v, c.dec_dim) || take(k, "dec_layers", v, c.dec_layers) ||
           take(k, "dec_heads", v, c.dec_heads) || take(k, "mask_ratio", v, c.mask_ratio) ||
           take(k, "proj_dim", v, c.proj_dim) || take(k, "temperature", v, c.temperature) ||
           take(k, "film_hidden", v, c.film_hidden) || take(k, "time_aware", v, c.time_aware);
  });
  return c;
}

json lora_to_json(const LoraConfig& c) {
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}, {"attention", c.attention}, {"mlp", c.mlp}};
}

LoraConfig lora_from_json(const json& j, LoraConfig c) {
  apply_keys(j, "lora", [&](const std::string& k, const json& v) {
    return take(k, "rank", v, c.rank) || take(k, "alpha", v, c.alpha) || take(k, "dropout", v, c.dropout) ||
           take(k, "attention", v, c.attention) || take(k, "mlp", v, c.mlp);
  });
  return c;
}

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper_scale() {
  RunConfig c;
  c.preset = "paper-scale";
  c.encoder = EncoderConfig::paper_scale();
  c.cross = CrossModalConfig::paper_scale();
  c.stage1 = {128, 2000, 850, 24, 100, 1e-4, 1e-5, 4096};
  c.stage2 = {64, 4000, 200, 24, 1e-4, 1e-5};
  c.finetune = {128, 50, 0, 3e-4, 1e-5};
  c.probe = {128, 2000, 50, 4e-3, 1e-5};
  c.screen.subsample = 128000;
  c.generator.epoch_len = c.encoder.samples;
  return c;
}

RunConfig RunConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper-scale") return paper_scale();
  throw InvalidConfig("preset: expected desk or paper-scale, got " + name);
}

void RunConfig::validate() const {
  encoder.validate();
  cross.validate(encoder.embed_dim);
  generator.validate();
  if (generator.epoch_len != encoder.samples)
    throw InvalidConfig("generator.epoch_len must equal encoder.samples");
  if (stage1.batch_size < 2 || stage1.iters_per_epoch < 1 || stage1.max_epochs < 1 || stage1.warmup_epochs < 0 ||
      stage1.warmup_epochs >= stage1.max_epochs || stage1.patience_epochs < 1 || !(stage1.lr > 0.0))
    throw InvalidConfig("stage1: invalid schedule");
  if (stage2.batch_size < 2 || stage2.iters_per_epoch < 1 || stage2.epochs < 1 || stage2.warmup_epochs < 0 ||
      stage2.warmup_epochs >= stage2.epochs || !(stage2.lr > 0.0))
    throw InvalidConfig("stage2: invalid schedule");
  if (finetune.batch_size < 2 || finetune.epochs < 1 || finetune.warmup_epochs < 0 ||
      (finetune.warmup_epochs > 0 && finetune.warmup_epochs >= finetune.epochs) || !(finetune.lr > 0.0))
    throw InvalidConfig("finetune: invalid schedule");
  if (probe.batch_size < 1 || probe.iters_per_epoch < 1 || probe.epochs < 1 || !(probe.lr > 0.0))
    throw InvalidConfig("probe: invalid schedule");
  if (screen.subsample < 2 || screen.steps < 1 || screen.batch_size < 1 || !(screen.lr > 0.0) || screen.l2 < 0.0)
    throw InvalidConfig("screen: invalid settings");
  for (const LoraConfig* l : {&lora_stage2, &lora_finetune})
    if (l->rank < 1 || !(l->alpha > 0.0) || l->dropout < 0.0 || l->dropout >= 1.0)
      throw InvalidConfig("lora: rank, alpha and dropout out of range");
  if (seeds.empty()) throw InvalidConfig("seeds: at least one seed required");
  if (task != "event" && task != "stage") throw InvalidConfig("task: expected event or stage");
}

json RunConfig::to_json() const {
  return {{"preset", preset},
          {"encoder", encoder_to_json(encoder)},
          {"cross", cross_to_json(cross)},
          {"stage1", stage1_to_json(stage1)},
          {"stage2", stage2_to_json(stage2)},
          {"finetune", finetune_to_json(finetune)},
          {"probe", probe_to_json(probe)},
          {"screen", screen_to_json(screen)},
          {"lora_stage2", lora_to_json(lora_stage2)},
          {"lora_finetune", lora_to_json(lora_finetune)},
          {"generator", generator.to_json()},
          {"time_aware", time_aware},
          {"seeds", seeds},
          {"task", task},
          {"paths", {{"corpus", corpus_dir}, {"checkpoints", checkpoint_dir}, {"reports", report_dir}}}};
}

RunConfig RunConfig::merge(const RunConfig& base, const json& j) {
  RunConfig c = base;
  apply_keys(j, "config", [&](const std::string& k, const json& v) {
    if (k == "preset") {
      const std::string name = v.get<std::string>();
      if (name != c.preset) throw InvalidConfig("preset: a config file cannot switch presets (" + name + ")");
      return true;
    }
    if (k == "encoder") {
      c.encoder = encoder_from_json(v, c.encoder);
      return true;
    }
    if (k == "cross") {
      c.cross = cross_from_json(v, c.cross);
      return true;
    }
    if (k == "stage1") {
      c.stage1 = stage1_from_json(v, c.stage1);
      return true;
    }
    if (k == "stage2") {
      c.stage2 = stage2_from_json(v, c.stage2);
      return true;
    }
    if (k == "finetune") {
      c.finetune = finetune_from_json(v, c.finetune);
      return true;
    }
    if (k == "probe") {
      c.probe = probe_from_json(v, c.probe);
      return true;
    }
    if (k == "screen") {
      c.screen = screen_from_json(v, c.screen);
      return true;
    }
    if (k == "lora_stage2") {
      c.lora_stage2 = lora_from_json(v, c.lora_stage2);
      return true;
    }
    if (k == "lora_finetune") {
      c.lora_finetune = lora_from_json(v, c.lora_finetune);
      return true;
    }
    if (k == "generator") {
      json g = c.generator.to_json();
      g.merge_patch(v);
      c.generator = GeneratorConfig::from_json(g);
      return true;
    }
    if (k == "paths") {
      apply_keys(v, "paths", [&](const std::string& pk, const json& pv) {
        return take(pk, "corpus", pv, c.corpus_dir) || take(pk, "checkpoints", pv, c.checkpoint_dir) ||
               take(pk, "reports", pv, c.report_dir);
      });
      return true;
    }
    return take(k, "time_aware", v, c.time_aware) || take(k, "seeds", v, c.seeds) || take(k, "task", v, c.task);
  });
  if (!j.contains("time_aware") && j.contains("cross") && j.at("cross").contains("time_aware"))
    c.time_aware = c.cross.time_aware;
  c.cross.time_aware = c.time_aware;
  return c;
}

Stage1Hyper RunConfig::stage1_hyper() const {
  Stage1Hyper h;
  h.batch_size = stage1.batch_size;
  h.iters_per_epoch = stage1.iters_per_epoch;
  h.total_steps = stage1.iters_per_epoch * stage1.max_epochs;
  h.warmup_steps = std::max<long>(1, stage1.iters_per_epoch * stage1.warmup_epochs);
  h.lambda_ramp_steps = h.warmup_steps;
  h.patience_epochs = stage1.patience_epochs;
  h.lr = stage1.lr;
  h.adam.weight_decay = stage1.weight_decay;
  h.val_examples = stage1.val_examples;
  h.max_epochs = static_cast<int>(stage1.max_epochs);
  return h;
}

Stage2Hyper RunConfig::stage2_hyper() const {
  Stage2Hyper h;
  h.batch_size = stage2.batch_size;
  h.total_steps = stage2.iters_per_epoch * stage2.epochs;
  h.warmup_steps = std::max<long>(1, stage2.iters_per_epoch * stage2.warmup_epochs);
  h.lambda_ramp_steps = h.warmup_steps;
  h.lr = stage2.lr;
  h.adam.weight_decay = stage2.weight_decay;
  return h;
}

Stage2Hyper RunConfig::finetune_hyper(long train_windows) const {
  if (train_windows < 1) throw InvalidInput("finetune: empty training split");
  const long per_epoch = (train_windows + finetune.batch_size - 1) / finetune.batch_size;
  Stage2Hyper h;
  h.batch_size = finetune.batch_size;
  h.total_steps = std::max<long>(2, per_epoch * finetune.epochs);
  h.warmup_steps = finetune.warmup_epochs > 0 ? per_epoch * finetune.warmup_epochs : h.total_steps / 10;
  h.warmup_steps = std::clamp<long>(h.warmup_steps, 1, h.total_steps - 1);
  h.lambda_ramp_steps = h.warmup_steps;
  h.lr = finetune.lr;
  h.adam.weight_decay = finetune.weight_decay;
  return h;
}

ProbeHyper RunConfig::probe_hyper() const {
  ProbeHyper h;
  h.batch_size = probe.batch_size;
  h.total_steps = probe.iters_per_epoch * probe.epochs;
  h.eval_every = probe.iters_per_epoch;
  h.lr = probe.lr;
  h.weight_decay = probe.weight_decay;
  return h;
}

RunConfig load_run_config(const std::string& preset, const std::filesystem::path& file, const json& overrides) {
  RunConfig c = RunConfig::preset_named(preset);
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw InvalidConfig("config file not readable: " + file.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidConfig("config file " + file.string() + ": " + e.what());
    }
    c = RunConfig::merge(c, j);
  }
  if (!overrides.is_null() && !overrides.empty()) c = RunConfig::merge(c, nest(overrides));
  c.validate();
  return c;
}

std::string config_hash(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

}  // namespace btc
