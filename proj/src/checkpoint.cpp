#include "btc/checkpoint.hpp"

#include <cstdio>

#include "btc/binio.hpp"
#include "btc/config.hpp"
#include "btc/pipeline.hpp"

namespace btc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "btc-checkpoint/1";

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..")
    throw InvalidInput("checkpoint id must be a plain directory name: '" + id + "'");
}

// Serialises `params` into one blob; returns the tensor table.
json pack(const std::vector<const Parameter<float>*>& params, const std::string& file, std::string& blob) {
  json table = json::array();
  for (const Parameter<float>* p : params) {
    table.push_back({{"name", p->name},
                     {"rows", p->value.rows()},
                     {"cols", p->value.cols()},
                     {"offset", blob.size()},
                     {"file", file},
                     {"trainable", p->trainable}});
    for (Eigen::Index i = 0; i < p->value.size(); ++i) append_f32_le(blob, p->value.data()[i]);
  }
  return table;
}

// Reads every tensor of the table into the store; any mismatch is corruption.
template <typename Store>
void unpack(Store& store, const json& tensors, const std::map<std::string, std::string>& blobs, const std::string& where) {
  for (const json& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    Parameter<float>* p = store.find(name);
    if (p == nullptr) throw CorruptCheckpoint(where + ": tensor " + name + " has no matching parameter");
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw CorruptCheckpoint(where + ": shape mismatch for " + name);
    const auto it = blobs.find(t.at("file").get<std::string>());
    if (it == blobs.end()) throw CorruptCheckpoint(where + ": unknown blob for " + name);
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * 4;
    if (offset + bytes > it->second.size()) throw CorruptCheckpoint(where + ": blob truncated at " + name);
    const auto* base = reinterpret_cast<const unsigned char*>(it->second.data()) + offset;
    for (Eigen::Index i = 0; i < rows * cols; ++i) p->value.data()[i] = read_f32_le(base + 4 * i);
    p->trainable = t.value("trainable", p->trainable);
  }
}

std::map<std::string, std::string> read_blobs(const fs::path& dir, const json& manifest) {
  std::map<std::string, std::string> out;
  for (const auto& [file, info] : manifest.at("blobs").items()) {
    std::string b;
    try {
      b = read_file(dir / file);
    } catch (const InvalidInput&) {
      throw CorruptCheckpoint(dir.string() + ": missing blob " + file);
    }
    if (b.size() != info.at("bytes").get<std::size_t>())
      throw CorruptCheckpoint(dir.string() + ": blob " + file + " has " + std::to_string(b.size()) +
                              " bytes, manifest records " + std::to_string(info.at("bytes").get<std::size_t>()));
    if (hex64(fnv1a(b)) != info.at("fnv1a").get<std::string>())
      throw CorruptCheckpoint(dir.string() + ": blob " + file + " checksum mismatch");
    out[file] = std::move(b);
  }
  return out;
}

void write_checkpoint(const fs::path& dir, json manifest, const std::vector<const Parameter<float>*>& base,
                      const std::vector<const Parameter<float>*>& lora) {
  std::string base_blob, lora_blob;
  json tensors = pack(base, "params.bin", base_blob);
  for (json& t : pack(lora, "lora.bin", lora_blob)) tensors.push_back(std::move(t));
  manifest["tensors"] = tensors;
  manifest["blobs"] = {{"params.bin", {{"bytes", base_blob.size()}, {"fnv1a", hex64(fnv1a(base_blob))}}}};
  if (!lora.empty())
    manifest["blobs"]["lora.bin"] = {{"bytes", lora_blob.size()}, {"fnv1a", hex64(fnv1a(lora_blob))}};
  fs::create_directories(fs::absolute(dir).parent_path());
  write_directory_atomically(dir, [&](const fs::path& tmp) {
    write_file(tmp / "params.bin", base_blob);
    if (!lora.empty()) write_file(tmp / "lora.bin", lora_blob);
    write_file(tmp / "manifest.json", manifest.dump(2) + "\n");
  });
}

json header(const CheckpointMeta& meta, const std::string& stage) {
  check_id(meta.id);
  return {{"format", kFormat},
          {"id", meta.id},
          {"stage", stage},
          {"seed", meta.seed},
          {"config", meta.config},
          {"config_hash", config_hash(meta.config)}};
}

bool is_lora(const std::string& name) { return name.rfind("lora.", 0) == 0; }

}  // namespace

json read_checkpoint_manifest(const fs::path& root, const std::string& id) {
  check_id(id);
  const fs::path dir = root / id;
  if (!fs::exists(dir / "manifest.json")) throw MissingDependency("checkpoint not found: " + dir.string());
  json m;
  try {
    m = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(dir.string() + ": unreadable manifest: " + e.what());
  }
  if (m.value("format", "") != kFormat) throw CorruptCheckpoint(dir.string() + ": not a checkpoint manifest");
  return m;
}

void save_stage1_checkpoint(const fs::path& root, const CheckpointMeta& meta, const Stage1Model<float>& model,
                            int modality, const std::string& modality_name) {
  json m = header(meta, "stage1");
  m["modality"] = modality;
  m["modality_name"] = modality_name;
  m["encoder"] = encoder_to_json(model.cfg);
  m["store_seed"] = model.store.seed();
  std::vector<const Parameter<float>*> params;
  for (const Parameter<float>* p : model.store.all()) params.push_back(p);
  write_checkpoint(root / meta.id, m, params, {});
}

LoadedStage1 load_stage1_checkpoint(const fs::path& root, const std::string& id) {
  LoadedStage1 out;
  out.manifest = read_checkpoint_manifest(root, id);
  const json& m = out.manifest;
  const std::string where = (root / id).string();
  try {
    if (m.at("stage") != "stage1") throw MissingDependency(where + ": expected a stage1 checkpoint");
    out.model = std::make_unique<Stage1Model<float>>(encoder_from_json(m.at("encoder")),
                                                     m.at("store_seed").get<std::uint64_t>());
    if (m.at("tensors").size() != out.model->store.all().size())
      throw CorruptCheckpoint(where + ": tensor count does not match the model");
    unpack(out.model->store, m.at("tensors"), read_blobs(root / id, m), where);
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(where + ": malformed manifest: " + e.what());
  }
  return out;
}

void save_stage2_checkpoint(const fs::path& root, const CheckpointMeta& meta, const CrossModalModel<float>& model,
                            const SessionStats& stats, const std::vector<std::string>& dependencies,
                            const std::string& stage) {
  if (stage != "stage2" && stage != "finetune") throw InvalidInput("checkpoint stage must be stage2 or finetune");
  if (static_cast<int>(dependencies.size()) != model.modality_count())
    throw InvalidInput("save_stage2_checkpoint: one Stage-1 dependency per modality required");
  json m = header(meta, stage);
  m["encoder"] = encoder_to_json(model.encoder_config());
  m["cross"] = cross_to_json(model.config());
  m["time_aware"] = model.time_aware();
  m["modalities"] = model.modality_count();
  m["store_seed"] = model.store().seed();
  m["session_stats"] = {{"mean_len", stats.mean_len}, {"std_len", stats.std_len}};
  m["dependencies"] = dependencies;
  const bool own_encoders = stage == "finetune";
  m["encoders"] = own_encoders ? "stored" : "dependencies";
  json adapters = json::array();
  for (const LoraAdapter<float>* ad : model.adapters())
    adapters.push_back({{"target", ad->target}, {"rank", ad->rank}, {"alpha", ad->alpha}, {"dropout", ad->dropout}});
  m["adapters"] = adapters;
  std::vector<const Parameter<float>*> base, lora;
  for (const Parameter<float>* p : model.store().all()) {
    if (is_lora(p->name)) lora.push_back(p);
    else if (own_encoders || p->name.rfind("cross.", 0) == 0) base.push_back(p);
  }
  write_checkpoint(root / meta.id, m, base, lora);
}

LoadedStage2 load_stage2_checkpoint(const fs::path& root, const std::string& id) {
  LoadedStage2 out;
  out.manifest = read_checkpoint_manifest(root, id);
  const json& m = out.manifest;
  const std::string where = (root / id).string();
  try {
    const std::string stage = m.at("stage").get<std::string>();
    if (stage != "stage2" && stage != "finetune") throw MissingDependency(where + ": expected a stage2 checkpoint");
    CrossModalConfig cc = cross_from_json(m.at("cross"));
    out.model = std::make_unique<CrossModalModel<float>>(encoder_from_json(m.at("encoder")), cc,
                                                         m.at("modalities").get<int>(),
                                                         m.at("store_seed").get<std::uint64_t>());
    out.stats = {m.at("session_stats").at("mean_len").get<double>(), m.at("session_stats").at("std_len").get<double>()};
    const auto deps = m.at("dependencies").get<std::vector<std::string>>();
    if (m.at("encoders") == "dependencies") {
      for (std::size_t i = 0; i < deps.size(); ++i) {
        LoadedStage1 s1 = load_stage1_checkpoint(root, deps[i]);
        load_unimodal_encoder(*out.model, static_cast<int>(i), *s1.model);
      }
      for (Parameter<float>* p : out.model->store().all())
        if (p->name.rfind("uni.", 0) == 0) p->trainable = false;
    }
    std::map<std::string, Linear<float>*> maps;
    for (Linear<float>* l : out.model->all_linear_maps()) maps[l->name] = l;
    for (const json& a : m.at("adapters")) {
      const auto target = a.at("target").get<std::string>();
      const auto it = maps.find(target);
      if (it == maps.end()) throw CorruptCheckpoint(where + ": adapter targets unknown map " + target);
      LoraConfig lc;
      lc.rank = a.at("rank").get<int>();
      lc.alpha = a.at("alpha").get<double>();
      lc.dropout = a.at("dropout").get<double>();
      attach_lora(out.model->store(), *it->second, lc);
    }
    // Every parameter outside the dependency encoders must be present.
    std::size_t expected = 0;
    const bool own = m.at("encoders") != "dependencies";
    for (const Parameter<float>* p : out.model->store().all())
      if (own || p->name.rfind("uni.", 0) != 0) ++expected;
    if (m.at("tensors").size() != expected) throw CorruptCheckpoint(where + ": tensor count does not match the model");
    unpack(out.model->store(), m.at("tensors"), read_blobs(root / id, m), where);
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(where + ": malformed manifest: " + e.what());
  }
  return out;
}

}  // namespace btc
