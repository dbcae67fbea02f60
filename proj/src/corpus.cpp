#include "btc/corpus.hpp"

#include <sstream>

#include "btc/binio.hpp"

namespace btc {

namespace fs = std::filesystem;

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw InvalidInput("unknown split: " + s);
}

int Corpus::modality_index(const std::string& name) const {
  for (std::size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i] == name) return static_cast<int>(i);
  throw LookupError("unknown modality: " + name);
}

std::vector<int> Corpus::session_lengths(Split s) const {
  std::vector<int> out;
  for (const Session& ses : sessions)
    if (ses.split == s) out.push_back(ses.length);
  return out;
}

std::vector<EpochRef> Corpus::refs(Split s) const {
  std::vector<EpochRef> out;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (sessions[i].split != s) continue;
    for (int seg = 0; seg < sessions[i].length; ++seg) out.push_back({static_cast<int>(i), seg});
  }
  return out;
}

std::vector<const Epoch*> Corpus::epochs_of(int modality, Split s) const {
  std::vector<const Epoch*> out;
  for (const Session& ses : sessions) {
    if (ses.split != s) continue;
    for (const Epoch& e : ses.epochs.at(static_cast<std::size_t>(modality))) out.push_back(&e);
  }
  return out;
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  write_directory_atomically(dir, [&](const fs::path& tmp) {
    fs::create_directories(tmp / "sessions");
    nlohmann::json manifest;
    manifest["format"] = "btc-corpus/1";
    manifest["modalities"] = corpus.modalities;
    manifest["config"] = corpus.config;
    if (!corpus.run_config.is_null()) manifest["run_config"] = corpus.run_config;
    const int len = corpus.sessions.empty() || corpus.sessions[0].epochs.empty() ||
                            corpus.sessions[0].epochs[0].empty()
                        ? 0
                        : static_cast<int>(corpus.sessions[0].epochs[0][0].samples.size());
    manifest["epoch_len"] = len;
    nlohmann::json sessions = nlohmann::json::array();
    nlohmann::json splits = {{"train", nlohmann::json::array()},
                             {"val", nlohmann::json::array()},
                             {"test", nlohmann::json::array()}};
    std::ostringstream labels;
    labels << "session_id,segment_index";
    std::vector<std::string> label_names;
    if (!corpus.sessions.empty() && !corpus.sessions[0].epochs.empty() && !corpus.sessions[0].epochs[0].empty())
      for (const auto& [k, v] : corpus.sessions[0].epochs[0][0].labels) {
        label_names.push_back(k);
        labels << ',' << k;
      }
    labels << '\n';
    for (const Session& s : corpus.sessions) {
      const std::string file = "sessions/" + s.id + ".bin";
      sessions.push_back({{"id", s.id}, {"length", s.length}, {"split", split_name(s.split)}, {"file", file}});
      splits[split_name(s.split)].push_back(s.id);
      std::string blob;
      blob.reserve(static_cast<std::size_t>(s.length) * s.epochs.size() * static_cast<std::size_t>(len) * 4);
      for (const auto& per_mod : s.epochs)
        for (const Epoch& e : per_mod)
          for (float v : e.samples) append_f32_le(blob, v);
      write_file(tmp / file, blob);
      for (int seg = 0; seg < s.length; ++seg) {
        const Epoch& e = s.epochs[0][static_cast<std::size_t>(seg)];
        labels << s.id << ',' << seg;
        for (const std::string& k : label_names) labels << ',' << e.labels.at(k);
        labels << '\n';
      }
    }
    manifest["sessions"] = sessions;
    manifest["splits"] = splits;
    write_file(tmp / "manifest.json", manifest.dump(2) + "\n");
    write_file(tmp / "labels.csv", labels.str());
  });
}

Corpus load_corpus(const fs::path& dir) {
  const nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  if (manifest.value("format", "") != "btc-corpus/1") throw InvalidInput("not a corpus directory: " + dir.string());
  Corpus c;
  c.modalities = manifest.at("modalities").get<std::vector<std::string>>();
  c.config = manifest.at("config");
  c.run_config = manifest.value("run_config", nlohmann::json());
  const int len = manifest.at("epoch_len").get<int>();
  const std::size_t m = c.modalities.size();

  // labels.csv: session_id,segment_index,<label columns...>
  std::istringstream lab(read_file(dir / "labels.csv"));
  std::string line;
  std::getline(lab, line);
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) header.push_back(tok);
  }
  std::map<std::string, std::vector<std::map<std::string, int>>> labels;
  while (std::getline(lab, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string sid, seg, tok;
    std::getline(ls, sid, ',');
    std::getline(ls, seg, ',');
    std::map<std::string, int> row;
    for (std::size_t h = 2; h < header.size() && std::getline(ls, tok, ','); ++h) row[header[h]] = std::stoi(tok);
    labels[sid].push_back(std::move(row));
  }

  for (const auto& js : manifest.at("sessions")) {
    Session s;
    s.id = js.at("id").get<std::string>();
    s.length = js.at("length").get<int>();
    s.split = parse_split(js.at("split").get<std::string>());
    const std::string blob = read_file(dir / js.at("file").get<std::string>());
    const std::size_t expect = m * static_cast<std::size_t>(s.length) * static_cast<std::size_t>(len) * 4;
    if (blob.size() != expect) throw InvalidInput("corpus blob size mismatch for session " + s.id);
    const auto& lab_rows = labels[s.id];
    if (lab_rows.size() != static_cast<std::size_t>(s.length))
      throw InvalidInput("label table does not cover session " + s.id);
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    s.epochs.resize(m);
    std::size_t off = 0;
    for (std::size_t mi = 0; mi < m; ++mi) {
      s.epochs[mi].resize(static_cast<std::size_t>(s.length));
      for (int seg = 0; seg < s.length; ++seg) {
        Epoch& e = s.epochs[mi][static_cast<std::size_t>(seg)];
        e.modality_id = static_cast<int>(mi);
        e.session_id = s.id;
        e.segment_index = seg;
        e.labels = lab_rows[static_cast<std::size_t>(seg)];
        e.samples.resize(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i, off += 4) e.samples[static_cast<std::size_t>(i)] = read_f32_le(bytes + off);
      }
    }
    c.sessions.push_back(std::move(s));
  }
  return c;
}

}  // namespace btc
