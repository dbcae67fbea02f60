#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "btc/signal.hpp"

namespace btc {

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);
Split parse_split(const std::string& s);

struct Session {
  std::string id;
  int length = 0;
  Split split = Split::kTrain;
  // epochs[modality][segment]
  std::vector<std::vector<Epoch>> epochs;
};

// Location of one window pair inside a corpus.
struct EpochRef {
  int session = 0;
  int segment = 0;
};

struct Corpus {
  std::vector<std::string> modalities;
  std::vector<Session> sessions;
  nlohmann::json config;      // generator config echo
  nlohmann::json run_config;  // effective run config of the producing command, if any

  int modality_count() const { return static_cast<int>(modalities.size()); }
  int modality_index(const std::string& name) const;

  std::vector<int> session_lengths(Split s) const;
  std::vector<EpochRef> refs(Split s) const;
  std::vector<const Epoch*> epochs_of(int modality, Split s) const;
  const Epoch& at(int modality, const EpochRef& r) const {
    return sessions[static_cast<std::size_t>(r.session)]
        .epochs[static_cast<std::size_t>(modality)][static_cast<std::size_t>(r.segment)];
  }
};

// Directory layout: manifest.json, labels.csv, sessions/<id>.bin
// (little-endian float32, modality-major: modality, segment, sample).
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace btc
