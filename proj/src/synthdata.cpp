#include "btc/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

namespace btc {

namespace {

constexpr int kStages = 5;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Per-stage dominant frequency (cycles per window) and amplitude of the eeg-like channel.
constexpr std::array<double, kStages> kEegCycles = {24.0, 16.0, 12.0, 4.0, 20.0};
constexpr std::array<double, kStages> kEegAmp = {0.5, 0.7, 1.0, 1.6, 0.6};

// Half-window envelope with short raised-cosine edges; 1 inside the event span.
std::vector<double> event_envelope(int len, Rng& rng) {
  const int span = len / 2;
  std::uniform_int_distribution<int> start_d(0, len - span);
  const int start = start_d(rng);
  const int edge = std::max(1, span / 8);
  std::vector<double> w(static_cast<std::size_t>(len), 0.0);
  for (int i = 0; i < span; ++i) {
    double v = 1.0;
    if (i < edge) v = 0.5 - 0.5 * std::cos(std::numbers::pi * (i + 0.5) / edge);
    if (span - 1 - i < edge) v = 0.5 - 0.5 * std::cos(std::numbers::pi * (span - 1 - i + 0.5) / edge);
    w[static_cast<std::size_t>(start + i)] = v;
  }
  return w;
}

std::vector<float> synthesize(const ModalitySpec& spec, int stage, const std::vector<double>* envelope,
                              double depth, int len, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::vector<double> x(static_cast<std::size_t>(len));
  const double phase = unit(rng);
  switch (spec.kind) {
    case SignalKind::kEeg: {
      const double f = kEegCycles[static_cast<std::size_t>(stage)] * (0.9 + 0.2 * unit(rng));
      const double a = kEegAmp[static_cast<std::size_t>(stage)];
      for (int i = 0; i < len; ++i) x[static_cast<std::size_t>(i)] = a * std::sin(kTwoPi * (f * i / len + phase));
      break;
    }
    case SignalKind::kSpo2: {
      const double f = 0.3 + 0.5 * unit(rng);
      for (int i = 0; i < len; ++i) {
        double v = 0.3 * std::sin(kTwoPi * (f * i / len + phase));
        if (envelope) v -= depth * (*envelope)[static_cast<std::size_t>(i)];
        x[static_cast<std::size_t>(i)] = v;
      }
      break;
    }
    case SignalKind::kResp: {
      const double f = 3.0 + 2.0 * unit(rng);
      for (int i = 0; i < len; ++i) {
        double a = 1.0;
        if (envelope) a -= depth * (*envelope)[static_cast<std::size_t>(i)];
        x[static_cast<std::size_t>(i)] = a * std::sin(kTwoPi * (f * i / len + phase));
      }
      break;
    }
    case SignalKind::kNoise:
      std::fill(x.begin(), x.end(), 0.0);
      break;
  }
  std::vector<float> raw(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) raw[static_cast<std::size_t>(i)] = static_cast<float>(x[static_cast<std::size_t>(i)] + noise(rng));
  Normalized n = zscore_normalize(raw);
  return std::move(n.values);
}

Session make_session(const GeneratorConfig& cfg, int index, const std::vector<bool>& carries) {
  Rng rng = make_rng(child_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(index)));
  Session s;
  char id[16];
  std::snprintf(id, sizeof id, "s%04d", index);
  s.id = id;
  std::normal_distribution<double> len_d(cfg.session_len_mean, cfg.session_len_std);
  s.length = std::max(4, static_cast<int>(std::lround(len_d(rng))));

  std::uniform_int_distribution<int> first(0, kStages - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> stages(static_cast<std::size_t>(s.length));
  std::vector<int> events(static_cast<std::size_t>(s.length));
  int stage = first(rng);
  for (int seg = 0; seg < s.length; ++seg) {
    if (seg > 0) {
      const auto& row = cfg.stage_transition[static_cast<std::size_t>(stage)];
      double u = unit(rng), acc = 0.0;
      int next = kStages - 1;
      for (int k = 0; k < kStages; ++k) {
        acc += row[static_cast<std::size_t>(k)];
        if (u < acc) {
          next = k;
          break;
        }
      }
      stage = next;
    }
    stages[static_cast<std::size_t>(seg)] = stage;
    events[static_cast<std::size_t>(seg)] = unit(rng) < event_prior(seg, s.length, cfg) ? 1 : 0;
  }

  const std::size_t m = cfg.modalities.size();
  s.epochs.assign(m, std::vector<Epoch>(static_cast<std::size_t>(s.length)));
  for (int seg = 0; seg < s.length; ++seg) {
    const bool ev = events[static_cast<std::size_t>(seg)] != 0;
    std::vector<double> env;
    if (ev) env = event_envelope(cfg.epoch_len, rng);
    for (std::size_t mi = 0; mi < m; ++mi) {
      Epoch& e = s.epochs[mi][static_cast<std::size_t>(seg)];
      e.modality_id = static_cast<int>(mi);
      e.session_id = s.id;
      e.segment_index = seg;
      e.labels = {{"event", events[static_cast<std::size_t>(seg)]}, {"stage", stages[static_cast<std::size_t>(seg)]}};
      const bool inject = ev && carries[mi];
      e.samples = synthesize(cfg.modalities[mi], stages[static_cast<std::size_t>(seg)], inject ? &env : nullptr,
                             cfg.signature_depth, cfg.epoch_len, rng);
    }
  }
  return s;
}

}  // namespace

std::string signal_kind_name(SignalKind k) {
  switch (k) {
    case SignalKind::kEeg:
      return "eeg";
    case SignalKind::kSpo2:
      return "spo2";
    case SignalKind::kResp:
      return "resp";
    case SignalKind::kNoise:
      return "noise";
  }
  return "noise";
}

SignalKind parse_signal_kind(const std::string& s) {
  if (s == "eeg") return SignalKind::kEeg;
  if (s == "spo2") return SignalKind::kSpo2;
  if (s == "resp") return SignalKind::kResp;
  if (s == "noise") return SignalKind::kNoise;
  throw InvalidConfig("unknown signal kind: " + s);
}

GeneratorConfig GeneratorConfig::desk() {
  GeneratorConfig c;
  c.modalities = {{"eeg-like", SignalKind::kEeg, 0.5, true},
                  {"spo2-like", SignalKind::kSpo2, 0.5, true},
                  {"resp-like", SignalKind::kResp, 0.5, false},
                  {"noise", SignalKind::kNoise, 1.0, true}};
  c.event_channels = {"spo2-like", "resp-like"};
  for (int i = 0; i < kStages; ++i)
    for (int j = 0; j < kStages; ++j)
      c.stage_transition[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = i == j ? 0.9 : 0.025;
  return c;
}

void GeneratorConfig::validate() const {
  if (n_sessions < 1) throw InvalidConfig("generator: n_sessions must be positive");
  if (!(session_len_mean >= 4.0)) throw InvalidConfig("generator: session_len_mean must be at least 4 epochs");
  if (!(session_len_std >= 0.0)) throw InvalidConfig("generator: session_len_std must be non-negative");
  if (epoch_len < 2) throw InvalidConfig("generator: epoch_len must be at least 2");
  if (modalities.size() < 2) throw InvalidConfig("generator: at least two modalities required");
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    if (modalities[i].name.empty()) throw InvalidConfig("generator: modality names must be nonempty");
    if (!(modalities[i].noise_std >= 0.0)) throw InvalidConfig("generator: noise_std must be non-negative");
    for (std::size_t j = 0; j < i; ++j)
      if (modalities[i].name == modalities[j].name)
        throw InvalidConfig("generator: duplicate modality name " + modalities[i].name);
  }
  if (!(event_base_rate >= 0.0 && event_base_rate <= 1.0))
    throw InvalidConfig("generator: event_base_rate must be in [0,1]");
  if (!(event_time_boost >= 0.0)) throw InvalidConfig("generator: event_time_boost must be non-negative");
  if (event_channels.empty()) throw InvalidConfig("generator: event_channels must be nonempty");
  for (const std::string& c : event_channels) {
    bool found = false;
    for (const ModalitySpec& m : modalities) found = found || m.name == c;
    if (!found) throw InvalidConfig("generator: event channel " + c + " is not a registered modality");
  }
  if (!(signature_depth >= 0.0 && signature_depth <= 1.0))
    throw InvalidConfig("generator: signature_depth must be in [0,1]");
  if (!(augment_sigma >= 0.0)) throw InvalidConfig("generator: augment_sigma must be non-negative");
  for (const auto& row : stage_transition) {
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw InvalidConfig("generator: stage_transition entries must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidConfig("generator: stage_transition rows must sum to 1");
  }
}

nlohmann::json GeneratorConfig::to_json() const {
  nlohmann::json mods = nlohmann::json::array();
  for (const ModalitySpec& m : modalities)
    mods.push_back({{"name", m.name}, {"kind", signal_kind_name(m.kind)}, {"noise_std", m.noise_std},
                    {"augment", m.augment}});
  return {{"n_sessions", n_sessions},
          {"session_len_mean", session_len_mean},
          {"session_len_std", session_len_std},
          {"epoch_len", epoch_len},
          {"modalities", mods},
          {"event_base_rate", event_base_rate},
          {"event_time_boost", event_time_boost},
          {"event_channels", event_channels},
          {"signature_depth", signature_depth},
          {"stage_transition", stage_transition},
          {"augment_sigma", augment_sigma},
          {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c = desk();
  for (const auto& [key, v] : j.items()) {
    if (key == "n_sessions") c.n_sessions = v.get<int>();
    else if (key == "session_len_mean") c.session_len_mean = v.get<double>();
    else if (key == "session_len_std") c.session_len_std = v.get<double>();
    else if (key == "epoch_len") c.epoch_len = v.get<int>();
    else if (key == "event_base_rate") c.event_base_rate = v.get<double>();
    else if (key == "event_time_boost") c.event_time_boost = v.get<double>();
    else if (key == "event_channels") c.event_channels = v.get<std::vector<std::string>>();
    else if (key == "signature_depth") c.signature_depth = v.get<double>();
    else if (key == "stage_transition") c.stage_transition = v.get<std::array<std::array<double, 5>, 5>>();
    else if (key == "augment_sigma") c.augment_sigma = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "modalities") {
      c.modalities.clear();
      for (const auto& m : v) {
        ModalitySpec s;
        for (const auto& [mk, mv] : m.items()) {
          if (mk == "name") s.name = mv.get<std::string>();
          else if (mk == "kind") s.kind = parse_signal_kind(mv.get<std::string>());
          else if (mk == "noise_std") s.noise_std = mv.get<double>();
          else if (mk == "augment") s.augment = mv.get<bool>();
          else throw InvalidConfig("generator.modalities: unknown key " + mk);
        }
        c.modalities.push_back(s);
      }
    } else {
      throw InvalidConfig("generator: unknown key " + key);
    }
  }
  return c;
}

double event_prior(int segment_index, int session_len, const GeneratorConfig& cfg) {
  if (session_len < 1 || segment_index < 0 || segment_index >= session_len)
    throw InvalidInput("event_prior: segment_index must lie in [0, session_len)");
  double p = cfg.event_base_rate;
  // segment_index / session_len > 2/3, in exact integer arithmetic
  if (3L * segment_index > 2L * session_len) p *= cfg.event_time_boost;
  return std::min(p, 0.95);
}

Corpus generate_corpus(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<bool> carries(cfg.modalities.size(), false);
  for (std::size_t i = 0; i < cfg.modalities.size(); ++i)
    for (const std::string& c : cfg.event_channels) carries[i] = carries[i] || cfg.modalities[i].name == c;

  Corpus corpus;
  for (const ModalitySpec& m : cfg.modalities) corpus.modalities.push_back(m.name);
  corpus.config = cfg.to_json();
  corpus.sessions.resize(static_cast<std::size_t>(cfg.n_sessions));

  // Each session owns a child seed, so the worker count does not affect output.
  const int workers = std::clamp(static_cast<int>(std::thread::hardware_concurrency()), 1, 8);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < cfg.n_sessions; i += workers)
        corpus.sessions[static_cast<std::size_t>(i)] = make_session(cfg, i, carries);
    });
  for (auto& th : pool) th.join();

  // Session-disjoint 80/10/10 split by session count.
  std::vector<int> order(static_cast<std::size_t>(cfg.n_sessions));
  for (int i = 0; i < cfg.n_sessions; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng split_rng = make_rng(child_seed(cfg.seed, 7));
  std::shuffle(order.begin(), order.end(), split_rng);
  const int n_train = static_cast<int>(std::lround(0.8 * cfg.n_sessions));
  const int n_val = static_cast<int>(std::lround(0.1 * cfg.n_sessions));
  for (int r = 0; r < cfg.n_sessions; ++r) {
    Session& s = corpus.sessions[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
    s.split = r < n_train ? Split::kTrain : (r < n_train + n_val ? Split::kVal : Split::kTest);
  }
  return corpus;
}

NoisePolicy noise_policy_for(const Corpus& corpus) {
  NoisePolicy p;
  const double sigma = corpus.config.value("augment_sigma", 0.05);
  const auto& mods = corpus.config.contains("modalities") ? corpus.config.at("modalities") : nlohmann::json::array();
  for (int m = 0; m < corpus.modality_count(); ++m) {
    bool augment = true;
    if (static_cast<std::size_t>(m) < mods.size()) augment = mods[static_cast<std::size_t>(m)].value("augment", true);
    p.sigma_by_modality[m] = augment ? sigma : 0.0;
  }
  return p;
}

}  // namespace btc
