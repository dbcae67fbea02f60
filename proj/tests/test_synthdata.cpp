#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "btc/synthdata.hpp"
#include "support.hpp"

using namespace btc;
using btc::testing::tiny_generator;

namespace {

// Critical value of a chi-square with 2 degrees of freedom at the 3-sigma tail.
const double kChi2Df2ThreeSigma = -2.0 * std::log(0.0027);

int third_of(int segment, int length) {
  if (3 * segment > 2 * length) return 2;
  if (3 * segment > length) return 1;
  return 0;
}

// Pearson statistic for the 3x2 table of (third, event).
double thirds_chi2(const Corpus& c) {
  std::array<std::array<double, 2>, 3> t{};
  for (const Session& s : c.sessions)
    for (int seg = 0; seg < s.length; ++seg)
      t[static_cast<std::size_t>(third_of(seg, s.length))]
       [static_cast<std::size_t>(s.epochs[0][static_cast<std::size_t>(seg)].labels.at("event"))] += 1.0;
  double n = 0.0;
  std::array<double, 3> rows{};
  std::array<double, 2> cols{};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      rows[i] += t[i][j];
      cols[j] += t[i][j];
      n += t[i][j];
    }
  double chi2 = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      const double e = rows[i] * cols[j] / n;
      chi2 += (t[i][j] - e) * (t[i][j] - e) / e;
    }
  return chi2;
}

GeneratorConfig large_cheap(std::uint64_t seed, double boost) {
  GeneratorConfig g = GeneratorConfig::desk();
  g.n_sessions = 100;
  g.session_len_mean = 100.0;
  g.epoch_len = 8;
  g.event_base_rate = 0.1;
  g.event_time_boost = boost;
  g.seed = seed;
  return g;
}

double prevalence(const Corpus& c) {
  double pos = 0.0, n = 0.0;
  for (const Session& s : c.sessions)
    for (const Epoch& e : s.epochs[0]) {
      pos += e.labels.at("event");
      n += 1.0;
    }
  return pos / n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("event_prior examples") {
  GeneratorConfig g = GeneratorConfig::desk();
  g.event_base_rate = 0.04;
  g.event_time_boost = 3.0;
  CHECK(event_prior(10, 120, g) == 0.04);
  CHECK(event_prior(80, 120, g) == 0.04);
  CHECK(event_prior(81, 120, g) == doctest::Approx(0.12));
  CHECK(event_prior(100, 120, g) == doctest::Approx(0.12));
  g.event_base_rate = 0.4;
  CHECK(event_prior(100, 120, g) == 0.95);
  CHECK(event_prior(0, 120, g) == 0.4);
  CHECK_THROWS_AS(event_prior(120, 120, g), InvalidInput);
  CHECK_THROWS_AS(event_prior(-1, 120, g), InvalidInput);
}

TEST_CASE("default desk corpus has event prevalence near 0.08") {
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    GeneratorConfig g = GeneratorConfig::desk();
    g.epoch_len = 8;
    g.seed = seed;
    const double p = prevalence(generate_corpus(g));
    CHECK(p == doctest::Approx(0.08).epsilon(0.25));
    total += p;
  }
  // Analytic expectation for the default base rate and boost.
  CHECK(total / 3.0 == doctest::Approx(0.04 * (2.0 / 3.0 + 3.0 / 3.0)).epsilon(0.2));
}

TEST_CASE("without a time boost the event label is independent of position") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Corpus c = generate_corpus(large_cheap(seed, 1.0));
    std::size_t n = 0;
    for (const Session& s : c.sessions) n += static_cast<std::size_t>(s.length);
    CHECK(n >= 9000);
    CHECK(thirds_chi2(c) < kChi2Df2ThreeSigma);
  }
}

TEST_CASE("a time boost makes the event label depend on position") {
  const Corpus c = generate_corpus(large_cheap(4, 3.0));
  CHECK(thirds_chi2(c) > kChi2Df2ThreeSigma);
}

TEST_CASE("sessions are at least four epochs and splits are session-disjoint 80/10/10") {
  GeneratorConfig g = tiny_generator(5);
  g.n_sessions = 50;
  g.session_len_mean = 5.0;
  g.session_len_std = 6.0;
  const Corpus c = generate_corpus(g);
  std::map<Split, int> counts;
  std::set<std::string> ids;
  for (const Session& s : c.sessions) {
    CHECK(s.length >= 4);
    ++counts[s.split];
    ids.insert(s.id);
    REQUIRE(s.epochs.size() == 4);
    for (const auto& row : s.epochs) CHECK(row.size() == static_cast<std::size_t>(s.length));
  }
  CHECK(ids.size() == 50);
  CHECK(counts[Split::kTrain] == 40);
  CHECK(counts[Split::kVal] == 5);
  CHECK(counts[Split::kTest] == 5);
  for (const EpochRef& r : c.refs(Split::kVal)) CHECK(c.sessions[static_cast<std::size_t>(r.session)].split == Split::kVal);
}

TEST_CASE("epochs are z-normalised and labels agree across modalities") {
  const Corpus c = generate_corpus(tiny_generator(6));
  for (const Session& s : c.sessions)
    for (int seg = 0; seg < s.length; ++seg) {
      const auto& ref = s.epochs[0][static_cast<std::size_t>(seg)].labels;
      for (const auto& row : s.epochs) {
        const Epoch& e = row[static_cast<std::size_t>(seg)];
        CHECK(e.labels == ref);
        CHECK(e.samples.size() == 64);
        double mean = 0.0, sq = 0.0;
        for (float v : e.samples) mean += v;
        mean /= 64.0;
        for (float v : e.samples) sq += (v - mean) * (v - mean);
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::sqrt(sq / 64.0) == doctest::Approx(1.0).epsilon(1e-3));
      }
    }
}

TEST_CASE("the same seed yields a bit-identical corpus") {
  const Corpus a = generate_corpus(tiny_generator(7));
  const Corpus b = generate_corpus(tiny_generator(7));
  const Corpus other = generate_corpus(tiny_generator(8));
  REQUIRE(a.sessions.size() == b.sessions.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.sessions.size(); ++i) {
    CHECK(a.sessions[i].length == b.sessions[i].length);
    CHECK(a.sessions[i].split == b.sessions[i].split);
    for (std::size_t m = 0; m < a.sessions[i].epochs.size(); ++m)
      for (std::size_t s = 0; s < a.sessions[i].epochs[m].size(); ++s) {
        CHECK(a.sessions[i].epochs[m][s].samples == b.sessions[i].epochs[m][s].samples);
        CHECK(a.sessions[i].epochs[m][s].labels == b.sessions[i].epochs[m][s].labels);
      }
    differs = differs || i >= other.sessions.size() ||
              other.sessions[i].epochs[0][0].samples != a.sessions[i].epochs[0][0].samples;
  }
  CHECK(differs);
}

TEST_CASE("corpus save and load round trip") {
  const Corpus c = generate_corpus(tiny_generator(9));
  testing::TempDir dir("corpus");
  save_corpus(c, dir.path() / "a");
  save_corpus(c, dir.path() / "b");
  CHECK(slurp(dir.path() / "a" / "manifest.json") == slurp(dir.path() / "b" / "manifest.json"));
  CHECK(slurp(dir.path() / "a" / "labels.csv") == slurp(dir.path() / "b" / "labels.csv"));
  const Corpus back = load_corpus(dir.path() / "a");
  CHECK(back.modalities == c.modalities);
  CHECK(back.config == c.config);
  REQUIRE(back.sessions.size() == c.sessions.size());
  for (std::size_t i = 0; i < c.sessions.size(); ++i) {
    CHECK(back.sessions[i].id == c.sessions[i].id);
    CHECK(back.sessions[i].split == c.sessions[i].split);
    CHECK(slurp(dir.path() / "a" / "sessions" / (c.sessions[i].id + ".bin")) ==
          slurp(dir.path() / "b" / "sessions" / (c.sessions[i].id + ".bin")));
    for (std::size_t m = 0; m < c.sessions[i].epochs.size(); ++m)
      for (std::size_t s = 0; s < c.sessions[i].epochs[m].size(); ++s) {
        const Epoch& x = c.sessions[i].epochs[m][s];
        const Epoch& y = back.sessions[i].epochs[m][s];
        CHECK(x.samples == y.samples);
        CHECK(x.labels == y.labels);
        CHECK(x.segment_index == y.segment_index);
        CHECK(x.modality_id == y.modality_id);
      }
  }
  CHECK_THROWS(load_corpus(dir.path() / "missing"));
}

TEST_CASE("generator config validation and json round trip") {
  GeneratorConfig g = GeneratorConfig::desk();
  CHECK_NOTHROW(g.validate());
  CHECK(GeneratorConfig::from_json(g.to_json()).to_json() == g.to_json());
  auto expect_invalid = [](auto mutate) {
    GeneratorConfig c = GeneratorConfig::desk();
    mutate(c);
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
  };
  expect_invalid([](GeneratorConfig& c) { c.n_sessions = 0; });
  expect_invalid([](GeneratorConfig& c) { c.session_len_mean = 3.0; });
  expect_invalid([](GeneratorConfig& c) { c.event_base_rate = 1.5; });
  expect_invalid([](GeneratorConfig& c) { c.event_channels = {"absent"}; });
  expect_invalid([](GeneratorConfig& c) { c.modalities.resize(1); });
  expect_invalid([](GeneratorConfig& c) { c.modalities[1].name = c.modalities[0].name; });
  expect_invalid([](GeneratorConfig& c) { c.stage_transition[0][0] = 0.5; });
  nlohmann::json j = g.to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(GeneratorConfig::from_json(j), InvalidConfig);
}

TEST_CASE("noise policy follows the modality registry") {
  const Corpus c = generate_corpus(tiny_generator(10));
  const NoisePolicy p = noise_policy_for(c);
  CHECK(p.sigma_for(c.modality_index("eeg-like")) == 0.05);
  CHECK(p.sigma_for(c.modality_index("resp-like")) == 0.0);
}
