#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "support.hpp"

using namespace btc;
using btc::testing::random_samples;

TEST_CASE("zscore_normalize maps [1, 3] to [-1, 1]") {
  const std::vector<float> in{1.0f, 3.0f};
  const Normalized n = zscore_normalize(in);
  CHECK_FALSE(n.degenerate);
  CHECK(n.values[0] == doctest::Approx(-1.0));
  CHECK(n.values[1] == doctest::Approx(1.0));
}

TEST_CASE("zscore_normalize flags constant input and returns zeros") {
  const std::vector<float> in{5.0f, 5.0f, 5.0f};
  const Normalized n = zscore_normalize(in);
  CHECK(n.degenerate);
  for (float v : n.values) CHECK(v == 0.0f);
}

TEST_CASE("zscore_normalize output moments recomputed independently") {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> in = random_samples(256, rng);
    for (float& x : in) x = 3.0f * x + 7.0f;
    const Normalized n = zscore_normalize(in);
    long double mean = 0.0L, sq = 0.0L;
    for (float v : n.values) mean += v;
    mean /= n.values.size();
    for (float v : n.values) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(static_cast<double>(sq / n.values.size()));
    CHECK(std::abs(static_cast<double>(mean)) < 1e-6);
    CHECK(std::abs(sd - 1.0) < 1e-6);
  }
}

TEST_CASE("zscore_normalize rejects empty input") {
  const std::vector<float> in;
  CHECK_THROWS_AS(zscore_normalize(in), InvalidInput);
}

TEST_CASE("patchify geometry") {
  const std::vector<float> paper(3840, 0.0f);
  CHECK(patchify(paper, 8).count() == 480);
  const std::vector<float> desk(256, 0.0f);
  CHECK(patchify(desk, 8).count() == 32);
  const std::vector<float> bad(10, 0.0f);
  CHECK_THROWS_AS(patchify(bad, 8), ShapeError);
}

TEST_CASE("patchify rows are consecutive sample runs and depatchify inverts exactly") {
  Rng rng = make_rng(3);
  for (int ps : {1, 2, 8, 16}) {
    const std::vector<float> x = random_samples(64, rng);
    const PatchSequence seq = patchify(x, ps);
    for (int p = 0; p < seq.count(); ++p)
      for (int j = 0; j < ps; ++j) CHECK(seq.patches(p, j) == x[static_cast<std::size_t>(p * ps + j)]);
    const std::vector<float> back = depatchify(seq);
    REQUIRE(back.size() == x.size());
    CHECK(std::memcmp(back.data(), x.data(), x.size() * sizeof(float)) == 0);
  }
  PatchSequence zeros;
  zeros.patches = Matrix<float>::Zero(32, 8);
  const std::vector<float> z = depatchify(zeros);
  CHECK(z.size() == 256);
  CHECK(std::all_of(z.begin(), z.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("masked_count rounds half up") {
  CHECK(masked_count(32, 0.5) == 16);
  CHECK(masked_count(5, 0.5) == 3);
  CHECK(masked_count(3, 0.5) == 2);
  CHECK(masked_count(10, 0.25) == 3);
}

TEST_CASE("sample_mask partition laws and determinism") {
  Rng rng = make_rng(5);
  const MaskPlan plan = sample_mask(32, 0.5, rng);
  CHECK(plan.masked.size() == 16);
  CHECK(plan.visible.size() == 16);
  validate_plan(plan, 32);

  Rng a = make_rng(9), b = make_rng(9);
  for (int i = 0; i < 10; ++i) {
    const MaskPlan pa = sample_mask(4, 0.5, a), pb = sample_mask(4, 0.5, b);
    CHECK(pa.masked == pb.masked);
    CHECK(pa.visible == pb.visible);
  }
}

TEST_CASE("sample_mask rejects degenerate ratios") {
  Rng rng = make_rng(1);
  CHECK_THROWS_AS(sample_mask(4, 0.0, rng), InvalidInput);
  CHECK_THROWS_AS(sample_mask(4, 1.0, rng), InvalidInput);
  CHECK_THROWS_AS(sample_mask(4, 0.05, rng), InvalidInput);
  CHECK_THROWS_AS(sample_mask(4, 0.95, rng), InvalidInput);
}

TEST_CASE("sample_mask per-index frequency within the binomial interval") {
  // 20000 draws at P=4, r=0.5: each index masked with probability 1/2, so the
  // count has sd sqrt(20000/4) ~ 70.7; +-300 is beyond 4 sd.
  Rng rng = make_rng(2024);
  std::vector<int> counts(4, 0);
  for (int d = 0; d < 20000; ++d)
    for (int i : sample_mask(4, 0.5, rng).masked) ++counts[static_cast<std::size_t>(i)];
  for (int c : counts) CHECK(std::abs(c - 10000) <= 300);
}

TEST_CASE("sample_mask reaches every k-subset for small P") {
  for (int p : {5, 8}) {
    Rng rng = make_rng(static_cast<std::uint64_t>(p));
    const int k = masked_count(p, 0.5);
    std::set<std::vector<int>> seen;
    for (int d = 0; d < 20000; ++d) seen.insert(sample_mask(p, 0.5, rng).masked);
    long expected = 1;
    for (int i = 0; i < k; ++i) expected = expected * (p - i) / (i + 1);
    CHECK(static_cast<long>(seen.size()) == expected);
  }
}

TEST_CASE("full_visibility and validate_plan") {
  const MaskPlan full = full_visibility(6);
  CHECK(full.masked.empty());
  CHECK(full.visible == std::vector<int>{0, 1, 2, 3, 4, 5});
  MaskPlan bad;
  bad.masked = {0, 1};
  bad.visible = {1, 2, 3};
  CHECK_THROWS(validate_plan(bad, 4));
  bad.visible = {2};
  CHECK_THROWS(validate_plan(bad, 4));
}

TEST_CASE("compute_session_stats uses the population std") {
  const std::vector<int> l{100, 140};
  const SessionStats s = compute_session_stats(l);
  CHECK(s.mean_len == doctest::Approx(120.0));
  CHECK(s.std_len == doctest::Approx(20.0));
  const std::vector<int> same{120, 120};
  CHECK_THROWS_AS(compute_session_stats(same), DegenerateStats);
  const std::vector<int> one{120};
  CHECK_THROWS_AS(compute_session_stats(one), InvalidInput);
}

TEST_CASE("compute_session_stats matches a second-pass recomputation on generated lengths") {
  GeneratorConfig g = GeneratorConfig::desk();
  g.n_sessions = 1000;
  g.epoch_len = 8;
  g.seed = 77;
  const Corpus c = generate_corpus(g);
  std::vector<int> lengths;
  for (const Session& s : c.sessions) lengths.push_back(s.length);
  REQUIRE(lengths.size() == 1000);
  const SessionStats st = compute_session_stats(lengths);
  // Independent oracle: Welford's online moments.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const double d = lengths[i] - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (lengths[i] - mean);
  }
  CHECK(st.mean_len == doctest::Approx(mean).epsilon(1e-12));
  CHECK(st.std_len == doctest::Approx(std::sqrt(m2 / lengths.size())).epsilon(1e-12));
}

TEST_CASE("normalize_session_index examples and affinity") {
  const SessionStats s{120.0, 30.0};
  CHECK(normalize_session_index(120, s) == 0.0);
  CHECK(normalize_session_index(150, s) == 1.0);
  CHECK(normalize_session_index(0, s) == -4.0);
  Rng rng = make_rng(4);
  std::uniform_int_distribution<int> pick(0, 1000);
  for (int i = 0; i < 100; ++i) {
    const int a = pick(rng), b = pick(rng);
    CHECK(normalize_session_index(a, s) - normalize_session_index(b, s) == doctest::Approx((a - b) / 30.0));
  }
}
