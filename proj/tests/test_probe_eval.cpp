#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "btc/pipeline.hpp"
#include "support.hpp"

using namespace btc;
using btc::testing::random_matrix;
using btc::testing::tiny_cross;
using btc::testing::tiny_encoder;
using btc::testing::tiny_generator;

namespace {

double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

double confusion_f1(const std::vector<int>& pred, const std::vector<int>& y, int positive = 1) {
  std::map<std::pair<int, int>, int> cm;
  for (std::size_t i = 0; i < y.size(); ++i) ++cm[{y[i] == positive, pred[i] == positive}];
  const double tp = cm[{true, true}], fp = cm[{false, true}], fn = cm[{true, false}];
  if (tp == 0.0) return 0.0;
  const double precision = tp / (tp + fp), recall = tp / (tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

// Random labels with both classes present and scores on a coarse grid, so ties occur.
void random_binary(Rng& rng, int n, std::vector<double>& s, std::vector<int>& y) {
  std::uniform_int_distribution<int> grid(0, 9), bit(0, 1);
  s.assign(static_cast<std::size_t>(n), 0.0);
  y.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    s[static_cast<std::size_t>(i)] = grid(rng) / 10.0;
    y[static_cast<std::size_t>(i)] = bit(rng);
  }
  y[0] = 0;
  y[1] = 1;
}

Matrix<double> random_probs(Rng& rng, int n, int k) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix<double> p(n, k);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) p(i, c) = u(rng);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

std::unique_ptr<CrossModalModel<float>> tiny_model(std::uint64_t seed, int embed_dim = 16) {
  EncoderConfig cfg = tiny_encoder();
  cfg.embed_dim = embed_dim;
  return std::make_unique<CrossModalModel<float>>(cfg, tiny_cross(), 4, seed);
}

}  // namespace

TEST_CASE("auroc examples") {
  CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(auroc({0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1}) == 0.5);
  CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), UndefinedMetric);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {0, 0}), UndefinedMetric);
  CHECK_THROWS_AS(auroc({0.1}, {0, 1}), InvalidInput);
}

TEST_CASE("auroc equals exhaustive pairwise comparison") {
  Rng rng = make_rng(1);
  for (int n = 2; n <= 200; ++n) {
    std::vector<double> s;
    std::vector<int> y;
    random_binary(rng, n, s, y);
    CHECK(auroc(s, y) == doctest::Approx(pairwise_auroc(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("auroc is invariant under strictly monotone maps") {
  Rng rng = make_rng(2);
  std::uniform_real_distribution<double> coef(0.1, 3.0);
  std::vector<double> s;
  std::vector<int> y;
  random_binary(rng, 150, s, y);
  const double base = auroc(s, y);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = coef(rng), b = coef(rng), c = coef(rng) - 1.5;
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      t[i] = a * std::exp(b * s[i]) + std::atan(s[i]) + c;
    CHECK(auroc(t, y) == base);
  }
}

TEST_CASE("f1 examples and confusion oracle") {
  CHECK(f1({1, 0, 1}, {1, 0, 1}).value == 1.0);
  const F1Result none = f1({0, 0, 0}, {1, 0, 1});
  CHECK(none.value == 0.0);
  CHECK(none.degenerate);
  CHECK(f1({1, 1, 0}, {1, 0, 1}).value == doctest::Approx(0.5));
  Rng rng = make_rng(3);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + trial % 40;
    std::vector<int> p(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] = bit(rng);
      y[static_cast<std::size_t>(i)] = bit(rng);
    }
    CHECK(f1(p, y).value == doctest::Approx(confusion_f1(p, y)).epsilon(1e-12));
  }
}

TEST_CASE("weighted multiclass metrics") {
  Matrix<double> onehot = Matrix<double>::Zero(6, 3);
  const std::vector<int> y{0, 1, 2, 2, 1, 0};
  for (int i = 0; i < 6; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
  const MulticlassMetrics perfect = weighted_multiclass_metrics(onehot, y);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.weighted_auroc == 1.0);
  CHECK(perfect.weighted_f1 == 1.0);

  const Matrix<double> uniform = Matrix<double>::Constant(10, 5, 0.2);
  const std::vector<int> y5{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  CHECK(weighted_multiclass_metrics(uniform, y5).weighted_auroc == 0.5);

  Rng rng = make_rng(4);
  const MulticlassMetrics missing = weighted_multiclass_metrics(random_probs(rng, 4, 3), {0, 0, 1, 1});
  CHECK(missing.excluded_classes == std::vector<int>{2});
  Matrix<double> bad = Matrix<double>::Constant(2, 2, 0.6);
  CHECK_THROWS_AS(weighted_multiclass_metrics(bad, {0, 1}), InvalidInput);
}

TEST_CASE("weighted multiclass metrics match a binarize-and-recompute oracle") {
  Rng rng = make_rng(5);
  std::uniform_int_distribution<int> cls(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 6 + trial % 30;
    const Matrix<double> p = random_probs(rng, n, 3);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i < 3 ? i : cls(rng);
    std::vector<int> pred(static_cast<std::size_t>(n));
    double correct = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::Index arg;
      p.row(i).maxCoeff(&arg);
      pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
      correct += arg == y[static_cast<std::size_t>(i)];
    }
    double auc = 0, f = 0, w = 0;
    for (int c = 0; c < 3; ++c) {
      std::vector<int> bin(static_cast<std::size_t>(n));
      std::vector<double> sc(static_cast<std::size_t>(n));
      double support = 0;
      for (int i = 0; i < n; ++i) {
        bin[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] == c;
        sc[static_cast<std::size_t>(i)] = p(i, c);
        support += bin[static_cast<std::size_t>(i)];
      }
      auc += support * pairwise_auroc(sc, bin);
      f += support * confusion_f1(pred, y, c);
      w += support;
    }
    const MulticlassMetrics m = weighted_multiclass_metrics(p, y);
    CHECK(m.accuracy == doctest::Approx(correct / n).epsilon(1e-12));
    CHECK(m.weighted_auroc == doctest::Approx(auc / w).epsilon(1e-12));
    CHECK(m.weighted_f1 == doctest::Approx(f / w).epsilon(1e-12));
  }
}

TEST_CASE("class weights") {
  const auto w = class_weights({0, 1, 0, 1}, 2);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 1.0);
  std::vector<int> ten(100, 0);
  std::fill(ten.begin(), ten.begin() + 10, 1);
  const auto w10 = class_weights(ten, 2);
  CHECK(w10[0] == doctest::Approx(0.5556).epsilon(1e-4));
  CHECK(w10[1] == doctest::Approx(5.0));
  std::vector<int> rare(10000, 0);
  std::fill(rare.begin(), rare.begin() + 83, 1);
  CHECK(class_weights(rare, 2)[1] == doctest::Approx(60.2).epsilon(1e-3));
  CHECK_THROWS_AS(class_weights({0, 0, 0}, 2), InvalidInput);
}

TEST_CASE("linear probe fits a separable toy set and rejects split leakage") {
  Rng rng = make_rng(6);
  const int n = 200;
  Matrix<double> x = random_matrix(n, 3, rng).cast<double>();
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2;
    x(i, 0) += y[static_cast<std::size_t>(i)] ? 4.0 : -4.0;
  }
  std::vector<int> train(160), val(40);
  std::iota(train.begin(), train.end(), 0);
  std::iota(val.begin(), val.end(), 160);
  ProbeHyper h;
  h.batch_size = 32;
  h.total_steps = 200;
  h.eval_every = 20;
  h.lr = 4e-2;
  const ProbeFit fit = train_probe(x, y, 2, train, val, h, 1);
  const Matrix<double> p = fit.probe.probabilities(x.topRows(160));
  const std::vector<int> ytrain(y.begin(), y.begin() + 160);
  CHECK(binary_metrics(p, ytrain).accuracy == 1.0);
  CHECK(fit.trace.step_loss.size() == 200);
  CHECK(fit.trace.val_score.size() == 10);

  const ProbeFit other = train_probe(x, y, 2, train, val, h, 2);
  CHECK(other.trace.step_loss != fit.trace.step_loss);

  h.class_weights = std::vector<double>{1.0, 121.0};
  CHECK_NOTHROW(train_probe(x, y, 2, train, val, h, 1));
  std::vector<int> leaky = val;
  leaky.push_back(0);
  CHECK_THROWS_AS(train_probe(x, y, 2, train, leaky, h, 1), InvalidInput);
}

TEST_CASE("aggregate_seeds mean and population SD") {
  ProbeRun a{"event", "x+y", "BTCNet", 1, 0.9, 0.80, 0.5};
  ProbeRun b = a;
  b.seed = 2;
  b.auroc = 0.82;
  const ProbeReport r = aggregate_seeds({a, b});
  CHECK(r.auroc.mean == doctest::Approx(0.81));
  CHECK(r.auroc.sd == doctest::Approx(0.01));
  CHECK(r.accuracy.sd == 0.0);
  CHECK(aggregate_seeds({a, a, a}).auroc.sd == 0.0);
  CHECK_THROWS_AS(aggregate_seeds({a}), InvalidInput);
  ProbeRun c = a;
  c.pair = "x+z";
  CHECK_THROWS_AS(aggregate_seeds({a, c}), InvalidInput);

  const nlohmann::json j = report_json(r);
  CHECK(j["auroc"]["mean"] == 81.0);
  CHECK(j["auroc"]["sd"] == 1.0);
  CHECK(j["seeds"] == nlohmann::json::array({1, 2}));
  const std::string csv = reports_csv({r});
  CHECK(csv.find("task,pair,model,seeds,accuracy_mean") == 0);
  CHECK(csv.find("event,x+y,BTCNet,1;2,90.00,0.00,81.00,1.00,50.00,0.00") != std::string::npos);
}

TEST_CASE("extract_embedding length, determinism and parameter immutability") {
  auto m = tiny_model(7);
  const Corpus c = generate_corpus(tiny_generator(7));
  const SessionStats stats = compute_session_stats(c.session_lengths(Split::kTrain));
  const EpochRef ref{0, 5};
  const std::uint64_t before = testing::hash_params(m->store());
  const FrozenEmbedding e = extract_embedding(m.get(), c.at(1, ref), c.at(2, ref), stats);
  CHECK(e.vector.size() == 32);
  CHECK(e.pair == std::pair<int, int>{1, 2});
  CHECK(e.labels.count("event") == 1);
  CHECK(extract_embedding(m.get(), c.at(1, ref), c.at(2, ref), stats).vector == e.vector);
  CHECK(testing::hash_params(m->store()) == before);
  CHECK_THROWS_AS(extract_embedding(nullptr, c.at(1, ref), c.at(2, ref), stats), MissingDependency);
  CHECK_THROWS_AS(extract_embedding(m.get(), c.at(1, ref), c.at(2, {0, 6}), stats), AlignmentError);

  const std::vector<EpochRef> refs{{0, 5}, {1, 0}, {2, 3}};
  const Matrix<float> batch = extract_embeddings(*m, c, refs, {1, 2}, stats, 2);
  CHECK(testing::hash_params(m->store()) == before);
  for (Eigen::Index j = 0; j < 32; ++j) CHECK(batch(0, j) == doctest::Approx(e.vector[static_cast<std::size_t>(j)]).epsilon(1e-5));
}

TEST_CASE("extract_embedding at the paper embedding width is 1024 long") {
  auto m = tiny_model(8, 512);
  Rng rng = make_rng(8);
  Epoch a, b;
  a.modality_id = 0;
  b.modality_id = 3;
  a.session_id = b.session_id = "s";
  a.samples = testing::random_samples(64, rng);
  b.samples = testing::random_samples(64, rng);
  CHECK(extract_embedding(m.get(), a, b, {10.0, 3.0}).vector.size() == 1024);
}

TEST_CASE("screen_pairs ranks the only informative pair first") {
  GeneratorConfig g = tiny_generator(9);
  g.n_sessions = 40;
  g.session_len_mean = 60.0;
  const Corpus c = generate_corpus(g);
  const std::vector<int> all_labels = task_labels(c, c.refs(Split::kTrain), "event");
  // Embedding that carries the label only for pair (1, 2).
  const PairEmbedder embed = [&](std::pair<int, int> pr, const std::vector<EpochRef>& refs) {
    Matrix<float> x(static_cast<Eigen::Index>(refs.size()), 4);
    const std::vector<int> y = task_labels(c, refs, "event");
    for (std::size_t i = 0; i < refs.size(); ++i) {
      Rng r = make_rng(child_seed(static_cast<std::uint64_t>(refs[i].session * 100000 + refs[i].segment),
                                  static_cast<std::uint64_t>(pr.first * 8 + pr.second)));
      std::normal_distribution<double> nd(0.0, 1.0);
      for (Eigen::Index j = 0; j < 4; ++j) x(static_cast<Eigen::Index>(i), j) = static_cast<float>(nd(r));
      if (pr == std::pair<int, int>{1, 2}) x(static_cast<Eigen::Index>(i), 0) += 3.0f * static_cast<float>(y[i]);
    }
    return x;
  };
  ScreenHyper h;
  h.subsample = 1000;
  const auto ranked = screen_pairs(embed, c, "event", 2, h, 3);
  REQUIRE(ranked.size() == 6);
  CHECK(ranked.front().pair == std::pair<int, int>{1, 2});
  CHECK_FALSE(ranked.front().undefined);
  CHECK(ranked.front().auroc > 0.9);

  auto reversed = all_pairs(4);
  std::reverse(reversed.begin(), reversed.end());
  for (auto& p : reversed) std::swap(p.first, p.second);
  const auto again = screen_pairs(embed, c, "event", 2, h, 3, reversed);
  REQUIRE(again.size() == ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    CHECK(again[i].pair == ranked[i].pair);
    CHECK(again[i].score == ranked[i].score);
  }
  CHECK(all_labels.size() > 1000);
  h.subsample = 0;
  CHECK_THROWS_AS(screen_pairs(embed, c, "event", 2, h, 3), InvalidInput);
}

TEST_CASE("paper-scale probe and screening settings") {
  const RunConfig rc = RunConfig::paper_scale();
  const ProbeHyper h = rc.probe_hyper();
  CHECK(h.lr == 4e-3);
  CHECK(h.batch_size == 128);
  CHECK(h.weight_decay == 1e-5);
  CHECK(rc.screen.subsample == 128000);
}
