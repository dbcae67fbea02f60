#include "btc/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace btc {

namespace {

Matrix<float> stack_stream(const Corpus& corpus, int modality, const std::vector<EpochRef>& refs,
                           std::size_t begin, std::size_t end, int patch_size) {
  std::vector<const std::vector<float>*> w;
  for (std::size_t i = begin; i < end; ++i) w.push_back(&corpus.at(modality, refs[i]).samples);
  return stack_patches<float>(w, patch_size);
}

}  // namespace

FrozenEmbedding extract_embedding(const CrossModalModel<float>* model, const Epoch& first, const Epoch& second,
                                  const SessionStats& stats) {
  if (model == nullptr) throw MissingDependency("extract_embedding: no trained cross-modal checkpoint loaded");
  if (first.session_id != second.session_id || first.segment_index != second.segment_index)
    throw AlignmentError("extract_embedding: windows come from different (session, segment) positions");
  const EncoderConfig& ec = model->encoder_config();
  const int p = ec.patch_count();
  BimodalBatch<float> in;
  in.pair = {first.modality_id, second.modality_id};
  in.patches[0] = stack_patches<float>({&first.samples}, ec.patch_size);
  in.patches[1] = stack_patches<float>({&second.samples}, ec.patch_size);
  in.t_hat = {normalize_session_index(first.segment_index, stats)};
  ag::Tape<float> t(false);
  const std::array<std::vector<MaskPlan>, 2> plans = {std::vector<MaskPlan>{full_visibility(p)},
                                                      std::vector<MaskPlan>{full_visibility(p)}};
  CrossForward<float> f = model->forward(t, in, plans, RunMode{}, false);
  FrozenEmbedding out;
  const Matrix<float>& cls = t.value(f.cls);
  out.vector.assign(cls.data(), cls.data() + cls.size());
  out.pair = {first.modality_id, second.modality_id};
  out.labels = first.labels;
  return out;
}

Matrix<float> extract_embeddings(const CrossModalModel<float>& model, const Corpus& corpus,
                                 const std::vector<EpochRef>& refs, std::pair<int, int> pair,
                                 const SessionStats& stats, int batch_size) {
  const EncoderConfig& ec = model.encoder_config();
  const int p = ec.patch_count();
  Matrix<float> out(static_cast<Eigen::Index>(refs.size()), 2 * ec.embed_dim);
  for (std::size_t begin = 0; begin < refs.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(refs.size(), begin + static_cast<std::size_t>(batch_size));
    const int n = static_cast<int>(end - begin);
    BimodalBatch<float> in;
    in.pair = {pair.first, pair.second};
    in.patches[0] = stack_stream(corpus, pair.first, refs, begin, end, ec.patch_size);
    in.patches[1] = stack_stream(corpus, pair.second, refs, begin, end, ec.patch_size);
    for (std::size_t i = begin; i < end; ++i) in.t_hat.push_back(normalize_session_index(refs[i].segment, stats));
    std::vector<MaskPlan> full(static_cast<std::size_t>(n), full_visibility(p));
    ag::Tape<float> t(false);
    CrossForward<float> f = model.forward(t, in, {full, full}, RunMode{}, false);
    out.middleRows(static_cast<Eigen::Index>(begin), n) = t.value(f.cls);
  }
  return out;
}

Matrix<float> unimodal_embeddings(const UnimodalEncoder<float>& first, const UnimodalEncoder<float>& second,
                                  const Corpus& corpus, const std::vector<EpochRef>& refs,
                                  std::pair<int, int> pair, int patch_size, int batch_size) {
  Matrix<float> out;
  const UnimodalEncoder<float>* enc[2] = {&first, &second};
  const int ids[2] = {pair.first, pair.second};
  for (std::size_t begin = 0; begin < refs.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(refs.size(), begin + static_cast<std::size_t>(batch_size));
    const int n = static_cast<int>(end - begin);
    for (int s = 0; s < 2; ++s) {
      Matrix<float> patches = stack_stream(corpus, ids[s], refs, begin, end, patch_size);
      const int p = static_cast<int>(patches.rows()) / n;
      std::vector<MaskPlan> full(static_cast<std::size_t>(n), full_visibility(p));
      ag::Tape<float> t(false);
      const Matrix<float>& lat = t.value(enc[s]->encode(t, patches, full, RunMode{}));
      if (out.size() == 0) out.resize(static_cast<Eigen::Index>(refs.size()), 2 * lat.cols());
      for (int b = 0; b < n; ++b)
        out.row(static_cast<Eigen::Index>(begin) + b).segment(s * lat.cols(), lat.cols()) = lat.row(b * (p + 1));
    }
  }
  return out;
}

std::vector<int> task_labels(const Corpus& corpus, const std::vector<EpochRef>& refs, const std::string& task) {
  std::vector<int> out;
  out.reserve(refs.size());
  for (const EpochRef& r : refs) {
    const auto& labels = corpus.at(0, r).labels;
    auto it = labels.find(task);
    if (it == labels.end()) throw LookupError("unknown task label: " + task);
    out.push_back(it->second);
  }
  return out;
}

std::vector<double> class_weights(const std::vector<int>& labels, int classes) {
  if (classes < 1) throw InvalidInput("class_weights: need at least one class");
  std::vector<double> count(static_cast<std::size_t>(classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= classes) throw InvalidInput("class_weights: label out of range");
    count[static_cast<std::size_t>(y)] += 1.0;
  }
  std::vector<double> w(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0.0)
      throw InvalidInput("class_weights: class " + std::to_string(c) + " is absent");
    w[static_cast<std::size_t>(c)] =
        static_cast<double>(labels.size()) / (classes * count[static_cast<std::size_t>(c)]);
  }
  return w;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw InvalidInput("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks (1-based) over tie groups.
  double pos_rank_sum = 0.0, n_pos = 0.0, n_neg = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      const int y = labels[order[k]];
      if (y != 0 && y != 1) throw InvalidInput("auroc: labels must be 0/1");
      if (y == 1) {
        pos_rank_sum += rank;
        n_pos += 1.0;
      } else {
        n_neg += 1.0;
      }
    }
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0) throw UndefinedMetric("auroc: both classes must be present");
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

F1Result f1(const std::vector<int>& pred, const std::vector<int>& labels) {
  if (pred.size() != labels.size()) throw InvalidInput("f1: predictions and labels differ in length");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && labels[i] == 1) ++tp;
    else if (pred[i] == 1) ++fp;
    else if (labels[i] == 1) ++fn;
  }
  if (tp == 0) return {0.0, true};
  return {2.0 * tp / (2.0 * tp + fp + fn), false};
}

MulticlassMetrics weighted_multiclass_metrics(const Matrix<double>& probs, const std::vector<int>& labels) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size()) || probs.rows() == 0)
    throw InvalidInput("weighted_multiclass_metrics: probs rows must match a nonempty label list");
  const int k = static_cast<int>(probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    if (std::abs(probs.row(r).sum() - 1.0) > 1e-6)
      throw InvalidInput("weighted_multiclass_metrics: probability rows must sum to 1");
  std::vector<int> pred(labels.size());
  std::vector<double> support(static_cast<std::size_t>(k), 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw InvalidInput("weighted_multiclass_metrics: label out of range");
    Eigen::Index arg;
    probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    pred[i] = static_cast<int>(arg);
    correct += pred[i] == labels[i] ? 1.0 : 0.0;
    support[static_cast<std::size_t>(labels[i])] += 1.0;
  }
  MulticlassMetrics m;
  m.accuracy = correct / static_cast<double>(labels.size());
  double auc_sum = 0.0, auc_w = 0.0, f1_sum = 0.0, f1_w = 0.0;
  for (int c = 0; c < k; ++c) {
    const double s = support[static_cast<std::size_t>(c)];
    if (s == 0.0) {
      m.excluded_classes.push_back(c);
      continue;
    }
    std::vector<int> bin(labels.size()), bpred(labels.size());
    std::vector<double> sc(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      bin[i] = labels[i] == c ? 1 : 0;
      bpred[i] = pred[i] == c ? 1 : 0;
      sc[i] = probs(static_cast<Eigen::Index>(i), c);
    }
    f1_sum += s * f1(bpred, bin).value;
    f1_w += s;
    if (s < static_cast<double>(labels.size())) {
      auc_sum += s * auroc(sc, bin);
      auc_w += s;
    }
  }
  m.weighted_f1 = f1_w > 0 ? f1_sum / f1_w : 0.0;
  if (auc_w == 0.0) throw UndefinedMetric("weighted_multiclass_metrics: a single class is present");
  m.weighted_auroc = auc_sum / auc_w;
  return m;
}

Matrix<double> LinearProbe::probabilities(const Matrix<double>& x) const {
  Matrix<double> z = x * weight;
  z.rowwise() += bias;
  ag::Tape<double>::softmax_rows_inplace(z);
  return z;
}

BinaryMetrics binary_metrics(const Matrix<double>& probs, const std::vector<int>& labels) {
  if (probs.cols() != 2 || probs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw InvalidInput("binary_metrics: expected N x 2 probabilities");
  BinaryMetrics m;
  std::vector<int> pred(labels.size());
  std::vector<double> p1(labels.size());
  double correct = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    p1[i] = probs(static_cast<Eigen::Index>(i), 1);
    pred[i] = p1[i] >= 0.5 ? 1 : 0;
    correct += pred[i] == labels[i] ? 1.0 : 0.0;
  }
  m.accuracy = labels.empty() ? 0.0 : correct / static_cast<double>(labels.size());
  m.f1 = f1(pred, labels).value;
  try {
    m.auroc = auroc(p1, labels);
  } catch (const UndefinedMetric&) {
    m.auroc = std::numeric_limits<double>::quiet_NaN();
    m.auroc_defined = false;
  }
  return m;
}

ProbeFit train_probe(const Matrix<double>& x, const std::vector<int>& labels, int classes,
                     const std::vector<int>& train_idx, const std::vector<int>& val_idx, const ProbeHyper& hyper,
                     std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidInput("train_probe: features and labels differ");
  if (classes < 2) throw InvalidInput("train_probe: need at least two classes");
  if (train_idx.empty()) throw InvalidInput("train_probe: empty training split");
  if (hyper.batch_size < 1 || hyper.total_steps < 1 || hyper.eval_every < 1)
    throw InvalidInput("train_probe: batch size, steps and eval interval must be positive");
  std::vector<char> role(static_cast<std::size_t>(n), 0);
  for (int i : train_idx) {
    if (i < 0 || i >= n) throw InvalidInput("train_probe: index out of range");
    role[static_cast<std::size_t>(i)] = 1;
  }
  for (int i : val_idx) {
    if (i < 0 || i >= n) throw InvalidInput("train_probe: index out of range");
    if (role[static_cast<std::size_t>(i)] == 1) throw InvalidInput("train_probe: train and validation splits overlap");
  }

  std::vector<int> ytrain;
  for (int i : train_idx) ytrain.push_back(labels[static_cast<std::size_t>(i)]);
  const std::vector<double> w = hyper.class_weights ? *hyper.class_weights : class_weights(ytrain, classes);
  if (static_cast<int>(w.size()) != classes) throw InvalidInput("train_probe: class weight count differs from K");

  Rng rng = make_rng(seed);
  const Eigen::Index f = x.cols();
  const double bound = 1.0 / std::sqrt(static_cast<double>(f));
  std::uniform_real_distribution<double> init(-bound, bound);
  LinearProbe probe;
  probe.weight.resize(f, classes);
  probe.bias.resize(classes);
  for (Eigen::Index i = 0; i < probe.weight.size(); ++i) probe.weight.data()[i] = init(rng);
  for (Eigen::Index i = 0; i < probe.bias.size(); ++i) probe.bias(i) = init(rng);

  Matrix<double> xv(static_cast<Eigen::Index>(val_idx.size()), f);
  std::vector<int> yv;
  for (std::size_t i = 0; i < val_idx.size(); ++i) {
    xv.row(static_cast<Eigen::Index>(i)) = x.row(val_idx[i]);
    yv.push_back(labels[static_cast<std::size_t>(val_idx[i])]);
  }
  auto val_score = [&]() {
    Matrix<double> p = probe.probabilities(xv);
    if (classes == 2) return binary_metrics(p, yv).f1;
    try {
      return weighted_multiclass_metrics(p, yv).weighted_f1;
    } catch (const UndefinedMetric&) {
      return 0.0;
    }
  };

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Matrix<double> mw = Matrix<double>::Zero(f, classes), vw = mw;
  RowVec<double> mb = RowVec<double>::Zero(classes), vb = mb;
  std::vector<int> order = train_idx;
  std::size_t cursor = order.size();
  ProbeFit fit;
  double best = -std::numeric_limits<double>::infinity();
  LinearProbe best_probe = probe;
  for (long step = 1; step <= hyper.total_steps; ++step) {
    const int bs = std::min<int>(hyper.batch_size, static_cast<int>(order.size()));
    Matrix<double> xb(bs, f);
    std::vector<int> yb(static_cast<std::size_t>(bs));
    for (int i = 0; i < bs; ++i) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const int idx = order[cursor++];
      xb.row(i) = x.row(idx);
      yb[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx)];
    }
    Matrix<double> p = probe.probabilities(xb);
    double wsum = 0.0, loss = 0.0;
    for (int i = 0; i < bs; ++i) wsum += w[static_cast<std::size_t>(yb[static_cast<std::size_t>(i)])];
    Matrix<double> dz = p;
    for (int i = 0; i < bs; ++i) {
      const int y = yb[static_cast<std::size_t>(i)];
      const double wi = w[static_cast<std::size_t>(y)] / wsum;
      loss -= wi * std::log(std::max(p(i, y), 1e-300));
      dz(i, y) -= 1.0;
      dz.row(i) *= wi;
    }
    Matrix<double> gw = xb.transpose() * dz + probe.weight * hyper.weight_decay;
    RowVec<double> gb = dz.colwise().sum() + probe.bias * hyper.weight_decay;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    mw = mw * b1 + gw * (1 - b1);
    vw = vw * b2 + gw.cwiseProduct(gw) * (1 - b2);
    mb = mb * b1 + gb * (1 - b1);
    vb = vb * b2 + gb.cwiseProduct(gb) * (1 - b2);
    probe.weight.array() -= hyper.lr / bc1 * mw.array() / ((vw.array() / bc2).sqrt() + eps);
    probe.bias.array() -= hyper.lr / bc1 * mb.array() / ((vb.array() / bc2).sqrt() + eps);
    fit.trace.step_loss.push_back(loss);

    if (step % hyper.eval_every == 0 || step == hyper.total_steps) {
      const double s = val_idx.empty() ? 0.0 : val_score();
      fit.trace.val_score.push_back(s);
      if (val_idx.empty() || s > best) {
        best = s;
        best_probe = probe;
        fit.trace.best_step = step;
      }
    }
  }
  fit.probe = best_probe;
  return fit;
}

ProbeReport aggregate_seeds(const std::vector<ProbeRun>& runs) {
  if (runs.size() < 2) throw InvalidInput("aggregate_seeds: at least two seeds required");
  ProbeReport r;
  r.task = runs[0].task;
  r.pair = runs[0].pair;
  r.model = runs[0].model;
  for (const ProbeRun& run : runs)
    if (run.task != r.task || run.pair != r.pair || run.model != r.model)
      throw InvalidInput("aggregate_seeds: runs disagree on task, pair or model");
  r.runs = runs;
  auto summarize = [&](auto get) {
    // Welford updates keep the SD exactly zero for identical values.
    double mean = 0.0, m2 = 0.0, n = 0.0;
    for (const ProbeRun& run : runs) {
      const double x = get(run);
      n += 1.0;
      const double d = x - mean;
      mean += d / n;
      m2 += d * (x - mean);
    }
    return MetricSummary{mean, std::sqrt(m2 / n)};
  };
  r.accuracy = summarize([](const ProbeRun& x) { return x.accuracy; });
  r.auroc = summarize([](const ProbeRun& x) { return x.auroc; });
  r.f1 = summarize([](const ProbeRun& x) { return x.f1; });
  return r;
}

namespace {

double pct(double v) { return std::round(v * 10000.0) / 100.0; }

std::string pct_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", pct(v));
  return buf;
}

}  // namespace

nlohmann::json report_json(const ProbeReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  std::vector<std::uint64_t> seeds;
  for (const ProbeRun& run : r.runs) {
    seeds.push_back(run.seed);
    runs.push_back({{"seed", run.seed},
                    {"accuracy", pct(run.accuracy)},
                    {"auroc", pct(run.auroc)},
                    {"f1", pct(run.f1)}});
  }
  auto summary = [](const MetricSummary& m) { return nlohmann::json{{"mean", pct(m.mean)}, {"sd", pct(m.sd)}}; };
  nlohmann::json j = {{"task", r.task},
                      {"pair", r.pair},
                      {"model", r.model},
                      {"seeds", seeds},
                      {"runs", runs},
                      {"accuracy", summary(r.accuracy)},
                      {"auroc", summary(r.auroc)},
                      {"f1", summary(r.f1)}};
  if (!r.provenance.is_null()) j["provenance"] = r.provenance;
  return j;
}

std::string reports_csv(const std::vector<ProbeReport>& reports) {
  std::ostringstream out;
  out << "task,pair,model,seeds,accuracy_mean,accuracy_sd,auroc_mean,auroc_sd,f1_mean,f1_sd\n";
  for (const ProbeReport& r : reports) {
    std::string seeds;
    for (const ProbeRun& run : r.runs) seeds += (seeds.empty() ? "" : ";") + std::to_string(run.seed);
    out << r.task << ',' << r.pair << ',' << r.model << ',' << seeds << ',' << pct_str(r.accuracy.mean) << ','
        << pct_str(r.accuracy.sd) << ',' << pct_str(r.auroc.mean) << ',' << pct_str(r.auroc.sd) << ','
        << pct_str(r.f1.mean) << ',' << pct_str(r.f1.sd) << '\n';
  }
  return out.str();
}

std::vector<std::pair<int, int>> all_pairs(int modality_count) {
  std::vector<std::pair<int, int>> out;
  for (int j = 0; j < modality_count; ++j)
    for (int k = j + 1; k < modality_count; ++k) out.emplace_back(j, k);
  return out;
}

std::vector<PairScore> screen_pairs(const PairEmbedder& embed, const Corpus& corpus, const std::string& task,
                                    int classes, const ScreenHyper& hyper, std::uint64_t seed,
                                    std::vector<std::pair<int, int>> pairs) {
  if (pairs.empty()) pairs = all_pairs(corpus.modality_count());
  for (auto& pr : pairs) {
    if (pr.first == pr.second) throw InvalidInput("screen_pairs: pair needs two distinct modalities");
    if (pr.first > pr.second) std::swap(pr.first, pr.second);
  }
  std::vector<EpochRef> train = corpus.refs(Split::kTrain);
  const std::vector<EpochRef> val = corpus.refs(Split::kVal);
  if (hyper.subsample < 1 || static_cast<std::size_t>(hyper.subsample) > train.size())
    throw InvalidInput("screen_pairs: subsample must lie in [1, training windows]");
  if (val.empty()) throw InvalidInput("screen_pairs: empty validation split");
  Rng rng = make_rng(child_seed(seed, 0));
  std::shuffle(train.begin(), train.end(), rng);
  train.resize(static_cast<std::size_t>(hyper.subsample));

  std::vector<EpochRef> refs = train;
  refs.insert(refs.end(), val.begin(), val.end());
  const std::vector<int> labels = task_labels(corpus, refs, task);
  std::vector<int> train_idx(train.size()), val_idx(val.size());
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(val_idx.begin(), val_idx.end(), static_cast<int>(train.size()));
  const std::vector<int> yv(labels.begin() + static_cast<std::ptrdiff_t>(train.size()), labels.end());

  ProbeHyper ph;
  ph.batch_size = hyper.batch_size;
  ph.total_steps = hyper.steps;
  ph.eval_every = hyper.steps;
  ph.lr = hyper.lr;
  ph.weight_decay = hyper.l2;

  std::vector<PairScore> out;
  for (const auto& pr : pairs) {
    PairScore s;
    s.pair = pr;
    try {
      Matrix<double> x = embed(pr, refs).cast<double>();
      // Standardise with training-subsample statistics.
      const auto fit_rows = x.topRows(static_cast<Eigen::Index>(train.size()));
      const RowVec<double> mean = fit_rows.colwise().mean();
      const RowVec<double> sd = (fit_rows.rowwise() - mean).array().square().colwise().mean().sqrt().matrix();
      for (Eigen::Index c = 0; c < x.cols(); ++c) x.col(c) = (x.col(c).array() - mean(c)) / std::max(sd(c), 1e-8);
      // Only the training rows feed the fit; validation rows are scored afterwards. Every pair
      // shares one seed, so initialisation and batch order are common and only the features differ.
      ProbeFit fit = train_probe(x, labels, classes, train_idx, {}, ph, child_seed(seed, 1));
      const Matrix<double> p = fit.probe.probabilities(x.bottomRows(static_cast<Eigen::Index>(val.size())));
      if (classes == 2) {
        BinaryMetrics m = binary_metrics(p, yv);
        if (!m.auroc_defined) throw UndefinedMetric("screen_pairs: single-class validation labels");
        s.f1 = m.f1;
        s.auroc = m.auroc;
        s.score = m.f1;
      } else {
        MulticlassMetrics m = weighted_multiclass_metrics(p, yv);
        s.f1 = m.weighted_f1;
        s.auroc = m.weighted_auroc;
        s.score = m.weighted_auroc;
      }
    } catch (const UndefinedMetric&) {
      s.undefined = true;
    } catch (const InvalidInput&) {
      s.undefined = true;  // e.g. a class absent from the subsample
    }
    out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const PairScore& a, const PairScore& b) {
    if (a.undefined != b.undefined) return !a.undefined;
    if (a.score != b.score) return a.score > b.score;
    if (a.auroc != b.auroc) return a.auroc > b.auroc;
    return a.pair < b.pair;
  });
  return out;
}

}  // namespace btc
