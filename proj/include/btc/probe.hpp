#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "btc/crossmodal.hpp"

namespace btc {

struct FrozenEmbedding {
  std::vector<float> vector;  // CLS of pair.first, then CLS of pair.second
  std::pair<int, int> pair{0, 1};
  std::map<std::string, int> labels;
};

// Concatenated fused CLS tokens with every patch visible. Throws
// MissingDependency when no trained cross-modal model is supplied.
FrozenEmbedding extract_embedding(const CrossModalModel<float>* model, const Epoch& first, const Epoch& second,
                                  const SessionStats& stats);

// Batched extraction over corpus windows: one row per ref.
Matrix<float> extract_embeddings(const CrossModalModel<float>& model, const Corpus& corpus,
                                 const std::vector<EpochRef>& refs, std::pair<int, int> pair,
                                 const SessionStats& stats, int batch_size = 64);

// Unimodal (Stage-1) CLS embeddings of both streams, concatenated; no fusion.
Matrix<float> unimodal_embeddings(const UnimodalEncoder<float>& first, const UnimodalEncoder<float>& second,
                                  const Corpus& corpus, const std::vector<EpochRef>& refs,
                                  std::pair<int, int> pair, int patch_size, int batch_size = 64);

std::vector<int> task_labels(const Corpus& corpus, const std::vector<EpochRef>& refs, const std::string& task);

// w_c = N / (K * N_c); every class must be present.
std::vector<double> class_weights(const std::vector<int>& labels, int classes);

// ----- metrics -----

// Mann-Whitney statistic, ties counted one half.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct F1Result {
  double value = 0.0;
  bool degenerate = false;  // no true positives
};
F1Result f1(const std::vector<int>& pred, const std::vector<int>& labels);

struct MulticlassMetrics {
  double accuracy = 0.0;
  double weighted_auroc = 0.0;
  double weighted_f1 = 0.0;
  std::vector<int> excluded_classes;  // absent from labels, or no negatives
};
MulticlassMetrics weighted_multiclass_metrics(const Matrix<double>& probs, const std::vector<int>& labels);

struct BinaryMetrics {
  double accuracy = 0.0;
  double auroc = 0.0;
  double f1 = 0.0;
  bool auroc_defined = true;
};

// ----- linear probe -----

struct ProbeHyper {
  int batch_size = 128;
  long total_steps = 500;
  long eval_every = 50;  // validation check interval ("epoch" at desk scale)
  double lr = 4e-3;
  double weight_decay = 1e-5;
  std::optional<std::vector<double>> class_weights;  // overrides the default formula
};

struct LinearProbe {
  Matrix<double> weight;  // features x K
  RowVec<double> bias;
  int classes() const { return static_cast<int>(weight.cols()); }
  Matrix<double> probabilities(const Matrix<double>& x) const;
};

struct ProbeTrace {
  std::vector<double> step_loss;
  std::vector<double> val_score;  // F1 (binary) or weighted F1 per evaluation
  long best_step = 0;
};

struct ProbeFit {
  LinearProbe probe;
  ProbeTrace trace;
};

// Class-weighted cross-entropy, Adam, best-validation parameters retained.
// Index sets must be disjoint.
ProbeFit train_probe(const Matrix<double>& x, const std::vector<int>& labels, int classes,
                     const std::vector<int>& train_idx, const std::vector<int>& val_idx, const ProbeHyper& hyper,
                     std::uint64_t seed);

// Binary metrics from P(class 1), threshold 0.5; multiclass via argmax.
BinaryMetrics binary_metrics(const Matrix<double>& probs, const std::vector<int>& labels);

// ----- reports -----

struct ProbeRun {
  std::string task;
  std::string pair;
  std::string model;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double auroc = 0.0;
  double f1 = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;
};

struct ProbeReport {
  std::string task;
  std::string pair;
  std::string model;
  std::vector<ProbeRun> runs;
  MetricSummary accuracy, auroc, f1;
  nlohmann::json provenance;  // effective config, config hash, checkpoint ids
};

// Mean and population SD over >= 2 runs sharing task, pair and model.
ProbeReport aggregate_seeds(const std::vector<ProbeRun>& runs);

nlohmann::json report_json(const ProbeReport& r);
std::string reports_csv(const std::vector<ProbeReport>& reports);

// ----- modality screening -----

struct ScreenHyper {
  int subsample = 2000;
  long steps = 100;
  int batch_size = 128;
  double lr = 1e-2;
  double l2 = 1e-3;
};

// Multiclass tasks report weighted F1 / weighted one-vs-rest AUROC.
struct PairScore {
  std::pair<int, int> pair{0, 1};  // ascending ids
  double f1 = 0.0;
  double auroc = 0.0;
  double score = 0.0;  // ranking key: f1 (binary) or auroc (multiclass)
  bool undefined = false;
};

// Embedding rows for the given pair and refs.
using PairEmbedder = std::function<Matrix<float>(std::pair<int, int>, const std::vector<EpochRef>&)>;

// Fits a weighted logistic model per pair on a training subsample and scores
// it on the validation refs. Binary tasks rank by F1, multiclass by weighted
// AUROC; undefined pairs go last.
std::vector<PairScore> screen_pairs(const PairEmbedder& embed, const Corpus& corpus, const std::string& task,
                                    int classes, const ScreenHyper& hyper, std::uint64_t seed,
                                    std::vector<std::pair<int, int>> pairs = {});

std::vector<std::pair<int, int>> all_pairs(int modality_count);

}  // namespace btc
