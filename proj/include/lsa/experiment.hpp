#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lsa/metrics.hpp"
#include "lsa/priors.hpp"
#include "lsa/seqmodel.hpp"
#include "lsa/smoothing.hpp"
#include "lsa/synthdata.hpp"

namespace lsa {

/// Inclusive grid start, start + step, ..., stop.
struct AlphaGrid {
  double start = 0.0;
  double stop = 1.0;
  double step = 0.05;

  /// Throws InvalidArgument unless step divides (stop - start) evenly.
  std::vector<double> values() const;
};

/// One row of a comparison: a smoothing prior and its factor.
struct MethodSpec {
  std::string name;
  PriorKind kind = PriorKind::onehot;
  double alpha = 0.0;
};

/// One-hot, TE 0.6, Uniform 0.1, VN 0.45, GL 0.6 and GL+VN 0.5.
std::vector<MethodSpec> default_methods();

struct ExperimentConfig {
  SmoothingConfig smoothing;
  ModelConfig model;  // modalities and num_classes are filled from the data when empty
  ProtocolConfig protocol;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::size_t trials = 10;
  AlphaGrid alpha_grid;
  double early_stop_anticipation = 1.0;  // seconds; early stopping watches Top-5 at this step
  std::optional<std::size_t> patience;   // epochs without improvement before stopping
  std::size_t many_shot_threshold = 100;
  std::string report_split = "val";
  std::vector<double> mixture_weights = {1.0, 1.0};  // GloVe, Verb-Noun
  std::vector<MethodSpec> methods;                   // empty means default_methods()
  std::size_t jobs = 1;

  void validate() const;
  static ExperimentConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

/// Data the experiment needs, as laid out on disk by `synth`.
struct Dataset {
  ActionVocab vocab;
  std::vector<Modality> modalities;
  ProtocolConfig protocol;
  FeatureSet train, val, test;
  AnnotationSet train_transitions;
  std::optional<EmbeddingTable> embeddings;

  const FeatureSet& split(std::string_view name) const;
  std::vector<ActionId> train_labels() const;
};

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data, const SynthConfig& config);
Dataset load_dataset(const std::filesystem::path& dir);
Dataset to_dataset(const SyntheticDataset& data, const SynthConfig& config);

/// Prior for a smoothing kind; empty for onehot.
std::optional<PriorMatrix> build_method_prior(PriorKind kind, const Dataset& data,
                                              const std::vector<double>& mixture_weights = {1.0, 1.0});

/// Fills modalities/num_classes from the data and checks shapes agree.
ModelConfig resolve_model_config(const ExperimentConfig& config, const Dataset& data);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_score = 0.0;  // Top-5 action accuracy at the early-stopping step
  double val_top1 = 0.0;   // Top-1 at the same step
};

struct TrialResult {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  std::vector<EpochLog> history;
  std::vector<double> val_top5;  // per decode step, at the best epoch
  std::optional<ModelParams> checkpoint;  // params at the best epoch
};

/// Trains with seeded shuffled mini-batches and keeps the epoch with the best
/// validation Top-5 at the early-stopping step (earliest on ties). A null or
/// onehot prior trains on one-hot labels. `model.seed` seeds everything.
TrialResult train_model(const ExperimentConfig& config, const ModelConfig& model, const FeatureSet& train,
                        const FeatureSet& val, const PriorMatrix* prior, double alpha, std::ostream* log = nullptr);

/// Forward pass over a whole feature set in batches.
std::vector<StepPredictions> predict_all(const ModelParams& params, const FeatureSet& data,
                                         const ProtocolConfig& protocol, std::size_t batch_size = 256);
std::vector<ActionId> labels_of(const FeatureSet& data);

struct GridSearchResult {
  double alpha_star = 0.0;
  std::vector<std::pair<double, double>> scores;  // (alpha, best validation Top-5)
};

/// One training run per grid value with seed model.seed; ties go to the smaller alpha.
GridSearchResult grid_search_alpha(const ExperimentConfig& config, const Dataset& data, const PriorMatrix* prior);

struct MethodResult {
  MethodSpec method;
  std::vector<TrialResult> trials;
  std::vector<TrialMetrics> metrics;  // per trial, on config.report_split
  MetricsReport report;
};

/// `trials` seeded runs per method (seeds model.seed + trial index).
/// When `runs_dir` is set, writes runs/<method>/<alpha>/<seed>/{checkpoint.lsam,
/// metrics.csv, log.txt} plus methods.json and report files.
std::vector<MethodResult> run_comparison(const std::vector<MethodSpec>& methods, const ExperimentConfig& config,
                                         const Dataset& data,
                                         const std::optional<std::filesystem::path>& runs_dir = std::nullopt);

/// Rebuilds reports from a runs directory written by run_comparison.
std::vector<MetricsReport> load_reports(const std::filesystem::path& runs_dir);

std::string alpha_dir_name(double alpha);

}  // namespace lsa
