#pragma once

#include <Eigen/Dense>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lsa/seqmodel.hpp"
#include "lsa/vocab.hpp"

namespace lsa {

/// Classes with at least `threshold` training instances, per task.
struct ManyShotSets {
  std::set<std::size_t> actions;
  std::set<std::size_t> verbs;
  std::set<std::size_t> nouns;
  std::size_t threshold = 100;
};

/// Percentage of samples whose label is among the top-k classes.
double topk_accuracy(std::span<const Eigen::VectorXd> predictions, std::span<const std::size_t> labels,
                     std::size_t k);

/// Sums action probabilities over verb and noun cohorts.
std::pair<Eigen::VectorXd, Eigen::VectorXd> marginalize_to_verb_noun(const Eigen::VectorXd& action_probs,
                                                                     const ActionVocab& vocab);

ManyShotSets compute_many_shot(const AnnotationSet& train_annotations, const ActionVocab& vocab,
                               std::size_t threshold);
ManyShotSets compute_many_shot(std::span<const ActionId> train_labels, const ActionVocab& vocab,
                               std::size_t threshold);

/// Unweighted means over `restrict_to` of per-class precision and recall, in
/// percent. A class never predicted has precision 0; a class absent from the
/// labels is left out of the recall mean (NaN if every class is).
std::pair<double, double> macro_precision_recall(std::span<const std::size_t> predicted_top1,
                                                 std::span<const std::size_t> labels,
                                                 const std::set<std::size_t>& restrict_to);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation, 0 for one value
};

MeanStd aggregate_trials(std::span<const double> values);

struct TaskMetrics {
  double top1 = 0.0;
  double top5 = 0.0;
  double precision = 0.0;  // NaN when the task has no many-shot class
  double recall = 0.0;
};

struct StepMetrics {
  double anticipation_time = 0.0;
  TaskMetrics action, verb, noun;
};

/// Metrics of one trial, one entry per decode step.
using TrialMetrics = std::vector<StepMetrics>;

/// Top-5 uses min(5, number of classes) for each task.
TrialMetrics evaluate_trial(std::span<const StepPredictions> predictions, std::span<const ActionId> labels,
                            const ProtocolConfig& protocol, const ActionVocab& vocab, const ManyShotSets& many_shot);

struct TaskReport {
  MeanStd top1, top5, precision, recall;
};

struct StepReport {
  double anticipation_time = 0.0;
  TaskReport action, verb, noun;
};

struct MetricsReport {
  std::string method;
  std::size_t trials = 0;
  std::vector<StepReport> steps;
};

MetricsReport aggregate_report(std::string method, std::span<const TrialMetrics> trials);

struct TrialPredictions {
  std::vector<StepPredictions> predictions;  // one per sample
  std::vector<ActionId> labels;
};

MetricsReport build_report(std::string method, std::span<const TrialPredictions> trials,
                           const ProtocolConfig& protocol, const ActionVocab& vocab, const ManyShotSets& many_shot);

/// Per-trial metrics CSV: one row per decode step.
std::string format_trial_metrics_csv(const TrialMetrics& metrics);
TrialMetrics parse_trial_metrics_csv(std::string_view text);

/// One row per method, one mean and one std column per metric per anticipation time.
std::string format_report_csv(std::span<const MetricsReport> reports);
/// Aligned Top-5 action accuracy table, mean +- std per anticipation time.
std::string format_report_table(std::span<const MetricsReport> reports);
/// Long-format rows (method, anticipation time, metric, mean, std) for plotting.
std::string format_plot_data(std::span<const MetricsReport> reports);

}  // namespace lsa
