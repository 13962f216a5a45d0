#include "lsa/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "lsa/error.hpp"
#include "lsa/io.hpp"

namespace lsa {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MetricField {
  const char* name;
  double TaskMetrics::*value;
  MeanStd TaskReport::*cell;
};

constexpr MetricField kFields[] = {
    {"top1", &TaskMetrics::top1, &TaskReport::top1},
    {"top5", &TaskMetrics::top5, &TaskReport::top5},
    {"precision", &TaskMetrics::precision, &TaskReport::precision},
    {"recall", &TaskMetrics::recall, &TaskReport::recall},
};

struct TaskField {
  const char* name;
  TaskMetrics StepMetrics::*metrics;
  TaskReport StepReport::*report;
};

constexpr TaskField kTasks[] = {
    {"action", &StepMetrics::action, &StepReport::action},
    {"verb", &StepMetrics::verb, &StepReport::verb},
    {"noun", &StepMetrics::noun, &StepReport::noun},
};

std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", s);
  return buf;
}

std::string format_fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double parse_number(std::string_view field, std::size_t line) {
  field = trim(field);
  if (field == "nan" || field == "-nan") return kNaN;
  double value = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("not a number: '" + std::string(field) + "'", line);
  }
  return value;
}

// Precision/recall over restrict_to, NaN pair when the set is empty.
std::pair<double, double> macro_or_nan(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                       const std::set<std::size_t>& restrict_to) {
  if (restrict_to.empty()) return {kNaN, kNaN};
  return macro_precision_recall(predicted, labels, restrict_to);
}

}  // namespace

double topk_accuracy(std::span<const VectorXd> predictions, std::span<const std::size_t> labels, std::size_t k) {
  if (predictions.empty()) throw InvalidArgument("topk_accuracy needs at least one prediction");
  if (predictions.size() != labels.size()) throw InvalidArgument("predictions and labels differ in length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto best = topk(predictions[i], k);
    if (std::find(best.begin(), best.end(), labels[i]) != best.end()) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::pair<VectorXd, VectorXd> marginalize_to_verb_noun(const VectorXd& action_probs, const ActionVocab& vocab) {
  if (static_cast<std::size_t>(action_probs.size()) != vocab.num_actions()) {
    throw InvalidArgument("probability vector length does not match the vocab");
  }
  VectorXd verbs = VectorXd::Zero(static_cast<Index>(vocab.num_verbs()));
  VectorXd nouns = VectorXd::Zero(static_cast<Index>(vocab.num_nouns()));
  for (ActionId k = 0; k < vocab.num_actions(); ++k) {
    const auto& a = vocab.action(k);
    verbs(a.verb) += action_probs(k);
    nouns(a.noun) += action_probs(k);
  }
  return {std::move(verbs), std::move(nouns)};
}

ManyShotSets compute_many_shot(std::span<const ActionId> train_labels, const ActionVocab& vocab,
                               std::size_t threshold) {
  std::vector<std::size_t> actions(vocab.num_actions()), verbs(vocab.num_verbs()), nouns(vocab.num_nouns());
  for (ActionId k : train_labels) {
    const auto& a = vocab.action(k);
    ++actions[k];
    ++verbs[a.verb];
    ++nouns[a.noun];
  }
  ManyShotSets out;
  out.threshold = threshold;
  auto collect = [&](const std::vector<std::size_t>& counts, std::set<std::size_t>& into) {
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] > 0 && counts[i] >= threshold) into.insert(i);
    }
  };
  collect(actions, out.actions);
  collect(verbs, out.verbs);
  collect(nouns, out.nouns);
  return out;
}

ManyShotSets compute_many_shot(const AnnotationSet& train_annotations, const ActionVocab& vocab,
                               std::size_t threshold) {
  const auto labels = label_instances(train_annotations, vocab);
  return compute_many_shot(labels, vocab, threshold);
}

std::pair<double, double> macro_precision_recall(std::span<const std::size_t> predicted_top1,
                                                 std::span<const std::size_t> labels,
                                                 const std::set<std::size_t>& restrict_to) {
  if (restrict_to.empty()) throw InvalidArgument("macro precision/recall needs a non-empty class set");
  if (predicted_top1.size() != labels.size()) throw InvalidArgument("predictions and labels differ in length");
  std::map<std::size_t, std::size_t> tp, predicted, actual;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++predicted[predicted_top1[i]];
    ++actual[labels[i]];
    if (predicted_top1[i] == labels[i]) ++tp[labels[i]];
  }
  double precision_sum = 0.0, recall_sum = 0.0;
  std::size_t recall_classes = 0;
  for (std::size_t c : restrict_to) {
    const auto hits = static_cast<double>(tp[c]);
    if (predicted[c] > 0) precision_sum += hits / static_cast<double>(predicted[c]);
    if (actual[c] > 0) {
      recall_sum += hits / static_cast<double>(actual[c]);
      ++recall_classes;
    }
  }
  const double precision = 100.0 * precision_sum / static_cast<double>(restrict_to.size());
  const double recall = recall_classes ? 100.0 * recall_sum / static_cast<double>(recall_classes) : kNaN;
  return {precision, recall};
}

MeanStd aggregate_trials(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("cannot aggregate zero trials");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

TrialMetrics evaluate_trial(std::span<const StepPredictions> predictions, std::span<const ActionId> labels,
                            const ProtocolConfig& protocol, const ActionVocab& vocab, const ManyShotSets& many_shot) {
  if (predictions.empty()) throw InvalidArgument("no predictions to evaluate");
  if (predictions.size() != labels.size()) throw InvalidArgument("predictions and labels differ in length");
  const std::size_t n = labels.size();
  std::vector<std::size_t> action_labels(n), verb_labels(n), noun_labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = vocab.action(labels[i]);
    action_labels[i] = labels[i];
    verb_labels[i] = a.verb;
    noun_labels[i] = a.noun;
  }

  TrialMetrics out;
  for (std::size_t s = 0; s < protocol.decode_steps; ++s) {
    std::vector<VectorXd> action_p(n), verb_p(n), noun_p(n);
    std::vector<std::size_t> action_top(n), verb_top(n), noun_top(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (predictions[i].probs.size() != protocol.decode_steps) {
        throw InvalidArgument("prediction has wrong number of decode steps");
      }
      action_p[i] = predictions[i].probs[s];
      std::tie(verb_p[i], noun_p[i]) = marginalize_to_verb_noun(action_p[i], vocab);
      action_top[i] = topk(action_p[i], 1).front();
      verb_top[i] = topk(verb_p[i], 1).front();
      noun_top[i] = topk(noun_p[i], 1).front();
    }
    StepMetrics m;
    m.anticipation_time = protocol.anticipation_time(s);
    auto fill = [&](TaskMetrics& t, const std::vector<VectorXd>& p, const std::vector<std::size_t>& y,
                    const std::vector<std::size_t>& top1, const std::set<std::size_t>& restrict_to) {
      const auto classes = static_cast<std::size_t>(p.front().size());
      t.top1 = topk_accuracy(p, y, 1);
      t.top5 = topk_accuracy(p, y, std::min<std::size_t>(5, classes));
      std::tie(t.precision, t.recall) = macro_or_nan(top1, y, restrict_to);
    };
    fill(m.action, action_p, action_labels, action_top, many_shot.actions);
    fill(m.verb, verb_p, verb_labels, verb_top, many_shot.verbs);
    fill(m.noun, noun_p, noun_labels, noun_top, many_shot.nouns);
    out.push_back(m);
  }
  return out;
}

MetricsReport aggregate_report(std::string method, std::span<const TrialMetrics> trials) {
  if (trials.empty()) throw InvalidArgument("report needs at least one trial");
  MetricsReport report;
  report.method = std::move(method);
  report.trials = trials.size();
  const std::size_t steps = trials.front().size();
  for (const auto& t : trials) {
    if (t.size() != steps) throw InvalidArgument("trials disagree on the number of decode steps");
  }
  for (std::size_t s = 0; s < steps; ++s) {
    StepReport step;
    step.anticipation_time = trials.front()[s].anticipation_time;
    for (const auto& task : kTasks) {
      for (const auto& field : kFields) {
        std::vector<double> values;
        for (const auto& t : trials) values.push_back(t[s].*(task.metrics).*(field.value));
        step.*(task.report).*(field.cell) = aggregate_trials(values);
      }
    }
    report.steps.push_back(step);
  }
  return report;
}

MetricsReport build_report(std::string method, std::span<const TrialPredictions> trials,
                           const ProtocolConfig& protocol, const ActionVocab& vocab, const ManyShotSets& many_shot) {
  std::vector<TrialMetrics> metrics;
  for (const auto& t : trials) metrics.push_back(evaluate_trial(t.predictions, t.labels, protocol, vocab, many_shot));
  return aggregate_report(std::move(method), metrics);
}

std::string format_trial_metrics_csv(const TrialMetrics& metrics) {
  std::string out = "anticipation_s";
  for (const auto& task : kTasks) {
    for (const auto& field : kFields) out += std::string(",") + task.name + "_" + field.name;
  }
  out += '\n';
  for (const auto& step : metrics) {
    out += format_double(step.anticipation_time);
    for (const auto& task : kTasks) {
      for (const auto& field : kFields) out += "," + format_double(step.*(task.metrics).*(field.value));
    }
    out += '\n';
  }
  return out;
}

TrialMetrics parse_trial_metrics_csv(std::string_view text) {
  const auto lines = split(text, '\n');
  const std::size_t columns = 1 + std::size(kTasks) * std::size(kFields);
  if (lines.empty() || split(trim(lines[0]), ',').size() != columns) throw ParseError("bad metrics header", 1);
  TrialMetrics out;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const auto line = trim(lines[l]);
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != columns) throw ParseError("expected " + std::to_string(columns) + " columns", l + 1);
    StepMetrics step;
    step.anticipation_time = parse_number(cols[0], l + 1);
    std::size_t c = 1;
    for (const auto& task : kTasks) {
      for (const auto& field : kFields) step.*(task.metrics).*(field.value) = parse_number(cols[c++], l + 1);
    }
    out.push_back(step);
  }
  if (out.empty()) throw ParseError("metrics file has no rows");
  return out;
}

std::string format_report_csv(std::span<const MetricsReport> reports) {
  if (reports.empty()) return {};
  std::string out = "method,trials";
  for (const auto& task : kTasks) {
    for (const auto& field : kFields) {
      for (const auto& step : reports.front().steps) {
        const auto col = std::string(task.name) + "_" + field.name + "@" + format_seconds(step.anticipation_time);
        out += "," + col + "_mean," + col + "_std";
      }
    }
  }
  out += '\n';
  for (const auto& r : reports) {
    out += r.method + "," + std::to_string(r.trials);
    for (const auto& task : kTasks) {
      for (const auto& field : kFields) {
        for (const auto& step : r.steps) {
          const auto& cell = step.*(task.report).*(field.cell);
          out += "," + format_double(cell.mean) + "," + format_double(cell.std);
        }
      }
    }
    out += '\n';
  }
  return out;
}

std::string format_report_table(std::span<const MetricsReport> reports) {
  if (reports.empty()) return {};
  std::size_t name_width = 8;
  for (const auto& r : reports) name_width = std::max(name_width, r.method.size());
  constexpr int kCell = 16;
  auto pad = [](std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
  };
  std::string out = "Top-5 Action Accuracy % @ different anticipation times [s]\n";
  out += std::string(name_width, ' ');
  for (const auto& step : reports.front().steps) out += pad(format_seconds(step.anticipation_time), kCell);
  out += '\n';
  for (const auto& r : reports) {
    std::string line = r.method;
    line.resize(name_width, ' ');
    for (const auto& step : r.steps) {
      line += pad(format_fixed(step.action.top5.mean, 2) + " +- " + format_fixed(step.action.top5.std, 2), kCell);
    }
    out += line + '\n';
  }
  if (reports.size() > 1) {
    std::string line = "Improv.";
    line.resize(name_width, ' ');
    for (std::size_t s = 0; s < reports.front().steps.size(); ++s) {
      double best = reports[1].steps[s].action.top5.mean;
      for (std::size_t r = 2; r < reports.size(); ++r) best = std::max(best, reports[r].steps[s].action.top5.mean);
      const double delta = best - reports.front().steps[s].action.top5.mean;
      line += pad((delta >= 0 ? "+" : "") + format_fixed(delta, 2), kCell);
    }
    out += line + '\n';
  }
  return out;
}

std::string format_plot_data(std::span<const MetricsReport> reports) {
  std::string out = "method,anticipation_s,metric,mean,std\n";
  for (const auto& r : reports) {
    for (const auto& step : r.steps) {
      for (const auto& task : kTasks) {
        for (const auto& field : kFields) {
          const auto& cell = step.*(task.report).*(field.cell);
          out += r.method + "," + format_seconds(step.anticipation_time) + "," + task.name + "_" + field.name + "," +
                 format_double(cell.mean) + "," + format_double(cell.std) + "\n";
        }
      }
    }
  }
  return out;
}

}  // namespace lsa
