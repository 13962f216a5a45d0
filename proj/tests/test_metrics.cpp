#include <doctest.h>

#include <cmath>
#include <random>

#include "lsa/error.hpp"
#include "lsa/io.hpp"
#include "lsa/metrics.hpp"
#include "lsa/smoothing.hpp"
#include "test_util.hpp"

using namespace lsa;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

StepPredictions random_prediction(std::mt19937_64& rng, std::size_t K, std::size_t steps) {
  std::normal_distribution<double> n(0.0, 2.0);
  StepPredictions p;
  for (std::size_t s = 0; s < steps; ++s) {
    VectorXd z(K);
    for (auto& x : z) x = n(rng);
    p.logits.push_back(z);
    p.probs.push_back(softmax(z));
  }
  return p;
}

TrialPredictions random_trial(std::mt19937_64& rng, const ActionVocab& vocab, std::size_t n, std::size_t steps) {
  TrialPredictions t;
  std::uniform_int_distribution<ActionId> label(0, static_cast<ActionId>(vocab.num_actions() - 1));
  for (std::size_t i = 0; i < n; ++i) {
    t.predictions.push_back(random_prediction(rng, vocab.num_actions(), steps));
    t.labels.push_back(label(rng));
  }
  return t;
}

}  // namespace

TEST_CASE("topk_accuracy examples") {
  const std::vector<VectorXd> preds = {vec({0.6, 0.3, 0.1}), vec({0.2, 0.5, 0.3})};
  const std::vector<std::size_t> a = {0, 2}, b = {2, 0};
  CHECK(topk_accuracy(preds, a, 2) == 100.0);
  CHECK(topk_accuracy(preds, b, 1) == 0.0);
  CHECK(topk_accuracy(preds, b, 3) == 100.0);
  CHECK(topk_accuracy(preds, a, 1) == 50.0);
  CHECK_THROWS_AS(topk_accuracy(std::vector<VectorXd>{}, std::vector<std::size_t>{}, 1), InvalidArgument);
}

TEST_CASE("marginalize_to_verb_noun") {
  const auto vocab = testing::toy_vocab();
  auto [v, n] = marginalize_to_verb_noun(VectorXd::Constant(4, 0.25), vocab);
  CHECK(v == vec({0.5, 0.5}));
  CHECK(n == vec({0.5, 0.5}));
  std::tie(v, n) = marginalize_to_verb_noun(vec({1, 0, 0, 0}), vocab);
  CHECK(v == vec({1, 0}));
  CHECK(n == vec({1, 0}));
  const ActionVocab one_verb({"cut"}, {"a", "b", "c"}, {{0, 0}, {0, 1}, {0, 2}});
  std::tie(v, n) = marginalize_to_verb_noun(vec({0.2, 0.3, 0.5}), one_verb);
  CHECK(v == vec({1.0}));
  CHECK(n == vec({0.2, 0.3, 0.5}));
}

TEST_CASE("compute_many_shot") {
  const ActionVocab vocab({"a", "b"}, {"x"}, {{0, 0}, {1, 0}});
  const std::vector<ActionId> labels = {0, 0, 0, 0, 0, 1, 1};
  auto s = compute_many_shot(labels, vocab, 3);
  CHECK(s.actions == std::set<std::size_t>{0});
  CHECK(s.verbs == std::set<std::size_t>{0});
  CHECK(s.nouns == std::set<std::size_t>{0});
  s = compute_many_shot(labels, vocab, 1);
  CHECK(s.actions == std::set<std::size_t>{0, 1});
  s = compute_many_shot(labels, vocab, 6);
  CHECK(s.actions.empty());
  CHECK(s.verbs.empty());
  CHECK(s.nouns == std::set<std::size_t>{0});
  s = compute_many_shot(labels, vocab, 8);
  CHECK(s.nouns.empty());
  const std::vector<ActionId> only_b = {1};
  CHECK(compute_many_shot(only_b, vocab, 1).actions == std::set<std::size_t>{1});

  const auto ann = parse_annotations("video_id,start_s,verb,noun\nv,0,a,x\nv,1,a,x\nv,2,b,x\n");
  CHECK(compute_many_shot(ann, vocab, 2).actions == std::set<std::size_t>{0});
}

TEST_CASE("macro_precision_recall") {
  const std::vector<std::size_t> labels = {0, 0, 1}, preds = {0, 1, 1};
  auto [p, r] = macro_precision_recall(preds, labels, {0, 1});
  CHECK(p == doctest::Approx(75.0));
  CHECK(r == doctest::Approx(75.0));
  std::tie(p, r) = macro_precision_recall(labels, labels, {0, 1});
  CHECK(p == 100.0);
  CHECK(r == 100.0);
  // Class 2 is present but never predicted.
  const std::vector<std::size_t> l2 = {0, 2}, p2 = {0, 0};
  std::tie(p, r) = macro_precision_recall(p2, l2, {0, 2});
  CHECK(p == doctest::Approx((50.0 + 0.0) / 2));
  CHECK(r == doctest::Approx((100.0 + 0.0) / 2));
  // Class 3 is absent from the labels: left out of recall, precision 0.
  std::tie(p, r) = macro_precision_recall(labels, labels, {0, 1, 3});
  CHECK(p == doctest::Approx(200.0 / 3));
  CHECK(r == 100.0);
  CHECK_THROWS_AS(macro_precision_recall(preds, labels, {}), InvalidArgument);
}

TEST_CASE("aggregate_trials") {
  const std::vector<double> a = {1, 2, 3}, b = {5}, c = {0.7, 0.7, 0.7};
  auto m = aggregate_trials(a);
  CHECK(m.mean == 2.0);
  CHECK(m.std == 1.0);
  m = aggregate_trials(b);
  CHECK(m.mean == 5.0);
  CHECK(m.std == 0.0);
  m = aggregate_trials(c);
  CHECK(m.mean == doctest::Approx(0.7));
  CHECK(m.std == doctest::Approx(0.0));
  CHECK_THROWS_AS(aggregate_trials(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("build_report columns") {
  std::mt19937_64 rng(1);
  const auto vocab = testing::toy_vocab();
  const ProtocolConfig p;
  std::vector<TrialPredictions> trials = {random_trial(rng, vocab, 20, 8), random_trial(rng, vocab, 20, 8)};
  const auto many = compute_many_shot(trials[0].labels, vocab, 1);
  const auto report = build_report("x", trials, p, vocab, many);
  REQUIRE(report.steps.size() == 8);
  const double expected[] = {2, 1.75, 1.5, 1.25, 1, 0.75, 0.5, 0.25};
  for (std::size_t s = 0; s < 8; ++s) CHECK(report.steps[s].anticipation_time == expected[s]);
  CHECK(report.trials == 2);

  ProtocolConfig single{1.0, 1, 1, 5};
  std::vector<TrialPredictions> one = {random_trial(rng, vocab, 10, 1)};
  const auto r1 = build_report("y", one, single, vocab, many);
  REQUIRE(r1.steps.size() == 1);
  CHECK(r1.steps[0].anticipation_time == 1.0);
  CHECK(r1.steps[0].action.top5.std == 0.0);

  const auto again = build_report("x", trials, p, vocab, many);
  CHECK(format_report_csv(std::vector<MetricsReport>{again}) == format_report_csv(std::vector<MetricsReport>{report}));
}

TEST_CASE("property: top1 <= top5 <= 100, confident correct actions keep their verb and noun") {
  std::mt19937_64 rng(99);
  const ProtocolConfig p;
  for (int trial = 0; trial < 40; ++trial) {
    const auto vocab = testing::random_vocab(rng);
    const auto t = random_trial(rng, vocab, 30, 8);
    const auto many = compute_many_shot(t.labels, vocab, 2);
    const auto metrics = evaluate_trial(t.predictions, t.labels, p, vocab, many);
    REQUIRE(metrics.size() == 8);
    for (const auto& s : metrics) {
      for (const auto* task : {&s.action, &s.verb, &s.noun}) {
        CHECK(0.0 <= task->top1);
        CHECK(task->top1 <= task->top5);
        CHECK(task->top5 <= 100.0);
      }
    }
    // A correct top-1 action holding more than half the mass forces the
    // matching verb and noun to the top of their marginals.
    for (std::size_t step = 0; step < 8; ++step) {
      double confident = 0;
      for (std::size_t i = 0; i < t.labels.size(); ++i) {
        const auto& probs = t.predictions[i].probs[step];
        if (topk(probs, 1)[0] == t.labels[i] && probs(t.labels[i]) > 0.5) ++confident;
      }
      confident *= 100.0 / static_cast<double>(t.labels.size());
      CHECK(metrics[step].verb.top1 >= confident - 1e-9);
      CHECK(metrics[step].noun.top1 >= confident - 1e-9);
    }
  }
}

TEST_CASE("marginalized top-1 can miss the verb of a correct action") {
  const ActionVocab vocab({"a", "b"}, {"x", "y", "z"}, {{0, 0}, {1, 1}, {1, 2}});
  const std::vector<VectorXd> action = {vec({0.4, 0.3, 0.3})};
  const std::vector<std::size_t> label = {0}, verb_label = {0};
  CHECK(topk_accuracy(action, label, 1) == 100.0);
  const std::vector<VectorXd> verb = {marginalize_to_verb_noun(action[0], vocab).first};
  CHECK(topk_accuracy(verb, verb_label, 1) == 0.0);
}

TEST_CASE("evaluate_trial with no many-shot classes reports NaN") {
  std::mt19937_64 rng(3);
  const auto vocab = testing::toy_vocab();
  const auto t = random_trial(rng, vocab, 5, 8);
  const auto many = compute_many_shot(t.labels, vocab, 1000);
  const auto metrics = evaluate_trial(t.predictions, t.labels, ProtocolConfig{}, vocab, many);
  CHECK(std::isnan(metrics[0].action.precision));
  CHECK(std::isnan(metrics[0].verb.recall));
}

TEST_CASE("trial metrics CSV round-trip") {
  std::mt19937_64 rng(5);
  const auto vocab = testing::toy_vocab();
  const auto t = random_trial(rng, vocab, 25, 8);
  const auto metrics = evaluate_trial(t.predictions, t.labels, ProtocolConfig{}, vocab,
                                      compute_many_shot(t.labels, vocab, 3));
  const auto text = format_trial_metrics_csv(metrics);
  CHECK(text.rfind("anticipation_s,action_top1,action_top5,action_precision,action_recall,verb_top1", 0) == 0);
  const auto back = parse_trial_metrics_csv(text);
  CHECK(format_trial_metrics_csv(back) == text);
  CHECK_THROWS_AS(parse_trial_metrics_csv("nope\n"), ParseError);
}

TEST_CASE("report formats") {
  std::mt19937_64 rng(6);
  const auto vocab = testing::toy_vocab();
  const ProtocolConfig p;
  const auto many = compute_many_shot(std::vector<ActionId>{0, 1, 2, 3}, vocab, 1);
  std::vector<MetricsReport> reports;
  for (const char* name : {"onehot", "vn"}) {
    std::vector<TrialPredictions> trials = {random_trial(rng, vocab, 12, 8), random_trial(rng, vocab, 12, 8)};
    reports.push_back(build_report(name, trials, p, vocab, many));
  }
  const auto csv = format_report_csv(reports);
  const auto lines = split(csv, '\n');
  CHECK(lines[0].substr(0, 45) == "method,trials,action_top1@2_mean,action_top1@");
  CHECK(lines[1].substr(0, 9) == "onehot,2,");
  CHECK(lines[2].substr(0, 5) == "vn,2,");
  // The Top-5 action columns appear in descending anticipation time.
  std::string expected;
  std::size_t pos = 0;
  for (const char* t : {"2", "1.75", "1.5", "1.25", "1", "0.75", "0.5", "0.25"}) {
    const auto at = csv.find(std::string("action_top5@") + t + "_mean", pos);
    REQUIRE(at != std::string::npos);
    pos = at;
  }

  const auto table = format_report_table(reports);
  CHECK(table.find("onehot") != std::string::npos);
  CHECK(table.find("Improv.") != std::string::npos);
  const auto header = split(table, '\n')[1];
  CHECK(header.find("1.75") < header.find("0.25"));

  const auto plot = format_plot_data(reports);
  CHECK(plot.rfind("method,anticipation_s,metric,mean,std\n", 0) == 0);
  CHECK(plot.find("vn,0.25,action_top5,") != std::string::npos);
  CHECK(split(plot, '\n').size() >= 1 + 2 * 8 * 12);
}
