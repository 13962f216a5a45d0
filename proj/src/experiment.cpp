#include "lsa/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "lsa/error.hpp"
#include "lsa/io.hpp"

namespace lsa {

using Eigen::Index;
using Eigen::MatrixXd;

std::vector<double> AlphaGrid::values() const {
  if (!(step > 0.0) || stop < start) throw InvalidArgument("alpha grid needs step > 0 and stop >= start");
  const double span = (stop - start) / step;
  const double n = std::round(span);
  if (std::abs(span - n) > 1e-9) throw InvalidArgument("alpha grid step does not divide the range evenly");
  std::vector<double> out;
  for (long i = 0; i <= static_cast<long>(n); ++i) {
    // Rounded to 1e-12 so 0.15 is 0.15 and not 0.15000000000000002.
    out.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
  }
  if (out.front() < 0.0 || out.back() > 1.0) throw InvalidArgument("alpha grid must stay within [0, 1]");
  return out;
}

std::vector<MethodSpec> default_methods() {
  return {
      {"onehot", PriorKind::onehot, 0.0},  {"te", PriorKind::temporal, 0.6}, {"uniform", PriorKind::uniform, 0.1},
      {"vn", PriorKind::verb_noun, 0.45}, {"gl", PriorKind::glove, 0.6},    {"gl+vn", PriorKind::mixture, 0.5},
  };
}

void ExperimentConfig::validate() const {
  smoothing.validate();
  protocol.validate();
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (report_split != "val" && report_split != "test") throw InvalidArgument("report_split must be val or test");
  if (mixture_weights.size() != 2) throw InvalidArgument("mixture_weights holds the GloVe and Verb-Noun weights");
  (void)alpha_grid.values();
  (void)protocol.step_for_anticipation(early_stop_anticipation);
  for (const auto& m : methods) {
    if (!(m.alpha >= 0.0 && m.alpha <= 1.0)) throw InvalidArgument("method '" + m.name + "' has alpha outside [0, 1]");
  }
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
  ExperimentConfig c;
  try {
    if (doc.contains("smoothing")) {
      const auto& s = doc.at("smoothing");
      c.smoothing.alpha = s.value("alpha", c.smoothing.alpha);
      if (s.contains("prior_kind")) c.smoothing.prior_kind = parse_prior_kind(s.at("prior_kind").get<std::string>());
    }
    if (doc.contains("model")) {
      const auto& m = doc.at("model");
      if (m.contains("modalities")) c.model.modalities = modalities_from_json(m.at("modalities"));
      c.model.hidden_size = m.value("hidden_size", c.model.hidden_size);
      c.model.learning_rate = m.value("learning_rate", c.model.learning_rate);
      c.model.adam_beta1 = m.value("adam_beta1", c.model.adam_beta1);
      c.model.adam_beta2 = m.value("adam_beta2", c.model.adam_beta2);
      c.model.adam_eps = m.value("adam_eps", c.model.adam_eps);
      c.model.seed = m.value("seed", c.model.seed);
    }
    if (doc.contains("protocol")) c.protocol = protocol_from_json(doc.at("protocol"));
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.trials = doc.value("trials", c.trials);
    if (doc.contains("alpha_grid")) {
      const auto& g = doc.at("alpha_grid");
      c.alpha_grid.start = g.value("start", c.alpha_grid.start);
      c.alpha_grid.stop = g.value("stop", c.alpha_grid.stop);
      c.alpha_grid.step = g.value("step", c.alpha_grid.step);
    }
    c.early_stop_anticipation = doc.value("early_stop_anticipation", c.early_stop_anticipation);
    if (doc.contains("patience") && !doc.at("patience").is_null()) c.patience = doc.at("patience").get<std::size_t>();
    c.many_shot_threshold = doc.value("many_shot_threshold", c.many_shot_threshold);
    c.report_split = doc.value("report_split", c.report_split);
    c.mixture_weights = doc.value("mixture_weights", c.mixture_weights);
    if (doc.contains("methods")) {
      for (const auto& m : doc.at("methods")) {
        MethodSpec spec;
        spec.kind = parse_prior_kind(m.at("prior_kind").get<std::string>());
        spec.name = m.value("name", std::string(to_string(spec.kind)));
        spec.alpha = m.value("alpha", 0.0);
        c.methods.push_back(std::move(spec));
      }
    }
    c.jobs = doc.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json methods_json = nlohmann::json::array();
  for (const auto& m : methods) {
    methods_json.push_back({{"name", m.name}, {"prior_kind", to_string(m.kind)}, {"alpha", m.alpha}});
  }
  return {{"smoothing", {{"alpha", smoothing.alpha}, {"prior_kind", to_string(smoothing.prior_kind)}}},
          {"model",
           {{"modalities", modalities_to_json(model.modalities)},
            {"hidden_size", model.hidden_size},
            {"learning_rate", model.learning_rate},
            {"adam_beta1", model.adam_beta1},
            {"adam_beta2", model.adam_beta2},
            {"adam_eps", model.adam_eps},
            {"seed", model.seed}}},
          {"protocol", protocol_to_json(protocol)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"trials", trials},
          {"alpha_grid", {{"start", alpha_grid.start}, {"stop", alpha_grid.stop}, {"step", alpha_grid.step}}},
          {"early_stop_anticipation", early_stop_anticipation},
          {"patience", patience ? nlohmann::json(*patience) : nlohmann::json()},
          {"many_shot_threshold", many_shot_threshold},
          {"report_split", report_split},
          {"mixture_weights", mixture_weights},
          {"methods", std::move(methods_json)},
          {"jobs", jobs}};
}

const FeatureSet& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

std::vector<ActionId> Dataset::train_labels() const { return labels_of(train); }

std::vector<ActionId> labels_of(const FeatureSet& data) {
  std::vector<ActionId> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(s.target);
  return out;
}

Dataset to_dataset(const SyntheticDataset& data, const SynthConfig& config) {
  Dataset ds;
  ds.vocab = data.grammar.vocab;
  ds.modalities = config.grammar.modalities;
  ds.protocol = config.protocol;
  ds.train = data.train;
  ds.val = data.val;
  ds.test = data.test;
  ds.train_transitions = data.train_transitions;
  ds.embeddings = data.embeddings;
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data, const SynthConfig& config) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"modalities", modalities_to_json(config.grammar.modalities)},
                             {"protocol", protocol_to_json(config.protocol)},
                             {"embedding_dim", config.embedding_dim},
                             {"synth_config", config.to_json()}};
  write_text_file(dir / "dataset.json", manifest.dump(2) + "\n");
  write_text_file(dir / "vocab.json", data.grammar.vocab.to_json().dump(2) + "\n");
  write_text_file(dir / "grammar.json", data.grammar.to_json().dump() + "\n");
  write_text_file(dir / "annotations.csv", format_annotations(data.annotations));
  write_text_file(dir / "train_annotations.csv", format_annotations(data.train_transitions));
  write_text_file(dir / "embeddings.txt", format_embeddings(data.embeddings));
  write_features(dir / "train.feat", data.train);
  write_features(dir / "val.feat", data.val);
  write_features(dir / "test.feat", data.test);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(dir / "dataset.json"));
    ds.modalities = modalities_from_json(manifest.at("modalities"));
    ds.protocol = protocol_from_json(manifest.at("protocol"));
    ds.vocab = ActionVocab::from_json(nlohmann::json::parse(read_text_file(dir / "vocab.json")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad dataset manifest: ") + e.what());
  }
  ds.train = read_features(dir / "train.feat", "train");
  ds.val = read_features(dir / "val.feat", "val");
  ds.test = read_features(dir / "test.feat", "test");
  for (const auto* set : {&ds.train, &ds.val, &ds.test}) {
    if (set->dims.size() != ds.modalities.size()) throw FormatError(set->split + ".feat: modality count mismatch");
    for (std::size_t m = 0; m < ds.modalities.size(); ++m) {
      if (set->dims[m] != ds.modalities[m].feature_dim) throw FormatError(set->split + ".feat: feature dim mismatch");
    }
    if (set->timesteps != ds.protocol.timesteps()) throw FormatError(set->split + ".feat: timestep count mismatch");
    for (const auto& s : set->samples) {
      if (s.target >= ds.vocab.num_actions()) throw FormatError(set->split + ".feat: target outside the vocab");
    }
  }
  const auto transitions = dir / "train_annotations.csv";
  if (std::filesystem::exists(transitions)) ds.train_transitions = parse_annotations(read_text_file(transitions));
  const auto embeddings = dir / "embeddings.txt";
  if (std::filesystem::exists(embeddings) && manifest.contains("embedding_dim")) {
    ds.embeddings = load_embeddings(read_text_file(embeddings), manifest.at("embedding_dim").get<std::size_t>());
  }
  return ds;
}

std::optional<PriorMatrix> build_method_prior(PriorKind kind, const Dataset& data,
                                              const std::vector<double>& mixture_weights) {
  auto glove = [&] {
    if (!data.embeddings) throw InvalidArgument("GloVe prior needs an embedding table");
    return build_glove_prior(data.vocab, *data.embeddings);
  };
  switch (kind) {
    case PriorKind::onehot: return std::nullopt;
    case PriorKind::uniform: return build_uniform_prior(data.vocab.num_actions());
    case PriorKind::verb_noun: return build_verb_noun_prior(data.vocab);
    case PriorKind::glove: return glove();
    case PriorKind::temporal:
      if (data.train_transitions.empty()) throw InvalidArgument("temporal prior needs training annotations");
      return build_temporal_prior(data.train_transitions, data.vocab);
    case PriorKind::mixture: {
      const PriorMatrix parts[] = {glove(), build_verb_noun_prior(data.vocab)};
      return mix_priors(parts, mixture_weights);
    }
  }
  return std::nullopt;
}

ModelConfig resolve_model_config(const ExperimentConfig& config, const Dataset& data) {
  ModelConfig model = config.model;
  if (model.modalities.empty()) {
    model.modalities = data.modalities;
  } else if (model.modalities.size() != data.modalities.size()) {
    throw InvalidArgument("config and data disagree on the number of modalities");
  } else {
    for (std::size_t m = 0; m < model.modalities.size(); ++m) {
      if (model.modalities[m].feature_dim != data.modalities[m].feature_dim) {
        throw InvalidArgument("modality '" + model.modalities[m].name + "' dim disagrees with the data");
      }
    }
  }
  model.num_classes = data.vocab.num_actions();
  if (config.protocol.timesteps() != data.protocol.timesteps()) {
    throw InvalidArgument("config protocol and data disagree on the number of timesteps");
  }
  model.validate();
  return model;
}

std::vector<StepPredictions> predict_all(const ModelParams& params, const FeatureSet& data,
                                         const ProtocolConfig& protocol, std::size_t batch_size) {
  std::vector<StepPredictions> out;
  out.reserve(data.size());
  std::vector<const FeatureSequence*> batch;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    batch.clear();
    for (std::size_t i = begin; i < std::min(data.size(), begin + batch_size); ++i) {
      batch.push_back(&data.samples[i].features);
    }
    for (auto& p : forward_batch(params, batch, protocol)) out.push_back(std::move(p));
  }
  return out;
}

namespace {

// Column k is the training target for class k.
MatrixXd label_table(std::size_t num_classes, const PriorMatrix* prior, double alpha) {
  const auto K = static_cast<Index>(num_classes);
  MatrixXd table = MatrixXd::Identity(K, K);
  if (prior == nullptr) return table;
  if (prior->size() != num_classes) throw InvalidArgument("prior size does not match the class count");
  for (std::size_t k = 0; k < num_classes; ++k) table.col(static_cast<Index>(k)) = smooth_label(k, *prior, alpha).values();
  return table;
}

std::vector<double> topk_per_step(const std::vector<StepPredictions>& preds, const std::vector<ActionId>& labels,
                                  std::size_t decode_steps, std::size_t k) {
  std::vector<std::size_t> y(labels.begin(), labels.end());
  std::vector<double> out;
  for (std::size_t s = 0; s < decode_steps; ++s) {
    std::vector<Eigen::VectorXd> p;
    p.reserve(preds.size());
    for (const auto& sp : preds) p.push_back(sp.probs[s]);
    out.push_back(topk_accuracy(p, y, k));
  }
  return out;
}

// Runs fn(0..n-1) on up to `workers` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

TrialResult train_model(const ExperimentConfig& config, const ModelConfig& model, const FeatureSet& train,
                        const FeatureSet& val, const PriorMatrix* prior, double alpha, std::ostream* log) {
  config.validate();
  model.validate();
  if (train.size() == 0 || val.size() == 0) throw InvalidArgument("training and validation sets must be non-empty");
  const auto& protocol = config.protocol;
  const std::size_t eval_step = protocol.step_for_anticipation(config.early_stop_anticipation);
  const MatrixXd targets_by_class = label_table(model.num_classes, prior, alpha);
  const auto val_labels = labels_of(val);
  for (const auto* set : {&train, &val}) {
    for (const auto& s : set->samples) {
      if (s.target >= model.num_classes) throw InvalidArgument("sample target outside the class range");
    }
  }

  TrialResult result;
  result.seed = model.seed;
  ModelParams params = init_params(model);
  std::seed_seq shuffle_seed{static_cast<std::uint32_t>(model.seed), static_cast<std::uint32_t>(model.seed >> 32),
                             0x5eedu};
  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<const FeatureSequence*> batch;
  bool have_best = false;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      MatrixXd targets(static_cast<Index>(model.num_classes), static_cast<Index>(end - begin));
      for (std::size_t i = begin; i < end; ++i) {
        const auto& sample = train.samples[order[i]];
        batch.push_back(&sample.features);
        targets.col(static_cast<Index>(i - begin)) = targets_by_class.col(sample.target);
      }
      LossAndGradients lg;
      try {
        lg = loss_and_gradients_batch(params, batch, targets, protocol);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) + ": " + e.what());
      }
      adam_step(params, lg.gradients);
      loss_sum += lg.loss;
      ++batches;
    }

    const auto preds = predict_all(params, val, protocol);
    const auto per_step =
        topk_per_step(preds, val_labels, protocol.decode_steps, std::min<std::size_t>(5, model.num_classes));
    const double score = per_step[eval_step];
    const double top1 = topk_per_step(preds, val_labels, protocol.decode_steps, 1)[eval_step];
    result.history.push_back({epoch, loss_sum / static_cast<double>(batches), score, top1});
    if (log) {
      *log << "epoch " << epoch << " train_loss " << format_double(result.history.back().train_loss)
           << " val_top5@" << config.early_stop_anticipation << "s " << format_double(score) << "\n";
    }
    if (!have_best || score > result.best_score) {
      have_best = true;
      since_best = 0;
      result.best_epoch = epoch;
      result.best_score = score;
      result.val_top5 = per_step;
      result.checkpoint = params;
    } else if (config.patience && ++since_best >= *config.patience) {
      if (log) *log << "early stop after epoch " << epoch << "\n";
      break;
    }
  }
  if (log) *log << "best epoch " << result.best_epoch << " score " << format_double(result.best_score) << "\n";
  return result;
}

GridSearchResult grid_search_alpha(const ExperimentConfig& config, const Dataset& data, const PriorMatrix* prior) {
  const ModelConfig model = resolve_model_config(config, data);
  GridSearchResult out;
  const auto alphas = config.alpha_grid.values();
  std::vector<double> scores(alphas.size());
  parallel_for(alphas.size(), config.jobs, [&](std::size_t i) {
    scores[i] = train_model(config, model, data.train, data.val, prior, alphas[i]).best_score;
  });
  double best = -1.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    out.scores.emplace_back(alphas[i], scores[i]);
    if (scores[i] > best) {
      best = scores[i];
      out.alpha_star = alphas[i];
    }
  }
  return out;
}

std::string alpha_dir_name(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", alpha);
  return buf;
}

namespace {

struct Job {
  std::size_t method = 0;
  std::size_t trial = 0;
  TrialResult result;
  TrialMetrics metrics;
  std::string log;
};

}  // namespace

std::vector<MethodResult> run_comparison(const std::vector<MethodSpec>& methods, const ExperimentConfig& config,
                                         const Dataset& data, const std::optional<std::filesystem::path>& runs_dir) {
  config.validate();
  if (methods.empty()) throw InvalidArgument("no methods to compare");
  const ModelConfig model = resolve_model_config(config, data);
  const auto many_shot = compute_many_shot(data.train_labels(), data.vocab, config.many_shot_threshold);
  const FeatureSet& report_set = data.split(config.report_split);
  const auto report_labels = labels_of(report_set);

  std::vector<std::optional<PriorMatrix>> priors;
  for (const auto& m : methods) priors.push_back(build_method_prior(m.kind, data, config.mixture_weights));

  std::vector<Job> jobs;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t t = 0; t < config.trials; ++t) jobs.push_back({m, t, {}, {}, {}});
  }
  parallel_for(jobs.size(), config.jobs, [&](std::size_t i) {
    Job& job = jobs[i];
    ModelConfig trial_model = model;
    trial_model.seed = model.seed + job.trial;
    const auto& method = methods[job.method];
    const PriorMatrix* prior = priors[job.method] ? &*priors[job.method] : nullptr;
    std::ostringstream log;
    log << "method " << method.name << " prior " << to_string(method.kind) << " alpha " << alpha_dir_name(method.alpha)
        << " seed " << trial_model.seed << "\n";
    job.result = train_model(config, trial_model, data.train, data.val, prior, method.alpha, &log);
    const auto preds = predict_all(*job.result.checkpoint, report_set, config.protocol);
    job.metrics = evaluate_trial(preds, report_labels, config.protocol, data.vocab, many_shot);
    job.log = log.str();
  });

  std::vector<MethodResult> results(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) results[m].method = methods[m];
  for (auto& job : jobs) {
    auto& r = results[job.method];
    if (runs_dir) {
      const auto dir = *runs_dir / r.method.name / alpha_dir_name(r.method.alpha) / std::to_string(job.result.seed);
      std::filesystem::create_directories(dir);
      save_checkpoint(dir / "checkpoint.lsam", *job.result.checkpoint);
      write_text_file(dir / "metrics.csv", format_trial_metrics_csv(job.metrics));
      write_text_file(dir / "log.txt", job.log);
    }
    r.trials.push_back(std::move(job.result));
    r.metrics.push_back(std::move(job.metrics));
  }
  std::vector<MetricsReport> reports;
  for (auto& r : results) {
    r.report = aggregate_report(r.method.name, r.metrics);
    reports.push_back(r.report);
  }
  if (runs_dir) {
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& r : results) {
      std::vector<std::uint64_t> seeds;
      for (const auto& t : r.trials) seeds.push_back(t.seed);
      manifest.push_back({{"name", r.method.name},
                          {"prior_kind", to_string(r.method.kind)},
                          {"alpha", r.method.alpha},
                          {"seeds", seeds}});
    }
    write_text_file(*runs_dir / "methods.json", manifest.dump(2) + "\n");
    write_text_file(*runs_dir / "report.csv", format_report_csv(reports));
    write_text_file(*runs_dir / "report.txt", format_report_table(reports));
    write_text_file(*runs_dir / "plot.csv", format_plot_data(reports));
  }
  return results;
}

std::vector<MetricsReport> load_reports(const std::filesystem::path& runs_dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(runs_dir / "methods.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad methods.json: ") + e.what());
  }
  std::vector<MetricsReport> reports;
  for (const auto& m : manifest) {
    const auto name = m.at("name").get<std::string>();
    const auto alpha = m.at("alpha").get<double>();
    std::vector<TrialMetrics> trials;
    for (auto seed : m.at("seeds").get<std::vector<std::uint64_t>>()) {
      const auto file = runs_dir / name / alpha_dir_name(alpha) / std::to_string(seed) / "metrics.csv";
      trials.push_back(parse_trial_metrics_csv(read_text_file(file)));
    }
    reports.push_back(aggregate_report(name, trials));
  }
  return reports;
}

}  // namespace lsa
