#include "lsa/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lsa/error.hpp"
#include "lsa/experiment.hpp"
#include "lsa/io.hpp"

namespace lsa {
namespace {

namespace fs = std::filesystem;

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Dimension of the first non-empty line of an embedding file.
std::size_t sniff_embedding_dim(std::string_view text) {
  for (auto line : split(text, '\n')) {
    line = trim(line);
    if (line.empty()) continue;
    std::istringstream in{std::string(line)};
    std::string word;
    std::size_t fields = 0;
    while (in >> word) ++fields;
    if (fields < 2) throw ParseError("embedding line has no vector", 1);
    return fields - 1;
  }
  throw ParseError("empty embedding file");
}

struct BuildPriorArgs {
  std::string kind;
  std::string vocab, embeddings, annotations, out;
  std::size_t dim = 0;
  std::vector<double> weights = {1.0, 1.0};
};

void run_build_prior(const BuildPriorArgs& a, std::ostream& out) {
  const auto vocab = ActionVocab::from_json(read_json(a.vocab));
  auto glove = [&] {
    if (a.embeddings.empty()) throw InvalidArgument("--embeddings is required for this prior");
    const auto text = read_text_file(a.embeddings);
    return build_glove_prior(vocab, load_embeddings(text, a.dim ? a.dim : sniff_embedding_dim(text)));
  };
  const PriorKind kind = parse_prior_kind(a.kind);
  std::optional<PriorMatrix> prior;
  switch (kind) {
    case PriorKind::uniform: prior = build_uniform_prior(vocab.num_actions()); break;
    case PriorKind::verb_noun: prior = build_verb_noun_prior(vocab); break;
    case PriorKind::glove: prior = glove(); break;
    case PriorKind::temporal:
      if (a.annotations.empty()) throw InvalidArgument("--annotations is required for the temporal prior");
      prior = build_temporal_prior(parse_annotations(read_text_file(a.annotations)), vocab);
      break;
    case PriorKind::mixture: {
      const PriorMatrix parts[] = {glove(), build_verb_noun_prior(vocab)};
      prior = mix_priors(parts, a.weights);
      break;
    }
    case PriorKind::onehot: throw InvalidArgument("onehot has no prior matrix");
  }
  write_text_file(a.out, format_prior_csv(*prior));
  write_text_file(a.out + ".json", prior_sidecar(vocab, to_string(kind)).dump(2) + "\n");
  out << "wrote " << a.out << " (" << prior->size() << " classes)\n";
}

struct RunArgs {
  std::string config, data, out_dir;
  std::optional<std::size_t> jobs;
};

ExperimentConfig load_config(const RunArgs& a) {
  auto config = ExperimentConfig::from_json(read_json(a.config));
  if (a.jobs) config.jobs = *a.jobs;
  return config;
}

void run_train(const RunArgs& a, std::ostream& out) {
  const auto config = load_config(a);
  const auto data = load_dataset(a.data);
  const auto model = resolve_model_config(config, data);
  const auto prior = build_method_prior(config.smoothing.prior_kind, data, config.mixture_weights);
  std::ostringstream log;
  const auto result = train_model(config, model, data.train, data.val, prior ? &*prior : nullptr,
                                  config.smoothing.effective_alpha(), &log);
  const auto many_shot = compute_many_shot(data.train_labels(), data.vocab, config.many_shot_threshold);
  const auto& split = data.split(config.report_split);
  const auto metrics = evaluate_trial(predict_all(*result.checkpoint, split, config.protocol), labels_of(split),
                                      config.protocol, data.vocab, many_shot);
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  save_checkpoint(dir / "checkpoint.lsam", *result.checkpoint);
  write_text_file(dir / "metrics.csv", format_trial_metrics_csv(metrics));
  write_text_file(dir / "log.txt", log.str());
  out << "best epoch " << result.best_epoch << ", val top5@" << config.early_stop_anticipation << "s "
      << format_double(result.best_score) << "\n";
}

void run_grid_search(const RunArgs& a, std::ostream& out) {
  const auto config = load_config(a);
  const auto data = load_dataset(a.data);
  const auto prior = build_method_prior(config.smoothing.prior_kind, data, config.mixture_weights);
  const auto result = grid_search_alpha(config, data, prior ? &*prior : nullptr);
  std::string csv = "alpha,val_top5\n";
  for (const auto& [alpha, score] : result.scores) csv += format_double(alpha) + "," + format_double(score) + "\n";
  fs::create_directories(a.out_dir);
  write_text_file(fs::path(a.out_dir) / "grid.csv", csv);
  out << csv << "alpha* = " << format_double(result.alpha_star) << "\n";
}

void run_compare(const RunArgs& a, std::ostream& out) {
  const auto config = load_config(a);
  const auto data = load_dataset(a.data);
  const auto methods = config.methods.empty() ? default_methods() : config.methods;
  const auto results = run_comparison(methods, config, data, fs::path(a.out_dir));
  std::vector<MetricsReport> reports;
  for (const auto& r : results) reports.push_back(r.report);
  out << format_report_table(reports);
}

struct EvalArgs {
  std::string checkpoint, data, split = "val";
  std::size_t many_shot_threshold = 100;
};

void run_eval(const EvalArgs& a, std::ostream& out) {
  const auto params = load_checkpoint(a.checkpoint);
  const auto data = load_dataset(a.data);
  const auto& set = data.split(a.split);
  if (params.config().num_classes != data.vocab.num_actions()) {
    throw FormatError("checkpoint class count does not match the dataset vocab");
  }
  const auto many_shot = compute_many_shot(data.train_labels(), data.vocab, a.many_shot_threshold);
  const auto metrics = evaluate_trial(predict_all(params, set, data.protocol), labels_of(set), data.protocol,
                                      data.vocab, many_shot);
  out << format_trial_metrics_csv(metrics);
}

void run_synth(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
  const auto config = SynthConfig::from_json(read_json(config_path));
  const auto data = generate_dataset(config);
  save_dataset(out_dir, data, config);
  out << "wrote " << out_dir << ": " << data.grammar.vocab.num_actions() << " actions, " << data.train.size()
      << "/" << data.val.size() << "/" << data.test.size() << " train/val/test samples\n";
}

void run_report(const std::string& runs, const std::string& format, std::ostream& out) {
  const auto reports = load_reports(runs);
  if (format == "csv") {
    out << format_report_csv(reports);
  } else if (format == "table") {
    out << format_report_table(reports);
  } else {
    out << format_plot_data(reports);
  }
}

void add_run_options(CLI::App* cmd, RunArgs& a, bool with_jobs) {
  cmd->add_option("--config", a.config, "experiment config JSON")->required();
  cmd->add_option("--data", a.data, "dataset directory written by synth")->required();
  cmd->add_option("--out-dir", a.out_dir, "output directory")->required();
  if (with_jobs) cmd->add_option("--jobs", a.jobs, "parallel training jobs")->check(CLI::PositiveNumber);
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Label smoothing priors for action anticipation", "lsa"};
  app.require_subcommand(1, 1);

  BuildPriorArgs prior_args;
  auto* build_prior = app.add_subcommand("build-prior", "build a prior matrix as CSV");
  build_prior->add_option("--kind", prior_args.kind, "prior kind")
      ->required()
      ->check(CLI::IsMember({"uniform", "vn", "glove", "temporal", "mix"}));
  build_prior->add_option("--vocab", prior_args.vocab, "vocab JSON")->required();
  build_prior->add_option("--embeddings", prior_args.embeddings, "word vectors, one word per line");
  build_prior->add_option("--dim", prior_args.dim, "embedding dimension (default: from the first line)");
  build_prior->add_option("--annotations", prior_args.annotations, "training annotations CSV");
  build_prior->add_option("--weights", prior_args.weights, "mixture weights for glove and vn")->expected(2);
  build_prior->add_option("--out", prior_args.out, "output CSV")->required();

  std::string synth_config, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", synth_config, "synthetic data config JSON")->required();
  synth->add_option("--out-dir", synth_out, "output directory")->required();

  RunArgs train_args, grid_args, compare_args;
  auto* train = app.add_subcommand("train", "train one model with the configured smoothing");
  add_run_options(train, train_args, false);
  auto* grid = app.add_subcommand("grid-search", "search the smoothing factor");
  add_run_options(grid, grid_args, true);
  auto* compare = app.add_subcommand("compare", "multi-trial comparison of smoothing methods");
  add_run_options(compare, compare_args, true);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", eval_args.data, "dataset directory")->required();
  eval->add_option("--split", eval_args.split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--many-shot-threshold", eval_args.many_shot_threshold, "training instances per many-shot class");

  std::string runs_dir, report_format = "table";
  auto* report = app.add_subcommand("report", "rebuild reports from a runs directory");
  report->add_option("--runs", runs_dir, "runs directory written by compare")->required();
  report->add_option("--format", report_format, "csv, table or plotdata")
      ->check(CLI::IsMember({"csv", "table", "plotdata"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (*build_prior) run_build_prior(prior_args, out);
    else if (*synth) run_synth(synth_config, synth_out, out);
    else if (*train) run_train(train_args, out);
    else if (*grid) run_grid_search(grid_args, out);
    else if (*compare) run_compare(compare_args, out);
    else if (*eval) run_eval(eval_args, out);
    else if (*report) run_report(runs_dir, report_format, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int dispatch(int argc, const char* const* argv) { return dispatch(argc, argv, std::cout, std::cerr); }

}  // namespace lsa
