#include <doctest.h>

#include <sstream>

#include "lsa/cli.hpp"
#include "lsa/experiment.hpp"
#include "lsa/io.hpp"
#include "test_util.hpp"

using namespace lsa;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "lsa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("cli: usage errors exit 1") {
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"build-prior", "--kind", "uniform"}).code == 1);
  CHECK(run({"build-prior", "--kind", "cosine", "--vocab", "v", "--out", "o"}).code == 1);
  CHECK(run({"report", "--runs", "r", "--format", "pdf"}).code == 1);
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("build-prior") != std::string::npos);
}

TEST_CASE("cli: build-prior") {
  const auto dir = testing::scratch_dir("cli_prior");
  write_text_file(dir / "v.json", testing::toy_vocab().to_json().dump());
  auto r = run({"build-prior", "--kind", "uniform", "--vocab", (dir / "v.json").string(), "--out",
                (dir / "p.csv").string()});
  REQUIRE(r.code == 0);
  const auto text = read_text_file(dir / "p.csv");
  const auto lines = split(trim(text), '\n');
  REQUIRE(lines.size() == 4);
  for (auto line : lines) CHECK(line == "0.25,0.25,0.25,0.25");
  const auto side = nlohmann::json::parse(read_text_file(dir / "p.csv.json"));
  CHECK(side.at("kind") == "uniform");
  CHECK(side.at("vocab_hash") == testing::toy_vocab().hash());

  r = run({"build-prior", "--kind", "vn", "--vocab", (dir / "v.json").string(), "--out", (dir / "vn.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(parse_prior_csv(read_text_file(dir / "vn.csv")) == build_verb_noun_prior(testing::toy_vocab()));

  write_text_file(dir / "emb.txt", "cut 1 0\nwash 0 1\nonion 1 0\ncarrot 0 1\n");
  r = run({"build-prior", "--kind", "mix", "--vocab", (dir / "v.json").string(), "--embeddings",
           (dir / "emb.txt").string(), "--out", (dir / "mix.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(parse_prior_csv(read_text_file(dir / "mix.csv")).size() == 4);

  write_text_file(dir / "ann.csv", "video_id,start_s,verb,noun\nv,0,cut,onion\nv,1,wash,carrot\n");
  r = run({"build-prior", "--kind", "temporal", "--vocab", (dir / "v.json").string(), "--annotations",
           (dir / "ann.csv").string(), "--out", (dir / "te.csv").string()});
  REQUIRE(r.code == 0);
  const auto te = parse_prior_csv(read_text_file(dir / "te.csv"));
  CHECK(te(3, 0) == 1.0);

  // Missing inputs or bad files are data errors.
  r = run({"build-prior", "--kind", "glove", "--vocab", (dir / "v.json").string(), "--out", (dir / "g.csv").string()});
  CHECK(r.code == 2);
  r = run({"build-prior", "--kind", "uniform", "--vocab", (dir / "nope.json").string(), "--out",
           (dir / "g.csv").string()});
  CHECK(r.code == 2);
  write_text_file(dir / "bad.csv", "video_id,start_s,verb,noun\nv,0,cut\n");
  r = run({"build-prior", "--kind", "temporal", "--vocab", (dir / "v.json").string(), "--annotations",
           (dir / "bad.csv").string(), "--out", (dir / "te2.csv").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("cli: synth, train, eval, grid-search, compare, report") {
  const auto dir = testing::scratch_dir("cli_flow");
  nlohmann::json synth = {{"grammar", {{"num_verbs", 3}, {"num_nouns", 3}, {"action_density", 0.7}, {"seed", 1}}},
                          {"num_videos", 10},
                          {"video_length", 6},
                          {"embedding_dim", 4},
                          {"seed", 2}};
  write_text_file(dir / "synth.json", synth.dump());
  nlohmann::json exp = {{"epochs", 2},
                        {"batch_size", 16},
                        {"trials", 1},
                        {"model", {{"hidden_size", 4}, {"seed", 3}}},
                        {"smoothing", {{"prior_kind", "vn"}, {"alpha", 0.45}}},
                        {"alpha_grid", {{"start", 0.0}, {"stop", 1.0}, {"step", 0.5}}},
                        {"many_shot_threshold", 2}};
  write_text_file(dir / "exp.json", exp.dump());
  const auto data = (dir / "data").string();

  REQUIRE(run({"synth", "--config", (dir / "synth.json").string(), "--out-dir", data}).code == 0);
  CHECK(std::filesystem::exists(dir / "data" / "train.feat"));

  auto r = run({"train", "--config", (dir / "exp.json").string(), "--data", data, "--out-dir", (dir / "t").string()});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "t" / "checkpoint.lsam"));

  r = run({"eval", "--checkpoint", (dir / "t" / "checkpoint.lsam").string(), "--data", data, "--split", "test"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("anticipation_s,", 0) == 0);
  CHECK(split(trim(r.out), '\n').size() == 9);

  r = run({"grid-search", "--config", (dir / "exp.json").string(), "--data", data, "--out-dir",
           (dir / "g").string(), "--jobs", "2"});
  REQUIRE(r.code == 0);
  CHECK(split(trim(read_text_file(dir / "g" / "grid.csv")), '\n').size() == 4);
  CHECK(r.out.find("alpha* = ") != std::string::npos);

  const auto runs = (dir / "runs").string();
  r = run({"compare", "--config", (dir / "exp.json").string(), "--data", data, "--out-dir", runs});
  REQUIRE(r.code == 0);
  const auto table_lines = split(trim(r.out), '\n');
  // Title, header, six methods and the improvement row.
  CHECK(table_lines.size() == 9);
  CHECK(split(table_lines[1], ' ').size() > 8);

  r = run({"report", "--runs", runs, "--format", "csv"});
  REQUIRE(r.code == 0);
  CHECK(r.out == read_text_file(dir / "runs" / "report.csv"));
  r = run({"report", "--runs", runs, "--format", "table"});
  CHECK(r.out == read_text_file(dir / "runs" / "report.txt"));
  r = run({"report", "--runs", runs, "--format", "plotdata"});
  CHECK(r.out.rfind("method,anticipation_s,metric,mean,std", 0) == 0);

  r = run({"eval", "--checkpoint", (dir / "synth.json").string(), "--data", data});
  CHECK(r.code == 2);
  r = run({"report", "--runs", (dir / "missing").string()});
  CHECK(r.code == 2);
}
