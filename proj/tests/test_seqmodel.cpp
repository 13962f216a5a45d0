#include <doctest.h>

#include <cmath>
#include <random>

#include "lsa/error.hpp"
#include "lsa/io.hpp"
#include "lsa/seqmodel.hpp"
#include "lsa/smoothing.hpp"
#include "test_util.hpp"

using namespace lsa;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ModelConfig small_config(std::size_t hidden = 4, std::size_t K = 3, std::uint64_t seed = 1) {
  ModelConfig c;
  c.modalities = {{"rgb", 3}, {"obj", 2}};
  c.hidden_size = hidden;
  c.num_classes = K;
  c.seed = seed;
  return c;
}

FeatureSequence random_features(std::mt19937_64& rng, const ModelConfig& c, const ProtocolConfig& p) {
  std::normal_distribution<double> n;
  FeatureSequence f;
  for (const auto& m : c.modalities) {
    MatrixXd x(m.feature_dim, p.timesteps());
    for (auto& v : x.reshaped()) v = n(rng);
    f.push_back(x);
  }
  return f;
}

SoftLabel random_target(std::mt19937_64& rng, std::size_t K) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd t(K);
  for (auto& v : t) v = u(rng);
  t /= t.sum();
  return SoftLabel(t);
}

// Largest relative error between the analytic gradient and central differences.
double gradient_check(ModelParams params, const FeatureSequence& f, const SoftLabel& y, const ProtocolConfig& p) {
  const auto analytic = loss_and_gradients(params, f, y, p).gradients;
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.values.size(); ++i) {
    const double saved = params.values(i);
    params.values(i) = saved + h;
    const double up = loss_and_gradients(params, f, y, p).loss;
    params.values(i) = saved - h;
    const double down = loss_and_gradients(params, f, y, p).loss;
    params.values(i) = saved;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic(i);
    worst = std::max(worst, std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-7));
  }
  return worst;
}

}  // namespace

TEST_CASE("protocol timing") {
  const ProtocolConfig p;
  CHECK(p.timesteps() == 14);
  const double expected[] = {2, 1.75, 1.5, 1.25, 1, 0.75, 0.5, 0.25};
  for (std::size_t s = 0; s < 8; ++s) CHECK(p.anticipation_time(s) == expected[s]);
  CHECK(p.step_for_anticipation(1.0) == 4);
  CHECK_THROWS_AS(p.step_for_anticipation(0.3), InvalidArgument);
  ProtocolConfig one{1.0, 1, 1, 5};
  CHECK(one.anticipation_time(0) == 1.0);
  ProtocolConfig bad;
  bad.decode_steps = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  const auto back = protocol_from_json(protocol_to_json(p));
  CHECK(back.decode_steps == 8);
  CHECK(back.snippet_stride == 0.25);
}

TEST_CASE("init_params") {
  const auto a = init_params(small_config());
  const auto b = init_params(small_config());
  CHECK(a == b);
  const auto c = init_params(small_config(4, 3, 2));
  CHECK(a.values != c.values);

  ModelConfig one;
  one.modalities = {{"rgb", 4}};
  one.hidden_size = 8;
  one.num_classes = 3;
  const auto p = init_params(one);
  const auto& L = p.layout();
  CHECK(L.fusion_weights.rows == 8);
  CHECK(L.fusion_weights.cols == 3);
  CHECK(L.lstm[0].weights.rows == 32);
  CHECK(L.lstm[0].weights.cols == 12);

  const double bound = 1.0 / std::sqrt(12.0);
  const auto w = p.block(L.lstm[0].weights);
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  const auto bias = p.block(L.lstm[0].bias);
  for (int r = 0; r < 32; ++r) CHECK(bias(r) == (r >= 8 && r < 16 ? 1.0 : 0.0));
  CHECK(p.block(L.fusion_weights).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
  CHECK(p.block(L.fusion_bias).isZero());
  CHECK(p.adam_m.isZero());
  CHECK(p.adam_v.isZero());
  CHECK(p.step == 0);
}

TEST_CASE("forward: zero weights give uniform predictions") {
  std::mt19937_64 rng(1);
  ModelConfig c = small_config(4, 4);
  const ProtocolConfig p;
  const ModelParams zero(c);
  const auto pred = forward(zero, random_features(rng, c, p), p);
  REQUIRE(pred.probs.size() == 8);
  for (const auto& q : pred.probs) {
    REQUIRE(q.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(q(i) == 0.25);
  }
  const auto lg = loss_and_gradients(zero, random_features(rng, c, p), SoftLabel::one_hot(4, 1), p);
  CHECK(lg.loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("forward: outputs are distributions, shape errors throw") {
  std::mt19937_64 rng(2);
  const auto c = small_config(5, 4);
  const ProtocolConfig p;
  const auto params = init_params(c);
  auto f = random_features(rng, c, p);
  const auto pred = forward(params, f, p);
  REQUIRE(pred.probs.size() == 8);
  for (std::size_t s = 0; s < 8; ++s) {
    CHECK(std::abs(pred.probs[s].sum() - 1.0) <= 1e-12);
    CHECK((pred.probs[s] - softmax(pred.logits[s])).cwiseAbs().maxCoeff() == 0.0);
  }
  f[1] = MatrixXd::Zero(2, 13);
  CHECK_THROWS_AS(forward(params, f, p), InvalidArgument);
  f.pop_back();
  CHECK_THROWS_AS(forward(params, f, p), InvalidArgument);
}

TEST_CASE("forward: modality order does not matter") {
  std::mt19937_64 rng(3);
  const ProtocolConfig p;
  const auto c = small_config(3, 4, 9);
  const auto a = init_params(c);
  ModelConfig swapped_config = c;
  std::swap(swapped_config.modalities[0], swapped_config.modalities[1]);
  ModelParams b(swapped_config);
  const auto& La = a.layout();
  const auto& Lb = b.layout();
  for (int m = 0; m < 2; ++m) {
    b.block(Lb.lstm[1 - m].weights) = a.block(La.lstm[m].weights);
    b.block(Lb.lstm[1 - m].bias) = a.block(La.lstm[m].bias);
  }
  const auto H = static_cast<Eigen::Index>(c.hidden_size);
  b.block(Lb.fusion_weights).topRows(H) = a.block(La.fusion_weights).bottomRows(H);
  b.block(Lb.fusion_weights).bottomRows(H) = a.block(La.fusion_weights).topRows(H);
  b.block(Lb.fusion_bias) = a.block(La.fusion_bias);

  const auto f = random_features(rng, c, p);
  const FeatureSequence g = {f[1], f[0]};
  const auto pa = forward(a, f, p), pb = forward(b, g, p);
  for (std::size_t s = 0; s < 8; ++s) CHECK((pa.probs[s] - pb.probs[s]).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(4);
  const ProtocolConfig p;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto c = small_config(4, 3, seed);
    auto params = init_params(c);
    // Non-zero fusion bias and larger weights exercise the saturating regions.
    for (auto& v : params.values) v *= 2.0;
    const auto f = random_features(rng, c, p);
    CHECK(gradient_check(params, f, random_target(rng, 3), p) <= 1e-4);
    CHECK(gradient_check(params, f, SoftLabel::one_hot(3, seed % 3), p) <= 1e-4);
  }
}

TEST_CASE("batch loss and gradients are the sample mean") {
  std::mt19937_64 rng(5);
  const ProtocolConfig p;
  const auto c = small_config(4, 3, 6);
  const auto params = init_params(c);
  std::vector<FeatureSequence> feats;
  std::vector<SoftLabel> targets;
  for (int i = 0; i < 5; ++i) {
    feats.push_back(random_features(rng, c, p));
    targets.push_back(random_target(rng, 3));
  }
  std::vector<const FeatureSequence*> batch;
  MatrixXd T(3, 5);
  double loss = 0;
  VectorXd grad = VectorXd::Zero(params.values.size());
  for (int i = 0; i < 5; ++i) {
    batch.push_back(&feats[i]);
    T.col(i) = targets[i].values();
    const auto single = loss_and_gradients(params, feats[i], targets[i], p);
    loss += single.loss / 5;
    grad += single.gradients / 5;
  }
  const auto lg = loss_and_gradients_batch(params, batch, T, p);
  CHECK(lg.loss == doctest::Approx(loss).epsilon(1e-12));
  CHECK((lg.gradients - grad).cwiseAbs().maxCoeff() <= 1e-12);

  const auto preds = forward_batch(params, batch, p);
  for (int i = 0; i < 5; ++i) {
    const auto one = forward(params, feats[i], p);
    for (std::size_t s = 0; s < 8; ++s) CHECK((preds[i].probs[s] - one.probs[s]).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("target equal to the model output is a fixed point") {
  std::mt19937_64 rng(6);
  const ProtocolConfig p;
  const auto c = small_config(4, 3, 3);
  auto params = init_params(c);
  const auto& L = params.layout();
  params.block(L.fusion_weights).setZero();
  params.block(L.fusion_bias) << 0.3, -1.2, 0.7;
  const auto f = random_features(rng, c, p);
  const SoftLabel own(forward(params, f, p).probs[0]);
  const auto lg = loss_and_gradients(params, f, own, p);
  CHECK(lg.gradients.cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("loss decomposition lifts to the model") {
  std::mt19937_64 rng(7);
  const ProtocolConfig p;
  const auto c = small_config(4, 4, 8);
  const auto params = init_params(c);
  const auto prior = build_verb_noun_prior(testing::toy_vocab());
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_features(rng, c, p);
    const std::size_t k = trial % 4;
    const double alpha = 0.05 * trial;
    VectorXd pi(4);
    for (int i = 0; i < 4; ++i) pi(i) = prior(k, i);
    const double smoothed = loss_and_gradients(params, f, smooth_label(k, prior, alpha), p).loss;
    const double hard = loss_and_gradients(params, f, SoftLabel::one_hot(4, k), p).loss;
    const double teacher = loss_and_gradients(params, f, SoftLabel(pi), p).loss;
    CHECK(std::abs(smoothed - ((1 - alpha) * hard + alpha * teacher)) / smoothed <= 1e-9);
  }
}

TEST_CASE("adam") {
  ModelConfig c;
  c.modalities = {{"x", 1}};
  c.hidden_size = 1;
  c.num_classes = 2;
  auto params = init_params(c);
  const VectorXd start = params.values;
  VectorXd g = VectorXd::Zero(start.size());
  adam_step(params, g);
  CHECK(params.values == start);
  CHECK(params.step == 1);

  params = init_params(c);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (auto& v : g) v = n(rng);
  adam_step(params, g);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    CHECK(params.values(i) - start(i) == doctest::Approx(-1e-3 * (g(i) > 0 ? 1 : -1)).epsilon(1e-6));
  }
  adam_step(params, g);
  // Scalar hand trace of two steps with the same gradient.
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    double w = start(i), m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
      m = 0.9 * m + 0.1 * g(i);
      v = 0.999 * v + 0.001 * g(i) * g(i);
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      w -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(params.values(i) == doctest::Approx(w).epsilon(1e-12));
  }
  CHECK(params.step == 2);
  CHECK_THROWS_AS(adam_step(params, VectorXd::Zero(3)), InvalidArgument);
}

TEST_CASE("topk") {
  VectorXd p(4);
  p << 0.1, 0.5, 0.2, 0.2;
  CHECK(topk(p, 2) == std::vector<std::size_t>{1, 2});
  auto all = topk(p, 4);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(topk(VectorXd::Constant(5, 0.2), 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(topk(p, 5), InvalidArgument);
  StepPredictions sp;
  sp.probs = {p, VectorXd::Constant(4, 0.25)};
  CHECK(predict_topk(sp, 1, 1) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(predict_topk(sp, 2, 1), InvalidArgument);
}

TEST_CASE("checkpoint round-trip and corruption") {
  auto params = init_params(small_config(4, 3, 5));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  VectorXd g(params.values.size());
  for (auto& v : g) v = n(rng);
  adam_step(params, g);
  const auto bytes = serialize_checkpoint(params);
  CHECK(bytes.substr(0, 4) == "LSAM");
  const auto back = parse_checkpoint(bytes);
  CHECK(back == params);
  CHECK(serialize_checkpoint(back) == bytes);

  const auto dir = testing::scratch_dir("ckpt");
  save_checkpoint(dir / "a.lsam", params);
  CHECK(read_text_file(dir / "a.lsam") == bytes);
  CHECK(load_checkpoint(dir / "a.lsam") == params);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(""), FormatError);
}
