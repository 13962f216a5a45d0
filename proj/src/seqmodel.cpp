#include "lsa/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "lsa/error.hpp"
#include "lsa/io.hpp"

namespace lsa {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double ProtocolConfig::anticipation_time(std::size_t step) const {
  if (step >= decode_steps) throw InvalidArgument("decode step out of range: " + std::to_string(step));
  return static_cast<double>(decode_steps - step) * snippet_stride;
}

std::size_t ProtocolConfig::step_for_anticipation(double seconds) const {
  for (std::size_t s = 0; s < decode_steps; ++s) {
    if (std::abs(anticipation_time(s) - seconds) < 1e-9) return s;
  }
  throw InvalidArgument("no decode step anticipates " + format_double(seconds) + " s");
}

void ProtocolConfig::validate() const {
  if (encode_steps < 1 || decode_steps < 1) throw InvalidArgument("encode_steps and decode_steps must be >= 1");
  if (!(snippet_stride > 0.0)) throw InvalidArgument("snippet_stride must be positive");
}

void ModelConfig::validate() const {
  if (modalities.empty()) throw InvalidArgument("model needs at least one modality");
  for (const auto& m : modalities) {
    if (m.feature_dim < 1) throw InvalidArgument("modality '" + m.name + "' has zero feature dim");
  }
  if (hidden_size < 1) throw InvalidArgument("hidden_size must be >= 1");
  if (num_classes < 1) throw InvalidArgument("num_classes must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
}

nlohmann::json protocol_to_json(const ProtocolConfig& p) {
  return {{"snippet_stride", p.snippet_stride},
          {"encode_steps", p.encode_steps},
          {"decode_steps", p.decode_steps},
          {"snippet_len", p.snippet_len}};
}

ProtocolConfig protocol_from_json(const nlohmann::json& doc) {
  ProtocolConfig p;
  p.snippet_stride = doc.value("snippet_stride", p.snippet_stride);
  p.encode_steps = doc.value("encode_steps", p.encode_steps);
  p.decode_steps = doc.value("decode_steps", p.decode_steps);
  p.snippet_len = doc.value("snippet_len", p.snippet_len);
  p.validate();
  return p;
}

nlohmann::json modalities_to_json(const std::vector<Modality>& modalities) {
  auto out = nlohmann::json::array();
  for (const auto& m : modalities) out.push_back({{"name", m.name}, {"feature_dim", m.feature_dim}});
  return out;
}

std::vector<Modality> modalities_from_json(const nlohmann::json& doc) {
  std::vector<Modality> out;
  for (const auto& m : doc) out.push_back({m.at("name").get<std::string>(), m.at("feature_dim").get<std::size_t>()});
  return out;
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.validate();
  const auto H = static_cast<Index>(config.hidden_size);
  const auto K = static_cast<Index>(config.num_classes);
  Index offset = 0;
  auto take = [&](Index rows, Index cols) {
    Block b{offset, rows, cols};
    offset += rows * cols;
    return b;
  };
  for (const auto& m : config.modalities) {
    Lstm l;
    l.weights = take(4 * H, static_cast<Index>(m.feature_dim) + H);
    l.bias = take(4 * H, 1);
    lstm.push_back(l);
    fused_dim += H;
  }
  fusion_weights = take(fused_dim, K);
  fusion_bias = take(K, 1);
  total = offset;
}

ModelParams::ModelParams(ModelConfig config) : config_(std::move(config)), layout_(config_) {
  values = VectorXd::Zero(layout_.total);
  adam_m = VectorXd::Zero(layout_.total);
  adam_v = VectorXd::Zero(layout_.total);
}

ModelParams init_params(const ModelConfig& config) {
  ModelParams params(config);
  const auto& layout = params.layout();
  std::mt19937_64 rng(config.seed);
  auto fill = [&](const ParamLayout::Block& b, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto m = params.block(b);
    for (Index j = 0; j < m.cols(); ++j) {
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
  };
  const auto H = static_cast<Index>(config.hidden_size);
  for (const auto& l : layout.lstm) {
    fill(l.weights, l.weights.cols);
    params.block(l.bias).middleRows(H, H).setOnes();
  }
  fill(layout.fusion_weights, layout.fused_dim);
  return params;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Activations of one modality's LSTM over the whole batch. Column block t
// (B columns wide) of every matrix belongs to timestep t.
struct LstmTrace {
  MatrixXd inputs;  // D x T*B
  MatrixXd gates;   // 4H x T*B, activated
  MatrixXd cells;   // H x T*B
  MatrixXd hidden;  // H x (T+1)*B, block 0 is the zero initial state
};

// Forward pass over a batch; keeps everything backprop needs.
class BatchPass {
 public:
  BatchPass(const ModelParams& params, std::span<const FeatureSequence* const> batch,
            const ProtocolConfig& protocol)
      : params_(params), protocol_(protocol), B_(static_cast<Index>(batch.size())),
        T_(static_cast<Index>(protocol.timesteps())), H_(static_cast<Index>(params.config().hidden_size)) {
    protocol.validate();
    if (batch.empty()) throw InvalidArgument("empty batch");
    const auto& config = params.config();
    traces_.resize(config.modalities.size());
    for (std::size_t m = 0; m < config.modalities.size(); ++m) {
      const auto D = static_cast<Index>(config.modalities[m].feature_dim);
      auto& tr = traces_[m];
      tr.inputs.resize(D, T_ * B_);
      for (Index b = 0; b < B_; ++b) {
        const auto& seq = *batch[static_cast<std::size_t>(b)];
        if (seq.size() != config.modalities.size()) throw InvalidArgument("sample has wrong number of modalities");
        const auto& x = seq[m];
        if (x.rows() != D || x.cols() != T_) {
          throw InvalidArgument("modality '" + config.modalities[m].name + "' expects " + std::to_string(D) + " x " +
                                std::to_string(T_) + " features, got " + std::to_string(x.rows()) + " x " +
                                std::to_string(x.cols()));
        }
        for (Index t = 0; t < T_; ++t) tr.inputs.col(t * B_ + b) = x.col(t);
      }
      run_lstm(m);
    }
    run_head();
  }

  std::vector<StepPredictions> predictions() const {
    std::vector<StepPredictions> out(static_cast<std::size_t>(B_));
    for (auto& p : out) {
      p.logits.reserve(logits_.size());
      p.probs.reserve(logits_.size());
    }
    for (std::size_t s = 0; s < logits_.size(); ++s) {
      for (Index b = 0; b < B_; ++b) {
        out[static_cast<std::size_t>(b)].logits.push_back(logits_[s].col(b));
        out[static_cast<std::size_t>(b)].probs.push_back(probs_[s].col(b));
      }
    }
    return out;
  }

  LossAndGradients backward(const MatrixXd& targets) const {
    const auto& layout = params_.layout();
    const auto K = static_cast<Index>(params_.config().num_classes);
    if (targets.rows() != K || targets.cols() != B_) throw InvalidArgument("targets must be K x batch");
    const auto S = static_cast<Index>(protocol_.decode_steps);
    const Index E = T_ - S;
    const double scale = 1.0 / static_cast<double>(S * B_);

    LossAndGradients out;
    out.gradients = VectorXd::Zero(layout.total);
    auto grad_block = [&](const ParamLayout::Block& blk) {
      return MatrixMap(out.gradients.data() + blk.offset, blk.rows, blk.cols);
    };
    const auto fusion_w = params_.block(layout.fusion_weights);

    double loss = 0.0;
    // d(loss)/d(fused hidden) at each decode step.
    std::vector<MatrixXd> d_fused(static_cast<std::size_t>(S));
    auto gw = grad_block(layout.fusion_weights);
    auto gb = grad_block(layout.fusion_bias);
    for (Index s = 0; s < S; ++s) {
      const auto& p = probs_[static_cast<std::size_t>(s)];
      for (Index b = 0; b < B_; ++b) loss += soft_cross_entropy(VectorXd(targets.col(b)), VectorXd(p.col(b)));
      const MatrixXd dz = (p - targets) * scale;
      gw.noalias() += fused_[static_cast<std::size_t>(s)] * dz.transpose();
      gb += dz.rowwise().sum();
      d_fused[static_cast<std::size_t>(s)].noalias() = fusion_w * dz;
    }
    out.loss = loss * scale;
    if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");

    Index row_offset = 0;
    for (std::size_t m = 0; m < traces_.size(); ++m) {
      const auto& tr = traces_[m];
      const auto& l = layout.lstm[m];
      const auto W = params_.block(l.weights);
      const Index D = tr.inputs.rows();
      const auto W_h = W.rightCols(H_);

      MatrixXd d_gates(4 * H_, T_ * B_);
      MatrixXd dh_next = MatrixXd::Zero(H_, B_);
      MatrixXd dc_next = MatrixXd::Zero(H_, B_);
      for (Index t = T_ - 1; t >= 0; --t) {
        MatrixXd dh = dh_next;
        if (t >= E) dh += d_fused[static_cast<std::size_t>(t - E)].middleRows(row_offset, H_);
        const auto g = tr.gates.middleCols(t * B_, B_);
        const auto i_g = g.topRows(H_).array();
        const auto f_g = g.middleRows(H_, H_).array();
        const auto o_g = g.middleRows(2 * H_, H_).array();
        const auto c_g = g.bottomRows(H_).array();
        const auto c = tr.cells.middleCols(t * B_, B_).array();
        const MatrixXd c_prev = t > 0 ? MatrixXd(tr.cells.middleCols((t - 1) * B_, B_)) : MatrixXd::Zero(H_, B_);
        const Eigen::ArrayXXd tanh_c = c.tanh();

        const Eigen::ArrayXXd d_o = dh.array() * tanh_c;
        const Eigen::ArrayXXd dc = dc_next.array() + dh.array() * o_g * (1.0 - tanh_c.square());
        auto dg = d_gates.middleCols(t * B_, B_);
        dg.topRows(H_) = (dc * c_g * i_g * (1.0 - i_g)).matrix();
        dg.middleRows(H_, H_) = (dc * c_prev.array() * f_g * (1.0 - f_g)).matrix();
        dg.middleRows(2 * H_, H_) = (d_o * o_g * (1.0 - o_g)).matrix();
        dg.bottomRows(H_) = (dc * i_g * (1.0 - c_g.square())).matrix();
        dc_next = (dc * f_g).matrix();
        dh_next.noalias() = W_h.transpose() * dg;
      }
      auto gW = grad_block(l.weights);
      gW.leftCols(D).noalias() = d_gates * tr.inputs.transpose();
      gW.rightCols(H_).noalias() = d_gates * tr.hidden.leftCols(T_ * B_).transpose();
      grad_block(l.bias) = d_gates.rowwise().sum();
      row_offset += H_;
    }
    if (!out.gradients.allFinite()) throw NumericError("non-finite gradient");
    return out;
  }

 private:
  void run_lstm(std::size_t m) {
    const auto& l = params_.layout().lstm[m];
    const auto W = params_.block(l.weights);
    const auto bias = params_.block(l.bias);
    auto& tr = traces_[m];
    const Index D = tr.inputs.rows();

    tr.gates.noalias() = W.leftCols(D) * tr.inputs;
    tr.gates.colwise() += bias.col(0);
    tr.cells.resize(H_, T_ * B_);
    tr.hidden = MatrixXd::Zero(H_, (T_ + 1) * B_);
    for (Index t = 0; t < T_; ++t) {
      auto g = tr.gates.middleCols(t * B_, B_);
      g.noalias() += W.rightCols(H_) * tr.hidden.middleCols(t * B_, B_);
      g.topRows(3 * H_) = g.topRows(3 * H_).unaryExpr(&sigmoid);
      g.bottomRows(H_) = g.bottomRows(H_).array().tanh().matrix();
      auto c = tr.cells.middleCols(t * B_, B_);
      c = (g.topRows(H_).array() * g.bottomRows(H_).array()).matrix();
      if (t > 0) c.array() += g.middleRows(H_, H_).array() * tr.cells.middleCols((t - 1) * B_, B_).array();
      tr.hidden.middleCols((t + 1) * B_, B_) = (g.middleRows(2 * H_, H_).array() * c.array().tanh()).matrix();
    }
  }

  void run_head() {
    const auto& layout = params_.layout();
    const auto fusion_w = params_.block(layout.fusion_weights);
    const auto fusion_b = params_.block(layout.fusion_bias);
    const auto S = static_cast<Index>(protocol_.decode_steps);
    const Index E = T_ - S;
    for (Index s = 0; s < S; ++s) {
      const Index t = E + s;
      MatrixXd fused(layout.fused_dim, B_);
      Index row = 0;
      for (const auto& tr : traces_) {
        fused.middleRows(row, H_) = tr.hidden.middleCols((t + 1) * B_, B_);
        row += H_;
      }
      MatrixXd z = fusion_w.transpose() * fused;
      z.colwise() += fusion_b.col(0);
      if (!z.allFinite()) throw NumericError("non-finite logits");
      MatrixXd p(z.rows(), z.cols());
      for (Index b = 0; b < B_; ++b) p.col(b) = softmax(z.col(b));
      fused_.push_back(std::move(fused));
      logits_.push_back(std::move(z));
      probs_.push_back(std::move(p));
    }
  }

  const ModelParams& params_;
  const ProtocolConfig& protocol_;
  Index B_, T_, H_;
  std::vector<LstmTrace> traces_;
  std::vector<MatrixXd> fused_;   // per decode step, sumH x B
  std::vector<MatrixXd> logits_;  // per decode step, K x B
  std::vector<MatrixXd> probs_;
};

}  // namespace

std::vector<StepPredictions> forward_batch(const ModelParams& params,
                                           std::span<const FeatureSequence* const> batch,
                                           const ProtocolConfig& protocol) {
  return BatchPass(params, batch, protocol).predictions();
}

StepPredictions forward(const ModelParams& params, const FeatureSequence& features, const ProtocolConfig& protocol) {
  const FeatureSequence* one[] = {&features};
  return std::move(forward_batch(params, one, protocol).front());
}

LossAndGradients loss_and_gradients_batch(const ModelParams& params,
                                          std::span<const FeatureSequence* const> batch,
                                          const MatrixXd& targets, const ProtocolConfig& protocol) {
  return BatchPass(params, batch, protocol).backward(targets);
}

LossAndGradients loss_and_gradients(const ModelParams& params, const FeatureSequence& features,
                                    const SoftLabel& target, const ProtocolConfig& protocol) {
  const FeatureSequence* one[] = {&features};
  return loss_and_gradients_batch(params, one, target.values(), protocol);
}

void adam_step(ModelParams& params, const VectorXd& gradients) {
  if (gradients.size() != params.values.size()) throw InvalidArgument("gradient size mismatch");
  const auto& c = params.config();
  params.step += 1;
  const double t = static_cast<double>(params.step);
  params.adam_m = c.adam_beta1 * params.adam_m + (1.0 - c.adam_beta1) * gradients;
  params.adam_v = c.adam_beta2 * params.adam_v + (1.0 - c.adam_beta2) * gradients.cwiseProduct(gradients);
  const double m_corr = 1.0 - std::pow(c.adam_beta1, t);
  const double v_corr = 1.0 - std::pow(c.adam_beta2, t);
  params.values.array() -=
      c.learning_rate * (params.adam_m.array() / m_corr) / ((params.adam_v.array() / v_corr).sqrt() + c.adam_eps);
}

std::vector<std::size_t> topk(const VectorXd& probs, std::size_t k) {
  const auto K = static_cast<std::size_t>(probs.size());
  if (k > K) throw InvalidArgument("k = " + std::to_string(k) + " exceeds class count " + std::to_string(K));
  std::vector<std::size_t> ids(K);
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double pa = probs(static_cast<Index>(a));
                      const double pb = probs(static_cast<Index>(b));
                      return pa != pb ? pa > pb : a < b;
                    });
  ids.resize(k);
  return ids;
}

std::vector<std::size_t> predict_topk(const StepPredictions& preds, std::size_t step, std::size_t k) {
  if (step >= preds.probs.size()) throw InvalidArgument("decode step out of range: " + std::to_string(step));
  return topk(preds.probs[step], k);
}

namespace {
constexpr std::string_view kCheckpointMagic = "LSAM";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
  detail::ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& c = params.config();
  w.u32(static_cast<std::uint32_t>(c.modalities.size()));
  for (const auto& m : c.modalities) {
    w.str(m.name);
    w.u32(static_cast<std::uint32_t>(m.feature_dim));
  }
  w.u32(static_cast<std::uint32_t>(c.hidden_size));
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.f64(c.learning_rate);
  w.f64(c.adam_beta1);
  w.f64(c.adam_beta2);
  w.f64(c.adam_eps);
  w.u64(c.seed);
  w.u64(static_cast<std::uint64_t>(params.values.size()));
  for (double v : params.values) w.f64(v);
  w.u64(params.step);
  for (double v : params.adam_m) w.f64(v);
  for (double v : params.adam_v) w.f64(v);
  return w.take();
}

ModelParams parse_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig c;
  const auto num_modalities = r.u32();
  r.need_items(num_modalities, 8);
  for (std::uint32_t i = 0; i < num_modalities; ++i) {
    Modality m;
    m.name = r.str();
    m.feature_dim = r.u32();
    c.modalities.push_back(std::move(m));
  }
  c.hidden_size = r.u32();
  c.num_classes = r.u32();
  c.learning_rate = r.f64();
  c.adam_beta1 = r.f64();
  c.adam_beta2 = r.f64();
  c.adam_eps = r.f64();
  c.seed = r.u64();
  const auto count = r.u64();
  ModelParams params = [&] {
    try {
      return ModelParams(c);
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("checkpoint: bad config: ") + e.what());
    }
  }();
  if (count != static_cast<std::uint64_t>(params.values.size())) throw FormatError("checkpoint: weight count mismatch");
  r.need_items(count, 8);
  for (Index i = 0; i < params.values.size(); ++i) params.values(i) = r.f64();
  params.step = r.u64();
  r.need_items(2 * count, 8);
  for (Index i = 0; i < params.adam_m.size(); ++i) params.adam_m(i) = r.f64();
  for (Index i = 0; i < params.adam_v.size(); ++i) params.adam_v(i) = r.f64();
  r.expect_end();
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  write_text_file(path, serialize_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_text_file(path)); }

}  // namespace lsa
