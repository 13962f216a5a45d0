#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lsa/smoothing.hpp"

namespace lsa {

/// Encode/decode timing. Decode step s (0-based) predicts the action
/// (decode_steps - s) * snippet_stride seconds before it starts.
struct ProtocolConfig {
  double snippet_stride = 0.25;
  std::size_t encode_steps = 6;
  std::size_t decode_steps = 8;
  std::size_t snippet_len = 5;  // frames per snippet; informational only

  std::size_t timesteps() const { return encode_steps + decode_steps; }
  double anticipation_time(std::size_t step) const;
  /// Decode step whose anticipation time equals `seconds`; throws if none does.
  std::size_t step_for_anticipation(double seconds) const;
  void validate() const;
};

struct Modality {
  std::string name;
  std::size_t feature_dim = 0;

  bool operator==(const Modality&) const = default;
};

struct ModelConfig {
  std::vector<Modality> modalities;
  std::size_t hidden_size = 64;
  std::size_t num_classes = 0;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// JSON forms; missing fields keep their defaults.
nlohmann::json protocol_to_json(const ProtocolConfig& protocol);
ProtocolConfig protocol_from_json(const nlohmann::json& doc);
nlohmann::json modalities_to_json(const std::vector<Modality>& modalities);
std::vector<Modality> modalities_from_json(const nlohmann::json& doc);

/// Where each parameter block lives inside the flat parameter vector.
/// Order: per modality LSTM weights then bias, then fusion weights then bias.
struct ParamLayout {
  struct Block {
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 1;
    Eigen::Index size() const { return rows * cols; }
  };
  struct Lstm {
    Block weights;  // 4H x (D + H), gate rows ordered input, forget, output, cell
    Block bias;     // 4H
  };

  explicit ParamLayout(const ModelConfig& config);

  std::vector<Lstm> lstm;
  Block fusion_weights;  // (sum of hidden sizes) x K
  Block fusion_bias;     // K
  Eigen::Index fused_dim = 0;
  Eigen::Index total = 0;
};

using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

/// Weights in one flat vector plus Adam state. Gradients share the layout.
class ModelParams {
 public:
  /// All weights zero.
  explicit ModelParams(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }

  MatrixMap block(const ParamLayout::Block& b) { return MatrixMap(values.data() + b.offset, b.rows, b.cols); }
  ConstMatrixMap block(const ParamLayout::Block& b) const {
    return ConstMatrixMap(values.data() + b.offset, b.rows, b.cols);
  }

  Eigen::VectorXd values;
  Eigen::VectorXd adam_m;
  Eigen::VectorXd adam_v;
  std::uint64_t step = 0;

  bool operator==(const ModelParams& o) const {
    return config_ == o.config_ && values == o.values && adam_m == o.adam_m && adam_v == o.adam_v &&
           step == o.step;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
};

/// One observation window: per modality a D x T matrix whose column t is the
/// feature vector of snippet t.
using FeatureSequence = std::vector<Eigen::MatrixXd>;

struct StepPredictions {
  std::vector<Eigen::VectorXd> logits;  // one per decode step
  std::vector<Eigen::VectorXd> probs;
};

struct LossAndGradients {
  double loss = 0.0;
  Eigen::VectorXd gradients;
};

/// Uniform weights in +-1/sqrt(fan_in), forget-gate biases 1, other biases 0.
ModelParams init_params(const ModelConfig& config);

StepPredictions forward(const ModelParams& params, const FeatureSequence& features,
                        const ProtocolConfig& protocol);
std::vector<StepPredictions> forward_batch(const ModelParams& params,
                                           std::span<const FeatureSequence* const> batch,
                                           const ProtocolConfig& protocol);

/// Mean over decode steps of the soft cross-entropy, with its exact gradient.
LossAndGradients loss_and_gradients(const ModelParams& params, const FeatureSequence& features,
                                    const SoftLabel& target, const ProtocolConfig& protocol);
/// Batch mean of the per-sample losses and gradients. `targets` is K x B.
LossAndGradients loss_and_gradients_batch(const ModelParams& params,
                                          std::span<const FeatureSequence* const> batch,
                                          const Eigen::MatrixXd& targets, const ProtocolConfig& protocol);

/// Bias-corrected Adam using the rates stored in the params' config.
void adam_step(ModelParams& params, const Eigen::VectorXd& gradients);

/// Top-k class ids by descending probability, ties to the lower id.
std::vector<std::size_t> topk(const Eigen::VectorXd& probs, std::size_t k);
std::vector<std::size_t> predict_topk(const StepPredictions& preds, std::size_t step, std::size_t k);

/// `LSAM` checkpoint: version, config, weights, then Adam state.
std::string serialize_checkpoint(const ModelParams& params);
ModelParams parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace lsa
