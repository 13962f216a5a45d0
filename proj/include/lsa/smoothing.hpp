#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsa/priors.hpp"

namespace lsa {

enum class PriorKind { onehot, uniform, verb_noun, glove, temporal, mixture };

std::string_view to_string(PriorKind kind);
/// Accepts the enum names plus the short forms used on the command line
/// (vn, gl, te, mix, "gl+vn").
PriorKind parse_prior_kind(std::string_view name);

struct SmoothingConfig {
  double alpha = 0.0;
  PriorKind prior_kind = PriorKind::onehot;

  /// 0 for onehot regardless of the stored alpha.
  double effective_alpha() const { return prior_kind == PriorKind::onehot ? 0.0 : alpha; }
  void validate() const;
};

/// A probability vector over the K action classes.
class SoftLabel {
 public:
  static constexpr double kSumTolerance = 1e-12;

  /// Throws InvalidArgument unless entries are non-negative and sum to 1.
  explicit SoftLabel(Eigen::VectorXd values);
  static SoftLabel one_hot(std::size_t num_classes, std::size_t k);

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }
  const Eigen::VectorXd& values() const { return values_; }

 private:
  Eigen::VectorXd values_;
};

/// (1 - alpha) * e_k + alpha * prior.row(k)
SoftLabel smooth_label(std::size_t k, const PriorMatrix& prior, double alpha);

/// Max-subtracted softmax. Throws InvalidArgument on non-finite logits.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Probabilities are clamped from below before the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// -sum_i target(i) log(max(p(i), floor)).
double soft_cross_entropy(const Eigen::VectorXd& target, const Eigen::VectorXd& probs);
inline double soft_cross_entropy(const SoftLabel& target, const Eigen::VectorXd& probs) {
  return soft_cross_entropy(target.values(), probs);
}

}  // namespace lsa
