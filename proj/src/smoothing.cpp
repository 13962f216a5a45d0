#include "lsa/smoothing.hpp"

#include <cmath>

#include "lsa/error.hpp"
#include "lsa/io.hpp"

namespace lsa {

std::string_view to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::onehot: return "onehot";
    case PriorKind::uniform: return "uniform";
    case PriorKind::verb_noun: return "verb_noun";
    case PriorKind::glove: return "glove";
    case PriorKind::temporal: return "temporal";
    case PriorKind::mixture: return "mixture";
  }
  return "?";
}

PriorKind parse_prior_kind(std::string_view name) {
  if (name == "onehot" || name == "one-hot") return PriorKind::onehot;
  if (name == "uniform") return PriorKind::uniform;
  if (name == "verb_noun" || name == "vn") return PriorKind::verb_noun;
  if (name == "glove" || name == "gl") return PriorKind::glove;
  if (name == "temporal" || name == "te") return PriorKind::temporal;
  if (name == "mixture" || name == "mix" || name == "gl+vn") return PriorKind::mixture;
  throw InvalidArgument("unknown prior kind '" + std::string(name) + "'");
}

void SmoothingConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
}

SoftLabel::SoftLabel(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() == 0) throw InvalidArgument("empty soft label");
  double sum = 0.0;
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("soft label entry negative or non-finite");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) throw InvalidArgument("soft label sums to " + format_double(sum));
}

SoftLabel SoftLabel::one_hot(std::size_t num_classes, std::size_t k) {
  if (k >= num_classes) throw InvalidArgument("class id out of range: " + std::to_string(k));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_classes));
  v(static_cast<Eigen::Index>(k)) = 1.0;
  return SoftLabel(std::move(v));
}

SoftLabel smooth_label(std::size_t k, const PriorMatrix& prior, double alpha) {
  if (k >= prior.size()) throw InvalidArgument("class id out of range: " + std::to_string(k));
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  const auto row = prior.row(k);
  Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
  for (std::size_t i = 0; i < row.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = (1.0 - alpha) * (i == k ? 1.0 : 0.0) + alpha * row[i];
  }
  return SoftLabel(std::move(v));
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw InvalidArgument("softmax of an empty vector");
  if (!logits.allFinite()) throw InvalidArgument("softmax input is not finite");
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

double soft_cross_entropy(const Eigen::VectorXd& target, const Eigen::VectorXd& probs) {
  if (target.size() != probs.size()) throw InvalidArgument("target and probabilities differ in length");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target(i) == 0.0) continue;
    loss -= target(i) * std::log(std::max(probs(i), kProbabilityFloor));
  }
  return loss;
}

}  // namespace lsa
