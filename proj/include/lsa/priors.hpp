#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lsa/vocab.hpp"

namespace lsa {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-stochastic K x K matrix. Row k is the prior distribution used to
/// smooth the label of ground-truth class k.
class PriorMatrix {
 public:
  static constexpr double kRowSumTolerance = 1e-12;

  /// Throws InvalidArgument unless square, non-empty, non-negative, finite
  /// and every row sums to 1 within kRowSumTolerance.
  explicit PriorMatrix(RowMatrix values);

  std::size_t size() const { return static_cast<std::size_t>(values_.rows()); }
  double operator()(std::size_t row, std::size_t col) const { return values_(row, col); }
  std::span<const double> row(std::size_t k) const;
  const RowMatrix& matrix() const { return values_; }

  bool operator==(const PriorMatrix& other) const { return values_ == other.values_; }

 private:
  RowMatrix values_;
};

/// Word vectors of a fixed dimension.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dimension);

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return entries_.size(); }

  /// Inserts or overwrites. Throws InvalidArgument on a length mismatch.
  void set(const std::string& word, Eigen::VectorXd vector);
  const Eigen::VectorXd* find(const std::string& word) const;

  /// Words in lexicographic order, for stable serialization.
  std::vector<std::string> words() const;

 private:
  std::size_t dimension_;
  std::unordered_map<std::string, Eigen::VectorXd> entries_;
};

/// Transition counts between consecutive actions: counts(i, k) is the number
/// of times action i is immediately followed by action k in the same video.
using TransitionCounts = Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

PriorMatrix build_uniform_prior(std::size_t num_classes);
PriorMatrix build_verb_noun_prior(const ActionVocab& vocab);

/// Parses `word v1 ... vd` lines. Later duplicates overwrite earlier ones.
EmbeddingTable load_embeddings(std::string_view text, std::size_t dimension);
std::string format_embeddings(const EmbeddingTable& table);

/// Splits a token on non-alphabetic characters ("pumpkin:seeds" -> pumpkin, seeds).
std::vector<std::string> split_words(std::string_view token);

/// Verb vector followed by noun vector (length 2d). Each half is the mean of
/// the word vectors found for that token; a token with no known word maps to zeros.
Eigen::VectorXd embed_action(const ActionVocab& vocab, const EmbeddingTable& table, ActionId action);

/// Normalized absolute dot products of the action embeddings. A zero
/// embedding yields a uniform row.
PriorMatrix build_glove_prior(const ActionVocab& vocab, const EmbeddingTable& table);
/// Same rule from precomputed action embeddings (one per row of `phi`).
PriorMatrix build_similarity_prior(const Eigen::MatrixXd& phi);

TransitionCounts count_transitions(const AnnotationSet& annotations, const ActionVocab& vocab);
/// Row k holds the distribution over predecessors of action k. Actions never
/// observed as a successor get a uniform row.
PriorMatrix build_temporal_prior(const TransitionCounts& counts);
PriorMatrix build_temporal_prior(const AnnotationSet& annotations, const ActionVocab& vocab);

/// Weighted average, weights normalized to sum to one.
PriorMatrix mix_priors(std::span<const PriorMatrix> priors, std::span<const double> weights);

/// CSV with one line per row, 17 significant digits.
std::string format_prior_csv(const PriorMatrix& prior);
PriorMatrix parse_prior_csv(std::string_view text);

/// JSON sidecar describing where a prior file came from.
nlohmann::json prior_sidecar(const ActionVocab& vocab, std::string_view kind);

}  // namespace lsa
