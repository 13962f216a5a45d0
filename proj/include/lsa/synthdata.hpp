#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lsa/priors.hpp"
#include "lsa/seqmodel.hpp"
#include "lsa/vocab.hpp"

namespace lsa {

/// Knobs of a synthetic verb-noun action grammar.
///
/// Class means are built as
///   mean(v, n) = between_scale * (U_verb[v] + U_noun[n]) + within_scale * U_action[a]
/// with iid N(0, 1/D) entries, so two actions sharing a verb or a noun sit
/// closer together than two unrelated actions whenever between_scale > 0.
struct GrammarConfig {
  std::size_t num_verbs = 4;
  std::size_t num_nouns = 4;
  double action_density = 1.0;  // fraction of the verb x noun grid realized, in (0, 1]
  double within_scale = 0.5;
  double between_scale = 1.0;
  double markov_concentration = 0.5;  // Dirichlet concentration of transition rows
  std::vector<Modality> modalities = {{"rgb", 8}, {"obj", 8}};
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticGrammar {
  ActionVocab vocab;
  Eigen::MatrixXd transition;                     // K x K, row-stochastic
  std::vector<std::vector<Eigen::VectorXd>> class_means;  // [action][modality]

  nlohmann::json to_json() const;
};

struct FeatureSample {
  FeatureSequence features;
  ActionId target = 0;

  bool operator==(const FeatureSample& o) const { return target == o.target && features == o.features; }
};

struct FeatureSet {
  std::vector<std::size_t> dims;  // per modality
  std::size_t timesteps = 0;
  std::vector<FeatureSample> samples;
  std::string split;  // "train", "val", "test" or empty; not serialized

  std::size_t size() const { return samples.size(); }
  /// Throws InvalidArgument if any sample disagrees with dims/timesteps.
  void validate() const;
  bool operator==(const FeatureSet& o) const {
    return dims == o.dims && timesteps == o.timesteps && samples == o.samples;
  }
};

/// Throws InvalidArgument when fewer than two actions would be realized.
SyntheticGrammar gen_grammar(const GrammarConfig& config);

/// Alphabetic token for index i (a, b, ..., z, ba, bb, ...) behind a prefix.
std::string synthetic_token(std::string_view prefix, std::size_t index);

/// Markov walks of `length` actions per video; start times 0, 1, 2, ... s.
AnnotationSet gen_annotation_sequences(const SyntheticGrammar& grammar, std::size_t num_videos,
                                       std::size_t length, std::uint64_t seed);

/// (previous, target) pairs in sample order: every instance except the first
/// of each video, paired with its predecessor.
std::vector<std::pair<ActionId, ActionId>> sample_transitions(const AnnotationSet& annotations,
                                                              const ActionVocab& vocab);

/// One sample per annotated action that has a predecessor in its video.
/// Snippet t of T is drawn around the point (t + 1) / T of the way from the
/// previous action's mean to the target's mean, with Gaussian noise; values
/// are rounded to float so the binary format is value-exact.
FeatureSet gen_features(const SyntheticGrammar& grammar, const AnnotationSet& annotations,
                        const ProtocolConfig& protocol, double noise_sigma, std::uint64_t seed);

/// Unit vectors for every verb and noun token. Tokens of the same kind have
/// pairwise cosine close to `cohort_similarity` (exactly for identical
/// directions at similarity 1).
EmbeddingTable gen_synthetic_embeddings(const SyntheticGrammar& grammar, std::size_t dimension,
                                        double cohort_similarity, std::uint64_t seed);

/// `FEAT` binary format.
std::string serialize_features(const FeatureSet& set);
FeatureSet parse_features(std::string_view bytes, std::string split = {});
void write_features(const std::filesystem::path& path, const FeatureSet& set);
FeatureSet read_features(const std::filesystem::path& path, std::string split = {});

/// Everything `synth` writes to disk.
struct SynthConfig {
  GrammarConfig grammar;
  ProtocolConfig protocol;
  std::size_t num_videos = 100;
  std::size_t video_length = 20;
  double noise_sigma = 0.5;
  std::size_t embedding_dim = 32;
  double cohort_similarity = 0.1;
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  std::uint64_t seed = 0;

  static SynthConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct SyntheticDataset {
  SyntheticGrammar grammar;
  AnnotationSet annotations;
  /// Each training sample as a two-instance video (previous, target), so
  /// transition counting sees only training transitions.
  AnnotationSet train_transitions;
  FeatureSet train, val, test;
  EmbeddingTable embeddings{1};
};

/// Seeded 70/15/15 (by default) split by sample.
SyntheticDataset generate_dataset(const SynthConfig& config);

}  // namespace lsa
