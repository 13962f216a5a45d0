#include "lsa/synthdata.hpp"

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

namespace {

VectorXd gaussian_vector(std::mt19937_64& rng, Index n, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

VectorXd random_unit(std::mt19937_64& rng, Index n) {
  while (true) {
    VectorXd v = gaussian_vector(rng, n, 1.0);
    const double norm = v.norm();
    if (norm > 0.0) return v / norm;
  }
}

std::size_t sample_categorical(std::mt19937_64& rng, const Eigen::Ref<const VectorXd>& probs) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<std::size_t>(i);
  }
  // u landed in the rounding slack at the top; return the last positive entry.
  for (Index i = probs.size() - 1; i >= 0; --i) {
    if (probs(i) > 0.0) return static_cast<std::size_t>(i);
  }
  return 0;
}

}  // namespace

void GrammarConfig::validate() const {
  if (num_verbs < 1 || num_nouns < 1) throw InvalidArgument("grammar needs at least one verb and one noun");
  if (!(action_density > 0.0 && action_density <= 1.0)) throw InvalidArgument("action_density must lie in (0, 1]");
  if (!(markov_concentration > 0.0)) throw InvalidArgument("markov_concentration must be positive");
  if (within_scale < 0.0 || between_scale < 0.0) throw InvalidArgument("grammar scales must be non-negative");
  if (modalities.empty()) throw InvalidArgument("grammar needs at least one modality");
  for (const auto& m : modalities) {
    if (m.feature_dim < 1) throw InvalidArgument("modality '" + m.name + "' has zero feature dim");
  }
}

std::string synthetic_token(std::string_view prefix, std::size_t index) {
  std::string code;
  do {
    code.insert(code.begin(), static_cast<char>('a' + index % 26));
    index /= 26;
  } while (index > 0);
  return std::string(prefix) + code;
}

SyntheticGrammar gen_grammar(const GrammarConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t V = config.num_verbs, N = config.num_nouns;
  const auto target =
      static_cast<std::size_t>(std::ceil(config.action_density * static_cast<double>(V * N) - 1e-9));
  if (target < 2) throw InvalidArgument("grammar realizes fewer than two actions");

  // Cover every verb and noun first when the budget allows it, then fill.
  std::vector<bool> taken(V * N, false);
  std::vector<std::size_t> cells;
  if (target >= std::max(V, N)) {
    std::vector<std::size_t> pv(V), pn(N);
    std::iota(pv.begin(), pv.end(), 0);
    std::iota(pn.begin(), pn.end(), 0);
    std::shuffle(pv.begin(), pv.end(), rng);
    std::shuffle(pn.begin(), pn.end(), rng);
    for (std::size_t j = 0; j < std::max(V, N); ++j) {
      const std::size_t cell = pv[j % V] * N + pn[j % N];
      if (!taken[cell]) {
        taken[cell] = true;
        cells.push_back(cell);
      }
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t c = 0; c < V * N; ++c) {
    if (!taken[c]) rest.push_back(c);
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  for (std::size_t c : rest) {
    if (cells.size() >= target) break;
    cells.push_back(c);
  }
  std::sort(cells.begin(), cells.end());

  // Only tokens that occur in some action enter the vocab.
  std::vector<int> verb_id(V, -1), noun_id(N, -1);
  std::vector<std::string> verbs, nouns;
  std::vector<ActionVocab::Action> actions;
  for (std::size_t c : cells) {
    const std::size_t v = c / N, n = c % N;
    if (verb_id[v] < 0) {
      verb_id[v] = static_cast<int>(verbs.size());
      verbs.push_back(synthetic_token("v", v));
    }
    if (noun_id[n] < 0) {
      noun_id[n] = static_cast<int>(nouns.size());
      nouns.push_back(synthetic_token("n", n));
    }
  }
  for (std::size_t c : cells) {
    actions.push_back({static_cast<VerbId>(verb_id[c / N]), static_cast<NounId>(noun_id[c % N])});
  }

  SyntheticGrammar g;
  g.vocab = ActionVocab(std::move(verbs), std::move(nouns), std::move(actions));
  const auto K = static_cast<Index>(g.vocab.num_actions());

  std::gamma_distribution<double> gamma(config.markov_concentration, 1.0);
  g.transition.resize(K, K);
  for (Index k = 0; k < K; ++k) {
    for (Index i = 0; i < K; ++i) g.transition(k, i) = gamma(rng);
    const double sum = g.transition.row(k).sum();
    if (sum > 0.0) {
      g.transition.row(k) /= sum;
    } else {
      g.transition.row(k).setConstant(1.0 / static_cast<double>(K));
    }
  }

  g.class_means.assign(static_cast<std::size_t>(K), {});
  for (const auto& modality : config.modalities) {
    const auto D = static_cast<Index>(modality.feature_dim);
    const double unit = 1.0 / std::sqrt(static_cast<double>(D));
    std::vector<VectorXd> verb_dirs, noun_dirs;
    for (std::size_t v = 0; v < g.vocab.num_verbs(); ++v) verb_dirs.push_back(gaussian_vector(rng, D, unit));
    for (std::size_t n = 0; n < g.vocab.num_nouns(); ++n) noun_dirs.push_back(gaussian_vector(rng, D, unit));
    for (Index k = 0; k < K; ++k) {
      const auto& a = g.vocab.action(static_cast<ActionId>(k));
      VectorXd mean = config.between_scale * (verb_dirs[a.verb] + noun_dirs[a.noun]) +
                      config.within_scale * gaussian_vector(rng, D, unit);
      g.class_means[static_cast<std::size_t>(k)].push_back(std::move(mean));
    }
  }
  return g;
}

nlohmann::json SyntheticGrammar::to_json() const {
  nlohmann::json transitions = nlohmann::json::array();
  for (Index k = 0; k < transition.rows(); ++k) {
    std::vector<double> row(transition.row(k).begin(), transition.row(k).end());
    transitions.push_back(row);
  }
  nlohmann::json means = nlohmann::json::array();
  for (const auto& per_action : class_means) {
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : per_action) mods.push_back(std::vector<double>(m.begin(), m.end()));
    means.push_back(std::move(mods));
  }
  return {{"vocab", vocab.to_json()}, {"transition", std::move(transitions)}, {"class_means", std::move(means)}};
}

AnnotationSet gen_annotation_sequences(const SyntheticGrammar& grammar, std::size_t num_videos, std::size_t length,
                                       std::uint64_t seed) {
  if (length < 1) throw InvalidArgument("video length must be >= 1");
  std::mt19937_64 rng(seed);
  const auto K = grammar.vocab.num_actions();
  std::vector<ActionInstance> instances;
  instances.reserve(num_videos * length);
  for (std::size_t v = 0; v < num_videos; ++v) {
    char name[32];
    std::snprintf(name, sizeof name, "video%05zu", v);
    auto current = std::uniform_int_distribution<std::size_t>(0, K - 1)(rng);
    for (std::size_t j = 0; j < length; ++j) {
      if (j > 0) current = sample_categorical(rng, grammar.transition.row(static_cast<Index>(current)).transpose());
      const auto id = static_cast<ActionId>(current);
      instances.push_back({name, static_cast<double>(j), grammar.vocab.verb_name(id), grammar.vocab.noun_name(id)});
    }
  }
  return AnnotationSet{std::move(instances)};
}

std::vector<std::pair<ActionId, ActionId>> sample_transitions(const AnnotationSet& annotations,
                                                              const ActionVocab& vocab) {
  const auto labels = label_instances(annotations, vocab);
  std::vector<std::pair<ActionId, ActionId>> out;
  for (std::size_t j = 1; j < labels.size(); ++j) {
    if (annotations.instances[j].video_id == annotations.instances[j - 1].video_id) {
      out.emplace_back(labels[j - 1], labels[j]);
    }
  }
  return out;
}

FeatureSet gen_features(const SyntheticGrammar& grammar, const AnnotationSet& annotations,
                        const ProtocolConfig& protocol, double noise_sigma, std::uint64_t seed) {
  protocol.validate();
  if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be non-negative");
  if (grammar.class_means.empty()) throw InvalidArgument("grammar has no class means");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto T = static_cast<Index>(protocol.timesteps());

  FeatureSet set;
  for (const auto& m : grammar.class_means.front()) set.dims.push_back(static_cast<std::size_t>(m.size()));
  set.timesteps = protocol.timesteps();
  for (const auto& [prev, target] : sample_transitions(annotations, grammar.vocab)) {
    FeatureSample sample;
    sample.target = target;
    for (std::size_t m = 0; m < set.dims.size(); ++m) {
      const auto& from = grammar.class_means[prev][m];
      const auto& to = grammar.class_means[target][m];
      MatrixXd x(from.size(), T);
      for (Index t = 0; t < T; ++t) {
        const double lambda = static_cast<double>(t + 1) / static_cast<double>(T);
        for (Index d = 0; d < from.size(); ++d) {
          const double value = (1.0 - lambda) * from(d) + lambda * to(d) + noise_sigma * noise(rng);
          x(d, t) = static_cast<double>(static_cast<float>(value));
        }
      }
      sample.features.push_back(std::move(x));
    }
    set.samples.push_back(std::move(sample));
  }
  return set;
}

EmbeddingTable gen_synthetic_embeddings(const SyntheticGrammar& grammar, std::size_t dimension,
                                        double cohort_similarity, std::uint64_t seed) {
  if (!(cohort_similarity >= 0.0 && cohort_similarity <= 1.0)) {
    throw InvalidArgument("cohort_similarity must lie in [0, 1]");
  }
  EmbeddingTable table(dimension);
  std::mt19937_64 rng(seed);
  const auto d = static_cast<Index>(dimension);
  const double shared = std::sqrt(cohort_similarity);
  const double own = std::sqrt(1.0 - cohort_similarity);
  auto fill = [&](const std::vector<std::string>& tokens) {
    const VectorXd centre = random_unit(rng, d);
    for (const auto& token : tokens) {
      VectorXd v = shared * centre + own * random_unit(rng, d);
      const double norm = v.norm();
      table.set(token, norm > 0.0 ? VectorXd(v / norm) : centre);
    }
  };
  fill(grammar.vocab.verbs());
  fill(grammar.vocab.nouns());
  return table;
}

void FeatureSet::validate() const {
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& f = samples[s].features;
    if (f.size() != dims.size()) throw InvalidArgument("sample " + std::to_string(s) + " has wrong modality count");
    for (std::size_t m = 0; m < dims.size(); ++m) {
      if (static_cast<std::size_t>(f[m].rows()) != dims[m] || static_cast<std::size_t>(f[m].cols()) != timesteps) {
        throw InvalidArgument("sample " + std::to_string(s) + " has wrong feature shape");
      }
    }
  }
}

namespace {
constexpr std::string_view kFeatureMagic = "FEAT";
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

std::string serialize_features(const FeatureSet& set) {
  set.validate();
  detail::ByteWriter w;
  w.magic(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(set.samples.size()));
  w.u32(static_cast<std::uint32_t>(set.dims.size()));
  for (auto d : set.dims) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(set.timesteps));
  for (const auto& s : set.samples) {
    w.u32(s.target);
    for (const auto& x : s.features) {
      for (Index t = 0; t < x.cols(); ++t) {
        for (Index d = 0; d < x.rows(); ++d) w.f32(static_cast<float>(x(d, t)));
      }
    }
  }
  return w.take();
}

FeatureSet parse_features(std::string_view bytes, std::string split) {
  detail::ByteReader r(bytes, "feature file");
  r.expect_magic(kFeatureMagic);
  const auto version = r.u32();
  if (version != kFeatureVersion) throw FormatError("feature file: unsupported version " + std::to_string(version));
  FeatureSet set;
  set.split = std::move(split);
  const auto count = r.u32();
  const auto num_modalities = r.u32();
  r.need_items(num_modalities, 4);
  std::uint64_t floats_per_sample = 0;
  for (std::uint32_t m = 0; m < num_modalities; ++m) set.dims.push_back(r.u32());
  set.timesteps = r.u32();
  for (auto d : set.dims) floats_per_sample += static_cast<std::uint64_t>(d) * set.timesteps;
  r.need_items(count, 4 + 4 * floats_per_sample);
  set.samples.reserve(count);
  for (std::uint32_t s = 0; s < count; ++s) {
    FeatureSample sample;
    sample.target = r.u32();
    for (auto d : set.dims) {
      MatrixXd x(static_cast<Index>(d), static_cast<Index>(set.timesteps));
      for (Index t = 0; t < x.cols(); ++t) {
        for (Index i = 0; i < x.rows(); ++i) x(i, t) = static_cast<double>(r.f32());
      }
      sample.features.push_back(std::move(x));
    }
    set.samples.push_back(std::move(sample));
  }
  r.expect_end();
  return set;
}

void write_features(const std::filesystem::path& path, const FeatureSet& set) {
  write_text_file(path, serialize_features(set));
}

FeatureSet read_features(const std::filesystem::path& path, std::string split) {
  return parse_features(read_text_file(path), std::move(split));
}

SynthConfig SynthConfig::from_json(const nlohmann::json& doc) {
  SynthConfig c;
  try {
    if (doc.contains("grammar")) {
      const auto& g = doc.at("grammar");
      c.grammar.num_verbs = g.value("num_verbs", c.grammar.num_verbs);
      c.grammar.num_nouns = g.value("num_nouns", c.grammar.num_nouns);
      c.grammar.action_density = g.value("action_density", c.grammar.action_density);
      c.grammar.within_scale = g.value("within_scale", c.grammar.within_scale);
      c.grammar.between_scale = g.value("between_scale", c.grammar.between_scale);
      c.grammar.markov_concentration = g.value("markov_concentration", c.grammar.markov_concentration);
      if (g.contains("modalities")) c.grammar.modalities = modalities_from_json(g.at("modalities"));
      c.grammar.seed = g.value("seed", c.grammar.seed);
    }
    if (doc.contains("protocol")) c.protocol = protocol_from_json(doc.at("protocol"));
    c.num_videos = doc.value("num_videos", c.num_videos);
    c.video_length = doc.value("video_length", c.video_length);
    c.noise_sigma = doc.value("noise_sigma", c.noise_sigma);
    c.embedding_dim = doc.value("embedding_dim", c.embedding_dim);
    c.cohort_similarity = doc.value("cohort_similarity", c.cohort_similarity);
    c.train_fraction = doc.value("train_fraction", c.train_fraction);
    c.val_fraction = doc.value("val_fraction", c.val_fraction);
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad synth config: ") + e.what());
  }
  return c;
}

nlohmann::json SynthConfig::to_json() const {
  return {{"grammar",
           {{"num_verbs", grammar.num_verbs},
            {"num_nouns", grammar.num_nouns},
            {"action_density", grammar.action_density},
            {"within_scale", grammar.within_scale},
            {"between_scale", grammar.between_scale},
            {"markov_concentration", grammar.markov_concentration},
            {"modalities", modalities_to_json(grammar.modalities)},
            {"seed", grammar.seed}}},
          {"protocol", protocol_to_json(protocol)},
          {"num_videos", num_videos},
          {"video_length", video_length},
          {"noise_sigma", noise_sigma},
          {"embedding_dim", embedding_dim},
          {"cohort_similarity", cohort_similarity},
          {"train_fraction", train_fraction},
          {"val_fraction", val_fraction},
          {"seed", seed}};
}

SyntheticDataset generate_dataset(const SynthConfig& config) {
  if (config.train_fraction <= 0.0 || config.val_fraction < 0.0 || config.train_fraction + config.val_fraction > 1.0) {
    throw InvalidArgument("bad split fractions");
  }
  SyntheticDataset ds;
  ds.grammar = gen_grammar(config.grammar);
  // Independent streams per stage so changing one knob leaves the others intact.
  std::seed_seq seq{config.seed};
  std::uint32_t seeds[4];
  seq.generate(std::begin(seeds), std::end(seeds));
  ds.annotations = gen_annotation_sequences(ds.grammar, config.num_videos, config.video_length, seeds[0]);
  FeatureSet all = gen_features(ds.grammar, ds.annotations, config.protocol, config.noise_sigma, seeds[1]);
  const auto transitions = sample_transitions(ds.annotations, ds.grammar.vocab);
  ds.embeddings = gen_synthetic_embeddings(ds.grammar, config.embedding_dim, config.cohort_similarity, seeds[2]);

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seeds[3]);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * n));
  const auto n_val = std::min(order.size() - n_train, static_cast<std::size_t>(std::llround(config.val_fraction * n)));
  auto subset = [&](std::size_t begin, std::size_t end, const char* name) {
    FeatureSet s;
    s.dims = all.dims;
    s.timesteps = all.timesteps;
    s.split = name;
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) s.samples.push_back(all.samples[i]);
    return std::make_pair(std::move(s), idx);
  };
  auto [train, train_idx] = subset(0, n_train, "train");
  ds.train = std::move(train);
  ds.val = subset(n_train, n_train + n_val, "val").first;
  ds.test = subset(n_train + n_val, order.size(), "test").first;

  std::vector<ActionInstance> pairs;
  const auto& vocab = ds.grammar.vocab;
  for (auto i : train_idx) {
    const auto [prev, target] = transitions[i];
    const std::string video = "train" + std::to_string(i);
    pairs.push_back({video, 0.0, vocab.verb_name(prev), vocab.noun_name(prev)});
    pairs.push_back({video, 1.0, vocab.verb_name(target), vocab.noun_name(target)});
  }
  ds.train_transitions = AnnotationSet{std::move(pairs)};
  return ds;
}

}  // namespace lsa
