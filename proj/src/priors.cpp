#include "lsa/priors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "lsa/error.hpp"
#include "lsa/io.hpp"

namespace lsa {

namespace {

void fill_uniform_row(RowMatrix& m, Eigen::Index row) {
  m.row(row).setConstant(1.0 / static_cast<double>(m.cols()));
}

double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  double value = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("not a number: '" + std::string(field) + "'", line);
  }
  return value;
}

}  // namespace

PriorMatrix::PriorMatrix(RowMatrix values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.rows() != values_.cols()) {
    throw InvalidArgument("prior matrix must be square and non-empty");
  }
  for (Eigen::Index k = 0; k < values_.rows(); ++k) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < values_.cols(); ++i) {
      const double v = values_(k, i);
      if (!std::isfinite(v) || v < 0.0) {
        throw InvalidArgument("prior entry (" + std::to_string(k) + ", " + std::to_string(i) +
                              ") is negative or non-finite");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      throw InvalidArgument("prior row " + std::to_string(k) + " sums to " + format_double(sum));
    }
  }
}

std::span<const double> PriorMatrix::row(std::size_t k) const {
  if (k >= size()) throw InvalidArgument("prior row out of range: " + std::to_string(k));
  return {values_.data() + k * size(), size()};
}

EmbeddingTable::EmbeddingTable(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw InvalidArgument("embedding dimension must be positive");
}

void EmbeddingTable::set(const std::string& word, Eigen::VectorXd vector) {
  if (static_cast<std::size_t>(vector.size()) != dimension_) {
    throw InvalidArgument("embedding for '" + word + "' has wrong length");
  }
  entries_.insert_or_assign(word, std::move(vector));
}

const Eigen::VectorXd* EmbeddingTable::find(const std::string& word) const {
  const auto it = entries_.find(word);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> EmbeddingTable::words() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [word, _] : entries_) out.push_back(word);
  std::sort(out.begin(), out.end());
  return out;
}

PriorMatrix build_uniform_prior(std::size_t num_classes) {
  if (num_classes == 0) throw InvalidArgument("uniform prior needs at least one class");
  const auto k = static_cast<Eigen::Index>(num_classes);
  return PriorMatrix(RowMatrix::Constant(k, k, 1.0 / static_cast<double>(num_classes)));
}

PriorMatrix build_verb_noun_prior(const ActionVocab& vocab) {
  const auto K = static_cast<Eigen::Index>(vocab.num_actions());
  RowMatrix m = RowMatrix::Zero(K, K);
  for (ActionId k = 0; k < vocab.num_actions(); ++k) {
    const auto& a = vocab.action(k);
    const auto& by_verb = vocab.verb_cohort(a.verb);
    const auto& by_noun = vocab.noun_cohort(a.noun);
    // The two cohorts intersect exactly in k.
    const double c_k = static_cast<double>(by_verb.size() + by_noun.size() - 1);
    for (ActionId i : by_verb) m(k, i) = 1.0 / c_k;
    for (ActionId i : by_noun) m(k, i) = 1.0 / c_k;
  }
  return PriorMatrix(std::move(m));
}

EmbeddingTable load_embeddings(std::string_view text, std::size_t dimension) {
  EmbeddingTable table(dimension);
  const auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    for (auto f : split(line, ' ')) {
      if (!f.empty()) fields.push_back(f);
    }
    if (fields.size() != dimension + 1) {
      throw ParseError("expected " + std::to_string(dimension) + " values, got " +
                           std::to_string(fields.size() - 1),
                       i + 1);
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(dimension));
    for (std::size_t d = 0; d < dimension; ++d) v(static_cast<Eigen::Index>(d)) = parse_double(fields[d + 1], i + 1);
    table.set(std::string(fields[0]), std::move(v));
  }
  return table;
}

std::string format_embeddings(const EmbeddingTable& table) {
  std::string out;
  for (const auto& word : table.words()) {
    out += word;
    for (double x : *table.find(word)) {
      out += ' ';
      out += format_double(x);
    }
    out += '\n';
  }
  return out;
}

std::vector<std::string> split_words(std::string_view token) {
  std::vector<std::string> words;
  std::string current;
  for (char c : token) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

namespace {

Eigen::VectorXd embed_token(const EmbeddingTable& table, std::string_view token) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dimension()));
  int found = 0;
  for (const auto& word : split_words(token)) {
    if (const auto* v = table.find(word)) {
      sum += *v;
      ++found;
    }
  }
  if (found > 0) sum /= static_cast<double>(found);
  return sum;
}

}  // namespace

Eigen::VectorXd embed_action(const ActionVocab& vocab, const EmbeddingTable& table, ActionId action) {
  const auto d = static_cast<Eigen::Index>(table.dimension());
  Eigen::VectorXd phi(2 * d);
  phi.head(d) = embed_token(table, vocab.verb_name(action));
  phi.tail(d) = embed_token(table, vocab.noun_name(action));
  return phi;
}

PriorMatrix build_similarity_prior(const Eigen::MatrixXd& phi) {
  const Eigen::Index K = phi.rows();
  if (K == 0) throw InvalidArgument("no action embeddings");
  RowMatrix m(K, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    double denom = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) {
      m(k, i) = std::abs(phi.row(k).dot(phi.row(i)));
      denom += m(k, i);
    }
    if (denom > 0.0) {
      m.row(k) /= denom;
    } else {
      fill_uniform_row(m, k);
    }
  }
  return PriorMatrix(std::move(m));
}

PriorMatrix build_glove_prior(const ActionVocab& vocab, const EmbeddingTable& table) {
  const auto K = static_cast<Eigen::Index>(vocab.num_actions());
  Eigen::MatrixXd phi(K, 2 * static_cast<Eigen::Index>(table.dimension()));
  for (ActionId k = 0; k < vocab.num_actions(); ++k) phi.row(k) = embed_action(vocab, table, k).transpose();
  return build_similarity_prior(phi);
}

TransitionCounts count_transitions(const AnnotationSet& annotations, const ActionVocab& vocab) {
  const auto labels = label_instances(annotations, vocab);
  const auto K = static_cast<Eigen::Index>(vocab.num_actions());
  TransitionCounts counts = TransitionCounts::Zero(K, K);
  for (std::size_t j = 1; j < labels.size(); ++j) {
    if (annotations.instances[j].video_id != annotations.instances[j - 1].video_id) continue;
    counts(labels[j - 1], labels[j]) += 1;
  }
  return counts;
}

PriorMatrix build_temporal_prior(const TransitionCounts& counts) {
  const Eigen::Index K = counts.rows();
  if (K == 0 || counts.cols() != K) throw InvalidArgument("transition counts must be square and non-empty");
  RowMatrix m(K, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    std::uint64_t denom = 0;
    for (Eigen::Index j = 0; j < K; ++j) denom += counts(j, k);
    if (denom == 0) {
      fill_uniform_row(m, k);
      continue;
    }
    for (Eigen::Index i = 0; i < K; ++i) {
      m(k, i) = static_cast<double>(counts(i, k)) / static_cast<double>(denom);
    }
  }
  return PriorMatrix(std::move(m));
}

PriorMatrix build_temporal_prior(const AnnotationSet& annotations, const ActionVocab& vocab) {
  return build_temporal_prior(count_transitions(annotations, vocab));
}

PriorMatrix mix_priors(std::span<const PriorMatrix> priors, std::span<const double> weights) {
  if (priors.empty()) throw InvalidArgument("mix_priors needs at least one prior");
  if (priors.size() != weights.size()) throw InvalidArgument("one weight per prior required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("mixture weights must be finite and non-negative");
    total += w;
  }
  if (total <= 0.0) throw InvalidArgument("mixture weights sum to zero");
  const auto K = static_cast<Eigen::Index>(priors.front().size());
  RowMatrix m = RowMatrix::Zero(K, K);
  for (std::size_t p = 0; p < priors.size(); ++p) {
    if (priors[p].size() != priors.front().size()) throw InvalidArgument("mixture priors differ in size");
    m += (weights[p] / total) * priors[p].matrix();
  }
  return PriorMatrix(std::move(m));
}

std::string format_prior_csv(const PriorMatrix& prior) {
  std::string out;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const auto row = prior.row(k);
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

PriorMatrix parse_prior_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  const auto lines = split(text, '\n');
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const auto line = trim(lines[l]);
    if (line.empty()) continue;
    std::vector<double> row;
    for (auto field : split(line, ',')) row.push_back(parse_double(field, l + 1));
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError("ragged prior row", l + 1);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty prior file");
  const auto K = static_cast<Eigen::Index>(rows.size());
  if (static_cast<Eigen::Index>(rows.front().size()) != K) throw ParseError("prior matrix is not square");
  RowMatrix m(K, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index i = 0; i < K; ++i) m(k, i) = rows[k][i];
  }
  try {
    return PriorMatrix(std::move(m));
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
}

nlohmann::json prior_sidecar(const ActionVocab& vocab, std::string_view kind) {
  return {{"kind", kind}, {"vocab_hash", vocab.hash()}, {"num_classes", vocab.num_actions()}};
}

}  // namespace lsa
