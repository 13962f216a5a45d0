#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace lsa {

using ActionId = std::uint32_t;
using VerbId = std::uint32_t;
using NounId = std::uint32_t;

struct ActionInstance {
  std::string video_id;
  double start_time = 0.0;  // seconds
  std::string verb;
  std::string noun;

  bool operator==(const ActionInstance&) const = default;
};

/// Instances grouped by video (first-appearance order of video ids) and
/// sorted by start time within each video.
struct AnnotationSet {
  std::vector<ActionInstance> instances;

  bool empty() const { return instances.empty(); }
  std::size_t size() const { return instances.size(); }
};

/// Lowercases and trims surrounding whitespace. Internal punctuation is kept.
std::string normalize_token(std::string_view token);

/// Parses the `video_id,start_s,verb,noun` CSV. Throws ParseError naming the
/// offending line, or when the file has no data rows.
AnnotationSet parse_annotations(std::string_view text);

/// Restores the grouping/sorting invariant on an arbitrary instance list.
AnnotationSet make_annotation_set(std::vector<ActionInstance> instances);

std::string format_annotations(const AnnotationSet& annotations);

/// The action set as verb-noun pairs. Immutable after construction.
class ActionVocab {
 public:
  struct Action {
    VerbId verb;
    NounId noun;
    bool operator==(const Action&) const = default;
  };

  ActionVocab() = default;

  /// Throws InvalidArgument on duplicate pairs, out-of-range ids, duplicate
  /// verb/noun strings, or an empty action list.
  ActionVocab(std::vector<std::string> verbs, std::vector<std::string> nouns,
              std::vector<Action> actions);

  std::size_t num_actions() const { return actions_.size(); }
  std::size_t num_verbs() const { return verbs_.size(); }
  std::size_t num_nouns() const { return nouns_.size(); }

  const std::vector<std::string>& verbs() const { return verbs_; }
  const std::vector<std::string>& nouns() const { return nouns_; }
  const std::vector<Action>& actions() const { return actions_; }
  const Action& action(ActionId id) const;

  const std::string& verb_name(ActionId id) const { return verbs_[action(id).verb]; }
  const std::string& noun_name(ActionId id) const { return nouns_[action(id).noun]; }

  /// Lookup by normalized token strings; returns false when absent.
  bool find(std::string_view verb, std::string_view noun, ActionId& out) const;
  ActionId at(std::string_view verb, std::string_view noun) const;

  /// All actions sharing `verb`, ascending ids. Never empty.
  const std::vector<ActionId>& verb_cohort(VerbId verb) const;
  /// All actions sharing `noun`, ascending ids. Never empty.
  const std::vector<ActionId>& noun_cohort(NounId noun) const;

  nlohmann::json to_json() const;
  static ActionVocab from_json(const nlohmann::json& doc);

  /// FNV-1a 64 of the canonical JSON form, as 16 hex digits.
  std::string hash() const;

  bool operator==(const ActionVocab& other) const {
    return verbs_ == other.verbs_ && nouns_ == other.nouns_ && actions_ == other.actions_;
  }

 private:
  std::vector<std::string> verbs_;
  std::vector<std::string> nouns_;
  std::vector<Action> actions_;
  std::map<std::pair<VerbId, NounId>, ActionId> action_index_;
  std::map<std::string, VerbId, std::less<>> verb_index_;
  std::map<std::string, NounId, std::less<>> noun_index_;
  std::vector<std::vector<ActionId>> verb_cohorts_;
  std::vector<std::vector<ActionId>> noun_cohorts_;
};

/// Verbs, nouns and actions in first-appearance order.
ActionVocab build_vocab(const AnnotationSet& annotations);

/// Convenience wrappers matching the free-function style of the other modules.
inline const std::vector<ActionId>& verb_cohort(const ActionVocab& vocab, VerbId verb) {
  return vocab.verb_cohort(verb);
}
inline const std::vector<ActionId>& noun_cohort(const ActionVocab& vocab, NounId noun) {
  return vocab.noun_cohort(noun);
}

/// Maps each instance to its action id; throws InvalidArgument naming the
/// first instance whose pair is not in the vocab.
std::vector<ActionId> label_instances(const AnnotationSet& annotations, const ActionVocab& vocab);

}  // namespace lsa
