#include "lsa/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "lsa/error.hpp"
#include "lsa/io.hpp"

namespace lsa {

namespace {

constexpr std::string_view kHeader = "video_id,start_s,verb,noun";

double parse_seconds(std::string_view field, std::size_t line) {
  field = trim(field);
  double value = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError("start_s is not a number: '" + std::string(field) + "'", line);
  }
  if (value < 0.0) throw ParseError("start_s is negative", line);
  return value;
}

}  // namespace

std::string normalize_token(std::string_view token) {
  std::string out(trim(token));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

AnnotationSet make_annotation_set(std::vector<ActionInstance> instances) {
  std::unordered_map<std::string, std::size_t> video_rank;
  for (const auto& inst : instances) video_rank.emplace(inst.video_id, video_rank.size());
  std::stable_sort(instances.begin(), instances.end(),
                   [&](const ActionInstance& a, const ActionInstance& b) {
                     const auto ra = video_rank.at(a.video_id);
                     const auto rb = video_rank.at(b.video_id);
                     if (ra != rb) return ra < rb;
                     return a.start_time < b.start_time;
                   });
  return AnnotationSet{std::move(instances)};
}

AnnotationSet parse_annotations(std::string_view text) {
  auto lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]) != kHeader) {
    throw ParseError("expected header '" + std::string(kHeader) + "'", 1);
  }
  std::vector<ActionInstance> instances;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    auto line = lines[i];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 4) {
      throw ParseError("expected 4 columns, got " + std::to_string(cols.size()), line_no);
    }
    ActionInstance inst;
    inst.video_id = std::string(trim(cols[0]));
    inst.start_time = parse_seconds(cols[1], line_no);
    inst.verb = normalize_token(cols[2]);
    inst.noun = normalize_token(cols[3]);
    if (inst.video_id.empty()) throw ParseError("empty video_id", line_no);
    if (inst.verb.empty() || inst.noun.empty()) throw ParseError("empty verb or noun", line_no);
    instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw ParseError("annotation file has no data rows");
  return make_annotation_set(std::move(instances));
}

std::string format_annotations(const AnnotationSet& annotations) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& inst : annotations.instances) {
    out += inst.video_id;
    out += ',';
    out += format_double(inst.start_time);
    out += ',';
    out += inst.verb;
    out += ',';
    out += inst.noun;
    out += '\n';
  }
  return out;
}

ActionVocab::ActionVocab(std::vector<std::string> verbs, std::vector<std::string> nouns,
                         std::vector<Action> actions)
    : verbs_(std::move(verbs)), nouns_(std::move(nouns)), actions_(std::move(actions)) {
  if (actions_.empty()) throw InvalidArgument("vocab has no actions");
  for (VerbId v = 0; v < verbs_.size(); ++v) {
    if (!verb_index_.emplace(verbs_[v], v).second) {
      throw InvalidArgument("duplicate verb '" + verbs_[v] + "'");
    }
  }
  for (NounId n = 0; n < nouns_.size(); ++n) {
    if (!noun_index_.emplace(nouns_[n], n).second) {
      throw InvalidArgument("duplicate noun '" + nouns_[n] + "'");
    }
  }
  verb_cohorts_.resize(verbs_.size());
  noun_cohorts_.resize(nouns_.size());
  for (ActionId k = 0; k < actions_.size(); ++k) {
    const auto& a = actions_[k];
    if (a.verb >= verbs_.size() || a.noun >= nouns_.size()) {
      throw InvalidArgument("action " + std::to_string(k) + " has out-of-range verb/noun id");
    }
    if (!action_index_.emplace(std::make_pair(a.verb, a.noun), k).second) {
      throw InvalidArgument("duplicate action (" + verbs_[a.verb] + ", " + nouns_[a.noun] + ")");
    }
    verb_cohorts_[a.verb].push_back(k);
    noun_cohorts_[a.noun].push_back(k);
  }
  for (VerbId v = 0; v < verbs_.size(); ++v) {
    if (verb_cohorts_[v].empty()) throw InvalidArgument("verb '" + verbs_[v] + "' has no action");
  }
  for (NounId n = 0; n < nouns_.size(); ++n) {
    if (noun_cohorts_[n].empty()) throw InvalidArgument("noun '" + nouns_[n] + "' has no action");
  }
}

const ActionVocab::Action& ActionVocab::action(ActionId id) const {
  if (id >= actions_.size()) throw InvalidArgument("action id out of range: " + std::to_string(id));
  return actions_[id];
}

bool ActionVocab::find(std::string_view verb, std::string_view noun, ActionId& out) const {
  const auto v = verb_index_.find(verb);
  const auto n = noun_index_.find(noun);
  if (v == verb_index_.end() || n == noun_index_.end()) return false;
  const auto it = action_index_.find({v->second, n->second});
  if (it == action_index_.end()) return false;
  out = it->second;
  return true;
}

ActionId ActionVocab::at(std::string_view verb, std::string_view noun) const {
  ActionId id = 0;
  if (!find(verb, noun, id)) {
    throw InvalidArgument("unknown action (" + std::string(verb) + ", " + std::string(noun) + ")");
  }
  return id;
}

const std::vector<ActionId>& ActionVocab::verb_cohort(VerbId verb) const {
  if (verb >= verb_cohorts_.size()) throw InvalidArgument("verb id out of range: " + std::to_string(verb));
  return verb_cohorts_[verb];
}

const std::vector<ActionId>& ActionVocab::noun_cohort(NounId noun) const {
  if (noun >= noun_cohorts_.size()) throw InvalidArgument("noun id out of range: " + std::to_string(noun));
  return noun_cohorts_[noun];
}

nlohmann::json ActionVocab::to_json() const {
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& a : actions_) actions.push_back({a.verb, a.noun});
  return {{"verbs", verbs_}, {"nouns", nouns_}, {"actions", std::move(actions)}};
}

ActionVocab ActionVocab::from_json(const nlohmann::json& doc) {
  try {
    auto verbs = doc.at("verbs").get<std::vector<std::string>>();
    auto nouns = doc.at("nouns").get<std::vector<std::string>>();
    std::vector<Action> actions;
    for (const auto& pair : doc.at("actions")) {
      if (!pair.is_array() || pair.size() != 2) throw ParseError("action entry must be [verb_id, noun_id]");
      actions.push_back({pair[0].get<VerbId>(), pair[1].get<NounId>()});
    }
    return ActionVocab(std::move(verbs), std::move(nouns), std::move(actions));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad vocab document: ") + e.what());
  }
}

std::string ActionVocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json().dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ActionVocab build_vocab(const AnnotationSet& annotations) {
  if (annotations.empty()) throw InvalidArgument("cannot build a vocab from no annotations");
  std::vector<std::string> verbs, nouns;
  std::vector<ActionVocab::Action> actions;
  std::map<std::string, VerbId, std::less<>> verb_ids;
  std::map<std::string, NounId, std::less<>> noun_ids;
  std::map<std::pair<VerbId, NounId>, ActionId> seen;
  for (const auto& inst : annotations.instances) {
    auto [vit, vnew] = verb_ids.emplace(inst.verb, static_cast<VerbId>(verbs.size()));
    if (vnew) verbs.push_back(inst.verb);
    auto [nit, nnew] = noun_ids.emplace(inst.noun, static_cast<NounId>(nouns.size()));
    if (nnew) nouns.push_back(inst.noun);
    if (seen.emplace(std::make_pair(vit->second, nit->second), static_cast<ActionId>(actions.size())).second) {
      actions.push_back({vit->second, nit->second});
    }
  }
  return ActionVocab(std::move(verbs), std::move(nouns), std::move(actions));
}

std::vector<ActionId> label_instances(const AnnotationSet& annotations, const ActionVocab& vocab) {
  std::vector<ActionId> labels;
  labels.reserve(annotations.size());
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& inst = annotations.instances[i];
    ActionId id = 0;
    if (!vocab.find(inst.verb, inst.noun, id)) {
      throw InvalidArgument("instance " + std::to_string(i) + " (" + inst.video_id + " @ " +
                            format_double(inst.start_time) + ": " + inst.verb + " " + inst.noun +
                            ") is not in the vocab");
    }
    labels.push_back(id);
  }
  return labels;
}

}  // namespace lsa
