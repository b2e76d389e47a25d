#include "sentimtl/data.hpp"

#include <fmt/format.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "sentimtl/error.hpp"
#include "sentimtl/text.hpp"

namespace sentimtl {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::neutral: return "neutral";
  }
  return "neutral";
}

std::optional<Polarity> parse_polarity(std::string_view text) {
  if (text == "positive") return Polarity::positive;
  if (text == "negative") return Polarity::negative;
  if (text == "neutral") return Polarity::neutral;
  return std::nullopt;
}

void validate(const Instance& instance) {
  if (instance.id.empty()) throw DataError("instance id is empty");
  if (trim(instance.sentence).empty())
    throw DataError(fmt::format("instance {}: sentence is empty", instance.id));
  if (instance.target.empty())
    throw DataError(fmt::format("instance {}: target is empty", instance.id));
  if (index_of(instance.polarity) >= kNumPolarities)
    throw DataError(fmt::format("instance {}: invalid polarity", instance.id));
  if (instance.aux) {
    const auto& aux = *instance.aux;
    if (aux.aspect.empty() || aux.opinion.empty())
      throw DataError(fmt::format("instance {}: aspect and opinion must be non-empty", instance.id));
    for (double c : {aux.aspect_confidence, aux.opinion_confidence}) {
      if (!(c >= 0.5 && c <= 1.0))
        throw DataError(
            fmt::format("instance {}: confidence {} outside [0.5, 1]", instance.id, c));
    }
    if (aux.refine_epochs_used < 0)
      throw DataError(fmt::format("instance {}: negative refine_epochs_used", instance.id));
  }
}

Dataset::Dataset(std::string name, std::vector<Instance> instances)
    : name_(std::move(name)), instances_(std::move(instances)) {
  std::unordered_set<std::string> seen;
  seen.reserve(instances_.size());
  for (const auto& inst : instances_) {
    validate(inst);
    if (!seen.insert(inst.id).second)
      throw DataError(fmt::format("duplicate instance id '{}'", inst.id));
  }
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

template <typename T>
T require_field(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(fmt::format("missing field '{}'", key));
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError(fmt::format("field '{}' has the wrong type", key));
  }
}

double admit_confidence(double c, ConfidencePolicy policy, LoadStats* stats, const char* key) {
  if (c >= 0.5 && c <= 1.0) return c;
  if (policy == ConfidencePolicy::strict || !std::isfinite(c))
    throw DataError(fmt::format("{} {} outside [0.5, 1]", key, c));
  if (stats) ++stats->clipped_confidences;
  return std::clamp(c, 0.5, 1.0);
}

}  // namespace

Instance parse_jsonl_line(std::string_view line, ConfidencePolicy policy, LoadStats* stats) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(fmt::format("malformed JSON: {}", e.what()));
  }
  if (!obj.is_object()) throw DataError("line is not a JSON object");

  Instance inst;
  inst.id = require_field<std::string>(obj, "id");
  inst.sentence = nfc_normalize(require_field<std::string>(obj, "sentence"));
  inst.target = nfc_normalize(require_field<std::string>(obj, "target"));
  const auto polarity = require_field<std::string>(obj, "polarity");
  const auto parsed = parse_polarity(polarity);
  if (!parsed) throw DataError(fmt::format("unknown polarity '{}'", polarity));
  inst.polarity = *parsed;
  inst.implicit = obj.contains("implicit") ? require_field<bool>(obj, "implicit") : false;

  const bool has_aux = obj.contains("aspect_confidence") || obj.contains("opinion_confidence");
  if (has_aux) {
    AuxiliaryElements aux;
    aux.aspect = nfc_normalize(require_field<std::string>(obj, "aspect"));
    aux.aspect_confidence = admit_confidence(require_field<double>(obj, "aspect_confidence"),
                                             policy, stats, "aspect_confidence");
    aux.opinion = nfc_normalize(require_field<std::string>(obj, "opinion"));
    aux.opinion_confidence = admit_confidence(require_field<double>(obj, "opinion_confidence"),
                                              policy, stats, "opinion_confidence");
    if (obj.contains("refine_epochs_used"))
      aux.refine_epochs_used = require_field<int>(obj, "refine_epochs_used");
    if (obj.contains("consensus_reached"))
      aux.consensus_reached = require_field<bool>(obj, "consensus_reached");
    inst.aux = std::move(aux);
  }
  validate(inst);
  return inst;
}

std::string to_jsonl_line(const Instance& inst) {
  ordered_json obj;
  obj["id"] = inst.id;
  obj["sentence"] = nfc_normalize(inst.sentence);
  obj["target"] = nfc_normalize(inst.target);
  obj["polarity"] = std::string(to_string(inst.polarity));
  obj["implicit"] = inst.implicit;
  if (inst.aux) {
    obj["aspect"] = nfc_normalize(inst.aux->aspect);
    obj["aspect_confidence"] = inst.aux->aspect_confidence;
    obj["opinion"] = nfc_normalize(inst.aux->opinion);
    obj["opinion_confidence"] = inst.aux->opinion_confidence;
    obj["refine_epochs_used"] = inst.aux->refine_epochs_used;
    obj["consensus_reached"] = inst.aux->consensus_reached;
  }
  return obj.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

Dataset load_jsonl(const std::filesystem::path& path, ConfidencePolicy policy, LoadStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));

  std::vector<Instance> instances;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    Instance inst;
    try {
      inst = parse_jsonl_line(line, policy, stats);
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
    if (!seen.insert(inst.id).second)
      throw DataError(
          fmt::format("{}:{}: duplicate instance id '{}'", path.string(), line_no, inst.id));
    instances.push_back(std::move(inst));
  }
  return Dataset(path.stem().string(), std::move(instances));
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  for (const auto& inst : dataset) out << to_jsonl_line(inst) << '\n';
  out.flush();
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

// ---------------------------------------------------------------------------
// Implicit / explicit slices

OpinionLexicon::OpinionLexicon(std::set<std::string> words) {
  for (auto& w : words) {
    for (auto& piece : split_words(w)) words_.insert(std::move(piece));
  }
}

OpinionLexicon OpinionLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open lexicon '{}'", path.string()));
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto word = trim(line);
    if (word.empty() || word.front() == '#') continue;
    words.insert(std::move(word));
  }
  return OpinionLexicon(std::move(words));
}

OpinionLexicon OpinionLexicon::builtin() {
  static const OpinionLexicon lexicon(std::set<std::string>{
      "amazing",   "awesome",   "awful",     "bad",       "beautiful", "best",
      "bland",     "boring",    "brilliant", "broken",    "cheap",     "clean",
      "comfortable", "cool",    "decent",    "delicious", "dirty",     "disappointed",
      "disappointing", "enjoy", "enjoyed",   "excellent", "expensive", "fabulous",
      "fantastic", "fast",      "fine",      "fresh",     "friendly",  "good",
      "great",     "happy",     "hate",      "horrible",  "impressive", "inedible",
      "love",      "loved",     "mediocre",  "nice",      "overpriced", "perfect",
      "pleasant",  "poor",      "recommend", "rude",      "slow",      "stale",
      "superb",    "tasty",     "terrible",  "unfriendly", "unhappy",  "wonderful",
      "worse",     "worst",     "yummy"});
  return lexicon;
}

bool OpinionLexicon::contains(std::string_view word) const {
  return words_.find(word) != words_.end();
}

bool OpinionLexicon::is_implicit(std::string_view sentence) const {
  for (const auto& w : split_words(sentence)) {
    if (contains(w)) return false;
  }
  return true;
}

ImplicitFlags load_implicit_flags(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open flag file '{}'", path.string()));
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!obj.is_object()) throw DataError(fmt::format("{}: expected a JSON object", path.string()));
  ImplicitFlags flags;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!it.value().is_boolean())
      throw DataError(fmt::format("{}: flag for '{}' is not a boolean", path.string(), it.key()));
    flags.emplace(it.key(), it.value().get<bool>());
  }
  return flags;
}

namespace {

void require_flags_cover(const std::vector<std::string>& ids, const ImplicitFlags& flags) {
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    if (!flags.contains(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    constexpr std::size_t kShown = 20;
    std::string listed;
    for (std::size_t i = 0; i < missing.size() && i < kShown; ++i) {
      if (i) listed += ", ";
      listed += missing[i];
    }
    if (missing.size() > kShown) listed += fmt::format(", ... ({} total)", missing.size());
    throw DataError(fmt::format("implicit flags missing for ids: {}", listed));
  }
}

}  // namespace

SliceSplit split_implicit(const Dataset& dataset, const ImplicitFlags* flags,
                          const OpinionLexicon& lexicon) {
  if (flags) {
    std::vector<std::string> ids;
    ids.reserve(dataset.size());
    for (const auto& inst : dataset) ids.push_back(inst.id);
    require_flags_cover(ids, *flags);
  }
  std::vector<Instance> explicit_part;
  std::vector<Instance> implicit_part;
  for (const auto& inst : dataset) {
    Instance copy = inst;
    copy.implicit = flags ? flags->find(inst.id)->second : lexicon.is_implicit(inst.sentence);
    (copy.implicit ? implicit_part : explicit_part).push_back(std::move(copy));
  }
  return {Dataset(dataset.name() + ".explicit", std::move(explicit_part)),
          Dataset(dataset.name() + ".implicit", std::move(implicit_part))};
}

// ---------------------------------------------------------------------------
// SemEval-2014 XML

SemevalConversion convert_semeval_xml(const std::filesystem::path& path,
                                      const ImplicitFlags* flags, const OpinionLexicon& lexicon) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(path.string(), tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw DataError(
        fmt::format("{}:{}: XML parse error: {}", path.string(), e.line(), e.message()));
  }

  auto root = tree.get_child_optional("sentences");
  if (!root) throw DataError(fmt::format("{}: missing <sentences> root", path.string()));

  SemevalConversion result;
  std::vector<Instance> instances;
  for (const auto& [tag, sentence] : *root) {
    if (tag != "sentence") continue;
    const auto sid = sentence.get<std::string>("<xmlattr>.id", "");
    const auto text = nfc_normalize(trim(sentence.get<std::string>("text", "")));
    auto terms = sentence.get_child_optional("aspectTerms");
    if (!terms) continue;
    std::size_t k = 0;
    for (const auto& [term_tag, term] : *terms) {
      if (term_tag != "aspectTerm") continue;
      const std::string id = fmt::format("{}#{}", sid, k++);
      auto polarity_attr = term.get_optional<std::string>("<xmlattr>.polarity");
      if (!polarity_attr)
        throw DataError(fmt::format("{}: aspectTerm {} has no polarity attribute", path.string(), id));
      if (*polarity_attr == "conflict") {
        ++result.dropped_conflict;
        continue;
      }
      auto polarity = parse_polarity(*polarity_attr);
      if (!polarity)
        throw DataError(fmt::format("{}: aspectTerm {} has unknown polarity '{}'", path.string(),
                                    id, *polarity_attr));
      Instance inst;
      inst.id = id;
      inst.sentence = text;
      inst.target = nfc_normalize(term.get<std::string>("<xmlattr>.term", ""));
      inst.polarity = *polarity;
      if (auto attr = term.get_optional<std::string>("<xmlattr>.implicit_sentiment")) {
        inst.implicit = (*attr == "True" || *attr == "true" || *attr == "1");
      } else {
        inst.implicit = lexicon.is_implicit(text);
      }
      instances.push_back(std::move(inst));
    }
  }
  Dataset converted(path.stem().string(), std::move(instances));
  if (flags) {
    std::vector<std::string> ids;
    for (const auto& inst : converted) ids.push_back(inst.id);
    require_flags_cover(ids, *flags);
    std::vector<Instance> merged;
    merged.reserve(converted.size());
    for (const auto& inst : converted) {
      Instance copy = inst;
      copy.implicit = flags->find(inst.id)->second;
      merged.push_back(std::move(copy));
    }
    converted = Dataset(converted.name(), std::move(merged));
  }
  result.dataset = std::move(converted);
  return result;
}

}  // namespace sentimtl
