#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sentimtl {

enum class Polarity : std::uint8_t { positive = 0, negative = 1, neutral = 2 };

inline constexpr std::size_t kNumPolarities = 3;
inline constexpr std::array<Polarity, kNumPolarities> kPolarities = {
    Polarity::positive, Polarity::negative, Polarity::neutral};

std::string_view to_string(Polarity p);
/// Exact, case-sensitive match against the three label names.
std::optional<Polarity> parse_polarity(std::string_view text);

inline std::size_t index_of(Polarity p) { return static_cast<std::size_t>(p); }

/// Generated aspect/opinion elements with their (clipped) confidences.
struct AuxiliaryElements {
  std::string aspect;
  double aspect_confidence = 1.0;
  std::string opinion;
  double opinion_confidence = 1.0;
  int refine_epochs_used = 0;
  bool consensus_reached = false;

  bool operator==(const AuxiliaryElements&) const = default;
};

/// A sentence, a target term inside it and the gold polarity toward the
/// target. When `aux` is set the instance has been augmented.
struct Instance {
  std::string id;
  std::string sentence;
  std::string target;
  Polarity polarity = Polarity::neutral;
  bool implicit = false;
  std::optional<AuxiliaryElements> aux;

  bool augmented() const { return aux.has_value(); }
  bool operator==(const Instance&) const = default;
};

/// Throws DataError when an instance breaks a record invariant.
void validate(const Instance& instance);

class Dataset {
public:
  Dataset() = default;
  /// Validates every instance and id uniqueness.
  Dataset(std::string name, std::vector<Instance> instances);

  const std::string& name() const { return name_; }
  const std::vector<Instance>& instances() const { return instances_; }
  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }
  const Instance& operator[](std::size_t i) const { return instances_[i]; }

  auto begin() const { return instances_.begin(); }
  auto end() const { return instances_.end(); }

  bool operator==(const Dataset& other) const { return instances_ == other.instances_; }

private:
  std::string name_;
  std::vector<Instance> instances_;
};

enum class ConfidencePolicy {
  strict,   ///< confidences outside [0.5, 1] fail the load
  lenient,  ///< confidences are clipped into [0.5, 1] and counted
};

struct LoadStats {
  std::size_t clipped_confidences = 0;
};

Dataset load_jsonl(const std::filesystem::path& path,
                   ConfidencePolicy policy = ConfidencePolicy::strict,
                   LoadStats* stats = nullptr);

/// Canonical single-line JSON for one instance (fixed field order, NFC text).
std::string to_jsonl_line(const Instance& instance);
Instance parse_jsonl_line(std::string_view line, ConfidencePolicy policy = ConfidencePolicy::strict,
                          LoadStats* stats = nullptr);

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);

/// Set of opinion words used by the lexicon-absence implicit heuristic.
/// Not authoritative: prefer an explicit per-id flag file when one exists.
class OpinionLexicon {
public:
  OpinionLexicon() = default;
  explicit OpinionLexicon(std::set<std::string> words);

  /// One word per line; blank lines and lines starting with '#' ignored.
  static OpinionLexicon load(const std::filesystem::path& path);
  /// Small general-purpose English opinion list shipped with the library.
  static OpinionLexicon builtin();

  bool contains(std::string_view word) const;
  /// True iff no word of `sentence` is in the lexicon.
  bool is_implicit(std::string_view sentence) const;
  std::size_t size() const { return words_.size(); }

private:
  std::set<std::string, std::less<>> words_;
};

using ImplicitFlags = std::map<std::string, bool, std::less<>>;

/// Reads a JSON object {"id": bool, ...}.
ImplicitFlags load_implicit_flags(const std::filesystem::path& path);

struct SliceSplit {
  Dataset explicit_slice;
  Dataset implicit_slice;
};

/// Partitions by flag. With `flags`, every id must be present; otherwise
/// the lexicon heuristic decides. Output instances carry the decided flag.
SliceSplit split_implicit(const Dataset& dataset, const ImplicitFlags* flags,
                          const OpinionLexicon& lexicon = OpinionLexicon::builtin());

struct SemevalConversion {
  Dataset dataset;
  std::size_t dropped_conflict = 0;
};

/// SemEval-2014 Task 4 XML -> one instance per (sentence, aspectTerm).
/// An aspectTerm attribute `implicit_sentiment` ("True"/"False") sets the
/// flag directly; otherwise `flags`, then the lexicon heuristic.
SemevalConversion convert_semeval_xml(const std::filesystem::path& path,
                                      const ImplicitFlags* flags = nullptr,
                                      const OpinionLexicon& lexicon = OpinionLexicon::builtin());

}  // namespace sentimtl
