#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sentimtl/backend.hpp"
#include "sentimtl/data.hpp"

namespace sentimtl {

enum class ConfidenceMethod { prompt, markov_chain, choice_token };
std::string_view to_string(ConfidenceMethod method);
/// Accepts "prompt", "markov", "markov_chain", "choice", "choice_token".
ConfidenceMethod parse_confidence_method(std::string_view text);

struct ScoredText {
  std::string text;
  double confidence = 1.0;
};

struct RefineState {
  Instance instance;
  std::string prompt;
  std::optional<std::string> feedback;
  std::optional<Polarity> predicted_polarity;
  std::size_t epoch = 0;
  std::size_t max_epochs = 1;
  std::optional<ScoredText> current_aspect;
  std::optional<ScoredText> current_opinion;
};

/// Deterministic prompt text. The aspect, opinion and polarity templates
/// carry prior feedback when present; the feedback template carries the
/// generated elements and the wrong prediction. verify_* templates ask the
/// binary "(A) reasonable (B) unreasonable" question about one element.
/// A missing prediction renders as "unrecognized" in the feedback template.
/// Throws DataError naming the first missing state field.
std::string render_prompt(PromptKind kind, const RefineState& state);

/// First label word of a free-text answer after lowercasing and
/// stripping punctuation; nullopt when there is none.
std::optional<Polarity> parse_polarity_answer(std::string_view text);

/// Follow-up binary query used by the choice-token method.
using ChoiceQuery = std::function<BackendResponse()>;

/// Raw score in [0, 1] before clipping:
///   prompt        reported confidence
///   markov_chain  exp(mean token log-probability)
///   choice_token  probability of the chosen option letter in the follow-up answer
/// Throws DataError naming method and field when a required input is
/// absent, RangeError when a reported confidence is outside [0, 1].
double estimate_confidence(const BackendResponse& response, ConfidenceMethod method,
                           const ChoiceQuery& ask_choice = {});

/// max(raw, 0.5). Throws RangeError outside [0, 1].
double clip_confidence(double raw);

/// A failure for one instance, carrying its id.
class AugmentError : public Error {
public:
  AugmentError(std::string instance_id, const std::string& what)
      : Error(what), instance_id_(std::move(instance_id)) {}
  const std::string& instance_id() const { return instance_id_; }

private:
  std::string instance_id_;
};

/// Generate aspect, opinion and polarity in turn; stop as soon as the
/// predicted polarity equals the gold label, otherwise ask for feedback and
/// try again, for at most `max_epochs` rounds. Returns the instance with
/// the last generated elements attached. Transport failures are rethrown
/// as AugmentError.
Instance run_refine_loop(const Instance& instance, LlmBackend& backend, ConfidenceMethod method,
                         std::size_t max_epochs);

struct AugmentFailure {
  std::size_t index = 0;
  std::string id;
  std::string message;
};

struct AugmentOutcome {
  /// Successfully augmented instances, in input order.
  Dataset dataset;
  std::vector<AugmentFailure> failures;
};

/// Thrown when more than 10% of instances fail; carries what was done.
class AugmentAbort : public Error {
public:
  AugmentAbort(const std::string& what, AugmentOutcome outcome)
      : Error(what), outcome_(std::move(outcome)) {}
  const AugmentOutcome& outcome() const { return outcome_; }

private:
  AugmentOutcome outcome_;
};

inline constexpr double kMaxFailureFraction = 0.10;

/// Runs the refine loop over every instance with up to `parallelism`
/// workers. Results do not depend on `parallelism`.
AugmentOutcome augment_dataset(const Dataset& dataset, LlmBackend& backend, ConfidenceMethod method,
                               std::size_t max_epochs, std::size_t parallelism = 1);

/// One JSON object per failure: {"index", "id", "error"}.
void write_failure_report(const std::vector<AugmentFailure>& failures,
                          const std::filesystem::path& path);

}  // namespace sentimtl
