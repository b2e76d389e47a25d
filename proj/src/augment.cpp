#include "sentimtl/augment.hpp"

#include <fmt/format.h>

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "sentimtl/text.hpp"

namespace sentimtl {

std::string_view to_string(ConfidenceMethod method) {
  switch (method) {
    case ConfidenceMethod::prompt: return "prompt";
    case ConfidenceMethod::markov_chain: return "markov_chain";
    case ConfidenceMethod::choice_token: return "choice_token";
  }
  return "?";
}

ConfidenceMethod parse_confidence_method(std::string_view text) {
  if (text == "prompt") return ConfidenceMethod::prompt;
  if (text == "markov" || text == "markov_chain") return ConfidenceMethod::markov_chain;
  if (text == "choice" || text == "choice_token") return ConfidenceMethod::choice_token;
  throw DataError(fmt::format("unknown confidence method '{}'", text));
}

// ---------------------------------------------------------------------------
// Prompts

namespace {

const std::string& require_text(const std::optional<ScoredText>& v, std::string_view field) {
  if (!v) throw DataError(fmt::format("prompt needs state field '{}'", field));
  return v->text;
}

std::string feedback_section(const RefineState& s) {
  return s.feedback ? fmt::format("Feedback: {}\n", *s.feedback) : std::string();
}

constexpr std::string_view kConfidenceAsk =
    "On the last line, write \"Confidence: <0.xx>\" with your confidence in the answer.";

}  // namespace

std::string render_prompt(PromptKind kind, const RefineState& s) {
  const auto& x = s.instance.sentence;
  const auto& t = s.instance.target;
  switch (kind) {
    case PromptKind::aspect:
      return fmt::format(
          "Sentence: \"{}\"\nTarget: \"{}\"\n{}"
          "Which aspect of the target is being discussed? Answer with a short phrase.\n{}",
          x, t, feedback_section(s), kConfidenceAsk);
    case PromptKind::opinion:
      return fmt::format(
          "Sentence: \"{}\"\nTarget: \"{}\"\nAspect: \"{}\"\n{}"
          "What is the underlying opinion toward this aspect? Answer with a short phrase.\n{}",
          x, t, require_text(s.current_aspect, "current_aspect"), feedback_section(s), kConfidenceAsk);
    case PromptKind::polarity:
      return fmt::format(
          "Sentence: \"{}\"\nTarget: \"{}\"\nAspect: \"{}\"\nOpinion: \"{}\"\n{}"
          "What is the sentiment polarity toward the target? Answer with one word: positive, "
          "negative or neutral.",
          x, t, require_text(s.current_aspect, "current_aspect"),
          require_text(s.current_opinion, "current_opinion"), feedback_section(s));
    case PromptKind::feedback: {
      // An answer that named no label is still a wrong prediction.
      const std::string predicted{s.predicted_polarity ? to_string(*s.predicted_polarity)
                                                       : std::string_view("unrecognized")};
      return fmt::format(
          "Sentence: \"{}\"\nTarget: \"{}\"\nAspect: \"{}\"\nOpinion: \"{}\"\n"
          "Predicted polarity: {}\n"
          "The predicted polarity is wrong. Explain what the aspect and opinion above may have "
          "missed so they can be revised.",
          x, t, require_text(s.current_aspect, "current_aspect"),
          require_text(s.current_opinion, "current_opinion"), predicted);
    }
    case PromptKind::verify_aspect:
      return fmt::format(
          "Sentence: \"{}\"\nTarget: \"{}\"\nProposed aspect: \"{}\"\n"
          "Is the provided answer reasonable? (A) reasonable (B) unreasonable\nAnswer:",
          x, t, require_text(s.current_aspect, "current_aspect"));
    case PromptKind::verify_opinion:
      return fmt::format(
          "Sentence: \"{}\"\nTarget: \"{}\"\nProposed opinion: \"{}\"\n"
          "Is the provided answer reasonable? (A) reasonable (B) unreasonable\nAnswer:",
          x, t, require_text(s.current_opinion, "current_opinion"));
  }
  throw DataError("unknown prompt template");
}

std::optional<Polarity> parse_polarity_answer(std::string_view text) {
  for (const auto& word : split_words(text)) {
    if (auto p = parse_polarity(word)) return p;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Confidence

double estimate_confidence(const BackendResponse& response, ConfidenceMethod method,
                           const ChoiceQuery& ask_choice) {
  switch (method) {
    case ConfidenceMethod::prompt: {
      if (!response.reported_confidence)
        throw DataError("confidence method 'prompt' needs field 'reported_confidence'");
      const double c = *response.reported_confidence;
      if (!(c >= 0.0 && c <= 1.0))
        throw RangeError(fmt::format("reported confidence {} is outside [0, 1]", c));
      return c;
    }
    case ConfidenceMethod::markov_chain: {
      if (!response.token_logprobs || response.token_logprobs->empty())
        throw DataError("confidence method 'markov_chain' needs field 'token_logprobs'");
      response.validate();
      double sum = 0.0;
      for (const auto& t : *response.token_logprobs) sum += t.logprob;
      return std::exp(sum / static_cast<double>(response.token_logprobs->size()));
    }
    case ConfidenceMethod::choice_token: {
      if (!ask_choice)
        throw DataError("confidence method 'choice_token' needs field 'backend' for the follow-up query");
      const BackendResponse answer = ask_choice();
      if (!answer.token_logprobs)
        throw DataError("confidence method 'choice_token' needs field 'token_logprobs' in the follow-up answer");
      answer.validate();
      for (const auto& t : *answer.token_logprobs) {
        std::string letter;
        for (char ch : t.token) {
          if (ch != '(' && ch != ')' && ch != ' ' && ch != '\t' && ch != '\n') letter += ch;
        }
        if (letter == "A" || letter == "B" || letter == "a" || letter == "b") return std::exp(t.logprob);
      }
      throw DataError("confidence method 'choice_token': follow-up answer has no option token");
    }
  }
  throw DataError("unknown confidence method");
}

double clip_confidence(double raw) {
  if (!(raw >= 0.0 && raw <= 1.0))
    throw RangeError(fmt::format("confidence {} is outside [0, 1]", raw));
  return std::max(raw, 0.5);
}

// ---------------------------------------------------------------------------
// Refinement loop

namespace {

class Session {
public:
  Session(LlmBackend& backend, ConfidenceMethod method, RefineState& state)
      : backend_(backend), method_(method), state_(state) {}

  BackendResponse ask(PromptKind kind, bool want_logprobs) {
    state_.prompt = render_prompt(kind, state_);
    BackendRequest request{state_.instance.id, kind, state_.epoch, state_.prompt, want_logprobs};
    try {
      return backend_.complete(request);
    } catch (const TransportError& e) {
      throw AugmentError(state_.instance.id,
                         fmt::format("instance {}: backend unreachable: {}", state_.instance.id, e.what()));
    }
  }

  ScoredText element(PromptKind kind, PromptKind verify) {
    const BackendResponse response = ask(kind, method_ == ConfidenceMethod::markov_chain);
    auto [content, reported] = split_confidence_line(response.text);
    BackendResponse scored = response;
    if (!scored.reported_confidence) scored.reported_confidence = reported;
    ScoredText out{std::move(content), 1.0};
    auto& slot = kind == PromptKind::aspect ? state_.current_aspect : state_.current_opinion;
    slot = out;
    ChoiceQuery follow_up;
    if (method_ == ConfidenceMethod::choice_token) follow_up = [&] { return ask(verify, true); };
    try {
      out.confidence = clip_confidence(estimate_confidence(scored, method_, follow_up));
    } catch (const AugmentError&) {
      throw;
    } catch (const Error& e) {
      throw AugmentError(state_.instance.id, fmt::format("instance {}: {} {}", state_.instance.id,
                                                         to_string(kind), e.what()));
    }
    if (out.text.empty())
      throw AugmentError(state_.instance.id,
                         fmt::format("instance {}: empty {} answer", state_.instance.id, to_string(kind)));
    slot = out;
    return out;
  }

private:
  LlmBackend& backend_;
  ConfidenceMethod method_;
  RefineState& state_;
};

}  // namespace

Instance run_refine_loop(const Instance& instance, LlmBackend& backend, ConfidenceMethod method,
                         std::size_t max_epochs) {
  if (max_epochs == 0) throw RangeError("max_epochs must be at least 1");
  RefineState state;
  state.instance = instance;
  state.instance.aux.reset();
  state.max_epochs = max_epochs;
  Session session(backend, method, state);

  std::size_t used = 0;
  bool consensus = false;
  while (state.epoch < state.max_epochs) {
    session.element(PromptKind::aspect, PromptKind::verify_aspect);
    session.element(PromptKind::opinion, PromptKind::verify_opinion);
    state.predicted_polarity = parse_polarity_answer(session.ask(PromptKind::polarity, false).text);
    used = state.epoch + 1;
    if (state.predicted_polarity == instance.polarity) {
      consensus = true;
      break;
    }
    state.feedback = split_confidence_line(session.ask(PromptKind::feedback, false).text).first;
    ++state.epoch;
  }

  Instance out = instance;
  out.aux = AuxiliaryElements{state.current_aspect->text, state.current_aspect->confidence,
                              state.current_opinion->text, state.current_opinion->confidence,
                              static_cast<int>(used), consensus};
  validate(out);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

AugmentOutcome augment_dataset(const Dataset& dataset, LlmBackend& backend, ConfidenceMethod method,
                               std::size_t max_epochs, std::size_t parallelism) {
  if (dataset.empty()) throw DataError("augment: empty dataset");
  if (parallelism == 0) throw RangeError("parallelism must be at least 1");
  const std::size_t n = dataset.size();
  std::vector<std::optional<Instance>> results(n);
  std::vector<std::optional<std::string>> errors(n);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        results[i] = run_refine_loop(dataset[i], backend, method, max_epochs);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t workers = std::min(parallelism, n);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  std::vector<Instance> augmented;
  AugmentOutcome outcome;
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i])
      augmented.push_back(std::move(*results[i]));
    else
      outcome.failures.push_back({i, dataset[i].id, errors[i].value_or("unknown error")});
  }
  outcome.dataset = Dataset(dataset.name(), std::move(augmented));
  const double fraction = static_cast<double>(outcome.failures.size()) / static_cast<double>(n);
  if (fraction > kMaxFailureFraction) {
    const std::string summary =
        fmt::format("augment aborted: {} of {} instances failed (limit {:.0f}%); first: {}: {}",
                    outcome.failures.size(), n, 100.0 * kMaxFailureFraction,
                    outcome.failures.front().id, outcome.failures.front().message);
    throw AugmentAbort(summary, std::move(outcome));
  }
  return outcome;
}

void write_failure_report(const std::vector<AugmentFailure>& failures,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write failure report '{}'", path.string()));
  for (const auto& f : failures) {
    nlohmann::ordered_json j;
    j["index"] = f.index;
    j["id"] = f.id;
    j["error"] = f.message;
    out << j.dump() << '\n';
  }
}

}  // namespace sentimtl
