#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sentimtl/error.hpp"

namespace sentimtl {

enum class PromptKind { aspect, opinion, polarity, feedback, verify_aspect, verify_opinion };
inline constexpr std::size_t kNumPromptKinds = 6;

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view text);

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;

  bool operator==(const TokenLogprob&) const = default;
};

struct BackendResponse {
  std::string text;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  std::optional<double> reported_confidence;

  /// Throws DataError when a token log-probability is positive or not finite.
  void validate() const;
};

/// Splits a "Confidence: <number>" line (case-insensitive, last one wins)
/// out of `text`. Returns the remaining text, trimmed, and the number.
std::pair<std::string, std::optional<double>> split_confidence_line(std::string_view text);

struct BackendRequest {
  std::string instance_id;
  PromptKind kind = PromptKind::aspect;
  std::size_t epoch = 0;
  std::string prompt;
  bool want_logprobs = false;
};

/// Must be safe to call from several threads at once.
class LlmBackend {
public:
  virtual ~LlmBackend() = default;
  /// Throws TransportError when the service cannot be reached.
  virtual BackendResponse complete(const BackendRequest& request) = 0;
};

/// Canned responses keyed by (instance id, prompt kind, epoch).
///
/// Script lines are JSON objects:
///   {"id": "s1", "template": "polarity", "epoch": 0, "text": "positive"}
/// "epoch" (0-based refinement round) may be omitted to match every round,
/// and "id" may be "*" to match every instance. Optional keys:
/// "token_logprobs" ([[token, logprob], ...]), "confidence" (number), and
/// "error": "timeout" to simulate a transport failure. Lookup prefers the
/// most specific entry.
class MockBackend : public LlmBackend {
public:
  struct Entry {
    BackendResponse response;
    bool timeout = false;
  };

  MockBackend() = default;
  MockBackend(MockBackend&& other) noexcept;
  static MockBackend from_file(const std::filesystem::path& path);
  static MockBackend from_jsonl(std::string_view text, std::string_view source = "<script>");

  void add(std::string id, PromptKind kind, std::optional<std::size_t> epoch, Entry entry);

  BackendResponse complete(const BackendRequest& request) override;

  std::size_t calls(PromptKind kind) const;
  std::size_t total_calls() const;
  /// Calls for one instance and kind.
  std::size_t calls(std::string_view id, PromptKind kind) const;
  void reset_counts();

private:
  using Key = std::tuple<std::string, PromptKind, std::optional<std::size_t>>;
  const Entry* find(const BackendRequest& request) const;

  std::map<Key, Entry> entries_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, PromptKind>, std::size_t> counts_;
};

struct RetryPolicy {
  std::size_t max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::function<void(std::chrono::milliseconds)> sleep;

  static RetryPolicy none() { return RetryPolicy{0, std::chrono::milliseconds{0}, 1.0, {}}; }
};

/// Runs `attempt`, retrying on TransportError with exponential backoff.
/// Rethrows the last TransportError once retries are exhausted.
BackendResponse with_retries(const RetryPolicy& policy,
                             const std::function<BackendResponse()>& attempt);

struct HttpBackendConfig {
  /// Full endpoint, e.g. "https://api.example.com/v1/chat/completions".
  std::string url;
  std::string model = "gpt-4o-mini";
  std::string api_key;
  std::chrono::seconds timeout{60};
  RetryPolicy retry;

  /// API key from the LLM_API_KEY environment variable (empty when unset).
  static std::string api_key_from_env();
};

/// Chat-completion style JSON over HTTP(S).
class HttpBackend : public LlmBackend {
public:
  explicit HttpBackend(HttpBackendConfig config);
  BackendResponse complete(const BackendRequest& request) override;

  /// Request body for one prompt.
  std::string request_body(const BackendRequest& request) const;
  /// Parses a chat-completion response body.
  static BackendResponse parse_response(std::string_view body);

private:
  BackendResponse attempt(const BackendRequest& request) const;

  HttpBackendConfig config_;
  std::string origin_;
  std::string path_;
};

}  // namespace sentimtl
