#include "sentimtl/backend.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <fmt/format.h>

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "sentimtl/text.hpp"

namespace sentimtl {

namespace {

constexpr std::array<std::string_view, kNumPromptKinds> kKindNames = {
    "aspect", "opinion", "polarity", "feedback", "verify_aspect", "verify_opinion"};

}  // namespace

std::string_view to_string(PromptKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

PromptKind parse_prompt_kind(std::string_view text) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == text) return static_cast<PromptKind>(i);
  }
  throw DataError(fmt::format("unknown prompt template '{}'", text));
}

void BackendResponse::validate() const {
  if (!token_logprobs) return;
  for (const auto& t : *token_logprobs) {
    if (!std::isfinite(t.logprob) || t.logprob > 0.0)
      throw DataError(fmt::format("token '{}' has invalid log-probability {}", t.token, t.logprob));
  }
}

std::pair<std::string, std::optional<double>> split_confidence_line(std::string_view text) {
  static const std::regex pattern(R"(\s*confidence\s*:\s*([0-9]*\.?[0-9]+)\s*)",
                                  std::regex::ECMAScript | std::regex::icase);
  std::optional<double> value;
  std::string rest;
  std::istringstream lines{std::string(text)};
  std::string line;
  while (std::getline(lines, line)) {
    std::smatch m;
    if (std::regex_match(line, m, pattern)) {
      value = std::stod(m[1].str());
      continue;
    }
    if (!rest.empty()) rest += '\n';
    rest += line;
  }
  return {trim(rest), value};
}

// ---------------------------------------------------------------------------
// Mock backend

MockBackend::MockBackend(MockBackend&& other) noexcept
    : entries_(std::move(other.entries_)), counts_(std::move(other.counts_)) {}

MockBackend MockBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open mock script '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_jsonl(buffer.str(), path.string());
}

MockBackend MockBackend::from_jsonl(std::string_view text, std::string_view source) {
  MockBackend mock;
  std::istringstream lines{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Entry entry;
      const auto id = j.at("id").get<std::string>();
      const auto kind = parse_prompt_kind(j.at("template").get<std::string>());
      std::optional<std::size_t> epoch;
      if (j.contains("epoch") && !j.at("epoch").is_null()) epoch = j.at("epoch").get<std::size_t>();
      if (j.contains("error")) {
        const auto err = j.at("error").get<std::string>();
        if (err != "timeout") throw DataError(fmt::format("unknown error kind '{}'", err));
        entry.timeout = true;
      } else {
        const auto raw = j.value("text", std::string());
        auto [content, confidence] = split_confidence_line(raw);
        entry.response.text = raw;
        entry.response.reported_confidence = confidence;
        if (j.contains("confidence")) entry.response.reported_confidence = j.at("confidence").get<double>();
        if (j.contains("token_logprobs")) {
          std::vector<TokenLogprob> tokens;
          for (const auto& t : j.at("token_logprobs")) {
            if (t.is_array())
              tokens.push_back({t.at(0).get<std::string>(), t.at(1).get<double>()});
            else
              tokens.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
          }
          entry.response.token_logprobs = std::move(tokens);
        }
        entry.response.validate();
      }
      mock.add(id, kind, epoch, std::move(entry));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", source, lineno, e.what()));
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: {}", source, lineno, e.what()));
    }
  }
  return mock;
}

void MockBackend::add(std::string id, PromptKind kind, std::optional<std::size_t> epoch, Entry entry) {
  entries_[Key{std::move(id), kind, epoch}] = std::move(entry);
}

const MockBackend::Entry* MockBackend::find(const BackendRequest& request) const {
  const std::array<Key, 4> keys = {Key{request.instance_id, request.kind, request.epoch},
                                   Key{request.instance_id, request.kind, std::nullopt},
                                   Key{"*", request.kind, request.epoch},
                                   Key{"*", request.kind, std::nullopt}};
  for (const auto& key : keys) {
    auto it = entries_.find(key);
    if (it != entries_.end()) return &it->second;
  }
  return nullptr;
}

BackendResponse MockBackend::complete(const BackendRequest& request) {
  {
    std::lock_guard lock(mutex_);
    ++counts_[{request.instance_id, request.kind}];
  }
  const Entry* entry = find(request);
  if (!entry)
    throw DataError(fmt::format("mock script has no response for ({}, {}, epoch {})",
                                request.instance_id, to_string(request.kind), request.epoch));
  if (entry->timeout)
    throw TransportError(fmt::format("mock timeout for ({}, {}, epoch {})", request.instance_id,
                                     to_string(request.kind), request.epoch));
  return entry->response;
}

std::size_t MockBackend::calls(PromptKind kind) const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [key, count] : counts_) {
    if (key.second == kind) n += count;
  }
  return n;
}

std::size_t MockBackend::total_calls() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [key, count] : counts_) n += count;
  return n;
}

std::size_t MockBackend::calls(std::string_view id, PromptKind kind) const {
  std::lock_guard lock(mutex_);
  auto it = counts_.find({std::string(id), kind});
  return it == counts_.end() ? 0 : it->second;
}

void MockBackend::reset_counts() {
  std::lock_guard lock(mutex_);
  counts_.clear();
}

// ---------------------------------------------------------------------------
// Retries

BackendResponse with_retries(const RetryPolicy& policy,
                             const std::function<BackendResponse()>& attempt) {
  auto backoff = policy.initial_backoff;
  for (std::size_t tries = 0;; ++tries) {
    try {
      return attempt();
    } catch (const TransportError&) {
      if (tries >= policy.max_retries) throw;
    }
    if (backoff.count() > 0) {
      if (policy.sleep)
        policy.sleep(backoff);
      else
        std::this_thread::sleep_for(backoff);
    }
    backoff = std::chrono::milliseconds(
        static_cast<std::int64_t>(static_cast<double>(backoff.count()) * policy.multiplier));
  }
}

// ---------------------------------------------------------------------------
// HTTP backend

std::string HttpBackendConfig::api_key_from_env() {
  const char* key = std::getenv("LLM_API_KEY");
  return key ? std::string(key) : std::string();
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  static const std::regex url_pattern(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.url, m, url_pattern))
    throw DataError(fmt::format("backend URL '{}' is not an http(s) URL", config_.url));
  origin_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

std::string HttpBackend::request_body(const BackendRequest& request) const {
  nlohmann::ordered_json body;
  body["model"] = config_.model;
  body["messages"] = nlohmann::ordered_json::array(
      {nlohmann::ordered_json{{"role", "user"}, {"content", request.prompt}}});
  body["logprobs"] = request.want_logprobs;
  body["temperature"] = 0;
  return body.dump();
}

BackendResponse HttpBackend::parse_response(std::string_view body) {
  try {
    const auto j = nlohmann::json::parse(body);
    const auto& choice = j.at("choices").at(0);
    BackendResponse r;
    r.text = choice.at("message").at("content").get<std::string>();
    r.reported_confidence = split_confidence_line(r.text).second;
    if (choice.contains("logprobs") && !choice.at("logprobs").is_null()) {
      const auto& lp = choice.at("logprobs");
      if (lp.contains("content") && !lp.at("content").is_null()) {
        std::vector<TokenLogprob> tokens;
        for (const auto& t : lp.at("content"))
          tokens.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
        r.token_logprobs = std::move(tokens);
      }
    }
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed backend response: {}", e.what()));
  }
}

BackendResponse HttpBackend::attempt(const BackendRequest& request) const {
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  auto result = client.Post(path_, headers, request_body(request), "application/json");
  if (!result)
    throw TransportError(fmt::format("request to {} failed: {}", config_.url,
                                     httplib::to_string(result.error())));
  if (result->status == 429 || result->status >= 500)
    throw TransportError(fmt::format("{} answered HTTP {}", config_.url, result->status));
  if (result->status != 200)
    throw DataError(fmt::format("{} answered HTTP {}: {}", config_.url, result->status, result->body));
  return parse_response(result->body);
}

BackendResponse HttpBackend::complete(const BackendRequest& request) {
  return with_retries(config_.retry, [&] { return attempt(request); });
}

}  // namespace sentimtl
