// Copyright 2026 The gcrec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GCREC_LLM_GATEWAY_HPP_
#define GCREC_LLM_GATEWAY_HPP_

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "gcrec/common.hpp"
#include "gcrec/dataset.hpp"
#include "gcrec/http_transport.hpp"
#include "gcrec/prompt.hpp"

namespace gcrec {

struct CompletionRequest {
  std::string prompt;
  int max_output_tokens = 512;
  double temperature = 0.0;
  std::string request_id;
};

struct TokenCounts {
  std::int64_t input = 0;
  std::int64_t output = 0;
};

struct CompletionResponse {
  std::string text;
  TokenCounts usage;
  bool truncated = false;  // backend returned more than max_output_tokens
  int attempts = 1;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual CompletionResponse Complete(const CompletionRequest& request) = 0;
  virtual std::string name() const = 0;
};

// Deterministic stand-in for an LLM. The output is the target's tokens
// followed by each neighbor's tokens in prompt order, keeping only the first
// occurrence of every token, cut to max_output_tokens and joined by spaces.
class MockLlmBackend final : public LlmBackend {
 public:
  explicit MockLlmBackend(std::vector<PromptTemplate> library = DefaultTemplates())
      : library_(std::move(library)) {}

  CompletionResponse Complete(const CompletionRequest& request) override;
  std::string name() const override { return "mock"; }

 private:
  std::vector<PromptTemplate> library_;
};

std::string MockComplete(std::string_view prompt, std::size_t max_output_tokens,
                         std::span<const PromptTemplate> library);

struct RemoteLlmConfig {
  std::string endpoint;  // full URL, e.g. http://host:8000/v1/complete
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
};

// Wire contract: POST {"model", "prompt", "max_tokens", "temperature",
// "request_id"} -> {"text", "usage": {"input_tokens", "output_tokens"}}.
// 5xx, 429 and transport failures are retryable; anything else is not.
class RemoteLlmBackend final : public LlmBackend {
 public:
  RemoteLlmBackend(RemoteLlmConfig config, std::shared_ptr<HttpTransport> transport)
      : config_(std::move(config)), transport_(std::move(transport)) {}

  CompletionResponse Complete(const CompletionRequest& request) override;
  std::string name() const override { return "remote:" + config_.model; }

 private:
  RemoteLlmConfig config_;
  std::shared_ptr<HttpTransport> transport_;
};

// Transient failure; the gateway retries these.
class RetryableBackendError : public BackendError {
 public:
  using BackendError::BackendError;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
};

struct GatewayOptions {
  RetryPolicy retry;
  int max_in_flight = 4;
  bool cache_by_request_id = true;
  std::function<void(std::chrono::milliseconds)> sleep =
      [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

// Thread-safe front door to a backend: enforces temperature 0, bounds the
// number of concurrent requests, retries transient failures with exponential
// backoff, trims over-long responses and caches responses by request id.
class LlmGateway {
 public:
  explicit LlmGateway(std::shared_ptr<LlmBackend> backend, GatewayOptions options = {});

  CompletionResponse Complete(const CompletionRequest& request);

  const LlmBackend& backend() const { return *backend_; }
  std::int64_t backend_calls() const { return backend_calls_.load(); }
  std::int64_t cache_hits() const { return cache_hits_.load(); }

 private:
  std::shared_ptr<LlmBackend> backend_;
  GatewayOptions options_;
  std::counting_semaphore<1 << 16> in_flight_;
  std::atomic<std::int64_t> backend_calls_{0};
  std::atomic<std::int64_t> cache_hits_{0};
  std::mutex cache_mu_;
  std::unordered_map<std::string, std::pair<std::string, CompletionResponse>> cache_;
};

enum class SftDirection { kItemToUser, kUserToItem };

struct SftPair {
  std::string query;
  std::string answer;
  SftDirection direction = SftDirection::kItemToUser;
};

std::string SftQuery(SftDirection direction, std::string_view description);

// Two pairs per train edge in (user, item) order: the item-to-user pair first.
std::vector<SftPair> BuildSftPairs(const Dataset& dataset, const Split& split);
// JSONL with fields {query, answer, direction}.
std::string SftPairsToJsonl(std::span<const SftPair> pairs);
void ExportSftPairs(const Dataset& dataset, const Split& split,
                    const std::filesystem::path& path);

}  // namespace gcrec

#endif  // GCREC_LLM_GATEWAY_HPP_
