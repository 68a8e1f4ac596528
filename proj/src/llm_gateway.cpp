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

#include "gcrec/llm_gateway.hpp"

#include <cmath>
#include <unordered_set>

#include <json.hpp>

#include "gcrec/common.hpp"

namespace gcrec {

using nlohmann::json;

std::string MockComplete(std::string_view prompt, std::size_t max_output_tokens,
                         std::span<const PromptTemplate> library) {
  const ParsedPrompt parsed = ParsePrompt(prompt, library);
  std::unordered_set<std::string_view> seen;
  std::vector<std::string_view> out;
  auto absorb = [&](std::string_view text) {
    for (std::string_view tok : Tokenize(text)) {
      if (out.size() >= max_output_tokens) return;
      if (seen.insert(tok).second) out.push_back(tok);
    }
  };
  absorb(parsed.target);
  for (const auto& n : parsed.neighbors) absorb(n);

  std::string text;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (k) text += ' ';
    text += out[k];
  }
  return text;
}

CompletionResponse MockLlmBackend::Complete(const CompletionRequest& request) {
  CompletionResponse r;
  r.text = MockComplete(request.prompt,
                        static_cast<std::size_t>(std::max(request.max_output_tokens, 0)),
                        library_);
  r.usage.input = static_cast<std::int64_t>(CountTokens(request.prompt));
  r.usage.output = static_cast<std::int64_t>(CountTokens(r.text));
  return r;
}

CompletionResponse RemoteLlmBackend::Complete(const CompletionRequest& request) {
  json body = {{"model", config_.model},
               {"prompt", request.prompt},
               {"max_tokens", request.max_output_tokens},
               {"temperature", request.temperature},
               {"request_id", request.request_id}};
  HttpHeaders headers;
  if (!config_.api_key.empty()) {
    headers.emplace_back("Authorization", "Bearer " + config_.api_key);
  }
  const HttpResponse resp = transport_->PostJson(config_.endpoint, body.dump(), headers);
  if (resp.status == 0) {
    throw RetryableBackendError("transport failure: " + resp.error);
  }
  if (resp.status >= 500 || resp.status == 429) {
    throw RetryableBackendError("HTTP " + std::to_string(resp.status));
  }
  if (resp.status < 200 || resp.status >= 300) {
    throw BackendError("HTTP " + std::to_string(resp.status) + ": " + resp.body);
  }
  json j;
  try {
    j = json::parse(resp.body);
  } catch (const json::parse_error&) {
    throw BackendError("backend returned malformed JSON");
  }
  if (j.contains("error")) throw BackendError("backend error: " + j["error"].dump());
  if (!j.contains("text") || !j["text"].is_string()) {
    throw BackendError("backend response lacks a string \"text\" field");
  }
  CompletionResponse r;
  r.text = j["text"].get<std::string>();
  if (j.contains("usage") && j["usage"].is_object()) {
    r.usage.input = std::max<std::int64_t>(0, j["usage"].value("input_tokens", 0));
    r.usage.output = std::max<std::int64_t>(0, j["usage"].value("output_tokens", 0));
  }
  return r;
}

LlmGateway::LlmGateway(std::shared_ptr<LlmBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      in_flight_(std::max(1, options_.max_in_flight)) {
  if (!backend_) throw ValidationError("gateway needs a backend");
  if (options_.retry.max_attempts < 1) {
    throw ValidationError("retry policy needs at least one attempt");
  }
}

CompletionResponse LlmGateway::Complete(const CompletionRequest& request) {
  if (request.temperature != 0.0) {
    throw ValidationError("pipeline completions must use temperature 0");
  }
  if (options_.cache_by_request_id && !request.request_id.empty()) {
    std::lock_guard lock(cache_mu_);
    auto it = cache_.find(request.request_id);
    if (it != cache_.end() && it->second.first == request.prompt) {
      ++cache_hits_;
      return it->second.second;
    }
  }

  std::vector<std::string> log;
  CompletionResponse response;
  bool ok = false;
  auto backoff = options_.retry.initial_backoff;
  for (int attempt = 1; attempt <= options_.retry.max_attempts; ++attempt) {
    in_flight_.acquire();
    try {
      ++backend_calls_;
      response = backend_->Complete(request);
      in_flight_.release();
      response.attempts = attempt;
      ok = true;
      break;
    } catch (const RetryableBackendError& e) {
      in_flight_.release();
      log.push_back("attempt " + std::to_string(attempt) + ": " + e.what());
    } catch (const BackendError& e) {
      in_flight_.release();
      log.push_back("attempt " + std::to_string(attempt) + ": " + e.what());
      throw BackendError(std::string("backend error: ") + e.what(), log);
    } catch (...) {
      in_flight_.release();
      throw;
    }
    if (attempt < options_.retry.max_attempts) {
      options_.sleep(backoff);
      backoff = std::chrono::milliseconds(static_cast<std::int64_t>(
          std::llround(static_cast<double>(backoff.count()) * options_.retry.multiplier)));
    }
  }
  if (!ok) {
    std::string msg = "backend failed after " +
                      std::to_string(options_.retry.max_attempts) + " attempts";
    for (const auto& line : log) msg += "; " + line;
    throw BackendError(msg, log);
  }

  const auto limit = static_cast<std::size_t>(std::max(request.max_output_tokens, 0));
  if (CountTokens(response.text) > limit) {
    response.text = ClipToTokens(response.text, limit);
    response.truncated = true;
    LogWarning("completion " + request.request_id + " exceeded " +
               std::to_string(limit) + " output tokens; truncated");
  }

  if (options_.cache_by_request_id && !request.request_id.empty()) {
    std::lock_guard lock(cache_mu_);
    cache_[request.request_id] = {request.prompt, response};
  }
  return response;
}

std::string SftQuery(SftDirection direction, std::string_view description) {
  std::string q;
  if (direction == SftDirection::kItemToUser) {
    q = "Query: Given an item's description, generate a user's description "
        "that fits it. The item's description is ";
  } else {
    q = "Query: Given a user's description, generate an item's description "
        "that fits it. The user's description is ";
  }
  q += description;
  q += ". Answer:";
  return q;
}

std::vector<SftPair> BuildSftPairs(const Dataset& dataset, const Split& split) {
  if (split.train.empty()) throw ValidationError("SFT export needs train edges");
  std::vector<Interaction> edges = split.train;
  std::sort(edges.begin(), edges.end());
  std::vector<SftPair> pairs;
  pairs.reserve(2 * edges.size());
  for (const auto& e : edges) {
    const auto& user = dataset.users()[e.user].description;
    const auto& item = dataset.items()[e.item].description;
    pairs.push_back({SftQuery(SftDirection::kItemToUser, item), user,
                     SftDirection::kItemToUser});
    pairs.push_back({SftQuery(SftDirection::kUserToItem, user), item,
                     SftDirection::kUserToItem});
  }
  return pairs;
}

std::string SftPairsToJsonl(std::span<const SftPair> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    json rec = {{"query", p.query},
                {"answer", p.answer},
                {"direction", p.direction == SftDirection::kItemToUser
                                  ? "item_to_user"
                                  : "user_to_item"}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void ExportSftPairs(const Dataset& dataset, const Split& split,
                    const std::filesystem::path& path) {
  const auto pairs = BuildSftPairs(dataset, split);
  try {
    WriteFileAtomic(path, SftPairsToJsonl(pairs));
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(std::string("SFT export write failed: ") + e.what());
  }
}

}  // namespace gcrec
