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

#ifndef GCREC_TEXT_ENCODER_HPP_
#define GCREC_TEXT_ENCODER_HPP_

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "gcrec/conv_inference.hpp"
#include "gcrec/http_transport.hpp"
#include "gcrec/llm_gateway.hpp"
#include "gcrec/types.hpp"

namespace gcrec {

enum class EncoderBackend { kHashedFallback, kRemote };

struct EncoderConfig {
  EncoderBackend backend = EncoderBackend::kHashedFallback;
  int dim = 768;
  // Remote backend only: persistent embedding cache and endpoint.
  std::filesystem::path cache_path;
  std::string endpoint;
  int batch_size = 32;
  RetryPolicy retry;
  std::function<void(std::chrono::milliseconds)> sleep =
      [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

// Bag-of-words feature hashing: every whitespace token adds one to bucket
// Fnv1a64(token) mod dim; the count vector is L2-normalized. Empty text maps
// to the zero vector. Token order is ignored.
Eigen::VectorXd HashedEmbedding(std::string_view text, int dim);

// Text -> fixed-size embedding with a content-hash cache keyed by
// (backend id, text). Remote wire contract: POST {"texts": [...]} ->
// {"embeddings": [[...], ...]}; the server prepends its [CLS] token. Remote
// vectors are stored at float precision, matching the cache file format.
class TextEncoder {
 public:
  explicit TextEncoder(EncoderConfig config,
                       std::shared_ptr<HttpTransport> transport = nullptr);

  Eigen::VectorXd Encode(std::string_view text);
  std::vector<Eigen::VectorXd> EncodeBatch(std::span<const std::string> texts);

  std::string backend_id() const;
  int dim() const { return config_.dim; }
  std::int64_t remote_calls() const { return remote_calls_.load(); }
  std::int64_t cache_hits() const { return cache_hits_.load(); }

  // Binary records: 32-byte SHA-256 key, u32 dim, dim little-endian f32.
  void SaveCache() const;

 private:
  void LoadCache();
  std::string Key(std::string_view text) const;
  std::vector<Eigen::VectorXd> RemoteEncode(std::span<const std::string> texts);

  EncoderConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Eigen::VectorXd> cache_;
  std::atomic<std::int64_t> remote_calls_{0};
  std::atomic<std::int64_t> cache_hits_{0};
};

// Embeds every (node, layer) text. Throws with node/layer coordinates.
TextTable<double> EncodeLayers(const DescriptionLayers& layers, TextEncoder& encoder);

// Header "GCTT", u32 version, u32 users, u32 items, u32 layers, u32 dim, then
// f32 values layer-major, users before items, then a 64-char SHA-256 hex
// trailer over everything before it.
std::string SerializeTextTable(const TextTable<double>& table);
TextTable<double> DeserializeTextTable(std::string_view bytes);

}  // namespace gcrec

#endif  // GCREC_TEXT_ENCODER_HPP_
