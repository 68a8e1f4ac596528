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

#include "gcrec/text_encoder.hpp"

#include <cmath>
#include <unordered_set>

#include <json.hpp>

#include "gcrec/binary_io.hpp"
#include "gcrec/common.hpp"

namespace gcrec {
namespace {

using nlohmann::json;

constexpr char kTableMagic[] = "GCTT";
constexpr std::uint32_t kTableVersion = 1;

std::string HexToBytes(const std::string& hex) {
  std::string out(hex.size() / 2, '\0');
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = static_cast<char>(std::stoi(hex.substr(2 * k, 2), nullptr, 16));
  }
  return out;
}

Eigen::VectorXd RoundToFloat(const Eigen::VectorXd& v) {
  return v.cast<float>().cast<double>();
}

}  // namespace

Eigen::VectorXd HashedEmbedding(std::string_view text, int dim) {
  if (dim <= 0) throw ValidationError("embedding dimension must be positive");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  for (std::string_view tok : Tokenize(text)) {
    v[static_cast<Eigen::Index>(Fnv1a64(tok) % static_cast<std::uint64_t>(dim))] += 1.0;
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

TextEncoder::TextEncoder(EncoderConfig config, std::shared_ptr<HttpTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  if (config_.dim <= 0) throw ValidationError("encoder dim must be positive");
  if (config_.backend == EncoderBackend::kRemote) {
    if (!transport_) throw ValidationError("remote encoder needs a transport");
    if (config_.endpoint.empty()) throw ValidationError("remote encoder needs an endpoint");
    if (config_.batch_size < 1) throw ValidationError("encoder batch size must be positive");
    LoadCache();
  }
}

std::string TextEncoder::backend_id() const {
  if (config_.backend == EncoderBackend::kHashedFallback) {
    return "hashed-fnv1a64-d" + std::to_string(config_.dim);
  }
  return "remote:" + config_.endpoint + ":d" + std::to_string(config_.dim);
}

std::string TextEncoder::Key(std::string_view text) const {
  std::string material = backend_id();
  material += '\0';
  material += text;
  return Sha256Hex(material);
}

Eigen::VectorXd TextEncoder::Encode(std::string_view text) {
  const std::string s(text);
  return EncodeBatch(std::span<const std::string>(&s, 1)).front();
}

std::vector<Eigen::VectorXd> TextEncoder::EncodeBatch(std::span<const std::string> texts) {
  std::vector<Eigen::VectorXd> out(texts.size());
  std::vector<std::string> keys(texts.size());
  std::vector<std::size_t> missing;
  {
    std::lock_guard lock(mu_);
    for (std::size_t k = 0; k < texts.size(); ++k) {
      keys[k] = Key(texts[k]);
      auto it = cache_.find(keys[k]);
      if (it != cache_.end()) {
        out[k] = it->second;
        ++cache_hits_;
      } else {
        missing.push_back(k);
      }
    }
  }
  if (missing.empty()) return out;

  // Unique texts only; the rest are filled from the first occurrence.
  std::vector<std::string> todo;
  std::unordered_map<std::string, std::size_t> slot;
  for (std::size_t k : missing) {
    if (slot.emplace(keys[k], todo.size()).second) todo.push_back(texts[k]);
  }
  std::vector<Eigen::VectorXd> fresh;
  if (config_.backend == EncoderBackend::kHashedFallback) {
    fresh.reserve(todo.size());
    for (const auto& t : todo) fresh.push_back(HashedEmbedding(t, config_.dim));
  } else {
    for (std::size_t start = 0; start < todo.size();
         start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t n =
          std::min(todo.size() - start, static_cast<std::size_t>(config_.batch_size));
      auto part = RemoteEncode(std::span<const std::string>(todo).subspan(start, n));
      for (auto& v : part) fresh.push_back(std::move(v));
    }
  }

  std::lock_guard lock(mu_);
  for (std::size_t k : missing) {
    const auto& v = fresh[slot.at(keys[k])];
    cache_.try_emplace(keys[k], v);
    out[k] = v;
  }
  return out;
}

std::vector<Eigen::VectorXd> TextEncoder::RemoteEncode(std::span<const std::string> texts) {
  json body = {{"texts", json::array()}};
  for (const auto& t : texts) body["texts"].push_back(t);
  const std::string payload = body.dump();

  std::vector<std::string> log;
  auto backoff = config_.retry.initial_backoff;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    ++remote_calls_;
    const HttpResponse resp = transport_->PostJson(config_.endpoint, payload, {});
    const bool retryable = resp.status == 0 || resp.status >= 500 || resp.status == 429;
    if (resp.status >= 200 && resp.status < 300) {
      json j;
      try {
        j = json::parse(resp.body);
      } catch (const json::parse_error&) {
        throw BackendError("encoder returned malformed JSON");
      }
      if (!j.contains("embeddings") || !j["embeddings"].is_array() ||
          j["embeddings"].size() != texts.size()) {
        throw BackendError("encoder response must hold one embedding per text");
      }
      std::vector<Eigen::VectorXd> out;
      out.reserve(texts.size());
      for (const auto& row : j["embeddings"]) {
        if (!row.is_array() || static_cast<int>(row.size()) != config_.dim) {
          throw BackendError("encoder dimension mismatch: expected " +
                             std::to_string(config_.dim) + ", got " +
                             std::to_string(row.is_array() ? row.size() : 0));
        }
        Eigen::VectorXd v(config_.dim);
        for (int k = 0; k < config_.dim; ++k) v[k] = row[static_cast<std::size_t>(k)].get<double>();
        if (!v.allFinite()) throw BackendError("encoder returned non-finite values");
        out.push_back(RoundToFloat(v));
      }
      return out;
    }
    log.push_back("attempt " + std::to_string(attempt) + ": " +
                  (resp.status == 0 ? "transport failure " + resp.error
                                    : "HTTP " + std::to_string(resp.status)));
    if (!retryable) throw BackendError("encoder request failed: " + log.back(), log);
    if (attempt < config_.retry.max_attempts) {
      config_.sleep(backoff);
      backoff = std::chrono::milliseconds(static_cast<std::int64_t>(
          std::llround(static_cast<double>(backoff.count()) * config_.retry.multiplier)));
    }
  }
  std::string msg = "encoder failed after " + std::to_string(config_.retry.max_attempts) +
                    " attempts";
  for (const auto& l : log) msg += "; " + l;
  throw BackendError(msg, log);
}

void TextEncoder::LoadCache() {
  if (config_.cache_path.empty() || !std::filesystem::exists(config_.cache_path)) return;
  const std::string data = ReadFile(config_.cache_path);
  binary::Reader r(data, config_.cache_path.string());
  static constexpr char kHex[] = "0123456789abcdef";
  while (r.remaining() > 0) {
    const auto raw = r.Bytes(32);
    std::string key;
    for (unsigned char c : raw) {
      key += kHex[c >> 4];
      key += kHex[c & 0xf];
    }
    const std::uint32_t d = r.U32();
    Eigen::VectorXd v(d);
    for (std::uint32_t k = 0; k < d; ++k) v[k] = r.F32();
    if (static_cast<int>(d) == config_.dim) cache_.emplace(std::move(key), std::move(v));
  }
}

void TextEncoder::SaveCache() const {
  if (config_.backend != EncoderBackend::kRemote || config_.cache_path.empty()) return;
  std::lock_guard lock(mu_);
  std::vector<const std::pair<const std::string, Eigen::VectorXd>*> entries;
  for (const auto& e : cache_) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(),
            [](auto* a, auto* b) { return a->first < b->first; });
  std::string out;
  for (const auto* e : entries) {
    out += HexToBytes(e->first);
    binary::PutU32(out, static_cast<std::uint32_t>(e->second.size()));
    for (Eigen::Index k = 0; k < e->second.size(); ++k) {
      binary::PutF32(out, static_cast<float>(e->second[k]));
    }
  }
  WriteFileAtomic(config_.cache_path, out);
}

TextTable<double> EncodeLayers(const DescriptionLayers& layers, TextEncoder& encoder) {
  TextTable<double> table;
  const int d = encoder.dim();
  for (int l = 1; l <= layers.num_layers(); ++l) {
    const auto& texts = layers.layers[static_cast<std::size_t>(l - 1)];
    std::vector<Eigen::VectorXd> vecs;
    try {
      vecs = encoder.EncodeBatch(texts);
    } catch (const BackendError& e) {
      throw BackendError("encoding layer " + std::to_string(l) + " failed: " + e.what(),
                         e.attempts());
    }
    Matrix<double> users(layers.num_users, d);
    Matrix<double> items(layers.num_items, d);
    for (Index v = 0; v < layers.num_nodes(); ++v) {
      if (vecs[v].size() != d) {
        throw ValidationError("embedding for node " + std::to_string(v) + " layer " +
                              std::to_string(l) + " has wrong dimension");
      }
      if (v < layers.num_users) {
        users.row(v) = vecs[v].transpose();
      } else {
        items.row(v - layers.num_users) = vecs[v].transpose();
      }
    }
    table.users.push_back(std::move(users));
    table.items.push_back(std::move(items));
  }
  return table;
}

std::string SerializeTextTable(const TextTable<double>& table) {
  std::string out(kTableMagic, 4);
  binary::PutU32(out, kTableVersion);
  const auto n = static_cast<std::uint32_t>(table.users.empty() ? 0 : table.users[0].rows());
  const auto m = static_cast<std::uint32_t>(table.items.empty() ? 0 : table.items[0].rows());
  binary::PutU32(out, n);
  binary::PutU32(out, m);
  binary::PutU32(out, static_cast<std::uint32_t>(table.num_layers()));
  binary::PutU32(out, static_cast<std::uint32_t>(table.dim()));
  for (int l = 0; l < table.num_layers(); ++l) {
    for (const auto* mat : {&table.users[l], &table.items[l]}) {
      for (Eigen::Index r = 0; r < mat->rows(); ++r) {
        for (Eigen::Index c = 0; c < mat->cols(); ++c) {
          binary::PutF32(out, static_cast<float>((*mat)(r, c)));
        }
      }
    }
  }
  out += Sha256Hex(out);
  return out;
}

TextTable<double> DeserializeTextTable(std::string_view bytes) {
  if (bytes.size() < 4 + 64 || bytes.substr(0, 4) != std::string_view(kTableMagic, 4)) {
    throw ValidationError("not a text table file");
  }
  const auto body = bytes.substr(0, bytes.size() - 64);
  if (Sha256Hex(body) != bytes.substr(bytes.size() - 64)) {
    throw ValidationError("text table content hash mismatch");
  }
  binary::Reader r(body, "text table");
  r.Bytes(4);
  if (r.U32() != kTableVersion) throw ValidationError("unsupported text table version");
  const auto n = r.U32(), m = r.U32(), layers = r.U32(), d = r.U32();
  TextTable<double> table;
  for (std::uint32_t l = 0; l < layers; ++l) {
    Matrix<double> users(n, d), items(m, d);
    for (auto* mat : {&users, &items}) {
      for (Eigen::Index row = 0; row < mat->rows(); ++row) {
        for (Eigen::Index c = 0; c < mat->cols(); ++c) (*mat)(row, c) = r.F32();
      }
    }
    table.users.push_back(std::move(users));
    table.items.push_back(std::move(items));
  }
  if (r.remaining() != 0) throw ValidationError("text table has trailing bytes");
  return table;
}

}  // namespace gcrec
