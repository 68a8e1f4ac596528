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

#ifndef GCREC_COMMON_HPP_
#define GCREC_COMMON_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gcrec {

// Error hierarchy. The CLI maps each class onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad inputs: malformed files, unknown ids, inconsistent shapes or configs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// LLM or encoder backend failures (transport, error payloads).
class BackendError : public Error {
 public:
  BackendError(const std::string& what, std::vector<std::string> attempts = {})
      : Error(what), attempts_(std::move(attempts)) {}
  const std::vector<std::string>& attempts() const { return attempts_; }

 private:
  std::vector<std::string> attempts_;
};

// Numerical failures inside the model or training loop.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Whitespace tokenization. A token is a maximal run of non-whitespace bytes.
std::vector<std::string_view> Tokenize(std::string_view text);
std::size_t CountTokens(std::string_view text);

// Number of Unicode code points in a UTF-8 string.
std::size_t Utf8Length(std::string_view text);

// Fixed 64-bit FNV-1a hash; stable across platforms and runs.
std::uint64_t Fnv1a64(std::string_view bytes);

// Lowercase hex SHA-256 of the given bytes.
std::string Sha256Hex(std::string_view bytes);
std::string Sha256File(const std::filesystem::path& path);

std::string ReadFile(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see partial files.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes);

void LogWarning(std::string_view message);

}  // namespace gcrec

#endif  // GCREC_COMMON_HPP_
