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

// Little-endian encoding helpers for the binary artifact formats.

#ifndef GCREC_BINARY_IO_HPP_
#define GCREC_BINARY_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "gcrec/common.hpp"

namespace gcrec::binary {

inline void PutU32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out += static_cast<char>((v >> (8 * k)) & 0xff);
}

inline void PutU64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out += static_cast<char>((v >> (8 * k)) & 0xff);
}

inline void PutF32(std::string& out, float f) {
  PutU32(out, std::bit_cast<std::uint32_t>(f));
}

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint32_t U32() {
    Need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t U64() {
    const std::uint64_t lo = U32();
    const std::uint64_t hi = U32();
    return lo | (hi << 32);
  }
  float F32() { return std::bit_cast<float>(U32()); }
  std::string_view Bytes(std::size_t n) {
    Need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void Need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw ValidationError(what_ + ": truncated file");
  }
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace gcrec::binary

#endif  // GCREC_BINARY_IO_HPP_
