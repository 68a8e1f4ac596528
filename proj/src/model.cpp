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

#include "gcrec/model.hpp"

#include <array>

#include "gcrec/binary_io.hpp"

namespace gcrec {
namespace {

constexpr char kMagic[] = "GCMP";
constexpr std::uint32_t kVersion = 1;
constexpr std::array<std::string_view, 5> kVariantNames = {"full", "raw", "plain",
                                                           "no_align", "mf"};

void PutMatrix(std::string& out, const Matrix<double>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      binary::PutF32(out, static_cast<float>(m(r, c)));
    }
  }
}

Matrix<double> GetMatrix(binary::Reader& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = in.F32();
  }
  return m;
}

}  // namespace

std::string_view VariantName(Variant v) {
  return kVariantNames[static_cast<std::size_t>(v)];
}

Variant ParseVariant(std::string_view name) {
  for (std::size_t k = 0; k < kVariantNames.size(); ++k) {
    if (kVariantNames[k] == name) return static_cast<Variant>(k);
  }
  throw ValidationError("unknown variant '" + std::string(name) +
                        "' (expected full, raw, plain, no_align or mf)");
}

std::string SerializeParams(const ModelParams<double>& p) {
  std::string out(kMagic, 4);
  binary::PutU32(out, kVersion);
  binary::PutU32(out, static_cast<std::uint32_t>(p.users.rows()));
  binary::PutU32(out, static_cast<std::uint32_t>(p.items.rows()));
  binary::PutU32(out, static_cast<std::uint32_t>(p.dim()));
  binary::PutU32(out, static_cast<std::uint32_t>(p.num_layers));
  binary::PutU64(out, p.seed);
  binary::PutU32(out, static_cast<std::uint32_t>(p.variant));
  binary::PutU32(out, static_cast<std::uint32_t>(p.text_dim()));
  binary::PutU32(out, static_cast<std::uint32_t>(p.mappings.size()));
  PutMatrix(out, p.users);
  PutMatrix(out, p.items);
  for (const auto& w : p.mappings) PutMatrix(out, w);
  out += Sha256Hex(out);
  return out;
}

ModelParams<double> DeserializeParams(std::string_view bytes) {
  if (bytes.size() < 4 + 64 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw ValidationError("not a parameter checkpoint");
  }
  const auto body = bytes.substr(0, bytes.size() - 64);
  if (Sha256Hex(body) != bytes.substr(bytes.size() - 64)) {
    throw ValidationError("parameter checkpoint content hash mismatch");
  }
  binary::Reader in(body, "parameter checkpoint");
  in.Bytes(4);
  if (in.U32() != kVersion) throw ValidationError("unsupported checkpoint version");
  ModelParams<double> p;
  const auto n = in.U32(), m = in.U32(), d = in.U32();
  p.num_layers = static_cast<int>(in.U32());
  p.seed = in.U64();
  const auto variant = in.U32();
  if (variant >= kVariantNames.size()) throw ValidationError("checkpoint has unknown variant");
  p.variant = static_cast<Variant>(variant);
  const auto dt = in.U32(), count = in.U32();
  p.users = GetMatrix(in, n, d);
  p.items = GetMatrix(in, m, d);
  for (std::uint32_t k = 0; k < count; ++k) p.mappings.push_back(GetMatrix(in, d + dt, d));
  if (in.remaining() != 0) throw ValidationError("parameter checkpoint has trailing bytes");
  return p;
}

}  // namespace gcrec
