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

#ifndef GCREC_TYPES_HPP_
#define GCREC_TYPES_HPP_

#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace gcrec {

// Embedding matrices hold one node per row.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

// Frozen text embeddings per description layer: users[l] is N x dt and
// items[l] is M x dt for layer l+1.
template <typename Scalar>
struct TextTable {
  std::vector<Matrix<Scalar>> users;
  std::vector<Matrix<Scalar>> items;

  int num_layers() const { return static_cast<int>(users.size()); }
  Eigen::Index dim() const { return users.empty() ? 0 : users.front().cols(); }

  template <typename Other>
  TextTable<Other> cast() const {
    TextTable<Other> out;
    for (const auto& m : users) out.users.push_back(m.template cast<Other>());
    for (const auto& m : items) out.items.push_back(m.template cast<Other>());
    return out;
  }
};

}  // namespace gcrec

#endif  // GCREC_TYPES_HPP_
