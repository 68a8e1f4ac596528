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

// Graph-convolutional scoring model with text alignment layers.
//
// Embeddings are stored one node per row. With S the N x M normalized
// adjacency (S_ui = 1/sqrt(|N_u||N_i|)), the full variant computes for
// l = 1..L
//
//   U_l = [S I_{l-1}, Tu_l] W_l      I_l = [S^T U_{l-1}, Ti_l] W_l
//
// where U_0, I_0 are the ID embeddings, Tu_l, Ti_l the frozen text embeddings
// of description layer l and W_l a (d + dt) x d matrix shared by users and
// items. The final embedding is the mean of layers 1..L.
//
// The no_align variant maps [ID, text of layer L] through a single W_0 once
// and then propagates with S alone.

#ifndef GCREC_MODEL_HPP_
#define GCREC_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gcrec/common.hpp"
#include "gcrec/dataset.hpp"
#include "gcrec/types.hpp"

namespace gcrec {

// kMf is the ID-only matrix factorization baseline: finals are the ID
// embeddings and there are no mappings.
enum class Variant { kFull, kRaw, kPlain, kNoAlign, kMf };

std::string_view VariantName(Variant v);
Variant ParseVariant(std::string_view name);

template <typename Scalar>
struct ModelParams {
  Matrix<Scalar> users;                 // N x d
  Matrix<Scalar> items;                 // M x d
  std::vector<Matrix<Scalar>> mappings;  // (d + dt) x d each
  int num_layers = 0;
  std::uint64_t seed = 0;
  Variant variant = Variant::kFull;

  Eigen::Index dim() const { return users.cols(); }
  Eigen::Index text_dim() const {
    return mappings.empty() ? 0 : mappings.front().rows() - dim();
  }

  // Sum of squares over every trainable tensor.
  Scalar SquaredNorm() const {
    Scalar s = users.squaredNorm() + items.squaredNorm();
    for (const auto& w : mappings) s += w.squaredNorm();
    return s;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.users = users.template cast<Other>();
    out.items = items.template cast<Other>();
    for (const auto& w : mappings) out.mappings.push_back(w.template cast<Other>());
    out.num_layers = num_layers;
    out.seed = seed;
    out.variant = variant;
    return out;
  }
};

inline int NumMappings(Variant variant, int num_layers) {
  switch (variant) {
    case Variant::kMf:
      return 0;
    case Variant::kNoAlign:
      return 1;
    default:
      return num_layers;
  }
}

// ID embeddings ~ Normal(0, 0.01); W ~ Uniform(-sqrt(1/(d+dt)), sqrt(1/(d+dt))).
template <typename Scalar>
ModelParams<Scalar> InitParams(Index num_users, Index num_items, int dim, int text_dim,
                               int num_layers, Variant variant, std::uint64_t seed) {
  if (dim <= 0 || num_layers < 1 || text_dim < 0) {
    throw ValidationError("model needs dim > 0, layers >= 1 and text dim >= 0");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  ModelParams<Scalar> p;
  p.num_layers = num_layers;
  p.seed = seed;
  p.variant = variant;
  p.users.resize(num_users, dim);
  p.items.resize(num_items, dim);
  for (auto* m : {&p.users, &p.items}) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = Scalar(normal(rng));
    }
  }
  const double bound = std::sqrt(1.0 / static_cast<double>(dim + text_dim));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (int k = 0; k < NumMappings(variant, num_layers); ++k) {
    Matrix<Scalar> w(dim + text_dim, dim);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = Scalar(uniform(rng));
    }
    p.mappings.push_back(std::move(w));
  }
  return p;
}

template <typename Scalar>
struct NormalizedGraph {
  SparseMatrix<Scalar> user_item;  // S, N x M
  SparseMatrix<Scalar> item_user;  // S^T, M x N
};

template <typename Scalar>
NormalizedGraph<Scalar> Normalize(const GraphTopology& graph) {
  const Index n = static_cast<Index>(graph.user_adj.size());
  const Index m = static_cast<Index>(graph.item_adj.size());
  std::vector<Eigen::Triplet<Scalar>> entries;
  entries.reserve(static_cast<std::size_t>(graph.num_edges));
  for (Index u = 0; u < n; ++u) {
    const auto& adj = graph.user_adj[static_cast<std::size_t>(u)];
    for (Index i : adj) {
      const auto di = graph.item_adj[static_cast<std::size_t>(i)].size();
      entries.emplace_back(u, i, Scalar(1) / std::sqrt(Scalar(adj.size() * di)));
    }
  }
  NormalizedGraph<Scalar> g;
  g.user_item.resize(n, m);
  g.user_item.setFromTriplets(entries.begin(), entries.end());
  g.item_user = g.user_item.transpose();
  return g;
}

template <typename Scalar>
struct NodeEmbeddings {
  Matrix<Scalar> users;
  Matrix<Scalar> items;
};

// users_out = S items_in, items_out = S^T users_in. Isolated nodes get zero.
template <typename Scalar>
NodeEmbeddings<Scalar> AggregateNeighbors(const NormalizedGraph<Scalar>& g,
                                          const NodeEmbeddings<Scalar>& in) {
  if (in.users.rows() != g.user_item.rows() || in.items.rows() != g.user_item.cols() ||
      in.users.cols() != in.items.cols()) {
    throw ValidationError("aggregate: embedding shape does not match graph");
  }
  return {g.user_item * in.items, g.item_user * in.users};
}

template <typename Scalar>
struct ForwardResult {
  std::vector<NodeEmbeddings<Scalar>> layers;  // e^(1) .. e^(L)
  NodeEmbeddings<Scalar> finals;
  // Inputs to each mapping, kept for the backward pass: [aggregate, text].
  std::vector<NodeEmbeddings<Scalar>> mapped_inputs;
  NodeEmbeddings<Scalar> initial;  // no_align only: e^(0) after W_0
};

namespace internal {

template <typename Scalar>
Matrix<Scalar> Concat(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  Matrix<Scalar> out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

template <typename Scalar>
void CheckFinite(const NodeEmbeddings<Scalar>& e, int layer) {
  if (!e.users.allFinite() || !e.items.allFinite()) {
    throw NumericalError("non-finite embedding at layer " + std::to_string(layer));
  }
}

}  // namespace internal

template <typename Scalar>
void CheckShapes(const ModelParams<Scalar>& p, const NormalizedGraph<Scalar>& g,
                 const TextTable<Scalar>& text) {
  if (p.users.rows() != g.user_item.rows() || p.items.rows() != g.user_item.cols() ||
      p.users.cols() != p.items.cols()) {
    throw ValidationError("model parameters do not match graph size");
  }
  if (static_cast<int>(p.mappings.size()) != NumMappings(p.variant, p.num_layers)) {
    throw ValidationError("model has wrong number of mapping matrices");
  }
  if (p.variant == Variant::kMf) return;
  if (text.num_layers() < p.num_layers) {
    throw ValidationError("text table has " + std::to_string(text.num_layers()) +
                          " layers, model needs " + std::to_string(p.num_layers));
  }
  for (int l = 0; l < text.num_layers(); ++l) {
    if (text.users[l].rows() != p.users.rows() || text.items[l].rows() != p.items.rows() ||
        text.users[l].cols() != p.text_dim() || text.items[l].cols() != p.text_dim()) {
      throw ValidationError("text table layer " + std::to_string(l + 1) +
                            " does not match model shape");
    }
  }
  for (const auto& w : p.mappings) {
    if (w.cols() != p.dim() || w.rows() != p.dim() + p.text_dim()) {
      throw ValidationError("mapping matrix has wrong shape");
    }
  }
}

template <typename Scalar>
ForwardResult<Scalar> Forward(const ModelParams<Scalar>& p, const NormalizedGraph<Scalar>& g,
                              const TextTable<Scalar>& text) {
  CheckShapes(p, g, text);
  using internal::Concat;
  ForwardResult<Scalar> r;
  const int L = p.num_layers;

  if (p.variant == Variant::kMf) {
    r.finals = {p.users, p.items};
    return r;
  }

  NodeEmbeddings<Scalar> prev{p.users, p.items};
  if (p.variant == Variant::kNoAlign) {
    NodeEmbeddings<Scalar> in{Concat(p.users, text.users[L - 1]),
                              Concat(p.items, text.items[L - 1])};
    prev = {in.users * p.mappings[0], in.items * p.mappings[0]};
    internal::CheckFinite(prev, 0);
    r.mapped_inputs.push_back(std::move(in));
    r.initial = prev;
  }

  for (int l = 1; l <= L; ++l) {
    NodeEmbeddings<Scalar> agg = AggregateNeighbors(g, prev);
    NodeEmbeddings<Scalar> cur;
    if (p.variant == Variant::kNoAlign) {
      cur = std::move(agg);
    } else {
      NodeEmbeddings<Scalar> in{Concat(agg.users, text.users[l - 1]),
                                Concat(agg.items, text.items[l - 1])};
      cur = {in.users * p.mappings[l - 1], in.items * p.mappings[l - 1]};
      r.mapped_inputs.push_back(std::move(in));
    }
    internal::CheckFinite(cur, l);
    r.layers.push_back(cur);
    prev = std::move(cur);
  }

  r.finals = {Matrix<Scalar>::Zero(p.users.rows(), p.dim()),
              Matrix<Scalar>::Zero(p.items.rows(), p.dim())};
  for (const auto& e : r.layers) {
    r.finals.users += e.users;
    r.finals.items += e.items;
  }
  r.finals.users /= Scalar(L);
  r.finals.items /= Scalar(L);
  return r;
}

template <typename Scalar>
Scalar Score(const NodeEmbeddings<Scalar>& finals, Index u, Index i) {
  if (u < 0 || u >= finals.users.rows() || i < 0 || i >= finals.items.rows()) {
    throw ValidationError("score: index out of range");
  }
  return finals.users.row(u).dot(finals.items.row(i));
}

template <typename Scalar>
Vector<Scalar> ScoreCandidates(const NodeEmbeddings<Scalar>& finals, Index u,
                               const std::vector<Index>& items) {
  Vector<Scalar> out(static_cast<Eigen::Index>(items.size()));
  for (std::size_t k = 0; k < items.size(); ++k) out[k] = Score(finals, u, items[k]);
  return out;
}

// Checkpoint: "GCMP", u32 version, u32 N, u32 M, u32 d, u32 L, u64 seed,
// u32 variant, u32 text dim, u32 mapping count, then f32 little-endian
// row-major users, items and mappings in order, then a 64-char SHA-256 hex
// trailer over everything before it.
std::string SerializeParams(const ModelParams<double>& params);
ModelParams<double> DeserializeParams(std::string_view bytes);

}  // namespace gcrec

#endif  // GCREC_MODEL_HPP_
