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

#ifndef GCREC_DATASET_HPP_
#define GCREC_DATASET_HPP_

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gcrec {

using Index = std::int32_t;

enum class NodeKind { kUser, kItem };

struct NodeRecord {
  std::string id;
  std::string description;
};

// A positive interaction R_ui = 1, in dense indices.
struct Interaction {
  Index user = 0;
  Index item = 0;
  auto operator<=>(const Interaction&) const = default;
};

// Users, items, their raw descriptions and the deduplicated interaction set.
// Dense indices follow first appearance in the node files. Interactions are
// kept sorted by (user, item).
class Dataset {
 public:
  Dataset() = default;

  // Validates uniqueness of ids and referential integrity of interactions.
  static Dataset Create(std::vector<NodeRecord> users,
                        std::vector<NodeRecord> items,
                        std::vector<Interaction> interactions);

  Index num_users() const { return static_cast<Index>(users_.size()); }
  Index num_items() const { return static_cast<Index>(items_.size()); }
  Index num_nodes() const { return num_users() + num_items(); }

  const std::vector<NodeRecord>& users() const { return users_; }
  const std::vector<NodeRecord>& items() const { return items_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }

  // Unified node numbering: users are 0..N-1, items N..N+M-1.
  const NodeRecord& node(Index v) const {
    return v < num_users() ? users_[v] : items_[v - num_users()];
  }
  NodeKind kind(Index v) const {
    return v < num_users() ? NodeKind::kUser : NodeKind::kItem;
  }

  // Throws ValidationError for unknown ids.
  Index user_index(const std::string& id) const;
  Index item_index(const std::string& id) const;
  bool has_user(const std::string& id) const { return user_lookup_.contains(id); }
  bool has_item(const std::string& id) const { return item_lookup_.contains(id); }

  // Same nodes, different edge set (e.g. the train split).
  Dataset WithInteractions(std::vector<Interaction> interactions) const;

 private:
  std::vector<NodeRecord> users_;
  std::vector<NodeRecord> items_;
  std::vector<Interaction> interactions_;
  std::unordered_map<std::string, Index> user_lookup_;
  std::unordered_map<std::string, Index> item_lookup_;
};

// Bipartite adjacency. Neighbor lists are sorted by ascending dense index.
struct GraphTopology {
  std::vector<std::vector<Index>> user_adj;  // N_u, item indices
  std::vector<std::vector<Index>> item_adj;  // N_i, user indices
  std::int64_t num_edges = 0;

  Index num_users() const { return static_cast<Index>(user_adj.size()); }
  Index num_items() const { return static_cast<Index>(item_adj.size()); }
  Index num_nodes() const { return num_users() + num_items(); }
  Index user_degree(Index u) const { return static_cast<Index>(user_adj[u].size()); }
  Index item_degree(Index i) const { return static_cast<Index>(item_adj[i].size()); }

  // Degree and neighbors in unified node numbering (items offset by N).
  Index degree(Index v) const;
  std::vector<Index> neighbors(Index v) const;
};

GraphTopology BuildGraph(Index num_users, Index num_items,
                         std::span<const Interaction> interactions);
GraphTopology BuildGraph(const Dataset& dataset);

struct Split {
  std::vector<Interaction> train;
  std::vector<Interaction> valid;
  std::vector<Interaction> test;
  std::uint64_t seed = 0;
};

// Uniform random partition of the interactions into three sets whose sizes
// differ by at most one. Each set is returned sorted by (user, item).
Split SplitDataset(const Dataset& dataset, std::uint64_t seed);

// users/items: JSONL records {"id", "description"}; interactions: TSV
// user_id<TAB>item_id. Duplicate interaction lines collapse to one.
Dataset LoadDataset(const std::filesystem::path& users_path,
                    const std::filesystem::path& items_path,
                    const std::filesystem::path& interactions_path);

std::vector<NodeRecord> ReadNodesJsonl(const std::filesystem::path& path);
std::string NodesToJsonl(std::span<const NodeRecord> nodes);

// id<TAB>dense_index, one line per node.
std::string IndexMappingTsv(std::span<const NodeRecord> nodes);

std::string InteractionsTsv(const Dataset& dataset,
                            std::span<const Interaction> interactions);
std::string SplitToJson(const Dataset& dataset, const Split& split);
Split SplitFromJson(const Dataset& dataset, const std::string& json_text);
std::string GraphToJson(const Dataset& dataset, const GraphTopology& graph);

}  // namespace gcrec

#endif  // GCREC_DATASET_HPP_
