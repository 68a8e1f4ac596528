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

#include "gcrec/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gcrec/common.hpp"

namespace gcrec {
namespace {

using nlohmann::json;

std::unordered_map<std::string, Index> BuildLookup(
    const std::vector<NodeRecord>& nodes, const char* what) {
  std::unordered_map<std::string, Index> lookup;
  lookup.reserve(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (!lookup.emplace(nodes[k].id, static_cast<Index>(k)).second) {
      throw ValidationError(std::string("duplicate ") + what + " id: " +
                            nodes[k].id);
    }
  }
  return lookup;
}

void SortUnique(std::vector<Interaction>& edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

std::string StripCr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

Dataset Dataset::Create(std::vector<NodeRecord> users,
                        std::vector<NodeRecord> items,
                        std::vector<Interaction> interactions) {
  Dataset d;
  d.user_lookup_ = BuildLookup(users, "user");
  d.item_lookup_ = BuildLookup(items, "item");
  d.users_ = std::move(users);
  d.items_ = std::move(items);
  for (const auto& e : interactions) {
    if (e.user < 0 || e.user >= d.num_users() || e.item < 0 ||
        e.item >= d.num_items()) {
      throw ValidationError("interaction references out-of-range index (" +
                            std::to_string(e.user) + ", " +
                            std::to_string(e.item) + ")");
    }
  }
  SortUnique(interactions);
  d.interactions_ = std::move(interactions);
  return d;
}

Index Dataset::user_index(const std::string& id) const {
  auto it = user_lookup_.find(id);
  if (it == user_lookup_.end()) throw ValidationError("unknown user id: " + id);
  return it->second;
}

Index Dataset::item_index(const std::string& id) const {
  auto it = item_lookup_.find(id);
  if (it == item_lookup_.end()) throw ValidationError("unknown item id: " + id);
  return it->second;
}

Dataset Dataset::WithInteractions(std::vector<Interaction> interactions) const {
  return Create(users_, items_, std::move(interactions));
}

Index GraphTopology::degree(Index v) const {
  return v < num_users() ? user_degree(v) : item_degree(v - num_users());
}

std::vector<Index> GraphTopology::neighbors(Index v) const {
  std::vector<Index> out;
  if (v < num_users()) {
    out.reserve(user_adj[v].size());
    for (Index i : user_adj[v]) out.push_back(num_users() + i);
  } else {
    out = item_adj[v - num_users()];
  }
  return out;
}

GraphTopology BuildGraph(Index num_users, Index num_items,
                         std::span<const Interaction> interactions) {
  GraphTopology g;
  g.user_adj.resize(num_users);
  g.item_adj.resize(num_items);
  std::vector<Interaction> edges(interactions.begin(), interactions.end());
  SortUnique(edges);
  for (const auto& e : edges) {
    g.user_adj[e.user].push_back(e.item);
    g.item_adj[e.item].push_back(e.user);
  }
  // Sorted (user, item) order already sorts user lists; item lists receive
  // users in ascending order for the same reason.
  g.num_edges = static_cast<std::int64_t>(edges.size());
  return g;
}

GraphTopology BuildGraph(const Dataset& dataset) {
  return BuildGraph(dataset.num_users(), dataset.num_items(),
                    dataset.interactions());
}

Split SplitDataset(const Dataset& dataset, std::uint64_t seed) {
  const auto& all = dataset.interactions();
  const std::size_t n = all.size();
  if (n < 3) {
    throw ValidationError("split needs at least 3 interactions, got " +
                          std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t base = n / 3;
  const std::size_t rem = n % 3;
  const std::size_t n_train = base + (rem >= 1 ? 1 : 0);
  const std::size_t n_valid = base + (rem >= 2 ? 1 : 0);

  Split s;
  s.seed = seed;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& e = all[order[k]];
    if (k < n_train) {
      s.train.push_back(e);
    } else if (k < n_train + n_valid) {
      s.valid.push_back(e);
    } else {
      s.test.push_back(e);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.valid.begin(), s.valid.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<NodeRecord> ReadNodesJsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing file: " + path.string());
  std::vector<NodeRecord> nodes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = StripCr(std::move(line));
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON record");
    }
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string()) {
      throw ValidationError(where + ": record needs a string field \"id\"");
    }
    if (!rec.contains("description") || !rec["description"].is_string()) {
      throw ValidationError(where +
                            ": record needs a string field \"description\"");
    }
    nodes.push_back({rec["id"].get<std::string>(),
                     rec["description"].get<std::string>()});
  }
  return nodes;
}

Dataset LoadDataset(const std::filesystem::path& users_path,
                    const std::filesystem::path& items_path,
                    const std::filesystem::path& interactions_path) {
  auto users = ReadNodesJsonl(users_path);
  auto items = ReadNodesJsonl(items_path);
  // Validate ids before reading edges so lookups are available.
  Dataset nodes_only = Dataset::Create(std::move(users), std::move(items), {});

  std::ifstream in(interactions_path);
  if (!in) throw ValidationError("missing file: " + interactions_path.string());
  std::vector<Interaction> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = StripCr(std::move(line));
    if (line.empty()) continue;
    const std::string where =
        interactions_path.string() + ":" + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ValidationError(where + ": expected user_id<TAB>item_id");
    }
    const std::string uid = line.substr(0, tab);
    const std::string iid = line.substr(tab + 1);
    if (!nodes_only.has_user(uid)) {
      throw ValidationError(where + ": unknown user id '" + uid + "'");
    }
    if (!nodes_only.has_item(iid)) {
      throw ValidationError(where + ": unknown item id '" + iid + "'");
    }
    edges.push_back({nodes_only.user_index(uid), nodes_only.item_index(iid)});
  }
  return nodes_only.WithInteractions(std::move(edges));
}

std::string NodesToJsonl(std::span<const NodeRecord> nodes) {
  std::string out;
  for (const auto& n : nodes) {
    json rec = {{"id", n.id}, {"description", n.description}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::string IndexMappingTsv(std::span<const NodeRecord> nodes) {
  std::string out;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    out += nodes[k].id;
    out += '\t';
    out += std::to_string(k);
    out += '\n';
  }
  return out;
}

std::string InteractionsTsv(const Dataset& dataset,
                            std::span<const Interaction> interactions) {
  std::string out;
  for (const auto& e : interactions) {
    out += dataset.users()[e.user].id;
    out += '\t';
    out += dataset.items()[e.item].id;
    out += '\n';
  }
  return out;
}

namespace {

json EdgesToJson(const Dataset& d, std::span<const Interaction> edges) {
  json arr = json::array();
  for (const auto& e : edges) {
    arr.push_back({d.users()[e.user].id, d.items()[e.item].id});
  }
  return arr;
}

std::vector<Interaction> EdgesFromJson(const Dataset& d, const json& arr) {
  std::vector<Interaction> edges;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2) {
      throw ValidationError("split edge must be a [user_id, item_id] pair");
    }
    edges.push_back({d.user_index(p[0].get<std::string>()),
                     d.item_index(p[1].get<std::string>())});
  }
  return edges;
}

}  // namespace

std::string SplitToJson(const Dataset& dataset, const Split& split) {
  json j;
  j["seed"] = split.seed;
  j["train"] = EdgesToJson(dataset, split.train);
  j["valid"] = EdgesToJson(dataset, split.valid);
  j["test"] = EdgesToJson(dataset, split.test);
  return j.dump() + "\n";
}

Split SplitFromJson(const Dataset& dataset, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error&) {
    throw ValidationError("malformed split JSON");
  }
  Split s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = EdgesFromJson(dataset, j.at("train"));
  s.valid = EdgesFromJson(dataset, j.at("valid"));
  s.test = EdgesFromJson(dataset, j.at("test"));
  return s;
}

std::string GraphToJson(const Dataset& dataset, const GraphTopology& graph) {
  json users = json::object();
  for (Index u = 0; u < graph.num_users(); ++u) {
    json nbrs = json::array();
    for (Index i : graph.user_adj[u]) nbrs.push_back(dataset.items()[i].id);
    users[dataset.users()[u].id] = nbrs;
  }
  json items = json::object();
  for (Index i = 0; i < graph.num_items(); ++i) {
    json nbrs = json::array();
    for (Index u : graph.item_adj[i]) nbrs.push_back(dataset.users()[u].id);
    items[dataset.items()[i].id] = nbrs;
  }
  json j;
  j["num_users"] = graph.num_users();
  j["num_items"] = graph.num_items();
  j["num_edges"] = graph.num_edges;
  j["user_adj"] = std::move(users);
  j["item_adj"] = std::move(items);
  return j.dump() + "\n";
}

}  // namespace gcrec
