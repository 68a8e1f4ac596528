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

#ifndef GCREC_CONV_INFERENCE_HPP_
#define GCREC_CONV_INFERENCE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gcrec/dataset.hpp"
#include "gcrec/llm_gateway.hpp"
#include "gcrec/prompt.hpp"

namespace gcrec {

enum class Strategy { kConvolutional, kPlain, kRaw };

std::string_view StrategyName(Strategy s);
Strategy ParseStrategy(std::string_view name);

// Per-node description texts, one vector per layer. Layer 1 holds the raw
// descriptions; nodes use the unified numbering of Dataset::node().
struct DescriptionLayers {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<std::vector<std::string>> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  Index num_nodes() const { return num_users + num_items; }
  // 1-based layer index.
  const std::string& text(int layer, Index node) const {
    return layers.at(static_cast<std::size_t>(layer - 1)).at(static_cast<std::size_t>(node));
  }
  bool operator==(const DescriptionLayers&) const = default;
};

struct PropagationConfig {
  int num_layers = 3;  // total layers including the raw one
  std::size_t neighbor_cap = 10;
  std::size_t per_neighbor_char_cap = 2000;
  std::size_t prompt_budget = 4096;
  int max_output_tokens = 512;
  Strategy strategy = Strategy::kConvolutional;
  std::string scenario = "job";
  std::vector<PromptTemplate> templates = DefaultTemplates();
  int workers = 1;  // concurrent backend calls within a layer

  void Validate() const;
  RenderBudget budget() const {
    return {prompt_budget, per_neighbor_char_cap, neighbor_cap};
  }
};

struct LayerCost {
  int layer = 0;
  std::int64_t prompts = 0;
  std::int64_t node_visits = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t truncated_prompts = 0;
};

// Node-visit accounting. Convolutional visits count neighbor descriptions fed
// to the LLM; plain visits also count the target itself (hop 0).
struct TokenCostReport {
  Strategy strategy = Strategy::kConvolutional;
  int num_layers = 1;
  std::int64_t graph_nodes = 0;
  double avg_degree = 0.0;
  std::vector<LayerCost> per_layer;
  double formula_node_visits = 0.0;  // |G|·N̄·(L−1) or |G|·(1+N̄+…+N̄^(L−1))

  std::int64_t total_node_visits() const;
  std::int64_t total_prompts() const;
  std::int64_t total_input_tokens() const;
  std::int64_t total_output_tokens() const;
  std::int64_t total_truncated_prompts() const;
  std::string ToJson() const;
};

DescriptionLayers InitLayers(const Dataset& dataset);

// Up to `cap` neighbors of v, highest degree first, ties by ascending index.
std::vector<Index> SelectNeighbors(const GraphTopology& graph, Index v,
                                   std::size_t cap);

// Prompt for node v built from layer `layer` texts; nullopt for isolated nodes.
std::optional<RenderedPrompt> ConvolutionalPrompt(const DescriptionLayers& layers,
                                                  int layer,
                                                  const GraphTopology& graph,
                                                  const PropagationConfig& config,
                                                  Index v);

// One-shot multi-hop prompt over raw texts; nullopt for isolated nodes.
std::optional<RenderedPrompt> PlainPrompt(const DescriptionLayers& layers,
                                          const GraphTopology& graph,
                                          const PropagationConfig& config,
                                          Index v);

// Checkpoint files: `layer_NN.jsonl`, records {node_kind, id, text,
// content_hash} in node order. While a layer is in flight, finished nodes are
// appended to `layer_NN.partial.jsonl` so an interrupted layer resumes.
class LayerCheckpoint {
 public:
  LayerCheckpoint(std::filesystem::path dir, const Dataset& dataset)
      : dir_(std::move(dir)), dataset_(&dataset) {}

  const std::filesystem::path& dir() const { return dir_; }
  const Dataset* dataset() const { return dataset_; }
  std::filesystem::path LayerPath(int layer) const;
  std::filesystem::path PartialPath(int layer) const;

  void SaveLayer(const DescriptionLayers& layers, int layer) const;
  // Throws ValidationError naming the layer when a record is corrupt.
  std::vector<std::string> LoadLayer(int layer) const;
  bool HasLayer(int layer) const;

  // Completed (node, text) pairs of an interrupted layer.
  std::vector<std::pair<Index, std::string>> LoadPartial(int layer) const;

 private:
  std::filesystem::path dir_;
  const Dataset* dataset_;
};

void SaveLayers(const DescriptionLayers& layers, const Dataset& dataset,
                const std::filesystem::path& dir);
// Loads layer_01 .. layer_NN until the first missing file.
DescriptionLayers LoadLayers(const Dataset& dataset, const std::filesystem::path& dir);

// Appends layer l+1 computed from layer l only. Nodes without neighbors copy
// their text. Results are committed in node order regardless of completion
// order. A backend failure aborts the layer after checkpointing finished
// nodes; rerunning with the same checkpoint resumes where it stopped.
LayerCost PropagateLayer(DescriptionLayers& layers, const GraphTopology& graph,
                         const PropagationConfig& config, LlmGateway& gateway,
                         const LayerCheckpoint* checkpoint = nullptr);

struct InferenceResult {
  DescriptionLayers layers;
  TokenCostReport report;
};

// Convolutional: L−1 propagation passes. Raw: L copies of the raw layer.
// Plain strategy is dispatched to RunPlainInference.
InferenceResult RunInference(const Dataset& dataset, const GraphTopology& graph,
                             const PropagationConfig& config, LlmGateway& gateway,
                             const LayerCheckpoint* checkpoint = nullptr);

// One backend call per non-isolated node; its answer becomes layer L and
// layers 1..L−1 are raw copies.
InferenceResult RunPlainInference(const Dataset& dataset, const GraphTopology& graph,
                                  const PropagationConfig& config, LlmGateway& gateway,
                                  const LayerCheckpoint* checkpoint = nullptr);

// Exact node-visit counts by traversal of the uncapped graph, plus the
// closed-form estimate from the average degree.
TokenCostReport EstimateTokenCost(const GraphTopology& graph, int num_layers,
                                  Strategy strategy);

}  // namespace gcrec

#endif  // GCREC_CONV_INFERENCE_HPP_
