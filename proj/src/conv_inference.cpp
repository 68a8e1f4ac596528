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

#include "gcrec/conv_inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "gcrec/common.hpp"

namespace gcrec {
namespace {

using nlohmann::json;
using PromptFn = std::function<std::optional<RenderedPrompt>(Index)>;

std::string KindName(NodeKind k) { return k == NodeKind::kUser ? "user" : "item"; }

const PromptTemplate& TemplateFor(const PropagationConfig& config, bool is_user,
                                  TemplateSet& storage) {
  storage = ScenarioTemplates(config.scenario, config.templates);
  return is_user ? storage.user : storage.item;
}

std::string LayerRecord(const Dataset& d, Index v, const std::string& text) {
  json rec = {{"node_kind", KindName(d.kind(v))},
              {"id", d.node(v).id},
              {"text", text},
              {"content_hash", Sha256Hex(text)}};
  return rec.dump() + "\n";
}

struct ParsedRecord {
  Index node;
  std::string text;
};

ParsedRecord ParseLayerRecord(const Dataset& d, const std::string& line,
                              const std::string& where) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error&) {
    throw ValidationError(where + ": corrupt checkpoint record");
  }
  if (!rec.is_object() || !rec.contains("node_kind") || !rec.contains("id") ||
      !rec.contains("text") || !rec.contains("content_hash") ||
      !rec["node_kind"].is_string() || !rec["id"].is_string() ||
      !rec["text"].is_string() || !rec["content_hash"].is_string()) {
    throw ValidationError(where + ": corrupt checkpoint record");
  }
  const std::string kind = rec["node_kind"].get<std::string>();
  const std::string id = rec["id"].get<std::string>();
  Index node;
  if (kind == "user" && d.has_user(id)) {
    node = d.user_index(id);
  } else if (kind == "item" && d.has_item(id)) {
    node = d.num_users() + d.item_index(id);
  } else {
    throw ValidationError(where + ": checkpoint names unknown " + kind + " '" +
                          id + "'");
  }
  std::string text = rec["text"].get<std::string>();
  if (Sha256Hex(text) != rec["content_hash"].get<std::string>()) {
    throw ValidationError(where + ": content hash mismatch");
  }
  return {node, std::move(text)};
}

std::string LayerName(int layer) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer_%02d", layer);
  return buf;
}

// Runs prompts for all nodes of one layer. `copy_from` supplies the text of
// nodes for which `prompt_for` yields nothing.
std::vector<std::string> ComputeLayer(int layer_no,
                                      const std::vector<std::string>& copy_from,
                                      const PromptFn& prompt_for,
                                      bool count_target_visit,
                                      const PropagationConfig& config,
                                      LlmGateway& gateway,
                                      const LayerCheckpoint* checkpoint,
                                      LayerCost& cost) {
  const Index n = static_cast<Index>(copy_from.size());
  std::vector<std::string> out(copy_from.size());
  std::vector<char> done(copy_from.size(), 0);
  std::vector<std::optional<RenderedPrompt>> prompts(copy_from.size());

  for (Index v = 0; v < n; ++v) prompts[v] = prompt_for(v);

  if (checkpoint) {
    for (auto& [v, text] : checkpoint->LoadPartial(layer_no)) {
      out[v] = std::move(text);
      done[v] = 1;
    }
  }

  std::vector<Index> pending;
  for (Index v = 0; v < n; ++v) {
    if (!prompts[v]) {
      out[v] = copy_from[v];
      done[v] = 1;
    } else if (!done[v]) {
      pending.push_back(v);
    }
  }

  std::ofstream partial;
  std::mutex partial_mu;
  if (checkpoint && !pending.empty()) {
    std::filesystem::create_directories(checkpoint->dir());
    partial.open(checkpoint->PartialPath(layer_no), std::ios::app | std::ios::binary);
    if (!partial) throw Error("cannot open " + checkpoint->PartialPath(layer_no).string());
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;

  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const Index v = pending[k];
      try {
        CompletionRequest req;
        req.prompt = prompts[v]->text;
        req.max_output_tokens = config.max_output_tokens;
        req.request_id = "l" + std::to_string(layer_no) + "/" + std::to_string(v);
        CompletionResponse resp = gateway.Complete(req);
        out[v] = std::move(resp.text);
        if (checkpoint) {
          std::lock_guard lock(partial_mu);
          partial << LayerRecord(*checkpoint->dataset(), v, out[v]);
          partial.flush();
        }
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
      }
    }
  };

  const int workers = std::max(1, std::min<int>(config.workers,
                                                static_cast<int>(pending.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const BackendError& e) {
      std::string msg = LayerName(layer_no) + " aborted: " + e.what();
      if (checkpoint) {
        msg += " (finished nodes checkpointed in " +
               checkpoint->PartialPath(layer_no).string() +
               "; rerun to resume)";
      }
      throw BackendError(msg, e.attempts());
    }
  }

  // Cost is a function of prompts and answers only, so resumed and
  // uninterrupted runs report the same numbers.
  for (Index v = 0; v < n; ++v) {
    if (!prompts[v]) continue;
    ++cost.prompts;
    cost.node_visits += static_cast<std::int64_t>(prompts[v]->descriptions) +
                        (count_target_visit ? 1 : 0);
    cost.input_tokens += static_cast<std::int64_t>(CountTokens(prompts[v]->text));
    cost.output_tokens += static_cast<std::int64_t>(CountTokens(out[v]));
    if (prompts[v]->truncated) ++cost.truncated_prompts;
  }
  return out;
}

void FinishLayer(const LayerCheckpoint* checkpoint, const DescriptionLayers& layers,
                 int layer_no) {
  if (!checkpoint) return;
  checkpoint->SaveLayer(layers, layer_no);
  std::error_code ec;
  std::filesystem::remove(checkpoint->PartialPath(layer_no), ec);
}

// Restores already checkpointed complete layers, verifying layer 1 against
// the raw texts so a checkpoint from other data is rejected.
void ResumeLayers(DescriptionLayers& layers, const LayerCheckpoint* checkpoint,
                  int max_layers) {
  if (!checkpoint) return;
  if (checkpoint->HasLayer(1) && checkpoint->LoadLayer(1) != layers.layers[0]) {
    throw ValidationError("checkpoint " + checkpoint->LayerPath(1).string() +
                          " does not match the dataset's raw descriptions");
  }
  while (layers.num_layers() < max_layers &&
         checkpoint->HasLayer(layers.num_layers() + 1)) {
    layers.layers.push_back(checkpoint->LoadLayer(layers.num_layers() + 1));
  }
}

TokenCostReport BaseReport(const GraphTopology& graph, const PropagationConfig& config) {
  TokenCostReport r = EstimateTokenCost(graph, config.num_layers, config.strategy);
  r.per_layer.clear();
  return r;
}

}  // namespace

std::string_view StrategyName(Strategy s) {
  switch (s) {
    case Strategy::kConvolutional: return "convolutional";
    case Strategy::kPlain: return "plain";
    case Strategy::kRaw: return "raw";
  }
  return "unknown";
}

Strategy ParseStrategy(std::string_view name) {
  if (name == "convolutional") return Strategy::kConvolutional;
  if (name == "plain") return Strategy::kPlain;
  if (name == "raw") return Strategy::kRaw;
  throw ValidationError("unknown strategy: " + std::string(name));
}

void PropagationConfig::Validate() const {
  if (num_layers < 1) throw ValidationError("num_layers must be >= 1");
  if (neighbor_cap < 1 || per_neighbor_char_cap < 1 || prompt_budget < 1) {
    throw ValidationError("propagation caps must be positive");
  }
  if (max_output_tokens < 1) throw ValidationError("max_output_tokens must be positive");
  if (workers < 1) throw ValidationError("workers must be >= 1");
  (void)ScenarioTemplates(scenario, templates);
}

std::int64_t TokenCostReport::total_node_visits() const {
  std::int64_t t = 0;
  for (const auto& l : per_layer) t += l.node_visits;
  return t;
}
std::int64_t TokenCostReport::total_prompts() const {
  std::int64_t t = 0;
  for (const auto& l : per_layer) t += l.prompts;
  return t;
}
std::int64_t TokenCostReport::total_input_tokens() const {
  std::int64_t t = 0;
  for (const auto& l : per_layer) t += l.input_tokens;
  return t;
}
std::int64_t TokenCostReport::total_output_tokens() const {
  std::int64_t t = 0;
  for (const auto& l : per_layer) t += l.output_tokens;
  return t;
}
std::int64_t TokenCostReport::total_truncated_prompts() const {
  std::int64_t t = 0;
  for (const auto& l : per_layer) t += l.truncated_prompts;
  return t;
}

std::string TokenCostReport::ToJson() const {
  json layers = json::array();
  for (const auto& l : per_layer) {
    layers.push_back({{"layer", l.layer},
                      {"prompts", l.prompts},
                      {"node_visits", l.node_visits},
                      {"input_tokens", l.input_tokens},
                      {"output_tokens", l.output_tokens},
                      {"truncated_prompts", l.truncated_prompts}});
  }
  json j = {{"strategy", StrategyName(strategy)},
            {"num_layers", num_layers},
            {"graph_nodes", graph_nodes},
            {"avg_degree", avg_degree},
            {"formula_node_visits", formula_node_visits},
            {"per_layer", layers},
            {"total_node_visits", total_node_visits()},
            {"total_prompts", total_prompts()},
            {"total_input_tokens", total_input_tokens()},
            {"total_output_tokens", total_output_tokens()},
            {"total_truncated_prompts", total_truncated_prompts()}};
  return j.dump(2) + "\n";
}

DescriptionLayers InitLayers(const Dataset& dataset) {
  DescriptionLayers layers;
  layers.num_users = dataset.num_users();
  layers.num_items = dataset.num_items();
  std::vector<std::string> raw;
  raw.reserve(static_cast<std::size_t>(dataset.num_nodes()));
  for (Index v = 0; v < dataset.num_nodes(); ++v) raw.push_back(dataset.node(v).description);
  layers.layers.push_back(std::move(raw));
  return layers;
}

std::vector<Index> SelectNeighbors(const GraphTopology& graph, Index v,
                                   std::size_t cap) {
  std::vector<Index> nbrs = graph.neighbors(v);
  std::stable_sort(nbrs.begin(), nbrs.end(), [&](Index a, Index b) {
    const Index da = graph.degree(a), db = graph.degree(b);
    if (da != db) return da > db;
    return a < b;
  });
  if (nbrs.size() > cap) nbrs.resize(cap);
  return nbrs;
}

std::optional<RenderedPrompt> ConvolutionalPrompt(const DescriptionLayers& layers,
                                                  int layer,
                                                  const GraphTopology& graph,
                                                  const PropagationConfig& config,
                                                  Index v) {
  if (graph.degree(v) == 0) return std::nullopt;
  const auto& texts = layers.layers.at(static_cast<std::size_t>(layer - 1));
  std::vector<std::string> nbr_texts;
  // The full list goes to the renderer so cap-induced truncation is flagged.
  std::vector<Index> nbrs = SelectNeighbors(graph, v, graph.neighbors(v).size());
  nbr_texts.reserve(nbrs.size());
  for (Index w : nbrs) nbr_texts.push_back(texts[w]);
  TemplateSet storage;
  const auto& tmpl = TemplateFor(config, v < graph.num_users(), storage);
  return RenderPrompt(texts[v], nbr_texts, tmpl, config.budget());
}

namespace {

NeighborTree BuildTree(const GraphTopology& graph, const std::vector<std::string>& raw,
                       Index w, int depth, std::size_t cap) {
  NeighborTree t;
  t.text = raw[w];
  if (depth > 0) {
    for (Index x : SelectNeighbors(graph, w, cap)) {
      t.children.push_back(BuildTree(graph, raw, x, depth - 1, cap));
    }
  }
  return t;
}

}  // namespace

std::optional<RenderedPrompt> PlainPrompt(const DescriptionLayers& layers,
                                          const GraphTopology& graph,
                                          const PropagationConfig& config,
                                          Index v) {
  if (graph.degree(v) == 0 || config.num_layers < 2) return std::nullopt;
  const auto& raw = layers.layers.at(0);
  const int hops = config.num_layers - 1;
  std::vector<NeighborTree> groups;
  for (Index w : SelectNeighbors(graph, v, graph.neighbors(v).size())) {
    groups.push_back(BuildTree(graph, raw, w, hops - 1, config.neighbor_cap));
  }
  TemplateSet storage;
  const auto& tmpl = TemplateFor(config, v < graph.num_users(), storage);
  return RenderNestedPrompt(raw[v], groups, tmpl, config.budget());
}

std::filesystem::path LayerCheckpoint::LayerPath(int layer) const {
  return dir_ / (LayerName(layer) + ".jsonl");
}

std::filesystem::path LayerCheckpoint::PartialPath(int layer) const {
  return dir_ / (LayerName(layer) + ".partial.jsonl");
}

bool LayerCheckpoint::HasLayer(int layer) const {
  return std::filesystem::exists(LayerPath(layer));
}

void LayerCheckpoint::SaveLayer(const DescriptionLayers& layers, int layer) const {
  const auto& texts = layers.layers.at(static_cast<std::size_t>(layer - 1));
  std::string out;
  for (Index v = 0; v < static_cast<Index>(texts.size()); ++v) {
    out += LayerRecord(*dataset_, v, texts[v]);
  }
  WriteFileAtomic(LayerPath(layer), out);
}

std::vector<std::string> LayerCheckpoint::LoadLayer(int layer) const {
  const auto path = LayerPath(layer);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing checkpoint " + path.string());
  const Index n = dataset_->num_nodes();
  std::vector<std::string> texts(static_cast<std::size_t>(n));
  std::string line;
  Index expected = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where =
        LayerName(layer) + " (" + path.string() + ":" + std::to_string(line_no) + ")";
    auto rec = ParseLayerRecord(*dataset_, line, where);
    if (rec.node != expected) {
      throw ValidationError(where + ": records out of node order");
    }
    texts[static_cast<std::size_t>(rec.node)] = std::move(rec.text);
    ++expected;
  }
  if (expected != n) {
    throw ValidationError(LayerName(layer) + ": expected " + std::to_string(n) +
                          " records, found " + std::to_string(expected));
  }
  return texts;
}

std::vector<std::pair<Index, std::string>> LayerCheckpoint::LoadPartial(int layer) const {
  std::vector<std::pair<Index, std::string>> out;
  const auto path = PartialPath(layer);
  if (!std::filesystem::exists(path)) return out;
  const std::string content = ReadFile(path);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) break;  // torn final write
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    const std::string where = LayerName(layer) + " partial (" + path.string() +
                              ":" + std::to_string(line_no) + ")";
    auto rec = ParseLayerRecord(*dataset_, line, where);
    out.emplace_back(rec.node, std::move(rec.text));
  }
  return out;
}

void SaveLayers(const DescriptionLayers& layers, const Dataset& dataset,
                const std::filesystem::path& dir) {
  LayerCheckpoint cp(dir, dataset);
  for (int l = 1; l <= layers.num_layers(); ++l) cp.SaveLayer(layers, l);
}

DescriptionLayers LoadLayers(const Dataset& dataset, const std::filesystem::path& dir) {
  LayerCheckpoint cp(dir, dataset);
  DescriptionLayers layers;
  layers.num_users = dataset.num_users();
  layers.num_items = dataset.num_items();
  for (int l = 1; cp.HasLayer(l); ++l) layers.layers.push_back(cp.LoadLayer(l));
  if (layers.layers.empty()) {
    throw ValidationError("no layer checkpoints in " + dir.string());
  }
  return layers;
}

LayerCost PropagateLayer(DescriptionLayers& layers, const GraphTopology& graph,
                         const PropagationConfig& config, LlmGateway& gateway,
                         const LayerCheckpoint* checkpoint) {
  if (layers.num_layers() < 1) throw ValidationError("layers must hold the raw layer");
  if (graph.num_users() != layers.num_users || graph.num_items() != layers.num_items) {
    throw ValidationError("graph and description layers disagree on node counts");
  }
  const int from = layers.num_layers();
  const int to = from + 1;
  LayerCost cost;
  cost.layer = to;
  const DescriptionLayers& frozen = layers;
  auto next = ComputeLayer(
      to, frozen.layers.back(),
      [&](Index v) { return ConvolutionalPrompt(frozen, from, graph, config, v); },
      /*count_target_visit=*/false, config, gateway, checkpoint, cost);
  layers.layers.push_back(std::move(next));
  FinishLayer(checkpoint, layers, to);
  return cost;
}

InferenceResult RunInference(const Dataset& dataset, const GraphTopology& graph,
                             const PropagationConfig& config, LlmGateway& gateway,
                             const LayerCheckpoint* checkpoint) {
  config.Validate();
  if (config.strategy == Strategy::kPlain) {
    return RunPlainInference(dataset, graph, config, gateway, checkpoint);
  }
  InferenceResult result;
  result.layers = InitLayers(dataset);
  result.report = BaseReport(graph, config);
  if (checkpoint && !checkpoint->HasLayer(1)) checkpoint->SaveLayer(result.layers, 1);

  if (config.strategy == Strategy::kRaw) {
    while (result.layers.num_layers() < config.num_layers) {
      result.layers.layers.push_back(result.layers.layers.front());
      FinishLayer(checkpoint, result.layers, result.layers.num_layers());
      result.report.per_layer.push_back({.layer = result.layers.num_layers()});
    }
    return result;
  }

  ResumeLayers(result.layers, checkpoint, config.num_layers);
  // Restored layers still contribute their deterministic cost.
  for (int l = 2; l <= result.layers.num_layers(); ++l) {
    LayerCost cost;
    cost.layer = l;
    for (Index v = 0; v < dataset.num_nodes(); ++v) {
      auto p = ConvolutionalPrompt(result.layers, l - 1, graph, config, v);
      if (!p) continue;
      ++cost.prompts;
      cost.node_visits += static_cast<std::int64_t>(p->descriptions);
      cost.input_tokens += static_cast<std::int64_t>(CountTokens(p->text));
      cost.output_tokens += static_cast<std::int64_t>(CountTokens(result.layers.text(l, v)));
      if (p->truncated) ++cost.truncated_prompts;
    }
    result.report.per_layer.push_back(cost);
  }
  while (result.layers.num_layers() < config.num_layers) {
    result.report.per_layer.push_back(
        PropagateLayer(result.layers, graph, config, gateway, checkpoint));
  }
  return result;
}

InferenceResult RunPlainInference(const Dataset& dataset, const GraphTopology& graph,
                                  const PropagationConfig& config, LlmGateway& gateway,
                                  const LayerCheckpoint* checkpoint) {
  config.Validate();
  if (config.strategy != Strategy::kPlain) {
    throw ValidationError("RunPlainInference requires the plain strategy");
  }
  InferenceResult result;
  result.layers = InitLayers(dataset);
  result.report = BaseReport(graph, config);
  const int L = config.num_layers;
  if (checkpoint && !checkpoint->HasLayer(1)) checkpoint->SaveLayer(result.layers, 1);
  if (checkpoint) ResumeLayers(result.layers, checkpoint, L);
  // Lower layers are raw copies; drop a restored top layer only if incomplete.
  const bool have_top = result.layers.num_layers() == L && L > 1;
  result.layers.layers.resize(1);
  while (result.layers.num_layers() < L - 1) {
    result.layers.layers.push_back(result.layers.layers.front());
    FinishLayer(checkpoint, result.layers, result.layers.num_layers());
  }
  if (L == 1) return result;

  const DescriptionLayers frozen = result.layers;
  auto prompt_for = [&](Index v) { return PlainPrompt(frozen, graph, config, v); };
  LayerCost cost;
  cost.layer = L;
  std::vector<std::string> top;
  if (have_top) {
    top = checkpoint->LoadLayer(L);
    for (Index v = 0; v < dataset.num_nodes(); ++v) {
      auto p = prompt_for(v);
      if (!p) continue;
      ++cost.prompts;
      cost.node_visits += static_cast<std::int64_t>(p->descriptions) + 1;
      cost.input_tokens += static_cast<std::int64_t>(CountTokens(p->text));
      cost.output_tokens += static_cast<std::int64_t>(CountTokens(top[v]));
      if (p->truncated) ++cost.truncated_prompts;
    }
  } else {
    top = ComputeLayer(L, frozen.layers.front(), prompt_for,
                       /*count_target_visit=*/true, config, gateway, checkpoint, cost);
  }
  result.layers.layers.push_back(std::move(top));
  if (!have_top) FinishLayer(checkpoint, result.layers, L);
  result.report.per_layer.push_back(cost);
  return result;
}

TokenCostReport EstimateTokenCost(const GraphTopology& graph, int num_layers,
                                  Strategy strategy) {
  if (num_layers < 1) throw ValidationError("num_layers must be >= 1");
  TokenCostReport r;
  r.strategy = strategy;
  r.num_layers = num_layers;
  r.graph_nodes = graph.num_nodes();
  r.avg_degree = graph.num_nodes() > 0
                     ? 2.0 * static_cast<double>(graph.num_edges) / graph.num_nodes()
                     : 0.0;
  const double g = static_cast<double>(r.graph_nodes);
  if (num_layers == 1 || strategy == Strategy::kRaw) {
    r.formula_node_visits = 0.0;
    return r;
  }
  if (strategy == Strategy::kConvolutional) {
    r.formula_node_visits = g * r.avg_degree * (num_layers - 1);
    for (int l = 2; l <= num_layers; ++l) {
      LayerCost c;
      c.layer = l;
      for (Index v = 0; v < graph.num_nodes(); ++v) {
        if (graph.degree(v) == 0) continue;
        ++c.prompts;
        c.node_visits += graph.degree(v);
      }
      r.per_layer.push_back(c);
    }
    return r;
  }
  // Plain: walks of length k from every node, k = 0 .. L-1.
  double geometric = 0.0;
  for (int k = 0; k < num_layers; ++k) geometric += std::pow(r.avg_degree, k);
  r.formula_node_visits = g * geometric;
  const Index n = graph.num_nodes();
  std::vector<std::int64_t> walks(static_cast<std::size_t>(n), 1);
  for (int k = 0; k < num_layers; ++k) {
    LayerCost c;
    c.layer = k;  // hop index for the plain strategy
    for (Index v = 0; v < n; ++v) c.node_visits += walks[v];
    if (k == 0) c.prompts = n;
    r.per_layer.push_back(c);
    std::vector<std::int64_t> next(static_cast<std::size_t>(n), 0);
    for (Index v = 0; v < n; ++v) {
      for (Index w : graph.neighbors(v)) next[v] += walks[w];
    }
    walks = std::move(next);
  }
  return r;
}

}  // namespace gcrec
