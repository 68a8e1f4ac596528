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

#include "gcrec/training.hpp"

#include <algorithm>
#include <chrono>

#include <json.hpp>

#include "gcrec/common.hpp"

namespace gcrec {

TripletSampler::TripletSampler(Index num_items, std::span<const Interaction> train)
    : num_items_(num_items) {
  Index max_user = -1;
  for (const auto& e : train) max_user = std::max(max_user, e.user);
  user_items_.resize(static_cast<std::size_t>(max_user + 1));
  for (const auto& e : train) user_items_[e.user].push_back(e.item);
  for (auto& items : user_items_) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
  }
  for (Index u = 0; u <= max_user; ++u) {
    if (static_cast<Index>(user_items_[u].size()) >= num_items_ && !user_items_[u].empty()) {
      LogWarning("user " + std::to_string(u) +
                 " interacted with every item; skipped for triplet sampling");
    }
  }
  for (const auto& e : train) {
    if (static_cast<Index>(user_items_[e.user].size()) < num_items_) edges_.push_back(e);
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  if (edges_.empty()) throw ValidationError("no train edge admits a negative item");
}

std::vector<Triplet> TripletSampler::Sample(std::size_t batch_size, std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick_edge(0, edges_.size() - 1);
  std::uniform_int_distribution<Index> pick_item(0, num_items_ - 1);
  std::vector<Triplet> batch;
  batch.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const Interaction& e = edges_[pick_edge(rng)];
    const auto& owned = user_items_[e.user];
    Index j;
    do {
      j = pick_item(rng);
    } while (std::binary_search(owned.begin(), owned.end(), j));
    batch.push_back({e.user, e.item, j});
  }
  return batch;
}

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  if (lambda < 0.0) throw ValidationError("lambda must be non-negative");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (patience < 1) throw ValidationError("patience must be positive");
  if (dim < 1) throw ValidationError("embedding dim must be positive");
  if (num_layers < 1) throw ValidationError("model needs at least one layer");
  if (eval_n < 1 || eval_negatives < 1) throw ValidationError("bad validation protocol");
}

double BprLossFromScores(std::span<const double> positive, std::span<const double> negative,
                         double squared_norm, double lambda) {
  if (positive.size() != negative.size()) {
    throw ValidationError("positive and negative score counts differ");
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < positive.size(); ++k) {
    loss += NegLogSigmoid(positive[k] - negative[k]);
  }
  return loss + lambda * squared_norm;
}

NodeEmbeddings<double> FinalEmbeddings(const ModelParams<double>& params,
                                       const GraphTopology& graph,
                                       const TextTable<double>& text) {
  return Forward(params, Normalize<double>(graph), text).finals;
}

TrainResult Train(const Dataset& dataset, const Split& split, const TextTable<double>& text,
                  const TrainConfig& config, Variant variant, const GraphTopology* graph) {
  config.Validate();
  if (split.train.empty()) throw ValidationError("train split is empty");
  const NormalizedGraph<double> g = Normalize<double>(
      graph ? *graph : BuildGraph(dataset.num_users(), dataset.num_items(), split.train));
  const int text_dim = variant == Variant::kMf ? 0 : static_cast<int>(text.dim());

  TrainResult result;
  result.params = InitParams<double>(dataset.num_users(), dataset.num_items(), config.dim,
                                     text_dim, config.num_layers, variant, config.seed);
  ModelParams<double> params = result.params;
  CheckShapes(params, g, text);

  const auto val_lists =
      BuildCandidates(dataset, split.valid, config.eval_negatives, config.seed);
  auto validate = [&](const ModelParams<double>& p) -> std::pair<double, double> {
    if (val_lists.empty()) return {0.0, 0.0};
    const EmbeddingScorer scorer(Forward(p, g, text).finals);
    const RunMetrics m = EvaluateCandidates(scorer, val_lists, config.eval_n);
    return {m.ndcg, m.map};
  };
  result.initial_val_ndcg = validate(params).first;
  result.best_val_ndcg = result.initial_val_ndcg;
  if (config.epochs == 0) return result;

  const TripletSampler sampler(dataset.num_items(), split.train);
  std::mt19937_64 rng(config.seed);
  AdamState<double> state(params);
  const std::size_t batches =
      (split.train.size() + static_cast<std::size_t>(config.batch_size) - 1) /
      static_cast<std::size_t>(config.batch_size);
  int since_best = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double epoch_loss = 0.0;
    try {
      for (std::size_t b = 0; b < batches; ++b) {
        const auto batch = sampler.Sample(static_cast<std::size_t>(config.batch_size), rng);
        const auto lg = Backward<double>(batch, params, g, text, config.lambda);
        epoch_loss += lg.loss;
        AdamWStep(params, lg.grads, state, config);
        for (const auto* t : Tensors(params)) {
          if (!t->allFinite()) throw NumericalError("parameters became non-finite");
        }
      }
    } catch (const NumericalError& e) {
      result.diverged = true;
      result.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
      LogWarning("training diverged at " + result.divergence +
                 "; keeping the last good checkpoint");
      return result;
    }
    const auto [ndcg, map] = validate(params);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss / static_cast<double>(batches);
    rec.val_ndcg5 = ndcg;
    rec.val_map5 = map;
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.history.push_back(rec);

    // Ties move the checkpoint forward but do not reset patience.
    const bool improved = ndcg > result.best_val_ndcg;
    if (improved || ndcg == result.best_val_ndcg) {
      result.best_val_ndcg = ndcg;
      result.best_epoch = epoch;
      result.params = params;
    }
    since_best = improved ? 0 : since_best + 1;
    if (!val_lists.empty() && since_best >= config.patience) break;
  }
  return result;
}

TrainResult TrainMfBaseline(const Dataset& dataset, const Split& split,
                            const TrainConfig& config) {
  return Train(dataset, split, TextTable<double>{}, config, Variant::kMf);
}

std::string HistoryJsonl(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) {
    nlohmann::json j = {{"epoch", r.epoch},
                        {"loss", r.loss},
                        {"val_ndcg5", r.val_ndcg5},
                        {"val_map5", r.val_map5},
                        {"wall_ms", r.wall_ms}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace gcrec
