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

// Top-n evaluation against sampled negatives.

#ifndef GCREC_EVALUATION_HPP_
#define GCREC_EVALUATION_HPP_

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gcrec/dataset.hpp"
#include "gcrec/model.hpp"

namespace gcrec {

struct EvalProtocol {
  int n = 5;
  int negatives_per_positive = 20;
  int num_runs = 5;
  std::uint64_t seed = 0;
  // Run r uses seed + r for negatives and, when set, for reinitialization.
  bool retrain_per_run = false;

  void Validate() const;
};

// Scores are requested before relevance is known: a scorer only ever sees a
// user and a candidate list.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> ScoreCandidates(Index user,
                                              std::span<const Index> items) const = 0;
};

class EmbeddingScorer final : public Scorer {
 public:
  explicit EmbeddingScorer(NodeEmbeddings<double> finals) : finals_(std::move(finals)) {}
  std::vector<double> ScoreCandidates(Index user, std::span<const Index> items) const override;

 private:
  NodeEmbeddings<double> finals_;
};

// External scores keyed by dense (user, item). Pairs absent from the table
// score -inf and are counted.
class TableScorer final : public Scorer {
 public:
  explicit TableScorer(std::map<std::pair<Index, Index>, double> scores)
      : scores_(std::move(scores)) {}
  std::vector<double> ScoreCandidates(Index user, std::span<const Index> items) const override;
  std::int64_t missing() const { return missing_.load(); }

 private:
  std::map<std::pair<Index, Index>, double> scores_;
  mutable std::atomic<std::int64_t> missing_{0};
};

// TSV lines user_id<TAB>item_id<TAB>score; unknown ids are errors.
TableScorer LoadScoreTable(const std::filesystem::path& path, const Dataset& dataset);

// Per-user sets of items interacted with in any split.
std::vector<std::vector<Index>> InteractedItems(const Dataset& dataset);

// For each positive, k items drawn uniformly without replacement from the
// items the user never interacted with. Draws for different positives are
// merged without duplicates; the result is sorted ascending. A pool smaller
// than k is taken whole with a warning.
std::vector<Index> SampleEvalNegatives(std::span<const Index> positives,
                                       std::span<const Index> interacted,
                                       Index num_items, int k, std::mt19937_64& rng);

// Descending score, ties by ascending item index.
std::vector<Index> RankByScores(std::span<const Index> items, std::span<const double> scores);
std::vector<Index> RankCandidates(const NodeEmbeddings<double>& finals, Index user,
                                  std::span<const Index> candidates);

// Relevant items are given as a sorted list. Throws on an empty set.
double ApAtN(std::span<const Index> ranked, std::span<const Index> relevant, int n);
double NdcgAtN(std::span<const Index> ranked, std::span<const Index> relevant, int n);

struct UserCandidates {
  Index user = 0;
  std::vector<Index> positives;  // sorted
  std::vector<Index> items;      // positives and negatives, sorted
};

// Candidate lists for every user with at least one positive in `positives`.
std::vector<UserCandidates> BuildCandidates(const Dataset& dataset,
                                            std::span<const Interaction> positives,
                                            int negatives_per_positive, std::uint64_t seed);

struct UserMetrics {
  Index user = 0;
  double ap = 0.0;
  double ndcg = 0.0;
};

struct RunMetrics {
  std::uint64_t seed = 0;
  double map = 0.0;
  double ndcg = 0.0;
  std::vector<UserMetrics> per_user;  // ascending user index
};

RunMetrics EvaluateCandidates(const Scorer& scorer, std::span<const UserCandidates> lists,
                              int n);

struct MetricsReport {
  int n = 5;
  std::vector<RunMetrics> runs;
  double map_mean = 0.0;
  double ndcg_mean = 0.0;
  std::vector<UserMetrics> per_user_mean;  // per-user average over runs
  std::int64_t evaluated_users = 0;
  std::int64_t excluded_users = 0;  // users without test positives
  std::int64_t missing_scores = 0;

  std::string ToJson() const;
};

// Supplies the scorer for run r with seed protocol.seed + r.
using ScorerForRun = std::function<std::shared_ptr<const Scorer>(int run, std::uint64_t seed)>;

MetricsReport Evaluate(const ScorerForRun& scorer_for_run, const Dataset& dataset,
                       std::span<const Interaction> test, const EvalProtocol& protocol);
// Eval-only reseeding: one scorer, fresh negatives per run.
MetricsReport Evaluate(const Scorer& scorer, const Dataset& dataset,
                       std::span<const Interaction> test, const EvalProtocol& protocol);

// Indices of `lengths` split into five contiguous groups after sorting by
// (length, index); earlier groups take the remainder.
std::vector<std::vector<std::size_t>> QuintileGroups(std::span<const std::size_t> lengths);

struct SubgroupStats {
  std::vector<Index> users;
  double mean_length = 0.0;
  double map = 0.0;
  double ndcg = 0.0;
};

struct SubgroupReport {
  std::vector<SubgroupStats> groups;  // G1 (shortest) .. G5
  std::string ToJson() const;
};

// Groups users by code-point length of their raw description.
SubgroupReport SubgroupAnalysis(std::span<const UserMetrics> per_user, const Dataset& dataset);

}  // namespace gcrec

#endif  // GCREC_EVALUATION_HPP_
