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

#include "gcrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gcrec/common.hpp"

namespace gcrec {
namespace {

using nlohmann::json;

bool Contains(std::span<const Index> sorted, Index x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

void CheckRanking(std::span<const Index> relevant, int n) {
  if (n < 1) throw ValidationError("cutoff n must be at least 1");
  if (relevant.empty()) throw ValidationError("relevant set is empty");
}

json UserMetricsJson(std::span<const UserMetrics> rows) {
  json out = json::array();
  for (const auto& m : rows) out.push_back({{"user", m.user}, {"ap", m.ap}, {"ndcg", m.ndcg}});
  return out;
}

}  // namespace

void EvalProtocol::Validate() const {
  if (n < 1) throw ValidationError("evaluation n must be at least 1");
  if (negatives_per_positive < 1) {
    throw ValidationError("negatives per positive must be at least 1");
  }
  if (num_runs < 1) throw ValidationError("evaluation needs at least one run");
}

std::vector<double> EmbeddingScorer::ScoreCandidates(Index user,
                                                     std::span<const Index> items) const {
  std::vector<double> out;
  out.reserve(items.size());
  for (Index i : items) out.push_back(Score(finals_, user, i));
  return out;
}

std::vector<double> TableScorer::ScoreCandidates(Index user,
                                                 std::span<const Index> items) const {
  std::vector<double> out;
  out.reserve(items.size());
  for (Index i : items) {
    auto it = scores_.find({user, i});
    if (it == scores_.end()) {
      ++missing_;
      out.push_back(-std::numeric_limits<double>::infinity());
    } else {
      out.push_back(it->second);
    }
  }
  return out;
}

TableScorer LoadScoreTable(const std::filesystem::path& path, const Dataset& dataset) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open score file " + path.string());
  std::map<std::pair<Index, Index>, double> scores;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::istringstream fields(line);
    std::string user, item, value;
    if (!std::getline(fields, user, '\t') || !std::getline(fields, item, '\t') ||
        !std::getline(fields, value, '\t')) {
      throw ValidationError(where + ": expected user_id<TAB>item_id<TAB>score");
    }
    if (!dataset.has_user(user)) throw ValidationError(where + ": unknown user id '" + user + "'");
    if (!dataset.has_item(item)) throw ValidationError(where + ": unknown item id '" + item + "'");
    double score;
    try {
      std::size_t used = 0;
      score = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ValidationError(where + ": malformed score '" + value + "'");
    }
    scores[{dataset.user_index(user), dataset.item_index(item)}] = score;
  }
  return TableScorer(std::move(scores));
}

std::vector<std::vector<Index>> InteractedItems(const Dataset& dataset) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(dataset.num_users()));
  // Interactions are sorted by (user, item), so each list comes out sorted.
  for (const auto& e : dataset.interactions()) out[e.user].push_back(e.item);
  return out;
}

std::vector<Index> SampleEvalNegatives(std::span<const Index> positives,
                                       std::span<const Index> interacted,
                                       Index num_items, int k, std::mt19937_64& rng) {
  std::vector<Index> pool;
  for (Index i = 0; i < num_items; ++i) {
    if (!Contains(interacted, i) && !Contains(positives, i)) pool.push_back(i);
  }
  if (static_cast<std::size_t>(k) > pool.size()) {
    LogWarning("negative pool of " + std::to_string(pool.size()) +
               " items is smaller than " + std::to_string(k) + "; using the whole pool");
  }
  std::vector<Index> out;
  for (std::size_t p = 0; p < positives.size(); ++p) {
    std::sample(pool.begin(), pool.end(), std::back_inserter(out), k, rng);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Index> RankByScores(std::span<const Index> items, std::span<const double> scores) {
  if (items.size() != scores.size()) throw ValidationError("one score per candidate required");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  std::vector<Index> ranked;
  ranked.reserve(items.size());
  for (std::size_t k : order) ranked.push_back(items[k]);
  return ranked;
}

std::vector<Index> RankCandidates(const NodeEmbeddings<double>& finals, Index user,
                                  std::span<const Index> candidates) {
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (Index i : candidates) scores.push_back(Score(finals, user, i));
  return RankByScores(candidates, scores);
}

double ApAtN(std::span<const Index> ranked, std::span<const Index> relevant, int n) {
  CheckRanking(relevant, n);
  double sum = 0.0;
  int hits = 0;
  const std::size_t depth = std::min(ranked.size(), static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < depth; ++k) {
    if (Contains(relevant, ranked[k])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(std::min<std::size_t>(relevant.size(), n));
}

double NdcgAtN(std::span<const Index> ranked, std::span<const Index> relevant, int n) {
  CheckRanking(relevant, n);
  double dcg = 0.0;
  const std::size_t depth = std::min(ranked.size(), static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < depth; ++k) {
    if (Contains(relevant, ranked[k])) dcg += 1.0 / std::log2(static_cast<double>(k + 2));
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min<std::size_t>(relevant.size(), n);
  for (std::size_t k = 0; k < ideal; ++k) idcg += 1.0 / std::log2(static_cast<double>(k + 2));
  return dcg / idcg;
}

std::vector<UserCandidates> BuildCandidates(const Dataset& dataset,
                                            std::span<const Interaction> positives,
                                            int negatives_per_positive, std::uint64_t seed) {
  std::vector<std::vector<Index>> pos(static_cast<std::size_t>(dataset.num_users()));
  for (const auto& e : positives) pos[e.user].push_back(e.item);
  const auto interacted = InteractedItems(dataset);
  std::mt19937_64 rng(seed);
  std::vector<UserCandidates> out;
  for (Index u = 0; u < dataset.num_users(); ++u) {
    auto& p = pos[u];
    if (p.empty()) continue;
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    UserCandidates c;
    c.user = u;
    c.positives = p;
    c.items = SampleEvalNegatives(p, interacted[u], dataset.num_items(),
                                  negatives_per_positive, rng);
    c.items.insert(c.items.end(), p.begin(), p.end());
    std::sort(c.items.begin(), c.items.end());
    out.push_back(std::move(c));
  }
  return out;
}

RunMetrics EvaluateCandidates(const Scorer& scorer, std::span<const UserCandidates> lists,
                              int n) {
  if (lists.empty()) throw ValidationError("no users with positives to evaluate");
  RunMetrics run;
  for (const auto& c : lists) {
    const auto scores = scorer.ScoreCandidates(c.user, c.items);
    const auto ranked = RankByScores(c.items, scores);
    run.per_user.push_back({c.user, ApAtN(ranked, c.positives, n),
                            NdcgAtN(ranked, c.positives, n)});
  }
  for (const auto& m : run.per_user) {
    run.map += m.ap;
    run.ndcg += m.ndcg;
  }
  run.map /= static_cast<double>(run.per_user.size());
  run.ndcg /= static_cast<double>(run.per_user.size());
  return run;
}

MetricsReport Evaluate(const ScorerForRun& scorer_for_run, const Dataset& dataset,
                       std::span<const Interaction> test, const EvalProtocol& protocol) {
  protocol.Validate();
  MetricsReport report;
  report.n = protocol.n;
  for (int r = 0; r < protocol.num_runs; ++r) {
    const std::uint64_t seed = protocol.seed + static_cast<std::uint64_t>(r);
    const auto lists = BuildCandidates(dataset, test, protocol.negatives_per_positive, seed);
    const auto scorer = scorer_for_run(r, seed);
    RunMetrics run = EvaluateCandidates(*scorer, lists, protocol.n);
    run.seed = seed;
    if (const auto* table = dynamic_cast<const TableScorer*>(scorer.get())) {
      report.missing_scores = table->missing();
    }
    report.evaluated_users = static_cast<std::int64_t>(run.per_user.size());
    report.runs.push_back(std::move(run));
  }
  report.excluded_users = dataset.num_users() - report.evaluated_users;

  const double runs = static_cast<double>(report.runs.size());
  report.per_user_mean = report.runs.front().per_user;
  for (auto& m : report.per_user_mean) m.ap = m.ndcg = 0.0;
  for (const auto& run : report.runs) {
    report.map_mean += run.map;
    report.ndcg_mean += run.ndcg;
    for (std::size_t k = 0; k < run.per_user.size(); ++k) {
      report.per_user_mean[k].ap += run.per_user[k].ap;
      report.per_user_mean[k].ndcg += run.per_user[k].ndcg;
    }
  }
  report.map_mean /= runs;
  report.ndcg_mean /= runs;
  for (auto& m : report.per_user_mean) {
    m.ap /= runs;
    m.ndcg /= runs;
  }
  return report;
}

MetricsReport Evaluate(const Scorer& scorer, const Dataset& dataset,
                       std::span<const Interaction> test, const EvalProtocol& protocol) {
  std::shared_ptr<const Scorer> shared(&scorer, [](const Scorer*) {});
  return Evaluate([&](int, std::uint64_t) { return shared; }, dataset, test, protocol);
}

std::string MetricsReport::ToJson() const {
  json runs_json = json::array();
  for (const auto& r : runs) {
    runs_json.push_back({{"seed", r.seed}, {"map", r.map}, {"ndcg", r.ndcg}});
  }
  json j = {{"n", n},
            {"map_mean", map_mean},
            {"ndcg_mean", ndcg_mean},
            {"runs", runs_json},
            {"evaluated_users", evaluated_users},
            {"excluded_users", excluded_users},
            {"missing_scores", missing_scores},
            {"per_user", UserMetricsJson(per_user_mean)}};
  return j.dump(2) + "\n";
}

std::vector<std::vector<std::size_t>> QuintileGroups(std::span<const std::size_t> lengths) {
  constexpr std::size_t kGroups = 5;
  if (lengths.size() < kGroups) {
    throw ValidationError("subgroup analysis needs at least 5 users, got " +
                          std::to_string(lengths.size()));
  }
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  const std::size_t base = lengths.size() / kGroups;
  const std::size_t rem = lengths.size() % kGroups;
  std::vector<std::vector<std::size_t>> groups(kGroups);
  std::size_t pos = 0;
  for (std::size_t g = 0; g < kGroups; ++g) {
    const std::size_t size = base + (g < rem ? 1 : 0);
    groups[g].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return groups;
}

SubgroupReport SubgroupAnalysis(std::span<const UserMetrics> per_user, const Dataset& dataset) {
  std::vector<std::size_t> lengths;
  lengths.reserve(per_user.size());
  for (const auto& m : per_user) {
    lengths.push_back(Utf8Length(dataset.users().at(static_cast<std::size_t>(m.user)).description));
  }
  SubgroupReport report;
  for (const auto& group : QuintileGroups(lengths)) {
    SubgroupStats s;
    for (std::size_t k : group) {
      s.users.push_back(per_user[k].user);
      s.mean_length += static_cast<double>(lengths[k]);
      s.map += per_user[k].ap;
      s.ndcg += per_user[k].ndcg;
    }
    const double size = static_cast<double>(group.size());
    s.mean_length /= size;
    s.map /= size;
    s.ndcg /= size;
    report.groups.push_back(std::move(s));
  }
  return report;
}

std::string SubgroupReport::ToJson() const {
  json out = json::array();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.push_back({{"group", "G" + std::to_string(g + 1)},
                   {"size", groups[g].users.size()},
                   {"users", groups[g].users},
                   {"mean_length", groups[g].mean_length},
                   {"map", groups[g].map},
                   {"ndcg", groups[g].ndcg}});
  }
  return json{{"groups", out}}.dump(2) + "\n";
}

}  // namespace gcrec
