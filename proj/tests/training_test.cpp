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

#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "gcrec/text_encoder.hpp"
#include "gcrec/training.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace gcrec {
namespace {

using testing::MakeDataset;
using testing::NoiseText;
using Mat = Eigen::MatrixXd;

std::string Checksum(const ModelParams<double>& p) { return Sha256Hex(SerializeParams(p)); }

bool BitEqual(const ModelParams<double>& a, const ModelParams<double>& b) {
  auto ta = Tensors(a), tb = Tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (ta[k]->size() != tb[k]->size()) return false;
    if (std::memcmp(ta[k]->data(), tb[k]->data(), sizeof(double) * ta[k]->size()) != 0) {
      return false;
    }
  }
  return true;
}

TEST(SamplerTest, ForcedNegative) {
  const std::vector<Interaction> train = {{0, 0}};
  TripletSampler s(2, train);
  std::mt19937_64 rng(1);
  for (const auto& t : s.Sample(50, rng)) {
    EXPECT_EQ(t.u, 0);
    EXPECT_EQ(t.i, 0);
    EXPECT_EQ(t.j, 1);
  }
}

TEST(SamplerTest, SeedDeterminismAndValidity) {
  std::mt19937_64 gen(2);
  const auto train = testing::RandomEdges(8, 9, 0.3, gen);
  TripletSampler s(9, train);
  std::mt19937_64 a(5), b(5);
  const std::set<Interaction> edges(train.begin(), train.end());
  for (int round = 0; round < 5; ++round) {
    const auto x = s.Sample(64, a), y = s.Sample(64, b);
    for (std::size_t k = 0; k < x.size(); ++k) {
      EXPECT_EQ(x[k].u, y[k].u);
      EXPECT_EQ(x[k].i, y[k].i);
      EXPECT_EQ(x[k].j, y[k].j);
      EXPECT_TRUE(edges.contains({x[k].u, x[k].i}));
      EXPECT_FALSE(edges.contains({x[k].u, x[k].j}));
    }
  }
}

TEST(SamplerTest, SaturatedUsersSkipped) {
  const std::vector<Interaction> train = {{0, 0}, {0, 1}, {1, 0}};
  TripletSampler s(2, train);
  std::mt19937_64 rng(3);
  for (const auto& t : s.Sample(30, rng)) EXPECT_EQ(t.u, 1);
  const std::vector<Interaction> full = {{0, 0}, {0, 1}};
  EXPECT_THROW(TripletSampler(2, full), ValidationError);
}

// Negatives for one user with one train item over 11 items: uniform over the
// other 10, checked per bucket within 3 sigma and by chi-square.
TEST(SamplerTest, NegativesAreUniform) {
  const std::vector<Interaction> train = {{0, 4}};
  TripletSampler s(11, train);
  std::mt19937_64 rng(17);
  const int draws = 10000;
  std::map<Index, int> counts;
  for (const auto& t : s.Sample(draws, rng)) ++counts[t.j];
  EXPECT_FALSE(counts.contains(4));
  ASSERT_EQ(counts.size(), 10u);
  const double p = 0.1, expect = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  double chi2 = 0.0;
  for (const auto& [item, c] : counts) {
    EXPECT_LE(std::abs(c - expect), 3 * sigma) << "item " << item;
    chi2 += (c - expect) * (c - expect) / expect;
  }
  EXPECT_LT(chi2, 27.877);  // chi-square 9 dof, p = 0.001
}

TEST(LossTest, EqualScoresGiveLogHalf) {
  const std::vector<double> pos = {0.7}, neg = {0.7};
  EXPECT_NEAR(BprLossFromScores(pos, neg, 0.0, 0.0), 0.693147, 1e-6);
}

TEST(LossTest, SaturatedMarginIsZero) {
  const std::vector<double> pos = {20.0}, neg = {0.0};
  EXPECT_NEAR(BprLossFromScores(pos, neg, 0.0, 0.0), 0.0, 1e-8);
  EXPECT_GT(NegLogSigmoid(-800.0), 799.0);
  EXPECT_TRUE(std::isfinite(NegLogSigmoid(-800.0)));
}

TEST(LossTest, ThreeTripletScalarOracle) {
  const std::vector<double> pos = {1.0, 0.2, 0.0}, neg = {0.5, 0.2, 1.0};
  const double script = -(std::log(1.0 / (1.0 + std::exp(-0.5))) + std::log(0.5) +
                          std::log(1.0 / (1.0 + std::exp(1.0)))) +
                        0.01 * 4.0;
  EXPECT_NEAR(BprLossFromScores(pos, neg, 4.0, 0.01), script, 1e-10);
  EXPECT_NEAR(BprLossFromScores(pos, neg, 4.0, 0.01), 2.5204858522582745, 1e-10);
}

TEST(LossTest, ModelLossMatchesScoreLoss) {
  std::mt19937_64 rng(4);
  const auto inst = testing::RandomGradInstance(Variant::kFull, rng);
  const auto f = Forward(inst.params, inst.graph, inst.text).finals;
  std::vector<double> pos, neg;
  for (const auto& t : inst.batch) {
    pos.push_back(f.users.row(t.u).dot(f.items.row(t.i)));
    neg.push_back(f.users.row(t.u).dot(f.items.row(t.j)));
  }
  EXPECT_NEAR(BprLoss<double>(inst.batch, f, inst.params, 0.3),
              BprLossFromScores(pos, neg, inst.params.SquaredNorm(), 0.3), 1e-12);
}

TEST(BackwardTest, SaturatedBatchHasZeroGradient) {
  // One user, two items; the positive dominates by a wide margin.
  ModelParams<double> p;
  p.variant = Variant::kMf;
  p.num_layers = 1;
  p.users = (Mat(1, 2) << 100.0, 0.0).finished();
  p.items = (Mat(2, 2) << 100.0, 0.0, -100.0, 0.0).finished();
  const auto g = Normalize<double>(BuildGraph(1, 2, std::vector<Interaction>{{0, 0}}));
  const std::vector<Triplet> batch = {{0, 0, 1}};
  const auto lg = Backward<double>(batch, p, g, TextTable<double>{}, 0.0);
  for (const auto* t : Tensors(lg.grads)) EXPECT_LE(t->cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BackwardTest, EmptyBatchIsExactlyTwoLambdaTheta) {
  std::mt19937_64 rng(5);
  for (Variant v : {Variant::kFull, Variant::kNoAlign, Variant::kMf}) {
    const auto inst = testing::RandomGradInstance(v, rng);
    const double lambda = 0.37;
    const auto lg = Backward<double>({}, inst.params, inst.graph, inst.text, lambda);
    auto g = Tensors(lg.grads);
    auto p = Tensors(inst.params);
    for (std::size_t k = 0; k < g.size(); ++k) {
      EXPECT_EQ(*g[k], (2.0 * lambda * *p[k]).eval());
    }
  }
}

TEST(BackwardTest, FiniteDifferencesAllVariants) {
  std::mt19937_64 rng(6);
  for (Variant v :
       {Variant::kFull, Variant::kRaw, Variant::kPlain, Variant::kNoAlign, Variant::kMf}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto inst = testing::RandomGradInstance(v, rng);
      const auto r = testing::CheckGradients(inst, 0.01);
      EXPECT_LT(r.max_rel_error, 1e-5) << VariantName(v) << " trial " << trial;
      EXPECT_GT(r.entries, 0u);
    }
  }
}

TEST(BackwardTest, FixedSmallInstance) {
  // N = 4, M = 4, d = 3, L = 2.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<Interaction> edges = {{0, 0}, {0, 1}, {1, 1}, {2, 2}, {3, 2}, {3, 3}};
  testing::GradInstance inst;
  inst.params = InitParams<double>(4, 4, 3, 2, 2, Variant::kFull, 1);
  for (auto* t : Tensors(inst.params)) {
    for (Eigen::Index k = 0; k < t->size(); ++k) t->data()[k] = normal(rng);
  }
  inst.graph = Normalize<double>(BuildGraph(4, 4, edges));
  inst.text = NoiseText(4, 4, 2, 2, 3);
  inst.batch = {{0, 0, 2}, {1, 1, 3}, {2, 2, 0}, {3, 3, 1}};
  EXPECT_LT(testing::CheckGradients(inst, 1e-4).max_rel_error, 1e-5);
}

TrainConfig ScalarConfig(double lr, double wd) {
  TrainConfig c;
  c.learning_rate = lr;
  c.weight_decay = wd;
  return c;
}

ModelParams<double> Scalar(double x) {
  ModelParams<double> p;
  p.variant = Variant::kMf;
  p.users = Mat::Constant(1, 1, x);
  p.items = Mat::Zero(0, 1);
  return p;
}

TEST(AdamWTest, ZeroGradientLeavesParams) {
  auto p = InitParams<double>(3, 3, 2, 1, 2, Variant::kFull, 1);
  const auto before = p;
  auto g = p;
  for (auto* t : Tensors(g)) t->setZero();
  AdamState<double> s(p);
  for (int k = 0; k < 3; ++k) AdamWStep(p, g, s, ScalarConfig(0.1, 0.0));
  EXPECT_TRUE(BitEqual(p, before));
}

TEST(AdamWTest, FirstStepMovesByLearningRate) {
  auto p = Scalar(0.5);
  auto g = Scalar(1.0);
  AdamState<double> s(p);
  AdamWStep(p, g, s, ScalarConfig(1e-3, 0.0));
  EXPECT_NEAR(0.5 - p.users(0, 0), 1e-3, 1e-9);
}

TEST(AdamWTest, FiveStepQuadraticTrace) {
  const double lr = 0.1, wd = 0.01;
  const auto reference = testing::ScalarAdamWTrace(1.0, 5, lr, wd);
  const std::vector<double> pinned = {1.0989999995, 1.1977365527636898, 1.296087947722773,
                                      1.393922887564485, 1.4911002098335817};
  auto p = Scalar(1.0);
  AdamState<double> s(p);
  for (int k = 0; k < 5; ++k) {
    auto g = Scalar(p.users(0, 0) - 3.0);
    AdamWStep(p, g, s, ScalarConfig(lr, wd));
    EXPECT_NEAR(p.users(0, 0), reference[k], 1e-10);
    EXPECT_NEAR(p.users(0, 0), pinned[k], 1e-10);
  }
}

TEST(AdamWTest, MismatchedStateRejected) {
  auto p = InitParams<double>(2, 2, 2, 1, 2, Variant::kFull, 1);
  AdamState<double> s(Scalar(0.0));
  EXPECT_THROW(AdamWStep(p, p, s, ScalarConfig(0.1, 0.0)), ValidationError);
}

TEST(TrainingDynamicsTest, SingleTripletLossDecreasesMonotonically) {
  std::mt19937_64 rng(8);
  auto inst = testing::RandomGradInstance(Variant::kFull, rng);
  inst.batch.resize(1);
  AdamState<double> s(inst.params);
  TrainConfig c = ScalarConfig(1e-3, 0.0);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 10; ++step) {
    const auto lg = Backward<double>(inst.batch, inst.params, inst.graph, inst.text, 0.0);
    EXPECT_LT(lg.loss, prev) << "step " << step;
    prev = lg.loss;
    AdamWStep(inst.params, lg.grads, s, c);
  }
}

struct BlockFixture {
  Dataset dataset;
  Split split;
  TextTable<double> text;
};

BlockFixture TwoBlock(std::uint64_t seed, int layers = 2) {
  std::mt19937_64 rng(seed);
  const auto edges = testing::TwoBlockEdges(40, 40, 16, rng);
  BlockFixture f;
  f.dataset = MakeDataset(40, 40, edges);
  f.split = SplitDataset(f.dataset, seed);
  f.text = NoiseText(40, 40, layers, 8, seed + 1);
  return f;
}

TrainConfig BlockConfig(std::uint64_t seed, int epochs) {
  TrainConfig c;
  c.seed = seed;
  c.epochs = epochs;
  c.dim = 16;
  c.num_layers = 2;
  c.learning_rate = 0.01;
  c.batch_size = 128;
  c.lambda = 1e-4;
  return c;
}

TEST(TrainTest, ZeroEpochsReturnInitialParams) {
  const auto f = TwoBlock(1);
  const auto c = BlockConfig(3, 0);
  const auto r = Train(f.dataset, f.split, f.text, c, Variant::kFull);
  const auto init = InitParams<double>(40, 40, c.dim, 8, c.num_layers, Variant::kFull, c.seed);
  EXPECT_TRUE(BitEqual(r.params, init));
  EXPECT_TRUE(r.history.empty());
  const auto mf = TrainMfBaseline(f.dataset, f.split, c);
  EXPECT_TRUE(BitEqual(mf.params, InitParams<double>(40, 40, c.dim, 0, c.num_layers,
                                                     Variant::kMf, c.seed)));
}

TEST(TrainTest, SameSeedSameChecksum) {
  const auto f = TwoBlock(2);
  const auto c = BlockConfig(4, 3);
  EXPECT_EQ(Checksum(Train(f.dataset, f.split, f.text, c, Variant::kFull).params),
            Checksum(Train(f.dataset, f.split, f.text, c, Variant::kFull).params));
  EXPECT_EQ(Checksum(TrainMfBaseline(f.dataset, f.split, c).params),
            Checksum(TrainMfBaseline(f.dataset, f.split, c).params));
  auto other = c;
  other.seed = 5;
  EXPECT_NE(Checksum(Train(f.dataset, f.split, f.text, c, Variant::kFull).params),
            Checksum(Train(f.dataset, f.split, f.text, other, Variant::kFull).params));
}

TEST(TrainTest, TextTableIsNeverMutated) {
  const auto f = TwoBlock(3);
  const std::string before = SerializeTextTable(f.text);
  const auto r = Train(f.dataset, f.split, f.text, BlockConfig(1, 2), Variant::kFull);
  EXPECT_EQ(SerializeTextTable(f.text), before);
  // Text still feeds the forward pass.
  const GraphTopology g = BuildGraph(40, 40, f.split.train);
  auto shifted = f.text;
  shifted.users[1].array() += 1.0;
  EXPECT_NE(FinalEmbeddings(r.params, g, f.text).users,
            FinalEmbeddings(r.params, g, shifted).users);
}

TEST(TrainTest, TwoBlockLearningSignal) {
  const auto f = TwoBlock(11);
  const auto r = Train(f.dataset, f.split, f.text, BlockConfig(11, 50), Variant::kFull);
  EXPECT_FALSE(r.diverged);
  EXPECT_GE(r.best_val_ndcg - r.initial_val_ndcg, 0.3)
      << "initial " << r.initial_val_ndcg << " best " << r.best_val_ndcg;
  ASSERT_FALSE(r.history.empty());
  EXPECT_EQ(HistoryJsonl(r.history).find("\"val_ndcg5\"") != std::string::npos, true);
}

TEST(TrainTest, MfSeparatesBlocks) {
  const auto f = TwoBlock(12);
  const auto r = TrainMfBaseline(f.dataset, f.split, BlockConfig(12, 50));
  double in = 0.0, cross = 0.0;
  int n_in = 0, n_cross = 0;
  for (Index u = 0; u < 40; ++u) {
    for (Index i = 0; i < 40; ++i) {
      const double s = r.params.users.row(u).dot(r.params.items.row(i));
      if ((u < 20) == (i < 20)) {
        in += s;
        ++n_in;
      } else {
        cross += s;
        ++n_cross;
      }
    }
  }
  EXPECT_GT(in / n_in, cross / n_cross);
}

TEST(TrainTest, NonFiniteForwardReportsDivergence) {
  auto f = TwoBlock(13);
  f.split.valid.clear();
  f.text.users[0](0, 0) = std::numeric_limits<double>::infinity();
  const auto c = BlockConfig(1, 3);
  const auto r = Train(f.dataset, f.split, f.text, c, Variant::kFull);
  EXPECT_TRUE(r.diverged);
  EXPECT_NE(r.divergence.find("epoch 1"), std::string::npos);
  EXPECT_TRUE(BitEqual(r.params, InitParams<double>(40, 40, c.dim, 8, c.num_layers,
                                                    Variant::kFull, c.seed)));
}

TEST(TrainTest, InvalidConfigRejected) {
  const auto f = TwoBlock(14);
  auto c = BlockConfig(1, 1);
  c.learning_rate = 0.0;
  EXPECT_THROW(Train(f.dataset, f.split, f.text, c, Variant::kFull), ValidationError);
  c = BlockConfig(1, 1);
  c.num_layers = 3;  // text table has only two layers
  EXPECT_THROW(Train(f.dataset, f.split, f.text, c, Variant::kFull), ValidationError);
}

}  // namespace
}  // namespace gcrec
