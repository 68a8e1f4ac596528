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

// Pairwise ranking training with analytic gradients.
//
// The minimized objective over a batch B is
//
//   loss = sum_{(u,i,j) in B} -log sigmoid(x_ui - x_uj) + lambda ||Theta||^2
//
// with x the inner product of final embeddings and Theta every ID embedding
// and mapping matrix. Text embeddings are constants.

#ifndef GCREC_TRAINING_HPP_
#define GCREC_TRAINING_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gcrec/dataset.hpp"
#include "gcrec/evaluation.hpp"
#include "gcrec/model.hpp"
#include "gcrec/types.hpp"

namespace gcrec {

struct Triplet {
  Index u = 0;
  Index i = 0;  // positive, (u, i) in train
  Index j = 0;  // negative, (u, j) not in train
};

// Positives uniform over train edges; negatives uniform over the items outside
// the user's train set, by rejection. Edges of users who interacted with every
// item are never drawn.
class TripletSampler {
 public:
  TripletSampler(Index num_items, std::span<const Interaction> train);

  std::vector<Triplet> Sample(std::size_t batch_size, std::mt19937_64& rng) const;

 private:
  Index num_items_;
  std::vector<Interaction> edges_;            // eligible edges
  std::vector<std::vector<Index>> user_items_;  // sorted train items per user
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 1024;
  double lambda = 1e-4;
  int epochs = 100;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled decay stays 0: regularization lives in the loss.
  double weight_decay = 0.0;
  int patience = 10;
  int dim = 64;
  int num_layers = 3;
  // Validation protocol: NDCG@n over fixed sampled candidate lists.
  int eval_n = 5;
  int eval_negatives = 20;

  void Validate() const;
};

// -log sigmoid(x), stable for large |x|.
template <typename Scalar>
Scalar NegLogSigmoid(Scalar x) {
  using std::exp;
  using std::log1p;
  return x >= Scalar(0) ? log1p(exp(-x)) : -x + log1p(exp(x));
}

template <typename Scalar>
Scalar Sigmoid(Scalar x) {
  using std::exp;
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-x)) : exp(x) / (Scalar(1) + exp(x));
}

// Loss from precomputed (x_ui, x_uj) pairs and ||Theta||^2.
double BprLossFromScores(std::span<const double> positive, std::span<const double> negative,
                         double squared_norm, double lambda);

template <typename Scalar>
Scalar BprLoss(std::span<const Triplet> batch, const NodeEmbeddings<Scalar>& finals,
               const ModelParams<Scalar>& params, Scalar lambda) {
  Scalar loss(0);
  for (const auto& t : batch) {
    const Scalar diff = Score(finals, t.u, t.i) - Score(finals, t.u, t.j);
    const Scalar term = NegLogSigmoid(diff);
    if (!std::isfinite(static_cast<double>(term))) {
      throw NumericalError("non-finite loss at triplet (u=" + std::to_string(t.u) +
                           ", i=" + std::to_string(t.i) + ", j=" + std::to_string(t.j) + ")");
    }
    loss += term;
  }
  return loss + lambda * params.SquaredNorm();
}

// Gradients share the parameter layout.
template <typename Scalar>
using Gradients = ModelParams<Scalar>;

template <typename Scalar>
struct LossAndGradients {
  Scalar loss = Scalar(0);
  Gradients<Scalar> grads;
};

// Every trainable tensor in a fixed order: users, items, mappings.
template <typename Scalar>
std::vector<Matrix<Scalar>*> Tensors(ModelParams<Scalar>& p) {
  std::vector<Matrix<Scalar>*> out = {&p.users, &p.items};
  for (auto& w : p.mappings) out.push_back(&w);
  return out;
}

template <typename Scalar>
std::vector<const Matrix<Scalar>*> Tensors(const ModelParams<Scalar>& p) {
  std::vector<const Matrix<Scalar>*> out = {&p.users, &p.items};
  for (const auto& w : p.mappings) out.push_back(&w);
  return out;
}

template <typename Scalar>
LossAndGradients<Scalar> Backward(std::span<const Triplet> batch, const ModelParams<Scalar>& p,
                                  const NormalizedGraph<Scalar>& g,
                                  const TextTable<Scalar>& text, Scalar lambda) {
  const ForwardResult<Scalar> fwd = Forward(p, g, text);
  const auto& F = fwd.finals;
  LossAndGradients<Scalar> out;
  out.loss = BprLoss(batch, F, p, lambda);

  // d loss / d finals.
  NodeEmbeddings<Scalar> dF{Matrix<Scalar>::Zero(F.users.rows(), F.users.cols()),
                            Matrix<Scalar>::Zero(F.items.rows(), F.items.cols())};
  for (const auto& t : batch) {
    const Scalar diff = Score(F, t.u, t.i) - Score(F, t.u, t.j);
    const Scalar c = -Sigmoid(-diff);
    dF.users.row(t.u) += c * (F.items.row(t.i) - F.items.row(t.j));
    dF.items.row(t.i) += c * F.users.row(t.u);
    dF.items.row(t.j) -= c * F.users.row(t.u);
  }

  Gradients<Scalar>& G = out.grads;
  G = p;
  for (auto* m : Tensors(G)) m->setZero();

  const Eigen::Index d = p.dim();
  if (p.variant == Variant::kMf) {
    G.users = dF.users;
    G.items = dF.items;
  } else {
    const int L = p.num_layers;
    const Scalar inv_l = Scalar(1) / Scalar(L);
    // dU, dI hold the gradient w.r.t. layer l outputs, walking l = L..1.
    NodeEmbeddings<Scalar> dcur{dF.users * inv_l, dF.items * inv_l};
    for (int l = L; l >= 1; --l) {
      NodeEmbeddings<Scalar> dagg;
      if (p.variant == Variant::kNoAlign) {
        dagg = dcur;
      } else {
        const auto& in = fwd.mapped_inputs[l - 1];
        const auto& W = p.mappings[l - 1];
        G.mappings[l - 1] = in.users.transpose() * dcur.users + in.items.transpose() * dcur.items;
        dagg = {dcur.users * W.topRows(d).transpose(), dcur.items * W.topRows(d).transpose()};
      }
      // users_l depends on items_{l-1} through S, items_l on users_{l-1}.
      NodeEmbeddings<Scalar> dprev{g.user_item * dagg.items, g.item_user * dagg.users};
      if (l > 1) {
        dprev.users += dF.users * inv_l;
        dprev.items += dF.items * inv_l;
      }
      dcur = std::move(dprev);
    }
    if (p.variant == Variant::kNoAlign) {
      const auto& in = fwd.mapped_inputs[0];
      const auto& W = p.mappings[0];
      G.mappings[0] = in.users.transpose() * dcur.users + in.items.transpose() * dcur.items;
      G.users = dcur.users * W.topRows(d).transpose();
      G.items = dcur.items * W.topRows(d).transpose();
    } else {
      G.users = dcur.users;
      G.items = dcur.items;
    }
  }

  auto grads = Tensors(G);
  auto params = Tensors(p);
  for (std::size_t k = 0; k < grads.size(); ++k) *grads[k] += Scalar(2) * lambda * *params[k];
  return out;
}

template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
  std::int64_t step = 0;

  explicit AdamState(const ModelParams<Scalar>& p) {
    for (const auto* t : Tensors(p)) {
      m.push_back(Matrix<Scalar>::Zero(t->rows(), t->cols()));
      v.push_back(Matrix<Scalar>::Zero(t->rows(), t->cols()));
    }
  }
};

// One bias-corrected AdamW update. Decoupled decay is applied first, as
// theta <- theta (1 - lr wd).
template <typename Scalar>
void AdamWStep(ModelParams<Scalar>& p, const Gradients<Scalar>& g, AdamState<Scalar>& s,
               const TrainConfig& c) {
  auto params = Tensors(p);
  auto grads = Tensors(g);
  if (params.size() != s.m.size() || grads.size() != params.size()) {
    throw ValidationError("optimizer state does not match parameters");
  }
  ++s.step;
  const Scalar lr(c.learning_rate), b1(c.beta1), b2(c.beta2), eps(c.epsilon);
  const Scalar bc1 = Scalar(1) - std::pow(b1, Scalar(s.step));
  const Scalar bc2 = Scalar(1) - std::pow(b2, Scalar(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = *params[k];
    const auto& grad = *grads[k];
    theta *= Scalar(1) - lr * Scalar(c.weight_decay);
    s.m[k] = b1 * s.m[k] + (Scalar(1) - b1) * grad;
    s.v[k] = b2 * s.v[k] + (Scalar(1) - b2) * grad.cwiseProduct(grad);
    const Matrix<Scalar> m_hat = s.m[k] / bc1;
    const Matrix<Scalar> v_hat = s.v[k] / bc2;
    theta.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
  }
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_ndcg5 = 0.0;
  double val_map5 = 0.0;
  std::int64_t wall_ms = 0;
};

struct TrainResult {
  ModelParams<double> params;  // best validation checkpoint
  std::vector<EpochRecord> history;
  double initial_val_ndcg = 0.0;
  double best_val_ndcg = 0.0;
  int best_epoch = 0;  // 0 means the initial parameters
  bool diverged = false;
  std::string divergence;  // message when diverged
};

// The model graph defaults to the train split; triplets always come from
// train. For Variant::kMf the text table and layer count are ignored.
TrainResult Train(const Dataset& dataset, const Split& split, const TextTable<double>& text,
                  const TrainConfig& config, Variant variant,
                  const GraphTopology* graph = nullptr);

// ID-only baseline trained with the same loss, sampler and optimizer.
TrainResult TrainMfBaseline(const Dataset& dataset, const Split& split,
                            const TrainConfig& config);

// Final embeddings of trained parameters over the train graph.
NodeEmbeddings<double> FinalEmbeddings(const ModelParams<double>& params,
                                       const GraphTopology& graph,
                                       const TextTable<double>& text);

std::string HistoryJsonl(std::span<const EpochRecord> history);

}  // namespace gcrec

#endif  // GCREC_TRAINING_HPP_
