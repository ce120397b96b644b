#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "rigbd/gcn.hpp"
#include "rigbd/loss.hpp"
#include "rigbd/rng.hpp"

namespace rigbd {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  std::size_t max_epochs = 500;
  std::size_t patience = 50;
  std::size_t hidden_dim = 64;
  std::uint64_t seed = 0;
  /// Minimum validation-loss decrease that counts as an improvement.
  double convergence_tol = 0.0;
  /// Share of the training nodes held out for early stopping.
  double validation_fraction = 0.1;

  void validate() const {
    detail::require(learning_rate >= 0.0, "learning rate must be >= 0");
    detail::require(weight_decay >= 0.0, "weight decay must be >= 0");
    detail::require(max_epochs >= 1, "max_epochs must be >= 1");
    detail::require(hidden_dim >= 1, "hidden_dim must be >= 1");
    detail::require(validation_fraction >= 0.0 && validation_fraction < 1.0,
                    "validation fraction must lie in [0, 1)");
    detail::require(convergence_tol >= 0.0, "convergence tolerance must be >= 0");
  }
};

/// Builds the scalar objective restricted to a node subset. The subset size
/// is passed so sums can be rescaled per split.
using ObjectiveFactory = std::function<LogProbObjective(std::span<const NodeId>)>;

using EpochCallback = std::function<void(std::size_t epoch, const GcnModel&)>;

struct TrainResult {
  GcnModel model;
  double initial_loss = 0.0;
  double final_train_loss = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<double> train_losses;
};

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(const GcnModel& model, double lr, double weight_decay)
      : lr_(lr), wd_(weight_decay) {
    for (const auto& w : model.weights) {
      m_.push_back(Matrix::Zero(w.rows(), w.cols()));
      v_.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
  }

  void step(GcnModel& model, std::vector<Matrix>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t l = 0; l < grads.size(); ++l) {
      auto& w = model.weights[l];
      Matrix g = grads[l] + wd_ * w;
      m_[l] = kBeta1 * m_[l] + (1.0 - kBeta1) * g;
      v_[l] = kBeta2 * v_[l] + (1.0 - kBeta2) * g.cwiseProduct(g);
      w.array() -= lr_ * (m_[l].array() / c1) / ((v_[l].array() / c2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_, wd_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Deterministic train/validation split of `nodes`.
inline std::pair<std::vector<NodeId>, std::vector<NodeId>> split_validation(
    std::span<const NodeId> nodes, double fraction, std::uint64_t seed) {
  std::vector<NodeId> shuffled(nodes.begin(), nodes.end());
  Engine engine(derive_seed(seed, "validation-split"));
  std::shuffle(shuffled.begin(), shuffled.end(), engine);
  auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(shuffled.size())));
  if (n_val >= shuffled.size()) n_val = 0;
  std::vector<NodeId> val(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<NodeId> tr(shuffled.begin() + static_cast<std::ptrdiff_t>(n_val), shuffled.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {std::move(tr), std::move(val)};
}

/// Full-batch training of a freshly initialized GCN.
///
/// Early stopping watches the objective on the held-out split and restores
/// the best weights; without a validation split it watches the training loss.
inline TrainResult train_objective(const Graph& g, std::span<const NodeId> nodes,
                                   const ObjectiveFactory& make_objective,
                                   const TrainConfig& config, NormMode mode,
                                   const EpochCallback& on_epoch = {}) {
  config.validate();
  detail::require(!nodes.empty(), "training needs at least one labeled node");
  const auto norm = sym_normalize(g, mode);
  auto [train_nodes, val_nodes] = split_validation(nodes, config.validation_fraction, config.seed);
  const auto train_obj = make_objective(train_nodes);
  const bool has_val = !val_nodes.empty();
  const auto val_obj = has_val ? make_objective(val_nodes) : LogProbObjective{};

  TrainResult result;
  result.model = init_gcn(g.feature_dim(), config.hidden_dim, g.num_classes(), mode,
                          derive_seed(config.seed, "init"));
  Adam adam(result.model, config.learning_rate, config.weight_decay);
  GcnModel best = result.model;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  auto checked_forward = [&](std::size_t epoch, ForwardTrace* trace) {
    try {
      return forward(result.model, norm, g.features(), trace);
    } catch (const NumericalError&) {
      throw TrainingDiverged(epoch, std::numeric_limits<double>::quiet_NaN());
    }
  };

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    ForwardTrace trace;
    const auto out = checked_forward(epoch, &trace);
    const double loss = train_obj.value(out);
    if (!std::isfinite(loss)) throw TrainingDiverged(epoch, loss);
    if (epoch == 0) result.initial_loss = loss;
    result.train_losses.push_back(loss);
    if (on_epoch) on_epoch(epoch, result.model);

    const double watch = has_val ? val_obj.value(out) : loss;
    if (watch < best_loss - config.convergence_tol) {
      best_loss = watch;
      best = result.model;
      result.best_epoch = epoch;
      result.final_train_loss = loss;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.epochs_run = epoch + 1;
      break;
    }

    auto grads = backprop(result.model, norm, trace, train_obj.logit_gradient(out));
    adam.step(result.model, grads);
    result.epochs_run = epoch + 1;
  }
  // The final update has not been scored yet; score it so a run that never
  // stalls can still return its last state.
  {
    const auto out = checked_forward(result.epochs_run, nullptr);
    const double loss = train_obj.value(out);
    if (!std::isfinite(loss)) throw TrainingDiverged(result.epochs_run, loss);
    const double watch = has_val ? val_obj.value(out) : loss;
    if (watch < best_loss - config.convergence_tol) {
      best = result.model;
      result.best_epoch = result.epochs_run;
      result.final_train_loss = loss;
    }
  }
  result.model = std::move(best);
  return result;
}

/// Trains with either mean cross-entropy or the unlearning loss.
///
/// The unlearning loss is scaled by 1/|training split| so that with no
/// candidates it coincides with mean cross-entropy; the ratio between its
/// two sums is left untouched.
inline TrainResult train(const Graph& g, std::span<const NodeId> labeled, const TrainConfig& config,
                         NormMode mode, LossKind kind = LossKind::cross_entropy,
                         const RobustLossArgs* robust = nullptr,
                         RobustWeighting weighting = RobustWeighting::sum,
                         const EpochCallback& on_epoch = {}) {
  const auto labels = g.labels();
  ObjectiveFactory factory;
  if (kind == LossKind::cross_entropy) {
    factory = [labels](std::span<const NodeId> subset) {
      return cross_entropy_objective(labels, subset);
    };
  } else {
    detail::require(robust != nullptr, "robust training needs candidate arguments");
    robust->validate();
    factory = [labels, robust, weighting](std::span<const NodeId> subset) {
      RobustLossArgs part;
      part.target_class = robust->target_class;
      for (NodeId n : subset) {
        if (std::find(robust->candidates.begin(), robust->candidates.end(), n) !=
            robust->candidates.end())
          part.candidates.push_back(n);
        else
          part.clean_labeled.push_back(n);
      }
      const double scale =
          weighting == RobustWeighting::sum ? 1.0 / static_cast<double>(subset.size()) : 1.0;
      return robust_objective(labels, part, scale, weighting);
    };
  }
  return train_objective(g, labeled, factory, config, mode, on_epoch);
}

}  // namespace rigbd
