#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rigbd/graph.hpp"
#include "rigbd/normalize.hpp"
#include "rigbd/rng.hpp"

namespace rigbd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Probability floor applied after the row softmax.
inline constexpr double kSmoothing = 1e-12;

/// L-layer GCN without bias terms: ReLU between layers, identity at the output.
struct GcnModel {
  std::vector<Matrix> weights;
  NormMode norm_mode = NormMode::with_self_loops;
  std::uint64_t seed = 0;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(weights.front().rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(weights.back().cols()); }

  void validate() const {
    detail::require(!weights.empty(), "model has no layers");
    for (std::size_t l = 0; l + 1 < weights.size(); ++l)
      detail::require(weights[l].cols() == weights[l + 1].rows(),
                      "layer " + std::to_string(l) + " output does not match layer " +
                          std::to_string(l + 1) + " input");
    for (const auto& w : weights) detail::require(w.allFinite(), "model weights are not finite");
  }
};

/// Glorot-uniform initialization, U(-r, r) with r = sqrt(6 / (fan_in + fan_out)).
inline GcnModel init_gcn(std::span<const std::size_t> dims, NormMode mode, std::uint64_t seed) {
  detail::require(dims.size() >= 2, "a GCN needs at least an input and an output dimension");
  GcnModel model;
  model.norm_mode = mode;
  model.seed = seed;
  Engine engine(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double r = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> dist(-r, r);
    Matrix w(static_cast<Eigen::Index>(dims[l]), static_cast<Eigen::Index>(dims[l + 1]));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(engine);
    model.weights.push_back(std::move(w));
  }
  return model;
}

/// Two-layer GCN with the given hidden width.
inline GcnModel init_gcn(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                         NormMode mode, std::uint64_t seed) {
  const std::vector<std::size_t> dims{input_dim, hidden_dim, num_classes};
  return init_gcn(dims, mode, seed);
}

struct PredictionOutput {
  Matrix logits;
  Matrix probabilities;
  /// Plain softmax before smoothing; kept for the backward pass.
  Matrix softmax;

  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(logits.cols()); }

  Label predicted(NodeId i) const {
    Eigen::Index k = 0;
    probabilities.row(i).maxCoeff(&k);
    return static_cast<Label>(k);
  }
};

/// Row softmax followed by p = (1 - C eps) s + eps, so rows still sum to one
/// and every entry is at least eps.
inline void smoothed_softmax(const Matrix& logits, Matrix& softmax, Matrix& probs) {
  const auto classes = static_cast<double>(logits.cols());
  softmax.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    softmax.row(i) = (logits.row(i).array() - mx).exp();
    softmax.row(i) /= softmax.row(i).sum();
  }
  probs = (softmax.array() * (1.0 - classes * kSmoothing) + kSmoothing).matrix();
}

/// Intermediate activations of one forward pass.
struct ForwardTrace {
  std::vector<Matrix> inputs;  ///< H^(l) fed into layer l
  std::vector<Matrix> pre;     ///< A_hat H^(l) W^(l)
};

namespace detail {

inline void check_forward_inputs(const GcnModel& model, const NormalizedAdjacency& norm,
                                 const Matrix& features) {
  require(!model.weights.empty(), "model has no layers");
  require(norm.mode == model.norm_mode,
          "normalization mode " + std::string(to_string(norm.mode)) + " does not match model mode " +
              std::string(to_string(model.norm_mode)));
  require(static_cast<std::size_t>(features.rows()) == norm.size(),
          "feature rows do not match adjacency size");
  require(features.cols() == model.weights.front().rows(),
          "feature dimension does not match the first layer");
}

}  // namespace detail

inline PredictionOutput forward(const GcnModel& model, const NormalizedAdjacency& norm,
                                const Matrix& features, ForwardTrace* trace = nullptr) {
  detail::check_forward_inputs(model, norm, features);
  Matrix h = features;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Matrix z = norm.values * (h * model.weights[l]);
    if (trace) {
      trace->inputs.push_back(std::move(h));
      trace->pre.push_back(z);
    }
    h = (l + 1 < model.num_layers()) ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  if (!h.allFinite()) throw NumericalError("non-finite logits in forward pass");
  PredictionOutput out;
  out.logits = std::move(h);
  smoothed_softmax(out.logits, out.softmax, out.probabilities);
  return out;
}

inline PredictionOutput forward(const GcnModel& model, const Graph& g) {
  return forward(model, sym_normalize(g, model.norm_mode), g.features());
}

/// First-layer pre-activation A_hat X W^(0).
inline Matrix first_layer_preactivation(const GcnModel& model, const NormalizedAdjacency& norm,
                                        const Matrix& features) {
  return norm.values * (features * model.weights.front());
}

/// A scalar objective of the form sum_i weight_i * log p(i, class_i).
///
/// Cross-entropy and the target-class unlearning loss are both instances.
struct LogProbObjective {
  struct Term {
    NodeId node;
    Label cls;
    double weight;
  };
  std::vector<Term> terms;

  double value(const PredictionOutput& out) const {
    double total = 0.0;
    for (const auto& t : terms) total += t.weight * std::log(out.probabilities(t.node, t.cls));
    return total;
  }

  /// d(value) / d(logits).
  Matrix logit_gradient(const PredictionOutput& out) const {
    const double classes = static_cast<double>(out.num_classes());
    Matrix g = Matrix::Zero(out.logits.rows(), out.logits.cols());
    for (const auto& t : terms) {
      const double s = out.softmax(t.node, t.cls);
      const double p = out.probabilities(t.node, t.cls);
      const double scale = t.weight * (1.0 - classes * kSmoothing) * s / p;
      g.row(t.node) -= scale * out.softmax.row(t.node);
      g(t.node, t.cls) += scale;
    }
    return g;
  }
};

/// Mean cross-entropy over `mask`.
inline LogProbObjective cross_entropy_objective(std::span<const Label> labels,
                                                std::span<const NodeId> mask) {
  detail::require(!mask.empty(), "cross-entropy mask is empty");
  LogProbObjective obj;
  const double w = -1.0 / static_cast<double>(mask.size());
  for (NodeId n : mask) {
    const Label y = labels[static_cast<std::size_t>(n)];
    detail::require(y != kUnlabeled, "node " + std::to_string(n) + " in mask is unlabeled");
    obj.terms.push_back({n, y, w});
  }
  return obj;
}

inline double cross_entropy(const PredictionOutput& out, std::span<const Label> labels,
                            std::span<const NodeId> mask) {
  return cross_entropy_objective(labels, mask).value(out);
}

/// Backpropagates d(loss)/d(logits) through a recorded forward pass.
inline std::vector<Matrix> backprop(const GcnModel& model, const NormalizedAdjacency& norm,
                                    const ForwardTrace& trace, Matrix dz) {
  std::vector<Matrix> grads(model.num_layers());
  for (std::size_t l = model.num_layers(); l-- > 0;) {
    // A_hat is symmetric, so A_hat^T dZ = A_hat dZ.
    Matrix dp = norm.values * dz;
    grads[l] = trace.inputs[l].transpose() * dp;
    if (l == 0) break;
    Matrix dh = dp * model.weights[l].transpose();
    dz = (trace.pre[l - 1].array() > 0.0).select(dh, 0.0);
  }
  return grads;
}

/// Gradients of an objective with respect to every weight matrix.
inline std::vector<Matrix> backward(const GcnModel& model, const NormalizedAdjacency& norm,
                                    const Matrix& features, const LogProbObjective& objective,
                                    double* value = nullptr) {
  ForwardTrace trace;
  const auto out = forward(model, norm, features, &trace);
  if (value) *value = objective.value(out);
  return backprop(model, norm, trace, objective.logit_gradient(out));
}

/// Largest singular value by power iteration on W^T W.
///
/// Iterates until the eigen-residual |G v - lambda v| drops below
/// tol * lambda, from a fixed start vector.
inline double spectral_norm(const Matrix& w, std::size_t max_iters = 200000, double tol = 1e-10) {
  detail::require(w.allFinite(), "spectral_norm needs a finite matrix");
  if (w.size() == 0) return 0.0;
  const Matrix gram = w.transpose() * w;
  Vector v(gram.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.01 * static_cast<double>(i);
  v.normalize();
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    Vector gv = gram * v;
    lambda = v.dot(gv);
    if (lambda <= 0.0) return 0.0;
    if ((gv - lambda * v).norm() <= tol * lambda) break;
    v = gv / gv.norm();
  }
  return std::sqrt(lambda);
}

}  // namespace rigbd
