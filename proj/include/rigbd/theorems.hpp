#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "rigbd/gcn.hpp"
#include "rigbd/perturb.hpp"
#include "rigbd/synthesis.hpp"

namespace rigbd {

/// Mean of clip(mu + sigma * Z, -B, B) for standard normal Z.
inline double clipped_normal_mean(double mu, double sigma, double bound) {
  if (sigma == 0.0) return std::clamp(mu, -bound, bound);
  const double a = (-bound - mu) / sigma, b = (bound - mu) / sigma;
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  auto pdf = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846); };
  return -bound * cdf(a) + bound * (1.0 - cdf(b)) + mu * (cdf(b) - cdf(a)) + sigma * (pdf(a) - pdf(b));
}

/// E[x_i] for every node of a graph drawn from `cfg`, using the labels of `g`.
/// Unlabeled rows are zero.
inline Matrix expected_features(const SyntheticConfig& cfg, const Graph& g) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(g.num_nodes()),
                            static_cast<Eigen::Index>(cfg.feature_dim));
  std::vector<Eigen::VectorXd> means;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    Eigen::VectorXd mu = class_mean(cfg, static_cast<Label>(c));
    for (Eigen::Index m = 0; m < mu.size(); ++m)
      mu(m) = clipped_normal_mean(mu(m), cfg.feature_noise, cfg.feature_bound);
    means.push_back(std::move(mu));
  }
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const Label y = g.labels()[i];
    if (y != kUnlabeled) out.row(static_cast<Eigen::Index>(i)) = means[static_cast<std::size_t>(y)].transpose();
  }
  return out;
}

namespace detail {

/// out = A' * xw over the kept edges of `pg`, where the coefficient of edge
/// (u, v) is `coef(u, v)`. No self-loops.
template <class Coef>
void aggregate(const PerturbedGraph& pg, const Matrix& xw, Coef coef, Matrix& out) {
  out.setZero(xw.rows(), xw.cols());
  const auto edges = pg.parent().edges();
  for (auto k : pg.kept()) {
    const auto& e = edges[k];
    const double c = coef(e.u, e.v);
    out.row(e.u) += c * xw.row(e.v);
    out.row(e.v) += c * xw.row(e.u);
  }
}

inline std::vector<NodeId> default_nodes(const Graph& g, std::span<const NodeId> nodes) {
  if (!nodes.empty()) return {nodes.begin(), nodes.end()};
  std::vector<NodeId> all;
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    if (g.degree(static_cast<NodeId>(i)) > 0) all.push_back(static_cast<NodeId>(i));
  return all;
}

}  // namespace detail

struct Theorem1Report {
  double beta = 0.0;
  std::size_t replications = 0;
  double z_tolerance = 5.0;
  double required_fraction = 0.99;
  std::size_t nodes_checked = 0;
  std::size_t nodes_passed = 0;
  double pass_fraction = 0.0;
  double max_abs_deviation = 0.0;
  double max_z = 0.0;
  /// Same statistics for the operator that renormalizes by the degrees left
  /// after dropping. It is not unbiased; reported for reference only.
  double kept_degree_pass_fraction = 0.0;
  double kept_degree_max_z = 0.0;
  double kept_degree_mean_relative_bias = 0.0;
  bool passed = false;
};

/// Monte-Carlo check that edge dropping leaves the first-layer pre-activation
/// unbiased.
///
/// The perturbed operator weights each kept edge by
/// 1 / ((1 - beta) sqrt(deg(i) deg(j))), i.e. normalizes by the expected
/// degrees after dropping. For each node the mean deviation from the
/// unperturbed embedding must lie within z_tolerance standard errors in every
/// coordinate; the check passes when at least required_fraction of the nodes
/// do.
inline Theorem1Report check_theorem_1(const Graph& g, const GcnModel& model_b, double beta,
                                      std::size_t replications, std::uint64_t seed = 0,
                                      std::span<const NodeId> nodes = {}) {
  detail::require(model_b.norm_mode == NormMode::without_self_loops,
                  "theorem checks need a model without self-loops");
  detail::require(beta >= 0.0 && beta < 1.0, "theorem 1 needs beta in [0, 1)");
  detail::require(replications >= 2, "need at least two replications");
  const auto checked = detail::default_nodes(g, nodes);
  const Matrix xw = g.features() * model_b.weights.front();
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const auto h = xw.cols();

  std::vector<double> inv_sqrt(g.num_nodes(), 0.0);
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const auto d = g.degree(static_cast<NodeId>(i));
    if (d > 0) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(d));
  }
  auto base_coef = [&](NodeId u, NodeId v) {
    return inv_sqrt[static_cast<std::size_t>(u)] * inv_sqrt[static_cast<std::size_t>(v)];
  };
  const double keep = 1.0 - beta;
  auto expected_coef = [&](NodeId u, NodeId v) { return base_coef(u, v) / keep; };

  Matrix h0;
  detail::aggregate(random_edge_drop(g, 0.0, seed, 0), xw, base_coef, h0);

  Matrix sum = Matrix::Zero(n, h), sumsq = Matrix::Zero(n, h);
  Matrix ksum = Matrix::Zero(n, h), ksumsq = Matrix::Zero(n, h);
  Matrix hk, kk;
  for (std::size_t r = 0; r < replications; ++r) {
    const auto pg = random_edge_drop(g, beta, seed, r);
    detail::aggregate(pg, xw, expected_coef, hk);
    hk -= h0;
    sum += hk;
    sumsq += hk.cwiseProduct(hk);

    const auto& deg = pg.degrees();
    auto kept_coef = [&](NodeId u, NodeId v) {
      return 1.0 / std::sqrt(static_cast<double>(deg[static_cast<std::size_t>(u)]) *
                             static_cast<double>(deg[static_cast<std::size_t>(v)]));
    };
    detail::aggregate(pg, xw, kept_coef, kk);
    kk -= h0;
    ksum += kk;
    ksumsq += kk.cwiseProduct(kk);
  }

  Theorem1Report rep;
  rep.beta = beta;
  rep.replications = replications;
  rep.nodes_checked = checked.size();
  const double rr = static_cast<double>(replications);
  // Returns (node passes, largest z) for one accumulator pair.
  auto judge = [&](const Matrix& s, const Matrix& sq, NodeId i, double* max_dev) {
    bool ok = true;
    double worst = 0.0;
    for (Eigen::Index c = 0; c < h; ++c) {
      const double mean = s(i, c) / rr;
      const double var = std::max(0.0, (sq(i, c) - rr * mean * mean) / (rr - 1.0));
      const double se = std::sqrt(var / rr);
      if (max_dev) *max_dev = std::max(*max_dev, std::abs(mean));
      if (se == 0.0) {
        if (mean != 0.0) {
          ok = false;
          worst = std::numeric_limits<double>::infinity();
        }
        continue;
      }
      const double z = std::abs(mean) / se;
      worst = std::max(worst, z);
      if (z > rep.z_tolerance) ok = false;
    }
    return std::pair{ok, worst};
  };
  std::size_t kept_ok = 0;
  double bias_sum = 0.0;
  std::size_t bias_count = 0;
  for (NodeId i : checked) {
    const auto [ok, z] = judge(sum, sumsq, i, &rep.max_abs_deviation);
    rep.nodes_passed += ok;
    rep.max_z = std::max(rep.max_z, z);
    const auto [kok, kz] = judge(ksum, ksumsq, i, nullptr);
    kept_ok += kok;
    rep.kept_degree_max_z = std::max(rep.kept_degree_max_z, kz);
    const double norm0 = h0.row(i).norm();
    if (norm0 > 0.0) {
      bias_sum += (ksum.row(i) / rr).norm() / norm0;
      ++bias_count;
    }
  }
  const double total = static_cast<double>(std::max<std::size_t>(checked.size(), 1));
  rep.pass_fraction = static_cast<double>(rep.nodes_passed) / total;
  rep.kept_degree_pass_fraction = static_cast<double>(kept_ok) / total;
  rep.kept_degree_mean_relative_bias = bias_count ? bias_sum / static_cast<double>(bias_count) : 0.0;
  rep.passed = rep.pass_fraction >= rep.required_fraction;
  return rep;
}

struct Theorem2Report {
  double beta = 0.0;
  std::size_t replications = 0;
  double spectral_norm = 0.0;
  double feature_bound = 0.0;
  std::vector<double> t_grid;
  /// Per t: largest (empirical tail - bound) over the checked nodes.
  std::vector<double> worst_margin;
  std::size_t violations = 0;
  /// Median over nodes of the mean deviation ||h_i^k - E[h_i]||.
  double median_deviation = 0.0;
  bool passed = false;
};

/// Tail bound check for P(||h_i^k - E[h_i]|| >= t).
///
/// h_i^k uses the detector's operator on the perturbed graph (normalized by
/// the kept degrees); E[h_i] uses the unperturbed operator and the expected
/// features. The bound for replication k is evaluated at its kept degree and
/// capped at 1; the empirical tail frequency of every node and t must not
/// exceed the average bound.
inline Theorem2Report check_theorem_2(const Graph& g, const GcnModel& model_b, double beta,
                                      std::span<const double> t_grid, std::size_t replications,
                                      const Matrix& expected_x, double feature_bound,
                                      std::uint64_t seed = 0, std::span<const NodeId> nodes = {}) {
  detail::require(model_b.norm_mode == NormMode::without_self_loops,
                  "theorem checks need a model without self-loops");
  detail::require(beta >= 0.0 && beta <= 1.0, "drop ratio beta must lie in [0, 1]");
  detail::require(replications >= 1, "need at least one replication");
  detail::require(feature_bound > 0.0, "feature bound must be positive");
  detail::require(expected_x.rows() == static_cast<Eigen::Index>(g.num_nodes()) &&
                      expected_x.cols() == static_cast<Eigen::Index>(g.feature_dim()),
                  "expected feature matrix has the wrong shape");
  const auto checked = detail::default_nodes(g, nodes);
  const Matrix& w = model_b.weights.front();
  const Matrix xw = g.features() * w;
  const Matrix mean_h = sym_normalize(g, NormMode::without_self_loops).values * (expected_x * w);
  const double rho = spectral_norm(w);
  const double m = static_cast<double>(g.feature_dim());

  Theorem2Report rep;
  rep.beta = beta;
  rep.replications = replications;
  rep.spectral_norm = rho;
  rep.feature_bound = feature_bound;
  rep.t_grid.assign(t_grid.begin(), t_grid.end());
  const std::size_t nt = t_grid.size();
  std::vector<double> hits(checked.size() * nt, 0.0), bound_sum(checked.size() * nt, 0.0);
  std::vector<double> dev_sum(checked.size(), 0.0);

  Matrix hk;
  for (std::size_t r = 0; r < replications; ++r) {
    const auto pg = random_edge_drop(g, beta, seed, r);
    hk = pg.normalize(NormMode::without_self_loops).values * xw;
    for (std::size_t a = 0; a < checked.size(); ++a) {
      const NodeId i = checked[a];
      const double dev = (hk.row(i) - mean_h.row(i)).norm();
      dev_sum[a] += dev;
      const double dk = static_cast<double>(pg.degree(i));
      for (std::size_t b = 0; b < nt; ++b) {
        const double t = t_grid[b];
        if (dev >= t) hits[a * nt + b] += 1.0;
        const double bound =
            rho == 0.0 ? (t > 0.0 ? 0.0 : 2.0 * m)
                       : 2.0 * m * std::exp(-dk * t * t / (2.0 * rho * rho * feature_bound * feature_bound * m));
        bound_sum[a * nt + b] += std::min(1.0, bound);
      }
    }
  }

  const double rr = static_cast<double>(replications);
  rep.worst_margin.assign(nt, -std::numeric_limits<double>::infinity());
  for (std::size_t a = 0; a < checked.size(); ++a)
    for (std::size_t b = 0; b < nt; ++b) {
      const double margin = hits[a * nt + b] / rr - bound_sum[a * nt + b] / rr;
      rep.worst_margin[b] = std::max(rep.worst_margin[b], margin);
      if (margin > 1e-12) ++rep.violations;
    }
  std::vector<double> means(dev_sum.size());
  for (std::size_t a = 0; a < dev_sum.size(); ++a) means[a] = dev_sum[a] / rr;
  if (!means.empty()) {
    std::nth_element(means.begin(), means.begin() + static_cast<std::ptrdiff_t>(means.size() / 2), means.end());
    rep.median_deviation = means[means.size() / 2];
  }
  rep.passed = rep.violations == 0;
  return rep;
}

struct DegreeTrendReport {
  double median_low = 0.0;
  double median_high = 0.0;
  bool passed = false;
};

/// Same first-layer weights on a low- and a high-degree graph: the median
/// deviation on the denser graph must be strictly smaller.
inline DegreeTrendReport check_degree_trend(const Graph& low, const Matrix& expected_low,
                                            const Graph& high, const Matrix& expected_high,
                                            const GcnModel& model_b, double beta,
                                            std::size_t replications, double feature_bound,
                                            std::uint64_t seed = 0) {
  const std::vector<double> none;
  const auto a = check_theorem_2(low, model_b, beta, none, replications, expected_low, feature_bound, seed);
  const auto b = check_theorem_2(high, model_b, beta, none, replications, expected_high, feature_bound, seed);
  return {a.median_deviation, b.median_deviation, b.median_deviation < a.median_deviation};
}

struct Theorem3Report {
  std::size_t iterations = 0;
  double beta = 0.0;
  std::size_t replications = 0;
  double mean_drops = 0.0;
  double expected = 0.0;
  double standard_error = 0.0;
  bool passed = false;
};

/// Number of the K perturbations that drop one fixed edge, averaged over
/// independent seeds, against K * beta. Uses the detector's own drop rule.
inline Theorem3Report check_theorem_3(std::size_t iterations, double beta, std::size_t replications,
                                      std::uint64_t seed = 0) {
  detail::require(iterations >= 1, "iteration count K must be >= 1");
  detail::require(beta >= 0.0 && beta <= 1.0, "drop ratio beta must lie in [0, 1]");
  detail::require(replications >= 1, "need at least one replication");
  Theorem3Report rep;
  rep.iterations = iterations;
  rep.beta = beta;
  rep.replications = replications;
  double total = 0.0;
  for (std::size_t r = 0; r < replications; ++r) {
    const auto s = derive_seed(seed + r, "theorem-3");
    for (std::size_t k = 0; k < iterations; ++k) total += edge_dropped(beta, s, k, 0) ? 1.0 : 0.0;
  }
  const double kk = static_cast<double>(iterations), rr = static_cast<double>(replications);
  rep.mean_drops = total / rr;
  rep.expected = kk * beta;
  rep.standard_error = std::sqrt(kk * beta * (1.0 - beta) / rr);
  rep.passed = std::abs(rep.mean_drops - rep.expected) <= 3.0 * rep.standard_error;
  return rep;
}

}  // namespace rigbd
