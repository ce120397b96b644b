#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Sparse>

#include "rigbd/graph.hpp"

namespace rigbd {

enum class NormMode { with_self_loops, without_self_loops };

inline std::string_view to_string(NormMode m) {
  return m == NormMode::with_self_loops ? "with_self_loops" : "without_self_loops";
}

inline NormMode parse_norm_mode(std::string_view s) {
  if (s == "with_self_loops") return NormMode::with_self_loops;
  if (s == "without_self_loops") return NormMode::without_self_loops;
  throw InvalidArgument("unknown norm mode '" + std::string(s) + "'");
}

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// D^-1/2 A D^-1/2 (or with A + I and the matching degrees).
///
/// A node with no incident entries gets an all-zero row.
struct NormalizedAdjacency {
  NormMode mode = NormMode::with_self_loops;
  SparseMatrix values;

  std::size_t size() const noexcept { return static_cast<std::size_t>(values.rows()); }
  double coefficient(NodeId i, NodeId j) const { return values.coeff(i, j); }
};

/// Normalizes an arbitrary edge set over `num_nodes` nodes. Edges must be
/// canonical and free of loops and duplicates.
inline NormalizedAdjacency normalize_edges(std::size_t num_nodes, std::span<const Edge> edges,
                                           NormMode mode) {
  const bool loops = mode == NormMode::with_self_loops;
  std::vector<double> degree(num_nodes, loops ? 1.0 : 0.0);
  for (const auto& e : edges) {
    degree[static_cast<std::size_t>(e.u)] += 1.0;
    degree[static_cast<std::size_t>(e.v)] += 1.0;
  }
  std::vector<double> inv_sqrt(num_nodes, 0.0);
  for (std::size_t i = 0; i < num_nodes; ++i)
    if (degree[i] > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(2 * edges.size() + (loops ? num_nodes : 0));
  for (const auto& e : edges) {
    const double c = inv_sqrt[static_cast<std::size_t>(e.u)] * inv_sqrt[static_cast<std::size_t>(e.v)];
    triplets.emplace_back(e.u, e.v, c);
    triplets.emplace_back(e.v, e.u, c);
  }
  if (loops)
    for (std::size_t i = 0; i < num_nodes; ++i)
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), inv_sqrt[i] * inv_sqrt[i]);

  NormalizedAdjacency out;
  out.mode = mode;
  out.values.resize(static_cast<Eigen::Index>(num_nodes), static_cast<Eigen::Index>(num_nodes));
  out.values.setFromTriplets(triplets.begin(), triplets.end());
  out.values.makeCompressed();
  return out;
}

inline NormalizedAdjacency sym_normalize(const Graph& g, NormMode mode) {
  return normalize_edges(g.num_nodes(), g.edges(), mode);
}

}  // namespace rigbd
