#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rigbd/graph.hpp"
#include "rigbd/normalize.hpp"
#include "rigbd/rng.hpp"

namespace rigbd {

/// Randomized edge-drop parameters: drop ratio, iteration count and seed.
struct DropSpec {
  double beta = 0.5;
  std::size_t iterations = 20;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(beta >= 0.0 && beta <= 1.0, "drop ratio beta must lie in [0, 1]");
    detail::require(iterations >= 1, "iteration count K must be >= 1");
  }
};

/// An edge-subset view of a parent graph.
///
/// `kept` and `dropped` hold canonical edge indices into parent->edges(); they
/// partition the parent edge set and are each ascending.
class PerturbedGraph {
 public:
  PerturbedGraph(const Graph& parent, std::vector<std::size_t> kept, std::vector<std::size_t> dropped)
      : parent_(&parent), kept_(std::move(kept)), dropped_(std::move(dropped)),
        degrees_(parent.num_nodes(), 0) {
    for (auto k : kept_) {
      const auto& e = parent.edges()[k];
      ++degrees_[static_cast<std::size_t>(e.u)];
      ++degrees_[static_cast<std::size_t>(e.v)];
    }
  }

  const Graph& parent() const noexcept { return *parent_; }
  const std::vector<std::size_t>& kept() const noexcept { return kept_; }
  const std::vector<std::size_t>& dropped() const noexcept { return dropped_; }
  std::size_t degree(NodeId n) const noexcept { return degrees_[static_cast<std::size_t>(n)]; }
  const std::vector<std::size_t>& degrees() const noexcept { return degrees_; }

  bool is_dropped(std::size_t edge_index) const {
    return std::binary_search(dropped_.begin(), dropped_.end(), edge_index);
  }

  std::vector<Edge> kept_edges() const {
    std::vector<Edge> out;
    out.reserve(kept_.size());
    for (auto k : kept_) out.push_back(parent_->edges()[k]);
    return out;
  }

  std::vector<Edge> dropped_edges() const {
    std::vector<Edge> out;
    out.reserve(dropped_.size());
    for (auto k : dropped_) out.push_back(parent_->edges()[k]);
    return out;
  }

  NormalizedAdjacency normalize(NormMode mode) const {
    const auto edges = kept_edges();
    return normalize_edges(parent_->num_nodes(), edges, mode);
  }

  /// Materializes the kept edge set as a standalone graph.
  Graph to_graph() const { return with_edges(*parent_, kept_edges()); }

 private:
  const Graph* parent_;
  std::vector<std::size_t> kept_;
  std::vector<std::size_t> dropped_;
  std::vector<std::size_t> degrees_;
};

/// True when canonical edge `edge_index` is dropped in perturbation
/// `iteration` of the stream keyed by `seed`.
inline bool edge_dropped(double beta, std::uint64_t seed, std::uint64_t iteration,
                         std::size_t edge_index) noexcept {
  return CounterRng(seed).uniform(iteration, edge_index) < beta;
}

/// Drops every undirected edge independently with probability beta. Both
/// incidences of an edge go together. Deterministic in (seed, iteration).
inline PerturbedGraph random_edge_drop(const Graph& g, double beta, std::uint64_t seed,
                                       std::uint64_t iteration) {
  detail::require(beta >= 0.0 && beta <= 1.0, "drop ratio beta must lie in [0, 1]");
  std::vector<std::size_t> kept, dropped;
  kept.reserve(g.num_edges());
  for (std::size_t k = 0; k < g.num_edges(); ++k)
    (edge_dropped(beta, seed, iteration, k) ? dropped : kept).push_back(k);
  return PerturbedGraph(g, std::move(kept), std::move(dropped));
}

inline PerturbedGraph drop_single_edge(const Graph& g, Edge edge) {
  const auto idx = g.edge_index(edge);
  if (!idx)
    throw InvalidArgument("edge (" + std::to_string(edge.u) + "," + std::to_string(edge.v) +
                          ") is not in the graph");
  std::vector<std::size_t> kept;
  kept.reserve(g.num_edges() - 1);
  for (std::size_t k = 0; k < g.num_edges(); ++k)
    if (k != *idx) kept.push_back(k);
  return PerturbedGraph(g, std::move(kept), {*idx});
}

}  // namespace rigbd
