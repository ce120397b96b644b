#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rigbd/error.hpp"

namespace rigbd {

using NodeId = std::int32_t;
using Label = std::int32_t;
inline constexpr Label kUnlabeled = -1;

/// Undirected edge. Canonical form has u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  constexpr Edge canonical() const noexcept { return u < v ? *this : Edge{v, u}; }
  constexpr bool touches(NodeId n) const noexcept { return u == n || v == n; }
  constexpr NodeId other(NodeId n) const noexcept { return u == n ? v : u; }

  friend constexpr auto operator<=>(const Edge&, const Edge&) = default;
};

/// Named node sets, e.g. "labeled" and "test". Each set is sorted and unique.
using MaskSet = std::map<std::string, std::vector<NodeId>>;

namespace masks {
inline constexpr const char* kLabeled = "labeled";
inline constexpr const char* kTest = "test";
}  // namespace masks

/// Immutable undirected attributed graph.
///
/// Holds the canonical edge list (sorted, u < v, no loops, no duplicates)
/// together with a CSR view of the same edge set, node features, per-node
/// labels and disjoint masks.
class Graph {
 public:
  Graph() = default;

  std::size_t num_nodes() const noexcept { return labels_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }
  std::size_t num_classes() const noexcept { return num_classes_; }

  std::span<const Edge> edges() const noexcept { return edges_; }

  std::span<const NodeId> neighbors(NodeId n) const noexcept {
    const auto b = static_cast<std::size_t>(offsets_[n]);
    const auto e = static_cast<std::size_t>(offsets_[n + 1]);
    return std::span<const NodeId>(adjacency_).subspan(b, e - b);
  }

  /// Canonical edge index of each CSR entry, parallel to neighbors(n).
  std::span<const std::size_t> incident_edges(NodeId n) const noexcept {
    const auto b = static_cast<std::size_t>(offsets_[n]);
    const auto e = static_cast<std::size_t>(offsets_[n + 1]);
    return std::span<const std::size_t>(incident_).subspan(b, e - b);
  }

  std::size_t degree(NodeId n) const noexcept {
    return static_cast<std::size_t>(offsets_[n + 1] - offsets_[n]);
  }

  const Eigen::MatrixXd& features() const noexcept { return features_; }
  std::span<const Label> labels() const noexcept { return labels_; }
  Label label(NodeId n) const noexcept { return labels_[static_cast<std::size_t>(n)]; }

  const MaskSet& masks() const noexcept { return masks_; }

  /// The named mask, or an empty span when absent.
  std::span<const NodeId> mask(const std::string& name) const {
    auto it = masks_.find(name);
    if (it == masks_.end()) return {};
    return it->second;
  }

  std::optional<std::size_t> edge_index(Edge e) const noexcept {
    e = e.canonical();
    auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
    if (it == edges_.end() || *it != e) return std::nullopt;
    return static_cast<std::size_t>(it - edges_.begin());
  }

  bool has_edge(Edge e) const noexcept { return edge_index(e).has_value(); }

  /// Observed max |x| over the feature matrix (the bound B of the data).
  double feature_bound() const noexcept {
    return features_.size() == 0 ? 0.0 : features_.cwiseAbs().maxCoeff();
  }

 private:
  friend Graph build_graph(std::size_t, std::vector<Edge>, Eigen::MatrixXd, std::vector<Label>,
                           MaskSet, std::size_t);

  std::vector<Edge> edges_;
  std::vector<std::int64_t> offsets_{0};
  std::vector<NodeId> adjacency_;
  std::vector<std::size_t> incident_;
  Eigen::MatrixXd features_;
  std::vector<Label> labels_;
  MaskSet masks_;
  std::size_t num_classes_ = 0;
};

/// Builds a canonical graph.
///
/// Self-loops and duplicate edges (in either orientation) are dropped. Masks
/// are sorted and deduplicated and must be pairwise disjoint. `num_classes`
/// of 0 means "one more than the largest label".
inline Graph build_graph(std::size_t num_nodes, std::vector<Edge> edges, Eigen::MatrixXd features,
                         std::vector<Label> labels, MaskSet masks = {},
                         std::size_t num_classes = 0) {
  detail::require(static_cast<std::size_t>(features.rows()) == num_nodes,
                  "feature row count " + std::to_string(features.rows()) +
                      " does not match node count " + std::to_string(num_nodes));
  if (labels.empty()) labels.assign(num_nodes, kUnlabeled);
  detail::require(labels.size() == num_nodes, "label count does not match node count");

  const auto n = static_cast<NodeId>(num_nodes);
  for (auto& e : edges) {
    detail::require(e.u >= 0 && e.v >= 0 && e.u < n && e.v < n,
                    "edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                        ") has an endpoint out of range");
    e = e.canonical();
  }
  std::erase_if(edges, [](const Edge& e) { return e.u == e.v; });
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  Label max_label = kUnlabeled;
  for (Label y : labels) {
    detail::require(y >= kUnlabeled, "labels must be >= 0 or unlabeled");
    max_label = std::max(max_label, y);
  }
  const auto inferred = static_cast<std::size_t>(max_label + 1);
  if (num_classes == 0) num_classes = inferred;
  detail::require(num_classes >= inferred, "label exceeds declared class count");

  std::vector<NodeId> owner(num_nodes, -1);
  for (auto& [name, ids] : masks) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (NodeId id : ids) {
      detail::require(id >= 0 && id < n, "mask '" + name + "' has node id out of range");
      detail::require(owner[static_cast<std::size_t>(id)] < 0,
                      "mask '" + name + "' overlaps another mask at node " + std::to_string(id));
      owner[static_cast<std::size_t>(id)] = 0;
    }
  }

  Graph g;
  g.num_classes_ = num_classes;
  g.offsets_.assign(num_nodes + 1, 0);
  for (const auto& e : edges) {
    ++g.offsets_[static_cast<std::size_t>(e.u) + 1];
    ++g.offsets_[static_cast<std::size_t>(e.v) + 1];
  }
  for (std::size_t i = 0; i < num_nodes; ++i) g.offsets_[i + 1] += g.offsets_[i];
  g.adjacency_.resize(2 * edges.size());
  g.incident_.resize(2 * edges.size());
  std::vector<std::int64_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
  // Edges are sorted, so each row is filled in ascending neighbor order for
  // the lower endpoint; a final per-row sort covers the upper endpoint.
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    auto cu = static_cast<std::size_t>(cursor[static_cast<std::size_t>(e.u)]++);
    auto cv = static_cast<std::size_t>(cursor[static_cast<std::size_t>(e.v)]++);
    g.adjacency_[cu] = e.v;
    g.incident_[cu] = k;
    g.adjacency_[cv] = e.u;
    g.incident_[cv] = k;
  }
  for (std::size_t i = 0; i < num_nodes; ++i) {
    const auto b = static_cast<std::size_t>(g.offsets_[i]);
    const auto e = static_cast<std::size_t>(g.offsets_[i + 1]);
    std::vector<std::pair<NodeId, std::size_t>> row;
    row.reserve(e - b);
    for (auto j = b; j < e; ++j) row.emplace_back(g.adjacency_[j], g.incident_[j]);
    std::sort(row.begin(), row.end());
    for (auto j = b; j < e; ++j) std::tie(g.adjacency_[j], g.incident_[j]) = row[j - b];
  }

  g.edges_ = std::move(edges);
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);
  g.masks_ = std::move(masks);
  return g;
}

/// Overload for row-wise feature input; rejects ragged rows.
inline Graph build_graph(std::size_t num_nodes, std::vector<Edge> edges,
                         const std::vector<std::vector<double>>& rows, std::vector<Label> labels,
                         MaskSet masks = {}, std::size_t num_classes = 0) {
  detail::require(rows.size() == num_nodes, "feature row count does not match node count");
  const std::size_t m = rows.empty() ? 0 : rows.front().size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(num_nodes), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require(rows[i].size() == m, "ragged feature matrix at row " + std::to_string(i));
    for (std::size_t j = 0; j < m; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return build_graph(num_nodes, std::move(edges), std::move(x), std::move(labels),
                     std::move(masks), num_classes);
}

/// A graph restricted to a node subset, with the map back to parent ids.
struct Subgraph {
  Graph graph;
  std::vector<NodeId> parent_ids;  ///< local id -> parent id

  std::optional<NodeId> local_id(NodeId parent) const {
    auto it = std::lower_bound(parent_ids.begin(), parent_ids.end(), parent);
    if (it == parent_ids.end() || *it != parent) return std::nullopt;
    return static_cast<NodeId>(it - parent_ids.begin());
  }
};

/// Induced subgraph on `nodes` (any order; result is sorted by parent id).
/// Masks are restricted to the kept nodes.
inline Subgraph induced_subgraph(const Graph& g, std::vector<NodeId> nodes) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::vector<NodeId> local(g.num_nodes(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    detail::require(nodes[i] >= 0 && static_cast<std::size_t>(nodes[i]) < g.num_nodes(),
                    "subgraph node out of range");
    local[static_cast<std::size_t>(nodes[i])] = static_cast<NodeId>(i);
  }
  std::vector<Edge> edges;
  for (const auto& e : g.edges()) {
    const NodeId a = local[static_cast<std::size_t>(e.u)];
    const NodeId b = local[static_cast<std::size_t>(e.v)];
    if (a >= 0 && b >= 0) edges.push_back({a, b});
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(nodes.size()), g.features().cols());
  std::vector<Label> labels(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = g.features().row(nodes[i]);
    labels[i] = g.label(nodes[i]);
  }
  MaskSet masks;
  for (const auto& [name, ids] : g.masks()) {
    auto& out = masks[name];
    for (NodeId id : ids)
      if (local[static_cast<std::size_t>(id)] >= 0) out.push_back(local[static_cast<std::size_t>(id)]);
  }
  Subgraph s;
  s.graph = build_graph(nodes.size(), std::move(edges), std::move(x), std::move(labels),
                        std::move(masks), g.num_classes());
  s.parent_ids = std::move(nodes);
  return s;
}

/// Nodes within `hops` of `center`, by BFS, in ascending id order.
inline std::vector<NodeId> l_hop_nodes(const Graph& g, NodeId center, std::size_t hops) {
  std::vector<int> dist(g.num_nodes(), -1);
  std::queue<NodeId> frontier;
  dist[static_cast<std::size_t>(center)] = 0;
  frontier.push(center);
  std::vector<NodeId> out{center};
  while (!frontier.empty()) {
    NodeId n = frontier.front();
    frontier.pop();
    const int d = dist[static_cast<std::size_t>(n)];
    if (static_cast<std::size_t>(d) == hops) continue;
    for (NodeId m : g.neighbors(n)) {
      if (dist[static_cast<std::size_t>(m)] >= 0) continue;
      dist[static_cast<std::size_t>(m)] = d + 1;
      out.push_back(m);
      frontier.push(m);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Induced subgraph on the L-hop neighborhood of `center`.
inline Subgraph l_hop_subgraph(const Graph& g, NodeId center, std::size_t hops) {
  detail::require(center >= 0 && static_cast<std::size_t>(center) < g.num_nodes(),
                  "center node out of range");
  detail::require(hops >= 1, "hop count must be >= 1");
  return induced_subgraph(g, l_hop_nodes(g, center, hops));
}

/// Copy of `g` with a different edge set; features, labels and masks kept.
inline Graph with_edges(const Graph& g, std::vector<Edge> edges) {
  return build_graph(g.num_nodes(), std::move(edges), g.features(),
                     std::vector<Label>(g.labels().begin(), g.labels().end()), g.masks(),
                     g.num_classes());
}

}  // namespace rigbd
