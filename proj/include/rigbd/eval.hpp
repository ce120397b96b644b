#pragma once

#include <algorithm>
#include <cmath>
#include <iterator>
#include <span>
#include <vector>

#include "rigbd/detector.hpp"
#include "rigbd/gcn.hpp"
#include "rigbd/synthesis.hpp"

namespace rigbd {

struct Metrics {
  double asr = 0.0;        ///< triggered nodes (true label != y_t) predicted y_t
  double clean_acc = 0.0;  ///< accuracy on clean test nodes
  double recall = 0.0;
  double precision = 0.0;
  bool has_detection = false;
  std::size_t asr_count = 0;    ///< ASR denominator
  std::size_t clean_count = 0;  ///< ACC denominator
  double defense_ms = 0.0;
};

/// ASR and clean accuracy of `model` on a half-poisoned unseen graph.
///
/// ASR is measured on the poisoned graph. Clean accuracy is measured on the
/// same graph with the triggers removed, so a clean node is not scored
/// through a trigger two hops away.
inline Metrics evaluate(const GcnModel& model, const PoisonedGraph& unseen, Label target_class) {
  const auto out = forward(model, unseen.graph);
  Metrics m;
  std::size_t hits = 0;
  for (NodeId n : unseen.poisoned) {
    if (unseen.graph.label(n) == target_class) continue;
    ++m.asr_count;
    if (out.predicted(n) == target_class) ++hits;
  }
  const auto clean_graph = strip_triggers(unseen);
  const auto clean_out = forward(model, clean_graph);
  std::size_t correct = 0;
  for (NodeId n : clean_test_nodes(unseen)) {
    if (clean_graph.label(n) == kUnlabeled) continue;
    ++m.clean_count;
    if (clean_out.predicted(n) == clean_graph.label(n)) ++correct;
  }
  detail::require(m.asr_count > 0, "no trigger-attached test nodes outside the target class");
  detail::require(m.clean_count > 0, "no clean test nodes");
  m.asr = static_cast<double>(hits) / static_cast<double>(m.asr_count);
  m.clean_acc = static_cast<double>(correct) / static_cast<double>(m.clean_count);
  return m;
}

/// Accuracy of `model` on the labeled nodes of `mask_name` (no triggers involved).
inline double accuracy(const GcnModel& model, const Graph& g, std::span<const NodeId> nodes) {
  detail::require(!nodes.empty(), "accuracy over an empty node set");
  const auto out = forward(model, g);
  std::size_t correct = 0;
  for (NodeId n : nodes)
    if (out.predicted(n) == g.label(n)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

struct DetectionQuality {
  double recall = 0.0;
  double precision = 0.0;
  /// Set when precision is reported as 0 only because nothing was selected.
  bool empty_candidates = false;
};

/// recall = |V_s & V_B| / |V_B|, precision = |V_s & V_B| / |V_s|.
/// With V_s empty, precision is 1 if V_B is empty too and 0 otherwise.
inline DetectionQuality detection_metrics(std::span<const NodeId> candidates,
                                          std::span<const NodeId> poisoned) {
  std::vector<NodeId> a(candidates.begin(), candidates.end()), b(poisoned.begin(), poisoned.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::vector<NodeId> hit;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(hit));
  DetectionQuality q;
  const auto h = static_cast<double>(hit.size());
  q.recall = b.empty() ? 1.0 : h / static_cast<double>(b.size());
  if (a.empty()) {
    q.precision = b.empty() ? 1.0 : 0.0;
    q.empty_candidates = !b.empty();
  } else {
    q.precision = h / static_cast<double>(a.size());
  }
  return q;
}

inline DetectionQuality detection_metrics(const DetectionResult& r, const PoisonedGraph& truth) {
  return detection_metrics(r.candidates, truth.poisoned);
}

/// Cosine similarity of two feature rows; 0 when either has zero norm.
inline double cosine_similarity(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                                const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

/// Removes edges whose endpoint features have cosine similarity below
/// `threshold`. Zero-norm rows count as similarity 0.
inline Graph prune_defense(const Graph& g, double threshold) {
  detail::require(threshold >= -1.0 && threshold <= 1.0, "cosine threshold must lie in [-1, 1]");
  std::vector<Edge> kept;
  const auto& x = g.features();
  for (const auto& e : g.edges())
    if (cosine_similarity(x.row(e.u), x.row(e.v)) >= threshold) kept.push_back(e);
  return with_edges(g, std::move(kept));
}

/// Share of `edges` missing from `g`.
inline double removed_fraction(const Graph& g, std::span<const Edge> edges) {
  if (edges.empty()) return 0.0;
  std::size_t gone = 0;
  for (const auto& e : edges)
    if (!g.has_edge(e)) ++gone;
  return static_cast<double>(gone) / static_cast<double>(edges.size());
}

}  // namespace rigbd
