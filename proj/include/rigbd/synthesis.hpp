#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "rigbd/graph.hpp"
#include "rigbd/rng.hpp"

namespace rigbd {

enum class Topology { sbm, regular };

/// Parameters of a label-conditioned synthetic graph.
///
/// Class c has mean `feature_base` in every dimension plus
/// `class_mean_separation` on the dimensions m with m % C == c. Each
/// dimension is sampled independently around that mean and clipped to
/// [-feature_bound, feature_bound].
struct SyntheticConfig {
  std::size_t num_nodes = 2000;
  std::size_t num_classes = 7;
  std::size_t feature_dim = 64;
  double class_mean_separation = 0.5;
  double feature_base = 0.2;
  double feature_noise = 0.3;
  double feature_bound = 1.0;
  Topology topology = Topology::sbm;
  double p_intra = 0.05;
  double p_inter = 0.00005;
  std::size_t regular_degree = 10;
  /// Restrict degree-preserving rewiring to same-class edges.
  bool regular_homophilous = true;
  double labeled_fraction = 0.8;
  /// SBM only: draw edges inside the labeled and test parts separately, with
  /// probabilities rescaled by N / |part| so both induced subgraphs keep the
  /// expected degree of the whole graph. No edge crosses the two parts.
  bool split_preserving = true;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(num_nodes >= 2, "need at least two nodes");
    detail::require(num_classes >= 2, "need at least two classes");
    detail::require(feature_dim >= 1, "need at least one feature");
    detail::require(feature_bound > 0.0, "feature bound must be positive");
    detail::require(feature_noise >= 0.0, "feature noise must be >= 0");
    detail::require(p_intra >= 0.0 && p_intra <= 1.0 && p_inter >= 0.0 && p_inter <= 1.0,
                    "edge probabilities must lie in [0, 1]");
    detail::require(labeled_fraction > 0.0 && labeled_fraction < 1.0,
                    "labeled fraction must lie in (0, 1)");
    if (topology == Topology::regular) {
      detail::require(regular_degree < num_nodes, "regular degree must be below the node count");
      detail::require((num_nodes * regular_degree) % 2 == 0,
                      "a d-regular graph needs N*d even (handshake parity)");
    }
  }
};

/// Expected feature vector of class `c`.
inline Eigen::VectorXd class_mean(const SyntheticConfig& cfg, Label c) {
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(cfg.feature_dim),
                                                 cfg.feature_base);
  for (std::size_t m = 0; m < cfg.feature_dim; ++m)
    if (m % cfg.num_classes == static_cast<std::size_t>(c))
      mu(static_cast<Eigen::Index>(m)) += cfg.class_mean_separation;
  return mu.cwiseMax(-cfg.feature_bound).cwiseMin(cfg.feature_bound);
}

namespace detail {

inline std::uint64_t edge_key(NodeId a, NodeId b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

/// Ring lattice plus degree-preserving double-edge swaps. Labels are laid out
/// in contiguous blocks so the lattice is homophilous before rewiring.
inline std::vector<Edge> regular_edges(const SyntheticConfig& cfg, const std::vector<Label>& labels,
                                       Engine& engine) {
  const auto n = static_cast<NodeId>(cfg.num_nodes);
  const auto d = cfg.regular_degree;
  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i)
    for (std::size_t k = 1; k <= d / 2; ++k)
      edges.push_back(Edge{i, static_cast<NodeId>((i + static_cast<NodeId>(k)) % n)}.canonical());
  if (d % 2 == 1)
    for (NodeId i = 0; i < n / 2; ++i) edges.push_back({i, static_cast<NodeId>(i + n / 2)});

  std::unordered_set<std::uint64_t> present;
  for (const auto& e : edges) present.insert(edge_key(e.u, e.v));
  std::uniform_int_distribution<std::size_t> pick(0, edges.size() - 1);
  std::bernoulli_distribution flip(0.5);
  const std::size_t attempts = 20 * edges.size();
  for (std::size_t t = 0; t < attempts; ++t) {
    const auto i = pick(engine), j = pick(engine);
    if (i == j) continue;
    Edge a = edges[i], b = edges[j];
    if (flip(engine)) std::swap(b.u, b.v);
    const Edge na{a.u, b.v}, nb{b.u, a.v};
    if (na.u == na.v || nb.u == nb.v) continue;
    if (present.count(edge_key(na.u, na.v)) || present.count(edge_key(nb.u, nb.v))) continue;
    if (edge_key(na.u, na.v) == edge_key(nb.u, nb.v)) continue;
    if (cfg.regular_homophilous) {
      auto same = [&](const Edge& e) {
        return labels[static_cast<std::size_t>(e.u)] == labels[static_cast<std::size_t>(e.v)];
      };
      if (!same(na) || !same(nb)) continue;
    }
    present.erase(edge_key(a.u, a.v));
    present.erase(edge_key(b.u, b.v));
    present.insert(edge_key(na.u, na.v));
    present.insert(edge_key(nb.u, nb.v));
    edges[i] = na.canonical();
    edges[j] = nb.canonical();
  }
  return edges;
}

}  // namespace detail

/// Samples a graph satisfying the label-conditioned, independent, bounded
/// feature assumptions, with an SBM or d-regular topology and an 80/20
/// (by default) labeled/test mask split.
inline Graph gen_synthetic_graph(const SyntheticConfig& cfg) {
  cfg.validate();
  Engine engine(derive_seed(cfg.seed, "synthetic"));
  const std::size_t n = cfg.num_nodes;

  std::vector<NodeId> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<NodeId>(i);
  std::shuffle(order.begin(), order.end(), engine);
  const auto n_labeled = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.labeled_fraction * static_cast<double>(n))), 1, n - 1);
  MaskSet masks;
  masks[masks::kLabeled].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_labeled));
  masks[masks::kTest].assign(order.begin() + static_cast<std::ptrdiff_t>(n_labeled), order.end());
  std::vector<std::uint8_t> in_labeled(n, 0);
  for (NodeId v : masks[masks::kLabeled]) in_labeled[static_cast<std::size_t>(v)] = 1;

  std::vector<Label> labels(n);
  std::vector<Edge> edges;
  if (cfg.topology == Topology::regular) {
    for (std::size_t i = 0; i < n; ++i)
      labels[i] = static_cast<Label>(i * cfg.num_classes / n);
    edges = detail::regular_edges(cfg, labels, engine);
  } else {
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<Label>(i % cfg.num_classes);
    std::shuffle(labels.begin(), labels.end(), engine);
    const double total = static_cast<double>(n);
    const double boost[2] = {total / static_cast<double>(n - n_labeled),
                             total / static_cast<double>(n_labeled)};
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double p = labels[i] == labels[j] ? cfg.p_intra : cfg.p_inter;
        if (cfg.split_preserving) {
          if (in_labeled[i] != in_labeled[j]) continue;
          p = std::min(1.0, p * boost[in_labeled[i]]);
        }
        if (u01(engine) < p) edges.push_back({static_cast<NodeId>(i), static_cast<NodeId>(j)});
      }
  }

  std::vector<Eigen::VectorXd> means;
  for (std::size_t c = 0; c < cfg.num_classes; ++c)
    means.push_back(class_mean(cfg, static_cast<Label>(c)));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.feature_dim));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < cfg.feature_dim; ++m) {
      const double v = means[static_cast<std::size_t>(labels[i])](static_cast<Eigen::Index>(m)) +
                       cfg.feature_noise * noise(engine);
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) =
          std::clamp(v, -cfg.feature_bound, cfg.feature_bound);
    }

  return build_graph(n, std::move(edges), std::move(x), std::move(labels), std::move(masks),
                     cfg.num_classes);
}

/// Disjoint training and unseen graphs induced by the labeled and test masks.
struct InductiveSplit {
  Subgraph train;
  Subgraph unseen;
};

inline InductiveSplit split_inductive(const Graph& g) {
  auto labeled = g.mask(masks::kLabeled);
  auto test = g.mask(masks::kTest);
  detail::require(!labeled.empty() && !test.empty(), "graph needs both labeled and test masks");
  InductiveSplit s;
  s.train = induced_subgraph(g, {labeled.begin(), labeled.end()});
  s.unseen = induced_subgraph(g, {test.begin(), test.end()});
  return s;
}

// ---------------------------------------------------------------------------
// Backdoor triggers

enum class TriggerKind { fixed_random, class_mimic };
enum class TriggerTopology { clique, star };

inline std::string_view to_string(TriggerKind k) {
  return k == TriggerKind::fixed_random ? "fixed_random" : "class_mimic";
}
inline std::string_view to_string(TriggerTopology t) {
  return t == TriggerTopology::clique ? "clique" : "star";
}
inline TriggerKind parse_trigger_kind(std::string_view s) {
  if (s == "fixed_random") return TriggerKind::fixed_random;
  if (s == "class_mimic") return TriggerKind::class_mimic;
  throw InvalidArgument("unknown trigger kind '" + std::string(s) + "'");
}
inline TriggerTopology parse_trigger_topology(std::string_view s) {
  if (s == "clique") return TriggerTopology::clique;
  if (s == "star") return TriggerTopology::star;
  throw InvalidArgument("unknown trigger topology '" + std::string(s) + "'");
}

/// Shape and feature model of an attached trigger subgraph.
///
/// fixed_random triggers reuse one bounded uniform pattern per trigger slot,
/// drawn from `pattern_seed`, so the same trigger can be planted in training
/// and unseen graphs. class_mimic triggers take the empirical target-class
/// mean plus Gaussian noise of scale `noise_scale * B`.
struct TriggerSpec {
  TriggerKind kind = TriggerKind::class_mimic;
  std::size_t trigger_size = 3;
  std::size_t attach_edges = 1;
  TriggerTopology topology = TriggerTopology::clique;
  double noise_scale = 0.1;
  std::uint64_t pattern_seed = 0;

  void validate() const {
    detail::require(trigger_size >= 1, "trigger size must be >= 1");
    detail::require(attach_edges >= 1, "attach_edges must be >= 1");
    detail::require(attach_edges <= trigger_size, "attach_edges cannot exceed the trigger size");
    detail::require(noise_scale >= 0.0, "trigger noise scale must be >= 0");
  }
};

/// A graph with planted triggers and the ground truth needed to score a
/// defense against it.
struct PoisonedGraph {
  Graph graph;
  std::vector<NodeId> poisoned;       ///< V_B, ascending
  std::vector<Edge> trigger_edges;    ///< E_B, canonical
  std::vector<NodeId> trigger_nodes;  ///< ascending
  /// Label of each poisoned node before relabeling, parallel to `poisoned`.
  std::vector<Label> original_labels;
  Label target_class = 0;
  TriggerSpec spec;
  std::uint64_t seed = 0;

  bool is_poisoned(NodeId n) const {
    return std::binary_search(poisoned.begin(), poisoned.end(), n);
  }
  bool is_trigger(NodeId n) const {
    return std::binary_search(trigger_nodes.begin(), trigger_nodes.end(), n);
  }
};

namespace detail {

inline Eigen::VectorXd empirical_class_mean(const Graph& g, Label c) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(g.features().cols());
  std::size_t count = 0;
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    if (g.label(static_cast<NodeId>(i)) == c) {
      sum += g.features().row(static_cast<Eigen::Index>(i)).transpose();
      ++count;
    }
  require(count > 0, "target class has no labeled nodes to imitate");
  return sum / static_cast<double>(count);
}

/// Appends one trigger per target and wires it up. `relabel` flips targets
/// to the target class.
inline PoisonedGraph attach_triggers(const Graph& g, std::vector<NodeId> targets,
                                     const TriggerSpec& spec, Label target_class,
                                     std::uint64_t seed, bool relabel) {
  spec.validate();
  std::sort(targets.begin(), targets.end());
  const auto n0 = g.num_nodes();
  const auto m = g.features().cols();
  const double bound = std::max(g.feature_bound(), 1e-12);
  const auto size = spec.trigger_size;
  const auto n1 = n0 + targets.size() * size;

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n1), m);
  x.topRows(static_cast<Eigen::Index>(n0)) = g.features();
  std::vector<Label> labels(g.labels().begin(), g.labels().end());
  labels.resize(n1, kUnlabeled);

  std::vector<Eigen::VectorXd> patterns;
  Eigen::VectorXd prototype;
  if (spec.kind == TriggerKind::fixed_random) {
    Engine pe(derive_seed(spec.pattern_seed, "trigger-pattern"));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t k = 0; k < size; ++k) {
      Eigen::VectorXd p(m);
      for (Eigen::Index j = 0; j < m; ++j) p(j) = u(pe);
      patterns.push_back(std::move(p));
    }
  } else {
    prototype = empirical_class_mean(g, target_class);
  }

  Engine engine(derive_seed(seed, "trigger-features"));
  std::normal_distribution<double> noise(0.0, spec.noise_scale * bound);
  PoisonedGraph out;
  std::vector<Edge> edges(g.edges().begin(), g.edges().end());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto base = static_cast<NodeId>(n0 + t * size);
    for (std::size_t k = 0; k < size; ++k) {
      const auto id = static_cast<NodeId>(base + static_cast<NodeId>(k));
      out.trigger_nodes.push_back(id);
      if (spec.kind == TriggerKind::fixed_random) {
        x.row(id) = patterns[k].transpose();
      } else {
        for (Eigen::Index j = 0; j < m; ++j)
          x(id, j) = std::clamp(prototype(j) + noise(engine), -bound, bound);
      }
    }
    for (std::size_t a = 0; a < size; ++a)
      for (std::size_t b = a + 1; b < size; ++b)
        if (spec.topology == TriggerTopology::clique || a == 0)
          edges.push_back({static_cast<NodeId>(base + static_cast<NodeId>(a)),
                           static_cast<NodeId>(base + static_cast<NodeId>(b))});
    for (std::size_t a = 0; a < spec.attach_edges; ++a) {
      const Edge e = Edge{targets[t], static_cast<NodeId>(base + static_cast<NodeId>(a))}.canonical();
      edges.push_back(e);
      out.trigger_edges.push_back(e);
    }
    out.original_labels.push_back(labels[static_cast<std::size_t>(targets[t])]);
    if (relabel) labels[static_cast<std::size_t>(targets[t])] = target_class;
  }
  std::sort(out.trigger_edges.begin(), out.trigger_edges.end());
  out.graph = build_graph(n1, std::move(edges), std::move(x), std::move(labels), g.masks(),
                          g.num_classes());
  out.poisoned = std::move(targets);
  out.target_class = target_class;
  out.spec = spec;
  out.seed = seed;
  return out;
}

}  // namespace detail

/// Plants `budget` triggers on labeled nodes outside the target class, chosen
/// uniformly at random, and relabels those nodes to the target class.
inline PoisonedGraph inject_backdoor(const Graph& g, const TriggerSpec& spec, std::size_t budget,
                                     Label target_class, std::uint64_t seed) {
  spec.validate();
  detail::require(target_class >= 0 && static_cast<std::size_t>(target_class) < g.num_classes(),
                  "target class out of range");
  std::vector<NodeId> eligible;
  for (NodeId n : g.mask(masks::kLabeled))
    if (g.label(n) != kUnlabeled && g.label(n) != target_class) eligible.push_back(n);
  detail::require(budget <= eligible.size(),
                  "budget " + std::to_string(budget) + " exceeds the " +
                      std::to_string(eligible.size()) + " eligible labeled nodes");
  Engine engine(derive_seed(seed, "target-selection"));
  std::shuffle(eligible.begin(), eligible.end(), engine);
  eligible.resize(budget);
  return detail::attach_triggers(g, std::move(eligible), spec, target_class, seed, true);
}

/// Attaches triggers to `fraction` of the test nodes of an unseen graph.
/// Labels are left untouched so attack success can be scored.
inline PoisonedGraph poison_unseen(const Graph& g, const TriggerSpec& spec, double fraction,
                                   Label target_class, std::uint64_t seed) {
  detail::require(fraction > 0.0 && fraction <= 1.0, "poison fraction must lie in (0, 1]");
  std::vector<NodeId> test(g.mask(masks::kTest).begin(), g.mask(masks::kTest).end());
  detail::require(!test.empty(), "unseen graph has no test nodes");
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(test.size())));
  detail::require(count > 0, "poison fraction selects no test nodes");
  Engine engine(derive_seed(seed, "unseen-selection"));
  std::shuffle(test.begin(), test.end(), engine);
  test.resize(count);
  return detail::attach_triggers(g, std::move(test), spec, target_class, seed, false);
}

/// The clean test nodes of a poisoned unseen graph (test mask minus V_B).
inline std::vector<NodeId> clean_test_nodes(const PoisonedGraph& pg) {
  std::vector<NodeId> out;
  for (NodeId n : pg.graph.mask(masks::kTest))
    if (!pg.is_poisoned(n)) out.push_back(n);
  return out;
}

/// The poisoned graph with every trigger node (and so every trigger edge)
/// removed. Trigger nodes are appended after the original nodes, so the
/// remaining ids are unchanged. Labels, including flipped ones, are kept.
inline Graph strip_triggers(const PoisonedGraph& pg) {
  const auto n = pg.graph.num_nodes() - pg.trigger_nodes.size();
  detail::require(pg.trigger_nodes.empty() || static_cast<std::size_t>(pg.trigger_nodes.front()) == n,
                  "trigger nodes must follow the original nodes");
  std::vector<NodeId> keep(n);
  for (std::size_t i = 0; i < n; ++i) keep[i] = static_cast<NodeId>(i);
  return induced_subgraph(pg.graph, std::move(keep)).graph;
}

/// The graph before the attack: triggers removed and poisoned labels restored.
inline Graph restore_clean(const PoisonedGraph& pg) {
  detail::require(pg.original_labels.size() == pg.poisoned.size(),
                  "original labels do not match the poisoned node list");
  const Graph stripped = strip_triggers(pg);
  std::vector<Label> labels(stripped.labels().begin(), stripped.labels().end());
  for (std::size_t i = 0; i < pg.poisoned.size(); ++i)
    labels[static_cast<std::size_t>(pg.poisoned[i])] = pg.original_labels[i];
  const auto edges = stripped.edges();
  return build_graph(stripped.num_nodes(), std::vector<Edge>(edges.begin(), edges.end()),
                     stripped.features(), std::move(labels), stripped.masks(),
                     stripped.num_classes());
}

}  // namespace rigbd
