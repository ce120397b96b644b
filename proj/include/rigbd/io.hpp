#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "rigbd/detector.hpp"
#include "rigbd/eval.hpp"
#include "rigbd/gcn.hpp"
#include "rigbd/graph.hpp"
#include "rigbd/synthesis.hpp"

namespace rigbd {

namespace detail {

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error("cannot format number");
  return {buf, end};
}

inline std::string format_hex(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  if (ec != std::errc{}) throw Error("cannot format number");
  return {buf, end};
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

class LineError {
 public:
  LineError(std::string source, std::size_t line) : source_(std::move(source)), line_(line) {}
  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(source_ + ":" + std::to_string(line_) + ": " + what);
  }

 private:
  std::string source_;
  std::size_t line_;
};

template <class T>
T parse_int(std::string_view s, const LineError& at) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) at.fail("bad integer '" + std::string(s) + "'");
  return v;
}

inline double parse_double(std::string_view s, const LineError& at,
                           std::chars_format fmt = std::chars_format::general) {
  double v{};
  if (fmt == std::chars_format::hex) {
    // from_chars does not accept the 0x prefix that to_chars omits anyway;
    // strip it, keeping the sign.
    std::string t(s);
    bool neg = false;
    if (!t.empty() && (t[0] == '-' || t[0] == '+')) {
      neg = t[0] == '-';
      t.erase(0, 1);
    }
    if (t.size() > 1 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) t.erase(0, 2);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v, std::chars_format::hex);
    if (ec != std::errc{} || p != t.data() + t.size()) at.fail("bad number '" + std::string(s) + "'");
    return neg ? -v : v;
  }
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, fmt);
  if (ec != std::errc{} || p != s.data() + s.size()) at.fail("bad number '" + std::string(s) + "'");
  return v;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph text format

/// Writes `nodes N features M classes C`, then E, X, Y and MASK lines.
inline void write_graph(std::ostream& os, const Graph& g) {
  os << "nodes " << g.num_nodes() << " features " << g.feature_dim() << " classes "
     << g.num_classes() << '\n';
  for (const auto& e : g.edges()) os << "E " << e.u << ' ' << e.v << '\n';
  const auto& x = g.features();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    os << "X " << i;
    for (Eigen::Index m = 0; m < x.cols(); ++m) os << ' ' << detail::format_double(x(i, m));
    os << '\n';
  }
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    if (g.labels()[i] != kUnlabeled) os << "Y " << i << ' ' << g.labels()[i] << '\n';
  for (const auto& [name, ids] : g.masks()) {
    os << "MASK " << name;
    for (NodeId n : ids) os << ' ' << n;
    os << '\n';
  }
}

namespace detail {

struct GraphParse {
  Graph graph;
  std::vector<std::string> trailing;  ///< lines after a GROUNDTRUTH marker
  std::size_t trailing_first_line = 0;
};

inline GraphParse parse_graph(std::istream& is, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t n = 0, m = 0, c = 0;
  bool header = false;
  std::vector<Edge> edges;
  Eigen::MatrixXd x;
  std::vector<char> seen_x;
  std::vector<Label> labels;
  MaskSet masks;
  GraphParse out;

  while (std::getline(is, line)) {
    ++lineno;
    const LineError at(source, lineno);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (!header) {
      if (tok.size() != 6 || tok[0] != "nodes" || tok[2] != "features" || tok[4] != "classes")
        at.fail("expected header 'nodes N features M classes C'");
      n = parse_int<std::size_t>(tok[1], at);
      m = parse_int<std::size_t>(tok[3], at);
      c = parse_int<std::size_t>(tok[5], at);
      x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
      seen_x.assign(n, 0);
      labels.assign(n, kUnlabeled);
      header = true;
      continue;
    }
    const auto kind = tok[0];
    auto node = [&](std::string_view s) {
      const auto v = parse_int<std::int64_t>(s, at);
      if (v < 0 || static_cast<std::size_t>(v) >= n) at.fail("node id out of range");
      return static_cast<NodeId>(v);
    };
    if (kind == "E") {
      if (tok.size() != 3) at.fail("E needs two endpoints");
      edges.push_back({node(tok[1]), node(tok[2])});
    } else if (kind == "X") {
      if (tok.size() != m + 2) at.fail("X row has " + std::to_string(tok.size() - 2) + " values, expected " + std::to_string(m));
      const NodeId i = node(tok[1]);
      if (seen_x[static_cast<std::size_t>(i)]) at.fail("duplicate X row");
      seen_x[static_cast<std::size_t>(i)] = 1;
      for (std::size_t k = 0; k < m; ++k)
        x(i, static_cast<Eigen::Index>(k)) = parse_double(tok[k + 2], at);
    } else if (kind == "Y") {
      if (tok.size() != 3) at.fail("Y needs a node and a label");
      const auto y = parse_int<Label>(tok[2], at);
      if (y < 0 || (c > 0 && static_cast<std::size_t>(y) >= c)) at.fail("label out of range");
      labels[static_cast<std::size_t>(node(tok[1]))] = y;
    } else if (kind == "MASK") {
      if (tok.size() < 2) at.fail("MASK needs a name");
      auto& ids = masks[std::string(tok[1])];
      for (std::size_t k = 2; k < tok.size(); ++k) ids.push_back(node(tok[k]));
    } else if (kind == "GROUNDTRUTH") {
      out.trailing_first_line = lineno;
      out.trailing.push_back(line);
      while (std::getline(is, line)) out.trailing.push_back(line);
      break;
    } else {
      at.fail("unknown record '" + std::string(kind) + "'");
    }
  }
  if (!header) throw IoError(source + ": missing header");
  if (m > 0)
    for (std::size_t i = 0; i < n; ++i)
      if (!seen_x[i]) throw IoError(source + ": node " + std::to_string(i) + " has no X row");
  try {
    out.graph = build_graph(n, std::move(edges), std::move(x), std::move(labels), std::move(masks), c);
  } catch (const InvalidArgument& e) {
    throw IoError(source + ": " + e.what());
  }
  return out;
}

}  // namespace detail

inline Graph read_graph(std::istream& is, const std::string& source = "<graph>") {
  auto parsed = detail::parse_graph(is, source);
  if (!parsed.trailing.empty())
    throw IoError(source + ": unexpected GROUNDTRUTH section in a plain graph file");
  return std::move(parsed.graph);
}

inline void save_graph(const std::string& path, const Graph& g) {
  auto out = detail::open_out(path);
  write_graph(out, g);
  if (!out) throw IoError("failed writing " + path);
}

inline Graph load_graph(const std::string& path) {
  auto in = detail::open_in(path);
  return read_graph(in, path);
}

// ---------------------------------------------------------------------------
// Ground truth of a poisoned graph

/// The GROUNDTRUTH section: target class, provenance, V_B, trigger ids, E_B.
inline void write_groundtruth(std::ostream& os, const PoisonedGraph& pg) {
  os << "GROUNDTRUTH\n";
  os << "TARGET " << pg.target_class << '\n';
  os << "SPEC " << to_string(pg.spec.kind) << ' ' << pg.spec.trigger_size << ' '
     << pg.spec.attach_edges << ' ' << to_string(pg.spec.topology) << ' '
     << detail::format_double(pg.spec.noise_scale) << ' ' << pg.spec.pattern_seed << '\n';
  os << "SEED " << pg.seed << '\n';
  os << "POISONED";
  for (NodeId n : pg.poisoned) os << ' ' << n;
  if (!pg.original_labels.empty()) {
    os << "\nORIGINAL_LABELS";
    for (Label l : pg.original_labels) os << ' ' << l;
  }
  os << "\nTRIGGER_NODES";
  for (NodeId n : pg.trigger_nodes) os << ' ' << n;
  os << '\n';
  for (const auto& e : pg.trigger_edges) os << "TRIGGER_EDGE " << e.u << ' ' << e.v << '\n';
}

/// Graph text followed by its GROUNDTRUTH section.
inline void write_poisoned(std::ostream& os, const PoisonedGraph& pg) {
  write_graph(os, pg.graph);
  write_groundtruth(os, pg);
}

namespace detail {

inline void parse_groundtruth(const std::vector<std::string>& lines, std::size_t first_line,
                              const std::string& source, PoisonedGraph& pg) {
  bool marker = false, target = false;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const LineError at(source, first_line + k);
    const auto tok = split_ws(lines[k]);
    if (tok.empty()) continue;
    const auto kind = tok[0];
    auto node = [&](std::string_view s) {
      const auto v = parse_int<std::int64_t>(s, at);
      if (v < 0 || static_cast<std::size_t>(v) >= pg.graph.num_nodes()) at.fail("node id out of range");
      return static_cast<NodeId>(v);
    };
    if (kind == "GROUNDTRUTH") {
      marker = true;
    } else if (!marker) {
      at.fail("expected GROUNDTRUTH");
    } else if (kind == "TARGET") {
      if (tok.size() != 2) at.fail("TARGET needs one class");
      pg.target_class = parse_int<Label>(tok[1], at);
      target = true;
    } else if (kind == "SPEC") {
      if (tok.size() != 7) at.fail("SPEC needs six fields");
      try {
        pg.spec.kind = parse_trigger_kind(tok[1]);
        pg.spec.topology = parse_trigger_topology(tok[4]);
      } catch (const InvalidArgument& e) {
        at.fail(e.what());
      }
      pg.spec.trigger_size = parse_int<std::size_t>(tok[2], at);
      pg.spec.attach_edges = parse_int<std::size_t>(tok[3], at);
      pg.spec.noise_scale = parse_double(tok[5], at);
      pg.spec.pattern_seed = parse_int<std::uint64_t>(tok[6], at);
    } else if (kind == "SEED") {
      if (tok.size() != 2) at.fail("SEED needs one value");
      pg.seed = parse_int<std::uint64_t>(tok[1], at);
    } else if (kind == "POISONED") {
      for (std::size_t i = 1; i < tok.size(); ++i) pg.poisoned.push_back(node(tok[i]));
    } else if (kind == "ORIGINAL_LABELS") {
      for (std::size_t i = 1; i < tok.size(); ++i) pg.original_labels.push_back(parse_int<Label>(tok[i], at));
    } else if (kind == "TRIGGER_NODES") {
      for (std::size_t i = 1; i < tok.size(); ++i) pg.trigger_nodes.push_back(node(tok[i]));
    } else if (kind == "TRIGGER_EDGE") {
      if (tok.size() != 3) at.fail("TRIGGER_EDGE needs two endpoints");
      const Edge e = Edge{node(tok[1]), node(tok[2])}.canonical();
      if (!pg.graph.has_edge(e)) at.fail("trigger edge is not in the graph");
      pg.trigger_edges.push_back(e);
    } else {
      at.fail("unknown ground-truth record '" + std::string(kind) + "'");
    }
  }
  if (!marker || !target) throw IoError(source + ": incomplete GROUNDTRUTH section");
  if (!pg.original_labels.empty() && pg.original_labels.size() != pg.poisoned.size())
    throw IoError(source + ": ORIGINAL_LABELS does not match POISONED");
}

}  // namespace detail

inline PoisonedGraph read_poisoned(std::istream& is, const std::string& source = "<poisoned>") {
  auto parsed = detail::parse_graph(is, source);
  PoisonedGraph pg;
  pg.graph = std::move(parsed.graph);
  detail::parse_groundtruth(parsed.trailing, parsed.trailing_first_line, source, pg);
  return pg;
}

/// Reads a graph and a separate ground-truth file.
inline PoisonedGraph read_poisoned(std::istream& graph_is, std::istream& truth_is,
                                   const std::string& source = "<poisoned>") {
  PoisonedGraph pg;
  pg.graph = read_graph(graph_is, source);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(truth_is, line)) lines.push_back(line);
  detail::parse_groundtruth(lines, 1, source + " (ground truth)", pg);
  return pg;
}

inline void save_poisoned(const std::string& graph_path, const std::string& truth_path,
                          const PoisonedGraph& pg) {
  save_graph(graph_path, pg.graph);
  auto out = detail::open_out(truth_path);
  write_groundtruth(out, pg);
  if (!out) throw IoError("failed writing " + truth_path);
}

inline PoisonedGraph load_poisoned(const std::string& graph_path, const std::string& truth_path) {
  auto g = detail::open_in(graph_path);
  auto t = detail::open_in(truth_path);
  return read_poisoned(g, t, graph_path);
}

// ---------------------------------------------------------------------------
// LINQS citation format (cora.content / cora.cites)

/// Loads `<id> <f_1> ... <f_M> <class>` rows and `<cited> <citing>` pairs.
///
/// Nodes are numbered in content order; class names are numbered in sorted
/// order. Citations naming unknown papers are skipped, as in the usual
/// Planetoid preprocessing. No masks are assigned.
inline Graph read_linqs(std::istream& content, std::istream& cites,
                        const std::string& source = "<linqs>") {
  std::map<std::string, NodeId, std::less<>> ids;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> class_names;
  std::string line;
  std::size_t lineno = 0, m = 0;
  while (std::getline(content, line)) {
    ++lineno;
    const detail::LineError at(source + " content", lineno);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() < 2) at.fail("row needs an id and a class");
    if (rows.empty()) m = tok.size() - 2;
    if (tok.size() - 2 != m) at.fail("ragged feature row");
    if (!ids.emplace(std::string(tok[0]), static_cast<NodeId>(rows.size())).second)
      at.fail("duplicate paper id");
    std::vector<double> r(m);
    for (std::size_t k = 0; k < m; ++k) r[k] = detail::parse_double(tok[k + 1], at);
    rows.push_back(std::move(r));
    class_names.emplace_back(tok.back());
  }
  std::vector<std::string> sorted = class_names;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<Label> labels;
  for (const auto& c : class_names)
    labels.push_back(static_cast<Label>(std::lower_bound(sorted.begin(), sorted.end(), c) - sorted.begin()));

  std::vector<Edge> edges;
  lineno = 0;
  while (std::getline(cites, line)) {
    ++lineno;
    const detail::LineError at(source + " cites", lineno);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 2) at.fail("citation needs two ids");
    auto a = ids.find(tok[0]), b = ids.find(tok[1]);
    if (a == ids.end() || b == ids.end()) continue;
    edges.push_back({a->second, b->second});
  }
  const auto n = rows.size();
  return build_graph(n, std::move(edges), std::move(rows), std::move(labels), {}, sorted.size());
}

inline Graph load_linqs(const std::string& content_path, const std::string& cites_path) {
  auto c = detail::open_in(content_path);
  auto e = detail::open_in(cites_path);
  return read_linqs(c, e, content_path);
}

/// Random labeled/test masks over the labeled nodes of `g`.
inline Graph assign_split(const Graph& g, double labeled_fraction, std::uint64_t seed) {
  detail::require(labeled_fraction > 0.0 && labeled_fraction < 1.0, "labeled fraction must lie in (0, 1)");
  std::vector<NodeId> nodes;
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    if (g.labels()[i] != kUnlabeled) nodes.push_back(static_cast<NodeId>(i));
  detail::require(nodes.size() >= 2, "need at least two labeled nodes to split");
  Engine engine(derive_seed(seed, "split"));
  std::shuffle(nodes.begin(), nodes.end(), engine);
  auto k = static_cast<std::size_t>(std::lround(labeled_fraction * static_cast<double>(nodes.size())));
  k = std::clamp<std::size_t>(k, 1, nodes.size() - 1);
  MaskSet masks;
  masks[masks::kLabeled].assign(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(k));
  masks[masks::kTest].assign(nodes.begin() + static_cast<std::ptrdiff_t>(k), nodes.end());
  std::vector<Edge> edges(g.edges().begin(), g.edges().end());
  std::vector<Label> labels(g.labels().begin(), g.labels().end());
  return build_graph(g.num_nodes(), std::move(edges), g.features(), std::move(labels), std::move(masks),
                     g.num_classes());
}

// ---------------------------------------------------------------------------
// Model checkpoints

inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint: version, norm mode, seed, then each weight matrix as
/// `W rows cols` followed by row-major hex floats. Round-trips bitwise.
inline void write_checkpoint(std::ostream& os, const GcnModel& model) {
  os << "rigbd-checkpoint " << kCheckpointVersion << '\n';
  os << "norm_mode " << to_string(model.norm_mode) << '\n';
  os << "seed " << model.seed << '\n';
  os << "layers " << model.weights.size() << '\n';
  for (const auto& w : model.weights) {
    os << "W " << w.rows() << ' ' << w.cols() << '\n';
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (j) os << ' ';
        os << detail::format_hex(w(i, j));
      }
      os << '\n';
    }
  }
}

inline GcnModel read_checkpoint(std::istream& is, const std::string& source = "<checkpoint>") {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](const char* what) {
    while (std::getline(is, line)) {
      ++lineno;
      auto tok = detail::split_ws(line);
      if (!tok.empty()) return tok;
    }
    throw IoError(source + ": truncated checkpoint, expected " + what);
  };
  auto at = [&] { return detail::LineError(source, lineno); };

  auto tok = next("version");
  if (tok.size() != 2 || tok[0] != "rigbd-checkpoint") at().fail("not a checkpoint");
  const auto version = detail::parse_int<int>(tok[1], at());
  if (version != kCheckpointVersion) at().fail("unsupported checkpoint version " + std::to_string(version));
  GcnModel model;
  tok = next("norm_mode");
  if (tok.size() != 2 || tok[0] != "norm_mode") at().fail("expected norm_mode");
  try {
    model.norm_mode = parse_norm_mode(tok[1]);
  } catch (const InvalidArgument& e) {
    at().fail(e.what());
  }
  tok = next("seed");
  if (tok.size() != 2 || tok[0] != "seed") at().fail("expected seed");
  model.seed = detail::parse_int<std::uint64_t>(tok[1], at());
  tok = next("layers");
  if (tok.size() != 2 || tok[0] != "layers") at().fail("expected layers");
  const auto layers = detail::parse_int<std::size_t>(tok[1], at());
  for (std::size_t l = 0; l < layers; ++l) {
    tok = next("W");
    if (tok.size() != 3 || tok[0] != "W") at().fail("expected 'W rows cols'");
    const auto r = detail::parse_int<Eigen::Index>(tok[1], at());
    const auto c = detail::parse_int<Eigen::Index>(tok[2], at());
    Matrix w(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      tok = next("weight row");
      if (static_cast<Eigen::Index>(tok.size()) != c) at().fail("weight row has the wrong length");
      for (Eigen::Index j = 0; j < c; ++j)
        w(i, j) = detail::parse_double(tok[static_cast<std::size_t>(j)], at(), std::chars_format::hex);
    }
    model.weights.push_back(std::move(w));
  }
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    throw IoError(source + ": " + e.what());
  }
  return model;
}

inline void save_checkpoint(const std::string& path, const GcnModel& model) {
  auto out = detail::open_out(path);
  write_checkpoint(out, model);
  if (!out) throw IoError("failed writing " + path);
}

inline GcnModel load_checkpoint(const std::string& path) {
  auto in = detail::open_in(path);
  return read_checkpoint(in, path);
}

// ---------------------------------------------------------------------------
// Reports

struct Histogram {
  std::vector<double> edges;  ///< bins + 1 ascending edges
  std::vector<std::size_t> counts;
};

/// Equal-width histogram of the scores of `nodes`; the last bin is closed.
inline Histogram histogram(std::span<const double> scores, std::span<const NodeId> nodes, std::size_t bins) {
  detail::require(bins >= 1, "need at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (nodes.empty()) {
    h.edges.assign(bins + 1, 0.0);
    return h;
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (NodeId n : nodes) {
    lo = std::min(lo, scores[static_cast<std::size_t>(n)]);
    hi = std::max(hi, scores[static_cast<std::size_t>(n)]);
  }
  if (hi == lo) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
  for (NodeId n : nodes) {
    auto b = static_cast<std::size_t>((scores[static_cast<std::size_t>(n)] - lo) / width);
    h.counts[std::min(b, bins - 1)] += 1;
  }
  return h;
}

inline nlohmann::json detection_json(const DetectionResult& det, const VarianceScores& scores,
                                     std::span<const NodeId> labeled, std::size_t bins = 20) {
  nlohmann::json j;
  j["target_class"] = det.target_class;
  j["threshold"] = det.threshold;
  j["candidates"] = det.candidates;
  j["fallback"] = det.fallback;
  j["order"] = det.order;
  const auto h = histogram(scores.scores, labeled, bins);
  j["scores_histogram"] = {{"edges", h.edges}, {"counts", h.counts}};
  j["drop_spec"] = {{"beta", scores.drop_spec.beta},
                    {"iterations", scores.drop_spec.iterations},
                    {"seed", scores.drop_spec.seed}};
  j["model_id"] = scores.model_id;
  return j;
}

inline DetectionResult detection_from_json(const nlohmann::json& j) {
  try {
    DetectionResult d;
    d.target_class = j.at("target_class").get<Label>();
    d.threshold = j.at("threshold").get<double>();
    d.candidates = j.at("candidates").get<std::vector<NodeId>>();
    d.fallback = j.at("fallback").get<bool>();
    d.order = j.at("order").get<std::vector<NodeId>>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad detection report: ") + e.what());
  }
}

/// One row per node: id, score, label, ground-truth poisoned flag.
inline void write_scores_tsv(std::ostream& os, const Graph& g, std::span<const double> scores,
                             std::span<const NodeId> poisoned) {
  std::set<NodeId> bad(poisoned.begin(), poisoned.end());
  os << "node_id\tscore\tlabel\tis_ground_truth_poisoned\n";
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    os << i << '\t' << detail::format_double(scores[i]) << '\t' << g.labels()[i] << '\t'
       << (bad.count(static_cast<NodeId>(i)) ? 1 : 0) << '\n';
}

inline nlohmann::json metrics_json(const Metrics& m) {
  return {{"asr", m.asr},
          {"clean_acc", m.clean_acc},
          {"recall", m.recall},
          {"precision", m.precision},
          {"has_detection", m.has_detection},
          {"asr_count", m.asr_count},
          {"clean_count", m.clean_count},
          {"defense_ms", m.defense_ms}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  try {
    Metrics m;
    m.asr = j.at("asr").get<double>();
    m.clean_acc = j.at("clean_acc").get<double>();
    m.recall = j.at("recall").get<double>();
    m.precision = j.at("precision").get<double>();
    m.has_detection = j.at("has_detection").get<bool>();
    m.asr_count = j.at("asr_count").get<std::size_t>();
    m.clean_count = j.at("clean_count").get<std::size_t>();
    m.defense_ms = j.at("defense_ms").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad metrics report: ") + e.what());
  }
}

inline void write_metrics_csv(std::ostream& os, const Metrics& m) {
  os << "asr,clean_acc,recall,precision,has_detection,asr_count,clean_count,defense_ms\n";
  os << detail::format_double(m.asr) << ',' << detail::format_double(m.clean_acc) << ','
     << detail::format_double(m.recall) << ',' << detail::format_double(m.precision) << ','
     << (m.has_detection ? 1 : 0) << ',' << m.asr_count << ',' << m.clean_count << ','
     << detail::format_double(m.defense_ms) << '\n';
}

struct SweepRow {
  std::size_t iterations = 0;
  double beta = 0.0;
  Metrics metrics;
};

/// Long-format sweep table: K, beta, asr, acc, recall, precision.
inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "K,beta,asr,acc,recall,precision\n";
  for (const auto& r : rows)
    os << r.iterations << ',' << detail::format_double(r.beta) << ','
       << detail::format_double(r.metrics.asr) << ',' << detail::format_double(r.metrics.clean_acc) << ','
       << detail::format_double(r.metrics.recall) << ',' << detail::format_double(r.metrics.precision) << '\n';
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

inline nlohmann::json read_json(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace rigbd
