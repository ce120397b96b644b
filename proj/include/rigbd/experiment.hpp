#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rigbd/eval.hpp"
#include "rigbd/io.hpp"
#include "rigbd/robust.hpp"
#include "rigbd/synthesis.hpp"
#include "rigbd/theorems.hpp"

namespace rigbd {

enum class DatasetKind { synthetic, graph_file, linqs };
enum class DefenseKind { rigbd, per_edge, prune, none };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synthetic;
  SyntheticConfig synthetic;
  std::string path;     ///< graph_file
  std::string content;  ///< linqs .content
  std::string cites;    ///< linqs .cites
  /// Used for graph_file / linqs inputs that carry no labeled/test masks.
  double labeled_fraction = 0.8;
};

struct AttackConfig {
  TriggerSpec trigger;
  std::size_t budget = 40;
  Label target_class = 0;
  /// Share of the unseen test nodes that receive a trigger.
  double unseen_fraction = 0.5;
};

struct DefenseConfig {
  DefenseKind method = DefenseKind::rigbd;
  double prune_threshold = 0.2;
  RobustWeighting weighting = RobustWeighting::sum;
  double candidate_keep_fraction = 1.0;
  std::size_t histogram_bins = 20;
};

struct SweepConfig {
  std::vector<std::size_t> iterations{2, 5, 25, 50, 100};
  std::vector<double> betas{0.1, 0.3, 0.5, 0.7, 0.9};
};

struct TheoremConfig {
  std::size_t num_nodes = 2000;
  std::size_t regular_degree = 10;
  std::vector<double> betas{0.3, 0.5, 0.7};
  std::size_t replications = 5000;
  double high_beta = 0.9;
  std::size_t high_beta_replications = 20000;
  std::vector<double> t_grid{0.0, 0.5, 1.0, 2.0, 4.0, 8.0};
  std::size_t low_degree = 4;
  std::size_t high_degree = 16;
  std::size_t theorem3_iterations = 20;
  double theorem3_beta = 0.5;
  std::size_t theorem3_replications = 10000;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  AttackConfig attack;
  DropSpec drop;
  TrainConfig train;
  DefenseConfig defense;
  SweepConfig sweep;
  TheoremConfig theorems;
  std::string output_dir = "rigbd-out";
  std::uint64_t global_seed = 0;
  /// 1 gives the deterministic single-threaded reduction.
  std::size_t threads = 1;

  void validate() const {
    if (dataset.kind == DatasetKind::synthetic) dataset.synthetic.validate();
    if (dataset.kind == DatasetKind::graph_file)
      detail::require(!dataset.path.empty(), "dataset.path is required for graph_file");
    if (dataset.kind == DatasetKind::linqs)
      detail::require(!dataset.content.empty() && !dataset.cites.empty(),
                      "dataset.content and dataset.cites are required for linqs");
    detail::require(dataset.labeled_fraction > 0.0 && dataset.labeled_fraction < 1.0,
                    "dataset.labeled_fraction must lie in (0, 1)");
    attack.trigger.validate();
    detail::require(attack.budget >= 1, "attack.budget must be >= 1");
    detail::require(attack.target_class >= 0, "attack.target_class must be >= 0");
    detail::require(attack.unseen_fraction > 0.0 && attack.unseen_fraction <= 1.0,
                    "attack.unseen_fraction must lie in (0, 1]");
    drop.validate();
    train.validate();
    detail::require(defense.prune_threshold >= -1.0 && defense.prune_threshold <= 1.0,
                    "defense.prune_threshold must lie in [-1, 1]");
    detail::require(defense.candidate_keep_fraction > 0.0 && defense.candidate_keep_fraction <= 1.0,
                    "defense.candidate_keep_fraction must lie in (0, 1]");
    detail::require(defense.histogram_bins >= 1, "defense.histogram_bins must be >= 1");
    detail::require(!sweep.iterations.empty() && !sweep.betas.empty(), "sweep grid is empty");
    for (auto k : sweep.iterations) detail::require(k >= 1, "sweep iterations must be >= 1");
    for (auto b : sweep.betas) detail::require(b >= 0.0 && b <= 1.0, "sweep betas must lie in [0, 1]");
    detail::require(theorems.replications >= 1 && theorems.high_beta_replications >= 1 &&
                        theorems.theorem3_replications >= 1,
                    "theorem replications must be >= 1");
    detail::require(theorems.theorem3_iterations >= 1, "theorems.theorem3_iterations must be >= 1");
    detail::require(!output_dir.empty(), "output_dir must not be empty");
    detail::require(threads >= 1, "threads must be >= 1");
  }
};

inline constexpr const char* kOutputRootEnv = "RIGBD_OUTPUT_ROOT";

// ---------------------------------------------------------------------------
// Config (de)serialization. Unknown keys are rejected.

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw InvalidArgument("bad value for " + path_ + "." + key);
    }
  }

  template <class T, class Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) out = parse(s, path_ + "." + key);
  }

  ObjectReader child(const char* key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidArgument("unknown config key " + path_ + "." + k);
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline DatasetKind parse_dataset_kind(const std::string& s, const std::string& key) {
  if (s == "synthetic") return DatasetKind::synthetic;
  if (s == "graph_file") return DatasetKind::graph_file;
  if (s == "linqs") return DatasetKind::linqs;
  throw InvalidArgument("unknown " + key + " '" + s + "'");
}
inline const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::synthetic: return "synthetic";
    case DatasetKind::graph_file: return "graph_file";
    case DatasetKind::linqs: return "linqs";
  }
  return "";
}
inline DefenseKind parse_defense_kind(const std::string& s, const std::string& key) {
  if (s == "rigbd") return DefenseKind::rigbd;
  if (s == "per_edge") return DefenseKind::per_edge;
  if (s == "prune") return DefenseKind::prune;
  if (s == "none") return DefenseKind::none;
  throw InvalidArgument("unknown " + key + " '" + s + "'");
}
inline const char* to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::rigbd: return "rigbd";
    case DefenseKind::per_edge: return "per_edge";
    case DefenseKind::prune: return "prune";
    case DefenseKind::none: return "none";
  }
  return "";
}
inline Topology parse_topology(const std::string& s, const std::string& key) {
  if (s == "sbm") return Topology::sbm;
  if (s == "regular") return Topology::regular;
  throw InvalidArgument("unknown " + key + " '" + s + "'");
}
inline RobustWeighting parse_weighting(const std::string& s, const std::string& key) {
  if (s == "sum") return RobustWeighting::sum;
  if (s == "per_term_mean") return RobustWeighting::per_term_mean;
  throw InvalidArgument("unknown " + key + " '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::ObjectReader root(j, "");
  {
    auto d = root.child("dataset");
    d.get_enum("kind", c.dataset.kind, detail::parse_dataset_kind);
    d.get("path", c.dataset.path);
    d.get("content", c.dataset.content);
    d.get("cites", c.dataset.cites);
    d.get("labeled_fraction", c.dataset.labeled_fraction);
    auto s = d.child("synthetic");
    auto& sc = c.dataset.synthetic;
    s.get("num_nodes", sc.num_nodes);
    s.get("num_classes", sc.num_classes);
    s.get("feature_dim", sc.feature_dim);
    s.get("class_mean_separation", sc.class_mean_separation);
    s.get("feature_base", sc.feature_base);
    s.get("feature_noise", sc.feature_noise);
    s.get("feature_bound", sc.feature_bound);
    s.get_enum("topology", sc.topology, detail::parse_topology);
    s.get("p_intra", sc.p_intra);
    s.get("p_inter", sc.p_inter);
    s.get("regular_degree", sc.regular_degree);
    s.get("regular_homophilous", sc.regular_homophilous);
    s.get("labeled_fraction", sc.labeled_fraction);
    s.get("split_preserving", sc.split_preserving);
    s.finish();
    d.finish();
  }
  {
    auto a = root.child("attack");
    a.get("budget", c.attack.budget);
    a.get("target_class", c.attack.target_class);
    a.get("unseen_fraction", c.attack.unseen_fraction);
    auto t = a.child("trigger");
    auto& ts = c.attack.trigger;
    t.get_enum("kind", ts.kind, [](const std::string& s, const std::string&) { return parse_trigger_kind(s); });
    t.get("size", ts.trigger_size);
    t.get("attach_edges", ts.attach_edges);
    t.get_enum("topology", ts.topology,
               [](const std::string& s, const std::string&) { return parse_trigger_topology(s); });
    t.get("noise_scale", ts.noise_scale);
    t.get("pattern_seed", ts.pattern_seed);
    t.finish();
    a.finish();
  }
  {
    auto d = root.child("drop");
    d.get("beta", c.drop.beta);
    d.get("iterations", c.drop.iterations);
    d.finish();
  }
  {
    auto t = root.child("train");
    t.get("learning_rate", c.train.learning_rate);
    t.get("weight_decay", c.train.weight_decay);
    t.get("max_epochs", c.train.max_epochs);
    t.get("patience", c.train.patience);
    t.get("hidden_dim", c.train.hidden_dim);
    t.get("convergence_tol", c.train.convergence_tol);
    t.get("validation_fraction", c.train.validation_fraction);
    t.finish();
  }
  {
    auto d = root.child("defense");
    d.get_enum("method", c.defense.method, detail::parse_defense_kind);
    d.get("prune_threshold", c.defense.prune_threshold);
    d.get_enum("weighting", c.defense.weighting, detail::parse_weighting);
    d.get("candidate_keep_fraction", c.defense.candidate_keep_fraction);
    d.get("histogram_bins", c.defense.histogram_bins);
    d.finish();
  }
  {
    auto s = root.child("sweep");
    s.get("iterations", c.sweep.iterations);
    s.get("betas", c.sweep.betas);
    s.finish();
  }
  {
    auto t = root.child("theorems");
    auto& tc = c.theorems;
    t.get("num_nodes", tc.num_nodes);
    t.get("regular_degree", tc.regular_degree);
    t.get("betas", tc.betas);
    t.get("replications", tc.replications);
    t.get("high_beta", tc.high_beta);
    t.get("high_beta_replications", tc.high_beta_replications);
    t.get("t_grid", tc.t_grid);
    t.get("low_degree", tc.low_degree);
    t.get("high_degree", tc.high_degree);
    t.get("theorem3_iterations", tc.theorem3_iterations);
    t.get("theorem3_beta", tc.theorem3_beta);
    t.get("theorem3_replications", tc.theorem3_replications);
    t.finish();
  }
  root.get("output_dir", c.output_dir);
  root.get("global_seed", c.global_seed);
  root.get("threads", c.threads);
  root.finish();
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& sc = c.dataset.synthetic;
  const auto& ts = c.attack.trigger;
  const auto& tc = c.theorems;
  nlohmann::json j;
  j["dataset"] = {{"kind", detail::to_string(c.dataset.kind)},
                  {"path", c.dataset.path},
                  {"content", c.dataset.content},
                  {"cites", c.dataset.cites},
                  {"labeled_fraction", c.dataset.labeled_fraction},
                  {"synthetic",
                   {{"num_nodes", sc.num_nodes},
                    {"num_classes", sc.num_classes},
                    {"feature_dim", sc.feature_dim},
                    {"class_mean_separation", sc.class_mean_separation},
                    {"feature_base", sc.feature_base},
                    {"feature_noise", sc.feature_noise},
                    {"feature_bound", sc.feature_bound},
                    {"topology", sc.topology == Topology::sbm ? "sbm" : "regular"},
                    {"p_intra", sc.p_intra},
                    {"p_inter", sc.p_inter},
                    {"regular_degree", sc.regular_degree},
                    {"regular_homophilous", sc.regular_homophilous},
                    {"labeled_fraction", sc.labeled_fraction},
                    {"split_preserving", sc.split_preserving}}}};
  j["attack"] = {{"budget", c.attack.budget},
                 {"target_class", c.attack.target_class},
                 {"unseen_fraction", c.attack.unseen_fraction},
                 {"trigger",
                  {{"kind", to_string(ts.kind)},
                   {"size", ts.trigger_size},
                   {"attach_edges", ts.attach_edges},
                   {"topology", to_string(ts.topology)},
                   {"noise_scale", ts.noise_scale},
                   {"pattern_seed", ts.pattern_seed}}}};
  j["drop"] = {{"beta", c.drop.beta}, {"iterations", c.drop.iterations}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"max_epochs", c.train.max_epochs},
                {"patience", c.train.patience},
                {"hidden_dim", c.train.hidden_dim},
                {"convergence_tol", c.train.convergence_tol},
                {"validation_fraction", c.train.validation_fraction}};
  j["defense"] = {{"method", detail::to_string(c.defense.method)},
                  {"prune_threshold", c.defense.prune_threshold},
                  {"weighting", c.defense.weighting == RobustWeighting::sum ? "sum" : "per_term_mean"},
                  {"candidate_keep_fraction", c.defense.candidate_keep_fraction},
                  {"histogram_bins", c.defense.histogram_bins}};
  j["sweep"] = {{"iterations", c.sweep.iterations}, {"betas", c.sweep.betas}};
  j["theorems"] = {{"num_nodes", tc.num_nodes},
                   {"regular_degree", tc.regular_degree},
                   {"betas", tc.betas},
                   {"replications", tc.replications},
                   {"high_beta", tc.high_beta},
                   {"high_beta_replications", tc.high_beta_replications},
                   {"t_grid", tc.t_grid},
                   {"low_degree", tc.low_degree},
                   {"high_degree", tc.high_degree},
                   {"theorem3_iterations", tc.theorem3_iterations},
                   {"theorem3_beta", tc.theorem3_beta},
                   {"theorem3_replications", tc.theorem3_replications}};
  j["output_dir"] = c.output_dir;
  j["global_seed"] = c.global_seed;
  j["threads"] = c.threads;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Seeds and paths

/// All seeds of a run, derived from the global seed.
struct RunSeeds {
  std::uint64_t data = 0;
  std::uint64_t split = 0;
  std::uint64_t attack = 0;
  std::uint64_t unseen = 0;
  std::uint64_t train = 0;
  std::uint64_t drop = 0;
};

inline RunSeeds run_seeds(std::uint64_t global_seed) {
  return {global_seed, global_seed, global_seed, global_seed + 1, global_seed, global_seed};
}

/// The configured output directory, placed under $RIGBD_OUTPUT_ROOT when that
/// is set and the directory is relative.
inline std::filesystem::path output_path(const ExperimentConfig& c) {
  std::filesystem::path p(c.output_dir);
  if (p.is_relative())
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0')
      p = std::filesystem::path(root) / p;
  return p;
}

inline std::filesystem::path ensure_output_dir(const ExperimentConfig& c) {
  const auto p = output_path(c);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p))
    throw IoError("cannot create output directory " + p.string());
  return p;
}

inline void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::is_regular_file(p))
    throw IoError(std::string("missing ") + what + " " + p.string());
}

// ---------------------------------------------------------------------------
// Pipeline stages (in memory)

/// The full dataset with labeled/test masks.
inline Graph load_dataset(const ExperimentConfig& c) {
  const auto seeds = run_seeds(c.global_seed);
  switch (c.dataset.kind) {
    case DatasetKind::synthetic: {
      auto sc = c.dataset.synthetic;
      sc.seed = seeds.data;
      return gen_synthetic_graph(sc);
    }
    case DatasetKind::graph_file: {
      auto g = load_graph(c.dataset.path);
      if (g.mask(masks::kLabeled).empty() || g.mask(masks::kTest).empty())
        g = assign_split(g, c.dataset.labeled_fraction, seeds.split);
      return g;
    }
    case DatasetKind::linqs:
      return assign_split(load_linqs(c.dataset.content, c.dataset.cites), c.dataset.labeled_fraction,
                          seeds.split);
  }
  throw InvalidArgument("unknown dataset kind");
}

struct AttackOutputs {
  PoisonedGraph train;
  PoisonedGraph unseen;
};

inline AttackOutputs run_attack(const ExperimentConfig& c) {
  const auto seeds = run_seeds(c.global_seed);
  const auto g = load_dataset(c);
  const auto split = split_inductive(g);
  std::set<NodeId> a(split.train.parent_ids.begin(), split.train.parent_ids.end());
  for (NodeId n : split.unseen.parent_ids)
    detail::require(!a.count(n), "training and unseen graphs share a node");
  detail::require(static_cast<std::size_t>(c.attack.target_class) < g.num_classes(),
                  "attack.target_class out of range");
  AttackOutputs out;
  out.train = inject_backdoor(split.train.graph, c.attack.trigger, c.attack.budget, c.attack.target_class,
                              seeds.attack);
  out.unseen = poison_unseen(split.unseen.graph, c.attack.trigger, c.attack.unseen_fraction,
                             c.attack.target_class, seeds.unseen);
  return out;
}

inline DropSpec run_drop(const ExperimentConfig& c) {
  DropSpec d = c.drop;
  d.seed = run_seeds(c.global_seed).drop;
  return d;
}

inline TrainConfig run_train(const ExperimentConfig& c) {
  TrainConfig t = c.train;
  t.seed = run_seeds(c.global_seed).train;
  return t;
}

inline RigbdOptions run_options(const ExperimentConfig& c) {
  RigbdOptions o;
  o.weighting = c.defense.weighting;
  o.candidate_keep_fraction = c.defense.candidate_keep_fraction;
  o.scoring.threads = c.threads;
  return o;
}

/// Plain training of the final architecture on all labeled nodes.
inline TrainResult train_plain(const Graph& g, const TrainConfig& config) {
  return train(g, g.mask(masks::kLabeled), stage_config(config, "final"), NormMode::with_self_loops);
}

/// Metrics of `model` on the unseen graph, with detection quality when a
/// detection result is given.
inline Metrics score_run(const GcnModel& model, const PoisonedGraph& unseen, Label target_class,
                         const DetectionResult* detection, const PoisonedGraph* train_truth) {
  auto m = evaluate(model, unseen, target_class);
  if (detection != nullptr && train_truth != nullptr) {
    const auto q = detection_metrics(*detection, *train_truth);
    m.recall = q.recall;
    m.precision = q.precision;
    m.has_detection = true;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Commands

namespace files {
inline constexpr const char* kTrainGraph = "train.graph";
inline constexpr const char* kTrainTruth = "train.groundtruth";
inline constexpr const char* kUnseenGraph = "unseen.graph";
inline constexpr const char* kUnseenTruth = "unseen.groundtruth";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kModelB = "model_b.ckpt";
inline constexpr const char* kModelF = "model_f.ckpt";
inline constexpr const char* kDetection = "detection.json";
inline constexpr const char* kScores = "scores.tsv";
inline constexpr const char* kPruned = "pruned.graph";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kTheorems = "theorems.json";
inline constexpr const char* kSweep = "sweep.csv";
}  // namespace files

inline AttackOutputs cmd_attack(const ExperimentConfig& c) {
  c.validate();
  const auto dir = ensure_output_dir(c);
  auto out = run_attack(c);
  save_poisoned((dir / files::kTrainGraph).string(), (dir / files::kTrainTruth).string(), out.train);
  save_poisoned((dir / files::kUnseenGraph).string(), (dir / files::kUnseenTruth).string(), out.unseen);
  return out;
}

inline PoisonedGraph load_train_outputs(const std::filesystem::path& dir) {
  require_file(dir / files::kTrainGraph, "attack output");
  require_file(dir / files::kTrainTruth, "attack output");
  return load_poisoned((dir / files::kTrainGraph).string(), (dir / files::kTrainTruth).string());
}

inline PoisonedGraph load_unseen_outputs(const std::filesystem::path& dir) {
  require_file(dir / files::kUnseenGraph, "attack output");
  require_file(dir / files::kUnseenTruth, "attack output");
  return load_poisoned((dir / files::kUnseenGraph).string(), (dir / files::kUnseenTruth).string());
}

namespace detail {

inline nlohmann::json checkpoint_entry(const char* file, const GcnModel& m) {
  return {{"file", file}, {"model_id", model_id(m)}, {"seed", m.seed}};
}

}  // namespace detail

/// Runs the configured defense on the attacked training graph and writes the
/// manifest, checkpoints and (for detecting defenses) the detection report.
inline nlohmann::json cmd_defend(const ExperimentConfig& c) {
  c.validate();
  const auto dir = output_path(c);
  const auto train_pg = load_train_outputs(dir);
  const auto& g = train_pg.graph;
  const auto tc = run_train(c);
  const auto drop = run_drop(c);
  const auto opts = run_options(c);

  nlohmann::json manifest;
  manifest["defense"] = detail::to_string(c.defense.method);
  manifest["config"] = config_to_json(c);
  manifest["inputs"] = {files::kTrainGraph, files::kTrainTruth};
  nlohmann::json ckpts = nlohmann::json::object();

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };

  switch (c.defense.method) {
    case DefenseKind::none: {
      const auto r = train_plain(g, tc);
      save_checkpoint((dir / files::kModelF).string(), r.model);
      ckpts["model_f"] = detail::checkpoint_entry(files::kModelF, r.model);
      break;
    }
    case DefenseKind::prune: {
      const auto pruned = prune_defense(g, c.defense.prune_threshold);
      save_graph((dir / files::kPruned).string(), pruned);
      const auto r = train_plain(pruned, tc);
      save_checkpoint((dir / files::kModelF).string(), r.model);
      ckpts["model_f"] = detail::checkpoint_entry(files::kModelF, r.model);
      manifest["pruned_graph"] = files::kPruned;
      manifest["edges_removed"] = g.num_edges() - pruned.num_edges();
      manifest["trigger_edges_removed_fraction"] = removed_fraction(pruned, train_pg.trigger_edges);
      break;
    }
    case DefenseKind::rigbd:
    case DefenseKind::per_edge: {
      const auto r = c.defense.method == DefenseKind::rigbd ? run_rigbd(g, drop, tc, opts)
                                                            : run_per_edge_defense(g, tc, opts);
      save_checkpoint((dir / files::kModelB).string(), r.model_b);
      save_checkpoint((dir / files::kModelF).string(), r.model_f);
      ckpts["model_b"] = detail::checkpoint_entry(files::kModelB, r.model_b);
      ckpts["model_f"] = detail::checkpoint_entry(files::kModelF, r.model_f);
      auto det = detection_json(r.detection, r.scores, g.mask(masks::kLabeled), c.defense.histogram_bins);
      det["used_candidates"] = r.used_candidates;
      if (c.defense.method == DefenseKind::per_edge) det.erase("drop_spec");
      write_json((dir / files::kDetection).string(), det);
      {
        auto os = detail::open_out((dir / files::kScores).string());
        write_scores_tsv(os, g, r.scores.scores, train_pg.poisoned);
        if (!os) throw IoError("failed writing " + (dir / files::kScores).string());
      }
      manifest["detection"] = files::kDetection;
      manifest["scores"] = files::kScores;
      manifest["num_candidates"] = r.detection.candidates.size();
      manifest["target_class"] = r.detection.target_class;
      manifest["seeds"] = {{"detector", r.b_seed}, {"final", r.f_seed}, {"drop", drop.seed}};
      break;
    }
  }
  manifest["checkpoints"] = ckpts;
  manifest["defense_ms"] = elapsed();
  write_json((dir / files::kManifest).string(), manifest);
  return manifest;
}

/// Scores the defended model on the unseen graph and writes metrics.json and
/// metrics.csv; the metrics are also recorded in the manifest.
inline Metrics cmd_evaluate(const ExperimentConfig& c) {
  c.validate();
  const auto dir = output_path(c);
  require_file(dir / files::kManifest, "defense manifest");
  auto manifest = read_json((dir / files::kManifest).string());
  require_file(dir / files::kModelF, "checkpoint");
  const auto model = load_checkpoint((dir / files::kModelF).string());
  const auto unseen = load_unseen_outputs(dir);

  std::optional<DetectionResult> det;
  std::optional<PoisonedGraph> train_pg;
  if (manifest.contains("detection")) {
    require_file(dir / files::kDetection, "detection report");
    det = detection_from_json(read_json((dir / files::kDetection).string()));
    train_pg = load_train_outputs(dir);
  }
  auto m = score_run(model, unseen, unseen.target_class, det ? &*det : nullptr,
                     train_pg ? &*train_pg : nullptr);
  if (manifest.contains("defense_ms")) m.defense_ms = manifest.at("defense_ms").get<double>();
  write_json((dir / files::kMetricsJson).string(), metrics_json(m));
  {
    auto os = detail::open_out((dir / files::kMetricsCsv).string());
    write_metrics_csv(os, m);
    if (!os) throw IoError("failed writing " + (dir / files::kMetricsCsv).string());
  }
  manifest["metrics"] = metrics_json(m);
  write_json((dir / files::kManifest).string(), manifest);
  return m;
}

struct TheoremSuite {
  std::vector<Theorem1Report> theorem1;
  Theorem2Report theorem2;
  DegreeTrendReport degree_trend;
  Theorem3Report theorem3;

  bool theorem1_passed() const {
    return std::all_of(theorem1.begin(), theorem1.end(), [](const auto& r) { return r.passed; });
  }
  bool theorem2_passed() const { return theorem2.passed && degree_trend.passed; }
  bool passed() const { return theorem1_passed() && theorem2_passed() && theorem3.passed; }
};

namespace detail {

inline SyntheticConfig theorem_graph_config(const ExperimentConfig& c, std::size_t degree, std::uint64_t seed) {
  auto sc = c.dataset.synthetic;
  sc.topology = Topology::regular;
  sc.num_nodes = c.theorems.num_nodes;
  sc.regular_degree = degree;
  sc.seed = seed;
  return sc;
}

}  // namespace detail

/// Monte-Carlo checks of the three theorems on d-regular synthetic graphs.
/// Theorem 1 runs at every configured beta plus the high beta; theorem 2 at
/// the configured drop ratio, with the degree trend folded into its verdict.
inline TheoremSuite run_theorems(const ExperimentConfig& c) {
  c.validate();
  const auto& t = c.theorems;
  const auto seed = c.global_seed;
  const auto sc = detail::theorem_graph_config(c, t.regular_degree, seed);
  const auto g = gen_synthetic_graph(sc);
  auto tc = run_train(c);
  const auto model_b = train(g, g.mask(masks::kLabeled), stage_config(tc, "detector"),
                             NormMode::without_self_loops).model;

  TheoremSuite s;
  for (double beta : t.betas) s.theorem1.push_back(check_theorem_1(g, model_b, beta, t.replications, seed));
  s.theorem1.push_back(check_theorem_1(g, model_b, t.high_beta, t.high_beta_replications, seed));

  const auto expected = expected_features(sc, g);
  s.theorem2 = check_theorem_2(g, model_b, c.drop.beta, t.t_grid, t.replications, expected,
                               sc.feature_bound, seed);

  const auto low = gen_synthetic_graph(detail::theorem_graph_config(c, t.low_degree, seed));
  const auto high = gen_synthetic_graph(detail::theorem_graph_config(c, t.high_degree, seed));
  s.degree_trend = check_degree_trend(low, expected_features(sc, low), high, expected_features(sc, high),
                                      model_b, c.drop.beta, t.replications, sc.feature_bound, seed);
  s.theorem3 = check_theorem_3(t.theorem3_iterations, t.theorem3_beta, t.theorem3_replications, seed);
  return s;
}

inline nlohmann::json theorems_json(const TheoremSuite& s) {
  nlohmann::json j;
  j["theorem1"] = nlohmann::json::array();
  for (const auto& r : s.theorem1)
    j["theorem1"].push_back({{"beta", r.beta},
                             {"replications", r.replications},
                             {"nodes_checked", r.nodes_checked},
                             {"pass_fraction", r.pass_fraction},
                             {"max_abs_deviation", r.max_abs_deviation},
                             {"max_z", r.max_z},
                             {"kept_degree_pass_fraction", r.kept_degree_pass_fraction},
                             {"kept_degree_mean_relative_bias", r.kept_degree_mean_relative_bias},
                             {"passed", r.passed}});
  const auto& t2 = s.theorem2;
  j["theorem2"] = {{"beta", t2.beta},
                   {"replications", t2.replications},
                   {"spectral_norm", t2.spectral_norm},
                   {"feature_bound", t2.feature_bound},
                   {"t_grid", t2.t_grid},
                   {"worst_margin", t2.worst_margin},
                   {"violations", t2.violations},
                   {"median_deviation", t2.median_deviation},
                   {"degree_trend",
                    {{"median_low", s.degree_trend.median_low},
                     {"median_high", s.degree_trend.median_high},
                     {"passed", s.degree_trend.passed}}},
                   {"passed", s.theorem2_passed()}};
  const auto& t3 = s.theorem3;
  j["theorem3"] = {{"iterations", t3.iterations},
                   {"beta", t3.beta},
                   {"replications", t3.replications},
                   {"mean_drops", t3.mean_drops},
                   {"expected", t3.expected},
                   {"standard_error", t3.standard_error},
                   {"passed", t3.passed}};
  j["passed"] = s.passed();
  return j;
}

/// One PASS/FAIL line per theorem.
inline void print_theorem_lines(std::ostream& os, const TheoremSuite& s) {
  auto tag = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  os << tag(s.theorem1_passed()) << " theorem1";
  for (const auto& r : s.theorem1)
    os << " beta=" << r.beta << ":" << r.nodes_passed << "/" << r.nodes_checked << " max_dev=" << r.max_abs_deviation;
  os << '\n';
  os << tag(s.theorem2_passed()) << " theorem2 violations=" << s.theorem2.violations
     << " median_dev(d=low)=" << s.degree_trend.median_low
     << " median_dev(d=high)=" << s.degree_trend.median_high << '\n';
  os << tag(s.theorem3.passed) << " theorem3 mean=" << s.theorem3.mean_drops << " expected=" << s.theorem3.expected
     << " se=" << s.theorem3.standard_error << '\n';
}

inline TheoremSuite cmd_theorems(const ExperimentConfig& c, std::ostream& os) {
  const auto dir = ensure_output_dir(c);
  auto s = run_theorems(c);
  write_json((dir / files::kTheorems).string(), theorems_json(s));
  print_theorem_lines(os, s);
  return s;
}

/// Runs every (K, beta) cell of the sweep grid against one attack and one
/// trained detector. Cells are independent and run on up to c.threads
/// workers; rows come out in grid order regardless.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& c, const AttackOutputs& attack) {
  c.validate();
  const auto& g = attack.train.graph;
  const auto tc = run_train(c);
  const auto model_b = train_detector(g, tc).model;
  auto opts = run_options(c);
  opts.scoring.threads = 1;

  std::vector<SweepRow> rows;
  for (auto k : c.sweep.iterations)
    for (auto b : c.sweep.betas) rows.push_back({k, b, {}});

  auto run_cell = [&](SweepRow& row) {
    DropSpec d = run_drop(c);
    d.iterations = row.iterations;
    d.beta = row.beta;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = defend_with_detector(g, model_b, d, tc, opts);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    row.metrics = score_run(r.model_f, attack.unseen, attack.unseen.target_class, &r.detection, &attack.train);
    row.metrics.defense_ms = ms;
  };

  const auto workers = std::min(c.threads, rows.size());
  if (workers <= 1) {
    for (auto& row : rows) run_cell(row);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i; (i = next.fetch_add(1)) < rows.size();) run_cell(rows[i]);
          } catch (...) {
            errors[w] = std::current_exception();
            next = rows.size();
          }
        });
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return rows;
}

/// Uses the attack outputs in the output directory when present, otherwise
/// runs the attack in memory. Writes sweep.csv.
inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& c) {
  const auto dir = ensure_output_dir(c);
  AttackOutputs attack;
  if (std::filesystem::exists(dir / files::kTrainGraph)) {
    attack.train = load_train_outputs(dir);
    attack.unseen = load_unseen_outputs(dir);
  } else {
    attack = run_attack(c);
  }
  auto rows = run_sweep(c, attack);
  auto os = detail::open_out((dir / files::kSweep).string());
  write_sweep_csv(os, rows);
  if (!os) throw IoError("failed writing " + (dir / files::kSweep).string());
  return rows;
}

}  // namespace rigbd
