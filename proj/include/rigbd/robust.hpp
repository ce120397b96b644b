#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rigbd/detector.hpp"
#include "rigbd/loss.hpp"
#include "rigbd/train.hpp"

namespace rigbd {

struct RigbdOptions {
  /// Normalization of the final classifier; the detector always runs
  /// without self-loops.
  NormMode final_mode = NormMode::with_self_loops;
  RobustWeighting weighting = RobustWeighting::sum;
  /// Keep only this share of the candidates (highest scores first) before
  /// robust training. 1 keeps all of them.
  double candidate_keep_fraction = 1.0;
  ScoringOptions scoring;
};

struct RigbdResult {
  GcnModel model_f;
  GcnModel model_b;
  VarianceScores scores;
  DetectionResult detection;
  /// Candidates actually fed to robust training (after truncation).
  std::vector<NodeId> used_candidates;
  TrainResult b_training;
  TrainResult f_training;
  std::uint64_t b_seed = 0;
  std::uint64_t f_seed = 0;
};

/// Seeds used by the two training stages, derived from the configured seed.
inline TrainConfig stage_config(const TrainConfig& base, const char* stage) {
  TrainConfig c = base;
  c.seed = derive_seed(base.seed, stage);
  return c;
}

/// Highest-scoring `fraction` of `candidates` (at least one when nonempty).
inline std::vector<NodeId> truncate_candidates(const DetectionResult& det,
                                               std::span<const double> scores, double fraction) {
  detail::require(fraction > 0.0 && fraction <= 1.0, "candidate keep fraction must lie in (0, 1]");
  if (fraction >= 1.0 || det.candidates.empty()) return det.candidates;
  std::vector<NodeId> ranked = det.candidates;
  std::sort(ranked.begin(), ranked.end(), [&](NodeId a, NodeId b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ranked.size()))));
  ranked.resize(std::min(keep, ranked.size()));
  std::sort(ranked.begin(), ranked.end());
  return ranked;
}

/// Trains the final classifier with the unlearning loss.
inline TrainResult robust_stage(const Graph& g, std::vector<NodeId> candidates, Label target_class,
                                const TrainConfig& config, const RigbdOptions& options) {
  const auto labeled = g.mask(masks::kLabeled);
  const auto args = RobustLossArgs::from_candidates(labeled, std::move(candidates), target_class);
  return train(g, labeled, config, options.final_mode, LossKind::robust, &args, options.weighting);
}

/// Steps 2-4 of the defense with an already trained detector. `config` is
/// the base configuration; the final stage derives its own seed from it.
inline RigbdResult defend_with_detector(const Graph& g, const GcnModel& model_b, const DropSpec& drop,
                                        const TrainConfig& config, const RigbdOptions& options = {}) {
  drop.validate();
  detail::require(!g.mask(masks::kLabeled).empty(), "the training graph has no labeled nodes");
  RigbdResult r;
  const auto f_cfg = stage_config(config, "final");
  r.b_seed = model_b.seed;
  r.f_seed = f_cfg.seed;
  r.model_b = model_b;
  r.scores = score_variance(r.model_b, g, drop, options.scoring);
  r.detection = identify(r.scores, g);
  r.used_candidates = truncate_candidates(r.detection, r.scores.scores, options.candidate_keep_fraction);
  r.f_training = robust_stage(g, r.used_candidates, r.detection.target_class, f_cfg, options);
  r.model_f = r.f_training.model;
  return r;
}

/// Trains the self-loop-free detector f_b on all labeled nodes.
inline TrainResult train_detector(const Graph& g, const TrainConfig& config) {
  const auto labeled = g.mask(masks::kLabeled);
  detail::require(!labeled.empty(), "the training graph has no labeled nodes");
  return train(g, labeled, stage_config(config, "detector"), NormMode::without_self_loops);
}

/// The full defense on a (possibly) backdoored training graph:
///  1. train a self-loop-free detector f_b on all labeled nodes,
///  2. score K randomized edge-drop perturbations,
///  3. pick the target class, threshold and candidates,
///  4. train the final classifier f with the unlearning loss.
inline RigbdResult run_rigbd(const Graph& g, const DropSpec& drop, const TrainConfig& config,
                             const RigbdOptions& options = {}) {
  drop.validate();
  auto b = train_detector(g, config);
  auto r = defend_with_detector(g, b.model, drop, config, options);
  r.b_seed = stage_config(config, "detector").seed;
  r.b_training = std::move(b);
  return r;
}

/// Same pipeline with the drop-one-edge baseline in place of randomized
/// scoring.
inline RigbdResult run_per_edge_defense(const Graph& g, const TrainConfig& config,
                                        const RigbdOptions& options = {}) {
  const auto labeled = g.mask(masks::kLabeled);
  detail::require(!labeled.empty(), "the training graph has no labeled nodes");
  RigbdResult r;
  const auto b_cfg = stage_config(config, "detector");
  const auto f_cfg = stage_config(config, "final");
  r.b_seed = b_cfg.seed;
  r.f_seed = f_cfg.seed;
  r.b_training = train(g, labeled, b_cfg, NormMode::without_self_loops);
  r.model_b = r.b_training.model;
  r.scores.scores = per_edge_scores(r.model_b, g, labeled);
  r.scores.model_id = model_id(r.model_b);
  r.detection = identify(r.scores, g);
  r.used_candidates = truncate_candidates(r.detection, r.scores.scores, options.candidate_keep_fraction);
  r.f_training = robust_stage(g, r.used_candidates, r.detection.target_class, f_cfg, options);
  r.model_f = r.f_training.model;
  return r;
}

}  // namespace rigbd
