#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "rigbd/gcn.hpp"

namespace rigbd {

enum class LossKind { cross_entropy, robust };

/// How the two sums of the unlearning loss are combined.
enum class RobustWeighting {
  sum,            ///< plain sums, as written in the objective
  per_term_mean,  ///< each sum divided by its own set size
};

/// Candidate poisoned nodes, their shared target class, and the remaining
/// clean labeled nodes.
struct RobustLossArgs {
  std::vector<NodeId> candidates;
  Label target_class = 0;
  std::vector<NodeId> clean_labeled;

  /// Splits `labeled` into candidates and the rest.
  static RobustLossArgs from_candidates(std::span<const NodeId> labeled,
                                        std::vector<NodeId> candidates, Label target_class) {
    std::sort(candidates.begin(), candidates.end());
    RobustLossArgs args;
    args.target_class = target_class;
    for (NodeId n : labeled) {
      if (std::binary_search(candidates.begin(), candidates.end(), n))
        args.candidates.push_back(n);
      else
        args.clean_labeled.push_back(n);
    }
    return args;
  }

  void validate() const {
    std::vector<NodeId> a = candidates, b = clean_labeled;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<NodeId> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    detail::require(both.empty(), "candidate and clean node sets overlap");
  }
};

/// sum_{v in V_s} log p(v, y_t) - sum_{u in clean} log p(u, y_u), every term
/// multiplied by `scale`.
inline LogProbObjective robust_objective(std::span<const Label> labels, const RobustLossArgs& args,
                                         double scale = 1.0,
                                         RobustWeighting weighting = RobustWeighting::sum) {
  double cand_w = scale, clean_w = -scale;
  if (weighting == RobustWeighting::per_term_mean) {
    if (!args.candidates.empty()) cand_w /= static_cast<double>(args.candidates.size());
    if (!args.clean_labeled.empty()) clean_w /= static_cast<double>(args.clean_labeled.size());
  }
  LogProbObjective obj;
  obj.terms.reserve(args.candidates.size() + args.clean_labeled.size());
  for (NodeId n : args.candidates) obj.terms.push_back({n, args.target_class, cand_w});
  for (NodeId n : args.clean_labeled) {
    const Label y = labels[static_cast<std::size_t>(n)];
    detail::require(y != kUnlabeled, "clean node " + std::to_string(n) + " is unlabeled");
    obj.terms.push_back({n, y, clean_w});
  }
  return obj;
}

/// The unlearning loss: log-confidence on the target class over candidates
/// plus cross-entropy over clean labeled nodes, as unweighted sums.
inline double robust_loss(const PredictionOutput& out, const RobustLossArgs& args,
                          std::span<const Label> labels) {
  const auto rows = out.probabilities.rows();
  for (NodeId n : args.candidates)
    detail::require(n >= 0 && n < rows, "candidate node " + std::to_string(n) + " has no prediction");
  return robust_objective(labels, args).value(out);
}

}  // namespace rigbd
