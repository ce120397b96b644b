#include <gtest/gtest.h>

#include <cmath>

#include "rigbd/experiment.hpp"
#include "rigbd/robust.hpp"

using namespace rigbd;

namespace {

PredictionOutput output_from_logits(const Matrix& logits) {
  PredictionOutput out;
  out.logits = logits;
  smoothed_softmax(out.logits, out.softmax, out.probabilities);
  return out;
}

double mean_target_confidence(const GcnModel& m, const Graph& g, const std::vector<NodeId>& nodes, Label yt) {
  const auto out = forward(m, g);
  double sum = 0.0;
  for (NodeId n : nodes) sum += out.probabilities(n, yt);
  return sum / static_cast<double>(nodes.size());
}

ExperimentConfig small_run(std::uint64_t seed) {
  ExperimentConfig c;
  c.global_seed = seed;
  c.dataset.synthetic.num_nodes = 700;
  c.attack.budget = 20;
  c.drop.iterations = 10;
  c.train.max_epochs = 200;
  return c;
}

}  // namespace

TEST(RobustLoss, EmptyCandidatesIsCrossEntropySum) {
  Matrix logits(4, 3);
  logits << 1, 2, 3, -1, 0, 4, 2, 2, 2, 0.5, -3, 1;
  const auto out = output_from_logits(logits);
  const std::vector<Label> labels{0, 2, 1, 1};
  const std::vector<NodeId> labeled{0, 1, 2, 3};
  const auto args = RobustLossArgs::from_candidates(labeled, {}, 1);
  EXPECT_NEAR(robust_loss(out, args, labels), 4.0 * cross_entropy(out, labels, labeled), 1e-12);
}

TEST(RobustLoss, SingleUniformCandidate) {
  const auto out = output_from_logits(Matrix::Zero(1, 7));
  const std::vector<Label> labels{3};
  const std::vector<NodeId> labeled{0};
  const auto args = RobustLossArgs::from_candidates(labeled, {0}, 5);
  EXPECT_NEAR(robust_loss(out, args, labels), -std::log(7.0), 1e-12);
  EXPECT_NEAR(robust_loss(out, args, labels), -1.9459, 1e-4);
}

TEST(RobustLoss, MonotoneInTargetConfidence) {
  const std::vector<Label> labels{0, 1};
  const std::vector<NodeId> labeled{0, 1};
  const auto args = RobustLossArgs::from_candidates(labeled, {0}, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double z = 4.0; z >= -4.0; z -= 0.5) {
    Matrix logits = Matrix::Zero(2, 3);
    logits(0, 2) = z;
    logits(1, 1) = 1.0;
    const double loss = robust_loss(output_from_logits(logits), args, labels);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(RobustLoss, TargetTermFlooredBySmoothing) {
  Matrix logits = Matrix::Zero(1, 3);
  logits(0, 0) = 1e4;
  const auto out = output_from_logits(logits);
  const std::vector<Label> labels{0};
  const std::vector<NodeId> labeled{0};
  const auto args = RobustLossArgs::from_candidates(labeled, {0}, 1);
  const double loss = robust_loss(out, args, labels);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GE(loss, std::log(kSmoothing) - 1e-9);
}

TEST(RobustLoss, ArgumentErrors) {
  const auto out = output_from_logits(Matrix::Zero(2, 3));
  const std::vector<Label> labels{0, 1};
  RobustLossArgs args;
  args.candidates = {5};
  EXPECT_THROW(robust_loss(out, args, labels), InvalidArgument);
  args.candidates = {0};
  args.clean_labeled = {0, 1};
  EXPECT_THROW(args.validate(), InvalidArgument);
}

TEST(RobustLoss, SplitCoversLabeledSet) {
  const std::vector<NodeId> labeled{1, 3, 4, 8};
  const auto args = RobustLossArgs::from_candidates(labeled, {8, 3, 6}, 0);
  EXPECT_EQ(args.candidates, (std::vector<NodeId>{3, 8}));
  EXPECT_EQ(args.clean_labeled, (std::vector<NodeId>{1, 4}));
  EXPECT_NO_THROW(args.validate());
}

TEST(RobustTraining, EmptyCandidatesMatchesPlainTraining) {
  const auto g = gen_synthetic_graph(small_run(0).dataset.synthetic);
  TrainConfig tc;
  tc.max_epochs = 40;
  tc.seed = 9;
  const auto labeled = g.mask(masks::kLabeled);
  const auto args = RobustLossArgs::from_candidates(labeled, {}, 0);
  const auto plain = train(g, labeled, tc, NormMode::with_self_loops);
  const auto robust = train(g, labeled, tc, NormMode::with_self_loops, LossKind::robust, &args);
  ASSERT_EQ(plain.train_losses.size(), robust.train_losses.size());
  for (std::size_t e = 0; e < plain.train_losses.size(); ++e)
    EXPECT_NEAR(plain.train_losses[e], robust.train_losses[e], 1e-12) << "epoch " << e;
}

TEST(RobustTraining, TargetConfidenceOnCandidatesFalls) {
  const auto c = small_run(1);
  const auto a = run_attack(c);
  const auto& g = a.train.graph;
  const auto labeled = g.mask(masks::kLabeled);
  const auto args = RobustLossArgs::from_candidates(labeled, a.train.poisoned, a.train.target_class);
  std::vector<double> trace;
  const auto r = train(g, labeled, run_train(c), NormMode::with_self_loops, LossKind::robust, &args,
                       RobustWeighting::sum, [&](std::size_t, const GcnModel& m) {
                         trace.push_back(mean_target_confidence(m, g, a.train.poisoned, a.train.target_class));
                       });
  ASSERT_GE(trace.size(), 2u);
  const double final_conf = mean_target_confidence(r.model, g, a.train.poisoned, a.train.target_class);
  EXPECT_LT(final_conf, trace.front());
  EXPECT_LT(trace.back(), trace.front());
}

TEST(Truncation, KeepsHighestScores) {
  DetectionResult det;
  det.candidates = {2, 4, 5, 7, 9, 11};
  std::vector<double> scores(12, 0.0);
  scores[2] = 1.0;
  scores[4] = 6.0;
  scores[5] = 3.0;
  scores[7] = 6.0;
  scores[9] = 2.0;
  scores[11] = 5.0;
  EXPECT_EQ(truncate_candidates(det, scores, 1.0), det.candidates);
  EXPECT_EQ(truncate_candidates(det, scores, 0.17), (std::vector<NodeId>{4, 7}));
  EXPECT_EQ(truncate_candidates(det, scores, 0.5), (std::vector<NodeId>{4, 7, 11}));
  EXPECT_EQ(truncate_candidates(det, scores, 0.01), (std::vector<NodeId>{4}));
  EXPECT_THROW(truncate_candidates(det, scores, 0.0), InvalidArgument);
}

TEST(RunRigbd, DefendsDefaultSyntheticAttack) {
  ExperimentConfig c;
  const auto a = run_attack(c);
  const auto r = run_rigbd(a.train.graph, run_drop(c), run_train(c), run_options(c));
  EXPECT_EQ(r.model_b.norm_mode, NormMode::without_self_loops);
  EXPECT_EQ(r.model_f.norm_mode, NormMode::with_self_loops);
  EXPECT_EQ(r.used_candidates, r.detection.candidates);
  EXPECT_EQ(r.scores.model_id, model_id(r.model_b));
  const auto m = score_run(r.model_f, a.unseen, r.detection.target_class, &r.detection, &a.train);
  EXPECT_LE(m.asr, 0.05);

  const auto clean = train_plain(restore_clean(a.train), run_train(c));
  const auto baseline = evaluate(clean.model, a.unseen, c.attack.target_class);
  EXPECT_GE(m.clean_acc, baseline.clean_acc - 0.02);
}

TEST(RunRigbd, CleanGraphNoHarm) {
  ExperimentConfig c;
  const auto a = run_attack(c);
  const auto g = restore_clean(a.train);
  const auto r = run_rigbd(g, run_drop(c), run_train(c), run_options(c));
  const double flagged = static_cast<double>(r.detection.candidates.size()) /
                         static_cast<double>(g.mask(masks::kLabeled).size());
  EXPECT_LE(flagged, 0.02);
  const auto plain = train_plain(g, run_train(c));
  const auto unseen = strip_triggers(a.unseen);
  const auto test = unseen.mask(masks::kTest);
  EXPECT_NEAR(accuracy(r.model_f, unseen, test), accuracy(plain.model, unseen, test), 0.015);
}

TEST(RunRigbd, DeterministicUnderFixedSeeds) {
  const auto c = small_run(2);
  const auto a = run_attack(c);
  const auto r1 = run_rigbd(a.train.graph, run_drop(c), run_train(c), run_options(c));
  auto threaded = run_options(c);
  threaded.scoring.threads = 3;
  const auto r2 = run_rigbd(a.train.graph, run_drop(c), run_train(c), threaded);
  EXPECT_EQ(r1.scores.scores, r2.scores.scores);
  EXPECT_EQ(r1.detection.candidates, r2.detection.candidates);
  for (std::size_t l = 0; l < r1.model_f.weights.size(); ++l) EXPECT_EQ(r1.model_f.weights[l], r2.model_f.weights[l]);
  EXPECT_NE(r1.b_seed, r1.f_seed);
}

TEST(RunRigbd, ReusedDetectorMatchesFullPipeline) {
  const auto c = small_run(3);
  const auto a = run_attack(c);
  const auto full = run_rigbd(a.train.graph, run_drop(c), run_train(c));
  const auto b = train_detector(a.train.graph, run_train(c));
  const auto staged = defend_with_detector(a.train.graph, b.model, run_drop(c), run_train(c));
  EXPECT_EQ(full.detection.candidates, staged.detection.candidates);
  EXPECT_EQ(full.model_f.weights[0], staged.model_f.weights[0]);
}

TEST(RunRigbd, RejectsUnlabeledGraph) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 2);
  const auto g = build_graph(3, {{0, 1}}, x, {0, 1, 0}, {}, 2);
  EXPECT_THROW(run_rigbd(g, DropSpec{}, TrainConfig{}), InvalidArgument);
}
