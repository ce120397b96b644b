#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rigbd/experiment.hpp"

using namespace rigbd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::path(testing::TempDir()) / ("rigbd-exp-" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small_config(const std::string& name) {
  ExperimentConfig c;
  c.dataset.synthetic.num_nodes = 700;
  c.attack.budget = 20;
  c.drop.iterations = 10;
  c.train.max_epochs = 200;
  c.train.patience = 30;
  c.train.hidden_dim = 32;
  c.sweep.iterations = {2, 5};
  c.sweep.betas = {0.3, 0.7};
  c.output_dir = scratch(name).string();
  return c;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* key, const std::string& value) : key_(key) {
    if (const char* old = std::getenv(key)) old_ = old;
    ::setenv(key, value.c_str(), 1);
  }
  ~ScopedEnv() {
    if (old_) ::setenv(key_, old_->c_str(), 1);
    else ::unsetenv(key_);
  }

 private:
  const char* key_;
  std::optional<std::string> old_;
};

}  // namespace

TEST(Config, DefaultsValidate) {
  EXPECT_NO_THROW(ExperimentConfig{}.validate());
}

TEST(Config, JsonRoundTrip) {
  auto c = small_config("roundtrip");
  c.defense.method = DefenseKind::prune;
  c.defense.prune_threshold = -0.25;
  c.attack.trigger.topology = TriggerTopology::star;
  c.attack.trigger.attach_edges = 2;
  c.global_seed = 17;
  c.threads = 3;
  const auto j = config_to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back).dump(), j.dump());
  EXPECT_EQ(back.defense.method, DefenseKind::prune);
  EXPECT_EQ(back.attack.trigger.attach_edges, 2u);
  EXPECT_EQ(back.sweep.iterations, (std::vector<std::size_t>{2, 5}));
  EXPECT_EQ(back.global_seed, 17u);
}

TEST(Config, PartialObjectKeepsDefaults) {
  const auto c = config_from_json(nlohmann::json::parse(R"({"attack": {"budget": 12}})"));
  EXPECT_EQ(c.attack.budget, 12u);
  EXPECT_EQ(c.attack.target_class, 0);
  EXPECT_EQ(c.dataset.synthetic.num_nodes, ExperimentConfig{}.dataset.synthetic.num_nodes);
  EXPECT_EQ(c.drop.iterations, ExperimentConfig{}.drop.iterations);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  using nlohmann::json;
  EXPECT_THROW(config_from_json(json::parse(R"({"bogus": 1})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"attack": {"bugdet": 3}})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"dataset": {"synthetic": {"nodes": 3}}})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"attack": {"budget": "many"}})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"defense": {"method": "magic"}})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"([1, 2])")), InvalidArgument);

  ExperimentConfig c;
  c.drop.beta = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ExperimentConfig{};
  c.sweep.betas.clear();
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ExperimentConfig{};
  c.dataset.kind = DatasetKind::graph_file;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Config, LoadFromFile) {
  const auto dir = scratch("load");
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "c.json");
    os << "// comment\n{\"drop\": {\"beta\": 0.3}, \"threads\": 2}\n";
  }
  const auto c = load_config((dir / "c.json").string());
  EXPECT_DOUBLE_EQ(c.drop.beta, 0.3);
  EXPECT_EQ(c.threads, 2u);
  EXPECT_THROW(load_config((dir / "missing.json").string()), IoError);
  {
    std::ofstream os(dir / "broken.json");
    os << "{\"drop\": ";
  }
  EXPECT_THROW(load_config((dir / "broken.json").string()), InvalidArgument);
}

TEST(Config, SampleConfigsLoad) {
  const fs::path dir = fs::path(RIGBD_TEST_DATA).parent_path().parent_path() / "configs";
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(load_config(e.path().string()).validate());
    ++n;
  }
  EXPECT_GE(n, 1u);
}

TEST(Seeds, UnseenStreamDiffers) {
  const auto s = run_seeds(5);
  EXPECT_EQ(s.data, 5u);
  EXPECT_EQ(s.attack, 5u);
  EXPECT_EQ(s.train, 5u);
  EXPECT_EQ(s.unseen, 6u);
}

TEST(OutputPath, HonorsRootForRelativeDirs) {
  ExperimentConfig c;
  c.output_dir = "runs/a";
  {
    ScopedEnv env(kOutputRootEnv, "/tmp/root");
    EXPECT_EQ(output_path(c), fs::path("/tmp/root/runs/a"));
    c.output_dir = "/abs/dir";
    EXPECT_EQ(output_path(c), fs::path("/abs/dir"));
  }
  c.output_dir = "runs/a";
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(output_path(c), fs::path("runs/a"));
}

TEST(Commands, MissingInputsAreIoErrors) {
  auto c = small_config("missing");
  fs::create_directories(output_path(c));
  EXPECT_THROW(cmd_defend(c), IoError);
  EXPECT_THROW(cmd_evaluate(c), IoError);
}

TEST(Commands, AttackIsReproducible) {
  auto a = small_config("attack-a");
  auto b = small_config("attack-b");
  const auto out = cmd_attack(a);
  cmd_attack(b);
  for (const char* f : {files::kTrainGraph, files::kTrainTruth, files::kUnseenGraph, files::kUnseenTruth}) {
    SCOPED_TRACE(f);
    const auto bytes = slurp(output_path(a) / f);
    EXPECT_FALSE(bytes.empty());
    EXPECT_EQ(bytes, slurp(output_path(b) / f));
  }
  const auto train = load_train_outputs(output_path(a));
  EXPECT_EQ(train.poisoned.size(), 20u);
  EXPECT_EQ(train.poisoned, out.train.poisoned);
  EXPECT_EQ(train.target_class, 0);
}

TEST(Commands, DefenseNoneWritesOnlyFinalModel) {
  auto c = small_config("none");
  c.defense.method = DefenseKind::none;
  cmd_attack(c);
  const auto manifest = cmd_defend(c);
  const auto dir = output_path(c);
  ASSERT_TRUE(manifest.contains("checkpoints"));
  EXPECT_EQ(manifest.at("checkpoints").size(), 1u);
  EXPECT_TRUE(manifest.at("checkpoints").contains("model_f"));
  EXPECT_FALSE(manifest.contains("detection"));
  EXPECT_FALSE(fs::exists(dir / files::kModelB));
  EXPECT_TRUE(manifest.contains("defense_ms"));

  const auto m = cmd_evaluate(c);
  EXPECT_FALSE(m.has_detection);
  EXPECT_GT(m.asr, 0.5);
  EXPECT_GT(m.clean_acc, 0.8);
  const auto metrics = read_json((dir / files::kMetricsJson).string());
  EXPECT_TRUE(metrics.contains("asr"));
  EXPECT_TRUE(metrics.contains("clean_acc"));
  EXPECT_TRUE(read_json((dir / files::kManifest).string()).contains("metrics"));
}

TEST(Commands, PruneAtMinusOneKeepsGraph) {
  auto c = small_config("prune");
  c.defense.method = DefenseKind::prune;
  c.defense.prune_threshold = -1.0;
  cmd_attack(c);
  const auto manifest = cmd_defend(c);
  const auto dir = output_path(c);
  EXPECT_EQ(manifest.at("edges_removed").get<std::size_t>(), 0u);
  EXPECT_DOUBLE_EQ(manifest.at("trigger_edges_removed_fraction").get<double>(), 0.0);
  const auto pruned = load_graph((dir / files::kPruned).string());
  const auto train = load_train_outputs(dir);
  EXPECT_EQ(pruned.num_edges(), train.graph.num_edges());
  for (const auto& e : train.graph.edges()) EXPECT_TRUE(pruned.has_edge(e));
}

TEST(Commands, RigbdWritesDetectionAndMetrics) {
  auto c = small_config("rigbd");
  cmd_attack(c);
  const auto manifest = cmd_defend(c);
  const auto dir = output_path(c);
  for (const char* f : {files::kManifest, files::kModelB, files::kModelF, files::kDetection, files::kScores})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_GT(manifest.at("num_candidates").get<std::size_t>(), 0u);
  EXPECT_EQ(manifest.at("target_class").get<Label>(), 0);
  EXPECT_EQ(manifest.at("checkpoints").size(), 2u);
  const auto seeds = manifest.at("seeds");
  EXPECT_NE(seeds.at("detector"), seeds.at("final"));

  const auto ckpt = load_checkpoint((dir / files::kModelB).string());
  EXPECT_EQ(ckpt.norm_mode, NormMode::without_self_loops);
  EXPECT_EQ(manifest.at("checkpoints").at("model_b").at("model_id").get<std::uint64_t>(), model_id(ckpt));

  const auto m = cmd_evaluate(c);
  EXPECT_TRUE(m.has_detection);
  const auto attacked = load_train_outputs(dir);
  const auto plain = train_plain(attacked.graph, run_train(c));
  const auto undefended = evaluate(plain.model, load_unseen_outputs(dir), attacked.target_class);
  EXPECT_LT(m.asr, undefended.asr);
  EXPECT_GT(m.recall, 0.0);
  const auto metrics = read_json((dir / files::kMetricsJson).string());
  for (const char* key : {"asr", "clean_acc", "recall", "precision"}) EXPECT_TRUE(metrics.contains(key)) << key;
  EXPECT_FALSE(slurp(dir / files::kMetricsCsv).empty());
}

TEST(Commands, EvaluateConstantTargetModel) {
  auto c = small_config("constant");
  c.defense.method = DefenseKind::none;
  cmd_attack(c);
  cmd_defend(c);
  const auto dir = output_path(c);
  auto model = load_checkpoint((dir / files::kModelF).string());
  for (auto& w : model.weights) w.setZero();
  save_checkpoint((dir / files::kModelF).string(), model);
  const auto m = cmd_evaluate(c);
  EXPECT_DOUBLE_EQ(m.asr, 1.0);
  EXPECT_GT(m.asr_count, 0u);
}

TEST(Sweep, GridOrderAndThreadInvariance) {
  auto c = small_config("sweep");
  const auto attack = run_attack(c);
  const auto rows = run_sweep(c, attack);
  ASSERT_EQ(rows.size(), 4u);
  const std::vector<std::pair<std::size_t, double>> grid{{2, 0.3}, {2, 0.7}, {5, 0.3}, {5, 0.7}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].iterations, grid[i].first);
    EXPECT_DOUBLE_EQ(rows[i].beta, grid[i].second);
    EXPECT_TRUE(rows[i].metrics.has_detection);
  }
  c.threads = 2;
  const auto threaded = run_sweep(c, attack);
  ASSERT_EQ(threaded.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(threaded[i].metrics.asr, rows[i].metrics.asr);
    EXPECT_EQ(threaded[i].metrics.clean_acc, rows[i].metrics.clean_acc);
    EXPECT_EQ(threaded[i].metrics.recall, rows[i].metrics.recall);
    EXPECT_EQ(threaded[i].metrics.precision, rows[i].metrics.precision);
  }
}

TEST(Sweep, CommandWritesCsv) {
  auto c = small_config("sweep-cmd");
  c.sweep.iterations = {3};
  c.sweep.betas = {0.5};
  const auto rows = cmd_sweep(c);
  ASSERT_EQ(rows.size(), 1u);
  std::ifstream in(output_path(c) / files::kSweep);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 2u);
}

TEST(Theorems, SmallSuiteReport) {
  auto c = small_config("theorems");
  c.theorems.num_nodes = 300;
  c.theorems.betas = {0.0, 0.5};
  c.theorems.replications = 1000;
  c.theorems.high_beta_replications = 2000;
  c.theorems.theorem3_replications = 2000;
  std::ostringstream os;
  const auto s = cmd_theorems(c, os);
  ASSERT_EQ(s.theorem1.size(), 3u);
  EXPECT_EQ(s.theorem1[0].max_abs_deviation, 0.0);
  EXPECT_TRUE(s.theorem1[0].passed);
  EXPECT_TRUE(s.passed());

  std::istringstream lines(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    EXPECT_EQ(line.rfind("PASS theorem", 0), 0u) << line;
  }
  EXPECT_EQ(n, 3u);
  const auto j = read_json((output_path(c) / files::kTheorems).string());
  for (const char* key : {"theorem1", "theorem2", "theorem3", "passed"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j.at("theorem1").size(), 3u);
}
