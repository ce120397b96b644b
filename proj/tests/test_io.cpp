#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "rigbd/io.hpp"
#include "rigbd/robust.hpp"

using namespace rigbd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::path(testing::TempDir()) / ("rigbd_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void expect_same_graph(const Graph& a, const Graph& b) {
  EXPECT_EQ(a.num_nodes(), b.num_nodes());
  EXPECT_EQ(a.num_classes(), b.num_classes());
  EXPECT_TRUE(std::ranges::equal(a.edges(), b.edges()));
  EXPECT_EQ(a.features(), b.features());
  EXPECT_TRUE(std::ranges::equal(a.labels(), b.labels()));
  EXPECT_EQ(a.masks(), b.masks());
}

PoisonedGraph sample_poisoned() {
  SyntheticConfig c;
  c.num_nodes = 150;
  c.feature_dim = 6;
  c.seed = 4;
  TriggerSpec spec;
  spec.attach_edges = 2;
  spec.topology = TriggerTopology::star;
  spec.noise_scale = 0.137;
  spec.pattern_seed = 99;
  return inject_backdoor(gen_synthetic_graph(c), spec, 10, 3, 17);
}

Graph parse(const std::string& text) {
  std::istringstream in(text);
  return read_graph(in);
}

/// Writes a LINQS-style pair with the given shape. Paper ids are sparse
/// integers and class names are strings, as in the public Cora release.
void write_linqs_fixture(const fs::path& dir, std::size_t n, std::size_t m, std::size_t c, std::size_t e,
                         std::uint64_t seed) {
  Engine rng(seed);
  std::bernoulli_distribution bit(0.0127);
  std::uniform_int_distribution<std::size_t> cls(0, c - 1), node(0, n - 1);
  const std::vector<std::string> names{"Case_Based", "Genetic_Algorithms", "Neural_Networks",
                                       "Probabilistic_Methods", "Reinforcement_Learning", "Rule_Learning",
                                       "Theory"};
  std::ofstream content(dir / "cora.content");
  for (std::size_t i = 0; i < n; ++i) {
    content << 31 + 7 * i;
    for (std::size_t k = 0; k < m; ++k) content << '\t' << (bit(rng) ? 1 : 0);
    content << '\t' << names[i < c ? i : cls(rng)] << '\n';
  }
  std::ofstream cites(dir / "cora.cites");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (seen.size() < e) {
    auto a = node(rng), b = node(rng);
    if (a == b) continue;
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      // A reversed duplicate is the same undirected citation.
      cites << 31 + 7 * b << '\t' << 31 + 7 * a << '\n';
      continue;
    }
    cites << 31 + 7 * a << '\t' << 31 + 7 * b << '\n';
  }
  cites << "999999\t31\n";  // unknown paper, skipped
}

}  // namespace

TEST(GraphFormat, RoundTrip) {
  const auto pg = sample_poisoned();
  std::stringstream s;
  write_graph(s, pg.graph);
  expect_same_graph(read_graph(s), pg.graph);
}

TEST(GraphFormat, FileRoundTripIsByteStable) {
  const auto dir = scratch_dir("graph");
  const auto pg = sample_poisoned();
  save_graph((dir / "a.graph").string(), pg.graph);
  const auto back = load_graph((dir / "a.graph").string());
  expect_same_graph(back, pg.graph);
  save_graph((dir / "b.graph").string(), back);
  std::ifstream a(dir / "a.graph"), b(dir / "b.graph");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(GraphFormat, CanonicalizesEdges) {
  const auto g = parse("nodes 3 features 1 classes 2\nE 0 1\nE 1 0\nE 1 1\nX 0 1\nX 1 2\nX 2 3\n");
  EXPECT_EQ(g.num_edges(), 1u);
  EXPECT_EQ(g.features()(2, 0), 3.0);
  EXPECT_EQ(g.label(0), kUnlabeled);
}

TEST(GraphFormat, ParseErrorsCarryLineNumbers) {
  const std::vector<std::pair<std::string, std::string>> bad{
      {"", "missing header"},
      {"nodes 2 features 1\n", ":1:"},
      {"nodes 2 features 1 classes 2\nE 0 5\nX 0 1\nX 1 1\n", ":2:"},
      {"nodes 2 features 2 classes 2\nX 0 1\nX 1 1 1\n", ":2:"},
      {"nodes 2 features 1 classes 2\nX 0 1\nX 0 1\n", "duplicate"},
      {"nodes 2 features 1 classes 2\nX 0 1\n", "no X row"},
      {"nodes 2 features 1 classes 2\nX 0 1\nX 1 abc\n", "bad number"},
      {"nodes 2 features 1 classes 2\nX 0 1\nX 1 1\nY 0 2\n", "label out of range"},
      {"nodes 2 features 1 classes 2\nX 0 1\nX 1 1\nQ 1\n", "unknown record"},
      {"nodes 2 features 1 classes 2\nX 0 1\nX 1 1\nMASK a 0\nMASK b 0\n", "overlap"},
  };
  for (const auto& [text, fragment] : bad) {
    try {
      parse(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const IoError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  }
}

TEST(GraphFormat, MissingFileIsIoError) {
  EXPECT_THROW(load_graph("/nonexistent/rigbd.graph"), IoError);
}

TEST(PoisonedFormat, SingleStreamRoundTrip) {
  const auto pg = sample_poisoned();
  std::stringstream s;
  write_poisoned(s, pg);
  const auto back = read_poisoned(s);
  expect_same_graph(back.graph, pg.graph);
  EXPECT_EQ(back.poisoned, pg.poisoned);
  EXPECT_EQ(back.original_labels, pg.original_labels);
  EXPECT_EQ(back.trigger_nodes, pg.trigger_nodes);
  EXPECT_EQ(back.trigger_edges, pg.trigger_edges);
  EXPECT_EQ(back.target_class, pg.target_class);
  EXPECT_EQ(back.seed, pg.seed);
  EXPECT_EQ(back.spec.kind, pg.spec.kind);
  EXPECT_EQ(back.spec.topology, pg.spec.topology);
  EXPECT_EQ(back.spec.attach_edges, pg.spec.attach_edges);
  EXPECT_EQ(back.spec.trigger_size, pg.spec.trigger_size);
  EXPECT_EQ(back.spec.noise_scale, pg.spec.noise_scale);
  EXPECT_EQ(back.spec.pattern_seed, pg.spec.pattern_seed);
}

TEST(PoisonedFormat, TwoFileRoundTrip) {
  const auto dir = scratch_dir("poisoned");
  const auto pg = sample_poisoned();
  save_poisoned((dir / "t.graph").string(), (dir / "t.groundtruth").string(), pg);
  const auto back = load_poisoned((dir / "t.graph").string(), (dir / "t.groundtruth").string());
  EXPECT_EQ(back.poisoned, pg.poisoned);
  EXPECT_EQ(back.trigger_edges, pg.trigger_edges);
  expect_same_graph(restore_clean(back), restore_clean(pg));
}

TEST(PoisonedFormat, GroundTruthErrors) {
  const auto pg = sample_poisoned();
  std::stringstream gs;
  write_graph(gs, pg.graph);
  const std::string graph_text = gs.str();
  const std::vector<std::string> bad{
      "TARGET 1\n",
      "GROUNDTRUTH\nPOISONED 1\n",
      "GROUNDTRUTH\nTARGET 0\nSPEC weird 3 1 clique 0.1 0\n",
      "GROUNDTRUTH\nTARGET 0\nPOISONED 99999\n",
      "GROUNDTRUTH\nTARGET 0\nTRIGGER_EDGE 0 1\nTRIGGER_EDGE 0 0\n",
      "GROUNDTRUTH\nTARGET 0\nPOISONED 1 2\nORIGINAL_LABELS 3\n",
      "GROUNDTRUTH\nTARGET 0\nWHAT 1\n",
  };
  for (const auto& truth : bad) {
    std::istringstream g(graph_text), t(truth);
    EXPECT_THROW(read_poisoned(g, t), IoError) << truth;
  }
  std::istringstream plain(graph_text + "GROUNDTRUTH\nTARGET 0\n");
  EXPECT_THROW(read_graph(plain), IoError);
}

TEST(Checkpoint, BitwiseRoundTrip) {
  auto model = init_gcn(9, 5, 4, NormMode::without_self_loops, 77);
  model.weights[0](0, 0) = -0.0;
  model.weights[1](1, 2) = 1e-310;  // subnormal
  model.weights[1](0, 1) = std::nextafter(1.0, 2.0);
  std::stringstream s;
  write_checkpoint(s, model);
  const auto back = read_checkpoint(s);
  EXPECT_EQ(back.norm_mode, model.norm_mode);
  EXPECT_EQ(back.seed, model.seed);
  ASSERT_EQ(back.weights.size(), model.weights.size());
  for (std::size_t l = 0; l < model.weights.size(); ++l) EXPECT_EQ(back.weights[l], model.weights[l]);
  EXPECT_TRUE(std::signbit(back.weights[0](0, 0)));
  EXPECT_EQ(model_id(back), model_id(model));
}

TEST(Checkpoint, FileRoundTripAndErrors) {
  const auto dir = scratch_dir("ckpt");
  const auto model = init_gcn(3, 2, 2, NormMode::with_self_loops, 1);
  save_checkpoint((dir / "m.ckpt").string(), model);
  EXPECT_EQ(load_checkpoint((dir / "m.ckpt").string()).weights[1], model.weights[1]);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), IoError);
  for (const std::string text : {"rigbd-checkpoint 9\n", "garbage\n",
                                 "rigbd-checkpoint 1\nnorm_mode with_self_loops\nseed 0\nlayers 1\nW 2 2\n0x1p+0 0x1p+0\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(read_checkpoint(in), IoError) << text;
  }
}

TEST(Linqs, CoraShapedFixture) {
  const auto dir = scratch_dir("linqs");
  write_linqs_fixture(dir, 2708, 1443, 7, 5429, 1);
  const auto g = load_linqs((dir / "cora.content").string(), (dir / "cora.cites").string());
  EXPECT_EQ(g.num_nodes(), 2708u);
  EXPECT_EQ(g.num_edges(), 5429u);
  EXPECT_EQ(g.feature_dim(), 1443u);
  EXPECT_EQ(g.num_classes(), 7u);
  EXPECT_EQ(g.label(0), 0);  // "Case_Based" sorts first
  EXPECT_EQ(g.label(6), 6);  // "Theory" sorts last
  const auto split = assign_split(g, 0.8, 3);
  EXPECT_EQ(split.mask(masks::kLabeled).size(), 2166u);
  EXPECT_EQ(split.mask(masks::kTest).size(), 542u);
}

TEST(Linqs, Errors) {
  std::istringstream ragged("1 0 1 A\n2 0 B\n"), cites("");
  EXPECT_THROW(read_linqs(ragged, cites), IoError);
  std::istringstream dup("1 0 A\n1 1 B\n"), cites2("");
  EXPECT_THROW(read_linqs(dup, cites2), IoError);
  std::istringstream ok("1 0 A\n2 1 B\n"), bad_cites("1 2 3\n");
  EXPECT_THROW(read_linqs(ok, bad_cites), IoError);
  EXPECT_THROW(load_linqs("/nonexistent/c", "/nonexistent/e"), IoError);
}

TEST(Reports, DetectionJsonRoundTrip) {
  DetectionResult d;
  d.target_class = 4;
  d.threshold = 0.12345678901234567;
  d.candidates = {3, 8, 21};
  d.order = {8, 3, 21, 0, 1};
  d.fallback = true;
  VarianceScores s;
  s.scores = {0.0, 0.01, 0.5, 1.0, 0.2, 0.3, 0.1, 0.7, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9};
  s.drop_spec.iterations = 7;
  const std::vector<NodeId> labeled{0, 1, 3, 8, 21};
  const auto j = detection_json(d, s, labeled, 4);
  const auto back = detection_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.target_class, d.target_class);
  EXPECT_EQ(back.threshold, d.threshold);
  EXPECT_EQ(back.candidates, d.candidates);
  EXPECT_EQ(back.order, d.order);
  EXPECT_EQ(back.fallback, d.fallback);
  EXPECT_EQ(j.at("drop_spec").at("iterations"), 7);
  const auto counts = j.at("scores_histogram").at("counts").get<std::vector<std::size_t>>();
  EXPECT_EQ(counts, (std::vector<std::size_t>{2, 1, 1, 1}));
  EXPECT_THROW(detection_from_json(nlohmann::json{{"target_class", 1}}), IoError);
}

TEST(Reports, HistogramEdges) {
  const std::vector<double> s{1.0, 1.0, 1.0};
  const std::vector<NodeId> all{0, 1, 2};
  const auto h = histogram(s, all, 3);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{3, 0, 0}));
  EXPECT_EQ(h.edges.size(), 4u);
  EXPECT_THROW(histogram(s, all, 0), InvalidArgument);
}

TEST(Reports, MetricsJsonAndCsv) {
  Metrics m;
  m.asr = 0.1;
  m.clean_acc = 0.987654321;
  m.recall = 0.75;
  m.precision = 1.0;
  m.has_detection = true;
  m.asr_count = 170;
  m.clean_count = 200;
  m.defense_ms = 1234.5;
  const auto back = metrics_from_json(nlohmann::json::parse(metrics_json(m).dump()));
  EXPECT_EQ(back.asr, m.asr);
  EXPECT_EQ(back.clean_acc, m.clean_acc);
  EXPECT_EQ(back.asr_count, m.asr_count);
  EXPECT_EQ(back.defense_ms, m.defense_ms);
  std::ostringstream csv;
  write_metrics_csv(csv, m);
  EXPECT_EQ(csv.str(),
            "asr,clean_acc,recall,precision,has_detection,asr_count,clean_count,defense_ms\n"
            "0.1,0.987654321,0.75,1,1,170,200,1234.5\n");
  EXPECT_THROW(metrics_from_json(nlohmann::json::object()), IoError);
}

TEST(Reports, ScoresTsv) {
  const auto pg = sample_poisoned();
  std::vector<double> scores(pg.graph.num_nodes());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = 0.1 * static_cast<double>(i);
  std::ostringstream os;
  write_scores_tsv(os, pg.graph, scores, pg.poisoned);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "node_id\tscore\tlabel\tis_ground_truth_poisoned");
  std::size_t rows = 0, flagged = 0;
  while (std::getline(in, line)) {
    std::istringstream r(line);
    std::size_t id;
    double score;
    int label, poisoned;
    r >> id >> score >> label >> poisoned;
    EXPECT_EQ(id, rows);
    EXPECT_EQ(score, scores[id]);
    EXPECT_EQ(label, pg.graph.labels()[id]);
    flagged += static_cast<std::size_t>(poisoned);
    ++rows;
  }
  EXPECT_EQ(rows, pg.graph.num_nodes());
  EXPECT_EQ(flagged, pg.poisoned.size());
}

TEST(Reports, SweepCsv) {
  std::vector<SweepRow> rows(2);
  rows[0].iterations = 5;
  rows[0].beta = 0.3;
  rows[0].metrics.asr = 0.5;
  rows[1].iterations = 25;
  rows[1].beta = 0.9;
  std::ostringstream os;
  write_sweep_csv(os, rows);
  EXPECT_EQ(os.str(), "K,beta,asr,acc,recall,precision\n5,0.3,0.5,0,0,0\n25,0.9,0,0,0,0\n");
}

TEST(Reports, JsonFiles) {
  const auto dir = scratch_dir("json");
  const nlohmann::json j{{"a", 1}, {"b", {1.5, 2.5}}};
  write_json((dir / "x.json").string(), j);
  EXPECT_EQ(read_json((dir / "x.json").string()), j);
  std::ofstream((dir / "bad.json")) << "{not json";
  EXPECT_THROW(read_json((dir / "bad.json").string()), IoError);
  EXPECT_THROW(write_json("/nonexistent/dir/x.json", j), IoError);
}
