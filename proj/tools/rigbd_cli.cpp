// Command-line driver: attack, defend, evaluate, theorems, sweep.
//
// Exit codes: 0 success, 1 invalid config or usage, 2 assertion or check
// failure, 3 I/O error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "rigbd/experiment.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kFailed = 2, kIo = 3 };

struct Options {
  std::string config_path;
  std::optional<std::size_t> threads;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
};

rigbd::ExperimentConfig resolve(const Options& o) {
  auto c = o.config_path.empty() ? rigbd::ExperimentConfig{} : rigbd::load_config(o.config_path);
  if (o.threads) c.threads = *o.threads;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.seed) c.global_seed = *o.seed;
  c.validate();
  return c;
}

void print_metrics(const rigbd::Metrics& m) {
  std::cout << "asr " << m.asr << " (" << m.asr_count << " nodes)\n"
            << "clean_acc " << m.clean_acc << " (" << m.clean_count << " nodes)\n";
  if (m.has_detection) std::cout << "recall " << m.recall << "\nprecision " << m.precision << '\n';
}

int run(const std::string& cmd, const Options& o) {
  const auto c = resolve(o);
  if (cmd == "attack") {
    const auto out = rigbd::cmd_attack(c);
    std::cout << "wrote attack outputs to " << rigbd::output_path(c).string() << " ("
              << out.train.poisoned.size() << " poisoned training nodes, " << out.unseen.poisoned.size()
              << " triggered unseen nodes)\n";
  } else if (cmd == "defend") {
    const auto manifest = rigbd::cmd_defend(c);
    std::cout << "defense " << manifest.at("defense").get<std::string>();
    if (manifest.contains("num_candidates"))
      std::cout << ": " << manifest.at("num_candidates") << " candidates, target class "
                << manifest.at("target_class");
    std::cout << '\n';
  } else if (cmd == "evaluate") {
    print_metrics(rigbd::cmd_evaluate(c));
  } else if (cmd == "run") {
    rigbd::cmd_attack(c);
    rigbd::cmd_defend(c);
    print_metrics(rigbd::cmd_evaluate(c));
  } else if (cmd == "theorems") {
    if (!rigbd::cmd_theorems(c, std::cout).passed()) return kFailed;
  } else if (cmd == "sweep") {
    const auto rows = rigbd::cmd_sweep(c);
    std::cout << "wrote " << rows.size() << " sweep rows to "
              << (rigbd::output_path(c) / rigbd::files::kSweep).string() << '\n';
  } else if (cmd == "config") {
    std::cout << rigbd::config_to_json(c).dump(2) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomized edge-drop backdoor detection and unlearning for GCNs"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options opts;
  app.add_option("-c,--config", opts.config_path, "JSON experiment config (defaults when omitted)");
  app.add_option("-o,--output-dir", opts.output_dir, "Override output_dir");
  app.add_option("-s,--seed", opts.seed, "Override global_seed");
  app.add_option("-t,--threads", opts.threads,
                 "Worker threads; 1 (default) keeps the deterministic single-threaded reduction")
      ->check(CLI::PositiveNumber);

  for (const auto& [name, help] : {
           std::pair{"attack", "Split the dataset and plant triggers; writes graphs and ground truth"},
           std::pair{"defend", "Run the configured defense on the attacked training graph"},
           std::pair{"evaluate", "Score the defended model on the unseen graph"},
           std::pair{"run", "attack, defend and evaluate in sequence"},
           std::pair{"theorems", "Monte-Carlo checks of the three theorems"},
           std::pair{"sweep", "Defense over the (K, beta) grid; writes sweep.csv"},
           std::pair{"config", "Print the resolved configuration"},
       })
    app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    return run(app.get_subcommands().front()->get_name(), opts);
  } catch (const rigbd::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const rigbd::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return kFailed;
  }
}
