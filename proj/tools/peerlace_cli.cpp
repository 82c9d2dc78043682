// Command-line front end for the simulator.
//
//   peerlace run --scenario <file> --out <dir> [--mode det|conc] [--seed N]
//   peerlace compare-store --len N --grads K [--reps R]
//   peerlace scaling --peers 4,6,8 --batches 8,16,32 [--scenario <file>] [--epochs E]
//   peerlace attack-study --rule zeno|meamed|average --attack signflip|noise|none
//
// Exit codes: 0 success, 2 configuration error, 1 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "peerlace/harness.hpp"
#include "peerlace/peer_runtime.hpp"
#include "peerlace/scenario.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 1;

using namespace peerlace;

void print_summary(const runtime::RunMetrics& m) {
  auto j = harness::to_json(m);
  j.erase("rows");
  j.erase("ledgers");
  std::cout << j.dump(2) << '\n';
}

RunMode parse_mode(const std::string& s) {
  if (s == "det") return RunMode::Deterministic;
  if (s == "conc") return RunMode::Concurrent;
  throw ConfigError("--mode must be det or conc");
}

faults::AttackKind parse_attack(const std::string& s) {
  if (s == "signflip") return faults::AttackKind::SignFlip;
  if (s == "noise") return faults::AttackKind::GaussianNoise;
  if (s == "none") return faults::AttackKind::None;
  throw ConfigError("--attack must be signflip, noise or none");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peer-to-peer serverless training simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a scenario file");
  std::string scenario_path, out_dir, mode;
  std::optional<std::uint64_t> seed;
  run->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--mode", mode, "det or conc");
  run->add_option("--seed", seed, "master seed (overrides PEERLACE_SEED and the file)");

  auto* compare = app.add_subcommand("compare-store", "in-store vs external byte comparison");
  std::size_t len = 1000, grads = 10, reps = 100;
  compare->add_option("--len", len, "model length")->required();
  compare->add_option("--grads", grads, "gradients averaged")->required();
  compare->add_option("--reps", reps, "random trials");

  auto* scaling = app.add_subcommand("scaling", "peer-count x batch-size grid");
  std::vector<std::size_t> peer_counts, batch_sizes;
  std::string scaling_base, scaling_out;
  std::size_t scaling_epochs = 5;
  scaling->add_option("--peers", peer_counts, "peer counts")->delimiter(',')->required();
  scaling->add_option("--batches", batch_sizes, "batch sizes")->delimiter(',')->required();
  scaling->add_option("--scenario", scaling_base, "base scenario file");
  scaling->add_option("--epochs", scaling_epochs, "epochs per cell");
  scaling->add_option("--out", scaling_out, "write scaling.csv here");

  auto* attack = app.add_subcommand("attack-study", "one run of the Byzantine attack study");
  std::string rule_name, attack_name, attack_out, crypto_name = "rsa";
  std::optional<std::size_t> attack_epochs;
  attack->add_option("--rule", rule_name, "zeno, meamed, average, marmed or geomed")->required();
  attack->add_option("--attack", attack_name, "signflip, noise or none")->required();
  attack->add_option("--epochs", attack_epochs, "override the 200-epoch default");
  attack->add_option("--crypto", crypto_name, "rsa or fake");
  attack->add_option("--out", attack_out, "write metrics here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) {
      Scenario s = load_scenario(scenario_path);
      if (!mode.empty()) s.mode = parse_mode(mode);
      harness::apply_seed_override(s, seed);
      s.validate();
      const auto metrics = runtime::run_scenario(s);
      harness::emit(metrics, harness::Format::Csv, out_dir);
      harness::emit(metrics, harness::Format::Json, out_dir);
      print_summary(metrics);
    } else if (*compare) {
      std::cout << harness::to_json(harness::compare_store_paths(len, grads, reps)).dump(2) << '\n';
    } else if (*scaling) {
      Scenario base = scaling_base.empty() ? Scenario{} : load_scenario(scaling_base);
      if (scaling_base.empty()) base.name = "scaling";
      base.training.max_epochs = scaling_epochs;
      harness::apply_seed_override(base, std::nullopt);
      const auto csv = harness::scaling_csv(harness::scaling_study(peer_counts, batch_sizes, base));
      std::cout << csv;
      if (!scaling_out.empty()) {
        std::filesystem::create_directories(scaling_out);
        std::ofstream(std::filesystem::path(scaling_out) / "scaling.csv") << csv;
      }
    } else if (*attack) {
      aggregation::RuleKind rule;
      try {
        rule = aggregation::rule_from_string(rule_name);
      } catch (const ContractViolation& e) {
        throw ConfigError(e.what());
      }
      Scenario s = attack_study_scenario(rule, parse_attack(attack_name));
      s.crypto = crypto_name;
      if (attack_epochs) s.training.max_epochs = *attack_epochs;
      harness::apply_seed_override(s, std::nullopt);
      s.validate();
      const auto metrics = runtime::run_scenario(s);
      if (!attack_out.empty()) {
        harness::emit(metrics, harness::Format::Csv, attack_out);
        harness::emit(metrics, harness::Format::Json, attack_out);
      }
      print_summary(metrics);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
