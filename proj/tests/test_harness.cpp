#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "peerlace/harness.hpp"
#include "peerlace/scenario.hpp"

using namespace peerlace;
namespace fs = std::filesystem;

namespace {

Scenario small_scenario() {
  Scenario s;
  s.name = "small";
  s.n_peers = 3;
  s.crypto = "fake";
  s.dataset.samples = 300;
  s.dataset.dim = 4;
  s.dataset.validation_samples = 100;
  s.training.batch_size = 20;
  s.training.max_epochs = 12;
  s.seed = 99;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("peerlace-test-" + name);
  fs::remove_all(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PEERLACE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(ScenarioConfig, RejectsBadValues) {
  auto s = small_scenario();
  s.n_peers = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(runtime::run_scenario(s), ConfigError);
  s = small_scenario();
  s.faults = {{faults::FaultKind::CrashPeer, 7, 2}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.faults = {{faults::FaultKind::JoinPeer, 3, 5}, {faults::FaultKind::CrashPeer, 3, 5}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.faults = {{faults::FaultKind::CrashPeer, 0, 2}, {faults::FaultKind::CrashPeer, 1, 2},
              {faults::FaultKind::CrashPeer, 2, 3}};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_scenario();
  s.crypto = "rot13";
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(ScenarioConfig, JsonRoundTripAndUnknownFields) {
  auto s = small_scenario();
  s.faults = {{faults::FaultKind::CrashPeer, 1, 3, faults::FaultTiming::EpochStart}};
  s.attack = {faults::AttackKind::SignFlip, 10, 1, {2}};
  s.rule.kind = aggregation::RuleKind::Zeno;
  auto j = scenario_to_json(s);
  EXPECT_EQ(scenario_to_json(scenario_from_json(j)), j);

  auto bad = j;
  bad["colour"] = "blue";
  EXPECT_THROW(scenario_from_json(bad), ConfigError);
  bad = j;
  bad["training"]["momentum"] = 0.9;
  EXPECT_THROW(scenario_from_json(bad), ConfigError);
  bad = j;
  bad["faults"][0]["severity"] = 1;
  EXPECT_THROW(scenario_from_json(bad), ConfigError);
  bad = j;
  bad["n_peers"] = "four";
  EXPECT_THROW(scenario_from_json(bad), ConfigError);
  EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST(ScenarioConfig, SeedPrecedence) {
  auto s = small_scenario();
  ::unsetenv("PEERLACE_SEED");
  harness::apply_seed_override(s, std::nullopt);
  EXPECT_EQ(s.seed, 99u);
  ::setenv("PEERLACE_SEED", "1234", 1);
  harness::apply_seed_override(s, std::nullopt);
  EXPECT_EQ(s.seed, 1234u);
  harness::apply_seed_override(s, 5u);
  EXPECT_EQ(s.seed, 5u);
  ::setenv("PEERLACE_SEED", "abc", 1);
  EXPECT_THROW(harness::apply_seed_override(s, std::nullopt), ConfigError);
  ::unsetenv("PEERLACE_SEED");
}

TEST(Emit, CsvHeaderAndOneRowPerPeerEpoch) {
  auto m = runtime::run_scenario(small_scenario());
  auto csv = harness::to_csv(m);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,peer,active_count,train_loss,val_accuracy,bytes_in,bytes_out,event");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(1 + m.rows.size()));
  EXPECT_EQ(m.rows.size(), 3u * m.summary.epochs_run);
  std::size_t last = 0;
  for (const auto& r : m.rows) {
    EXPECT_GE(r.epoch, last);
    last = r.epoch;
  }
}

TEST(Emit, JsonPassesSchemaCheck) {
  auto m = runtime::run_scenario(small_scenario());
  auto doc = harness::to_json(m);
  EXPECT_EQ(harness::check_metrics_json(doc), "");
  auto reparsed = nlohmann::json::parse(doc.dump());
  EXPECT_EQ(harness::check_metrics_json(reparsed), "");
  auto broken = doc;
  broken["rows"][0].erase("val_accuracy");
  EXPECT_NE(harness::check_metrics_json(broken), "");
  broken = doc;
  broken.erase("summary");
  EXPECT_NE(harness::check_metrics_json(broken), "");
}

TEST(Emit, WritesFilesAndReportsUnwritablePaths) {
  auto m = runtime::run_scenario(small_scenario());
  auto dir = scratch("emit");
  auto csv = harness::emit(m, harness::Format::Csv, dir / "nested");
  auto json = harness::emit(m, harness::Format::Json, dir / "nested");
  EXPECT_EQ(slurp(csv), harness::to_csv(m));
  EXPECT_EQ(harness::check_metrics_json(nlohmann::json::parse(slurp(json))), "");

  std::ofstream(dir / "plain-file") << "x";
  EXPECT_THROW(harness::emit(m, harness::Format::Csv, dir / "plain-file" / "sub"), harness::IoError);
  EXPECT_THROW(harness::emit(m, harness::Format::Csv, "/proc/peerlace"), harness::IoError);
  fs::remove_all(dir);
}

TEST(Determinism, SameScenarioSameBytes) {
  auto s = small_scenario();
  s.faults = {{faults::FaultKind::CrashPeer, 2, 4}};
  s.attack = {faults::AttackKind::GaussianNoise, 10, 1, {1}};
  s.rule.kind = aggregation::RuleKind::Meamed;
  const auto a = harness::to_csv(runtime::run_scenario(s));
  const auto b = harness::to_csv(runtime::run_scenario(s));
  EXPECT_EQ(a, b);
  s.seed += 1;
  EXPECT_NE(a, harness::to_csv(runtime::run_scenario(s)));
}

TEST(Determinism, EmptyScheduleMatchesBaseline) {
  auto s = small_scenario();
  auto with_none = s;
  with_none.attack = {faults::AttackKind::None, 10, 1, {0}};
  EXPECT_EQ(harness::to_csv(runtime::run_scenario(s)), harness::to_csv(runtime::run_scenario(with_none)));
}

TEST(StoreComparison, ByteContractAndEquality) {
  auto c = harness::compare_store_paths(1000, 10, 100);
  EXPECT_EQ(c.update.external, 24000u);
  EXPECT_LE(c.update.instore, 64u);
  EXPECT_GE(c.update.reduction(), 0.997);
  EXPECT_GE(c.average.external, 88000u);
  EXPECT_LE(c.average.instore, 64u);
  EXPECT_TRUE(c.outputs_identical);
  EXPECT_EQ(c.mismatches, 0u);
  auto j = harness::to_json(c);
  EXPECT_TRUE(j.contains("average"));
  EXPECT_TRUE(j.contains("update"));
}

TEST(Scaling, GridShapeAndConservation) {
  auto base = small_scenario();
  base.dataset.samples = 9600;
  base.training.max_epochs = 2;
  base.stop_on_convergence = false;
  auto rows = harness::scaling_study({4, 6, 8}, {8, 16}, base);
  ASSERT_EQ(rows.size(), 6u);
  std::map<std::size_t, std::set<std::size_t>> grads_by_batch;
  for (const auto& r : rows) {
    grads_by_batch[r.batch_size].insert(r.gradients_per_epoch);
    const std::size_t per_peer = 9600 / r.peers;
    EXPECT_EQ(r.max_shards_per_peer, (per_peer + r.batch_size - 1) / r.batch_size);
    EXPECT_EQ(r.rows_per_epoch, 9600u);
  }
  for (const auto& [batch, counts] : grads_by_batch) {
    EXPECT_EQ(counts.size(), 1u) << "batch " << batch;
    EXPECT_EQ(*counts.begin(), 9600u / batch);
  }
  for (std::size_t p : {4u, 6u, 8u}) {
    const auto find = [&](std::size_t b) {
      return std::find_if(rows.begin(), rows.end(),
                          [&](const auto& r) { return r.peers == p && r.batch_size == b; });
    };
    EXPECT_GT(find(8)->max_shards_per_peer, find(16)->max_shards_per_peer);
  }
  auto csv = harness::scaling_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Secrets, NoCredentialsInAnyOutput) {
  auto s = small_scenario();
  s.crypto = "rsa";
  s.training.max_epochs = 6;
  s.faults = {{faults::FaultKind::JoinPeer, 3, 2}, {faults::FaultKind::CrashPeer, 0, 4}};
  runtime::Simulation sim(s);
  auto m = sim.run();
  auto dir = scratch("secrets");
  const std::string outputs = slurp(harness::emit(m, harness::Format::Csv, dir)) +
                              slurp(harness::emit(m, harness::Format::Json, dir)) +
                              harness::to_json(m).dump();
  auto provider = crypto::make_provider("rsa");
  ASSERT_EQ(sim.network().peers().size(), 4u);
  for (const auto& [r, node] : sim.network().peers()) {
    const auto seed = crypto::derive_seed(crypto::derive_seed(s.seed, "peer-" + std::to_string(r)), "keypair");
    const auto raw = provider->generate(seed);
    ASSERT_EQ(raw.public_key, node->keys().public_key);
    EXPECT_EQ(outputs.find(node->own_password()), std::string::npos);
    EXPECT_EQ(outputs.find(crypto::base64_encode(raw.private_key)), std::string::npos);
    EXPECT_EQ(outputs.find(crypto::to_string(raw.private_key)), std::string::npos);
    for (const auto& [o, rec] : node->trusted())
      EXPECT_EQ(rec.to_json().dump().find(sim.network().peer(o).own_password()), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(ShippedScenarios, AllParseAndFinishInUnderAMinute) {
  const fs::path dir = fs::path(PEERLACE_SOURCE_DIR) / "scenarios";
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    ++count;
    auto s = load_scenario(entry.path());
    const auto t0 = std::chrono::steady_clock::now();
    auto m = runtime::run_scenario(s);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 60.0) << entry.path();
    EXPECT_GT(m.summary.epochs_run, 0u);
    EXPECT_EQ(harness::check_metrics_json(harness::to_json(m)), "") << entry.path();
  }
  EXPECT_GE(count, 5u);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  auto s = small_scenario();
  std::ofstream(dir / "ok.json") << scenario_to_json(s).dump();
  s.n_peers = 0;
  std::ofstream(dir / "zero.json") << scenario_to_json(s).dump();
  std::ofstream(dir / "garbage.json") << "{ not json";
  std::ofstream(dir / "blocker") << "x";

  EXPECT_EQ(run_cli("run --scenario " + (dir / "ok.json").string() + " --out " + (dir / "out").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "metrics.json"));
  EXPECT_EQ(run_cli("run --scenario " + (dir / "zero.json").string() + " --out " + (dir / "o2").string()), 2);
  EXPECT_EQ(run_cli("run --scenario " + (dir / "garbage.json").string() + " --out " + (dir / "o3").string()), 2);
  EXPECT_EQ(run_cli("run --scenario " + (dir / "missing.json").string() + " --out " + (dir / "o4").string()), 2);
  EXPECT_EQ(run_cli("run --scenario " + (dir / "ok.json").string() + " --out " + (dir / "blocker" / "x").string()), 1);
  EXPECT_EQ(run_cli("run --scenario " + (dir / "ok.json").string() + " --out " + (dir / "o5").string() + " --mode sideways"), 2);
  EXPECT_EQ(run_cli("compare-store --len 200 --grads 3 --reps 5"), 0);
  EXPECT_EQ(run_cli("compare-store --len 0 --grads 3"), 2);
  EXPECT_EQ(run_cli("attack-study --rule krum --attack signflip"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  fs::remove_all(dir);
}

TEST(Cli, SeedFlagAndEnvironmentChangeOutput) {
  const auto dir = scratch("cli-seed");
  fs::create_directories(dir);
  std::ofstream(dir / "s.json") << scenario_to_json(small_scenario()).dump();
  const std::string base = "run --scenario " + (dir / "s.json").string() + " --out ";
  ASSERT_EQ(run_cli(base + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli(base + (dir / "b").string()), 0);
  ASSERT_EQ(run_cli(base + (dir / "c").string() + " --seed 4242"), 0);
  ASSERT_EQ(run_cli("--help"), 0);
  ::setenv("PEERLACE_SEED", "4242", 1);
  ASSERT_EQ(run_cli(base + (dir / "d").string()), 0);
  ::unsetenv("PEERLACE_SEED");
  const auto a = slurp(dir / "a" / "metrics.csv");
  EXPECT_EQ(a, slurp(dir / "b" / "metrics.csv"));
  EXPECT_NE(a, slurp(dir / "c" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "c" / "metrics.csv"), slurp(dir / "d" / "metrics.csv"));
  fs::remove_all(dir);
}
