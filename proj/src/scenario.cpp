#include "peerlace/scenario.hpp"

#include <fstream>
#include <set>

namespace peerlace {

using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects any it was not asked about.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.contains(k)) throw ConfigError(where_ + ": unknown field '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

RunMode mode_from_string(const std::string& s) {
  if (s == "det" || s == "deterministic") return RunMode::Deterministic;
  if (s == "conc" || s == "concurrent") return RunMode::Concurrent;
  throw ConfigError("mode must be 'det' or 'conc', got '" + s + "'");
}

faults::AttackKind attack_from_string(const std::string& s) {
  if (s == "none") return faults::AttackKind::None;
  if (s == "signflip") return faults::AttackKind::SignFlip;
  if (s == "noise") return faults::AttackKind::GaussianNoise;
  throw ConfigError("attack.kind must be none, signflip or noise, got '" + s + "'");
}

faults::FaultTiming timing_from_string(const std::string& s) {
  if (s == "epoch_start") return faults::FaultTiming::EpochStart;
  if (s == "post_heartbeat") return faults::FaultTiming::PostHeartbeat;
  throw ConfigError("fault timing must be epoch_start or post_heartbeat, got '" + s + "'");
}

}  // namespace

void Scenario::validate() const {
  try {
    if (n_peers < 2) throw ConfigError("n_peers must be at least 2");
    if (dataset.dim == 0) throw ConfigError("dataset.dim must be positive");
    if (dataset.samples < n_peers) throw ConfigError("dataset.samples must be at least n_peers");
    if (dataset.validation_samples == 0) throw ConfigError("dataset.validation_samples must be positive");
    if (dataset.zeno_samples == 0) throw ConfigError("dataset.zeno_samples must be positive");
    if (!(dataset.noise_sigma >= 0.0)) throw ConfigError("dataset.noise_sigma must be non-negative");
    training.validate();
    if (rule.byzantine_bound >= n_peers)
      throw ConfigError("aggregation.byzantine_bound must be below n_peers");
    if (!(rule.geomed_tolerance > 0.0)) throw ConfigError("aggregation.geomed_tolerance must be positive");
    if (rule.geomed_max_iter == 0) throw ConfigError("aggregation.geomed_max_iter must be positive");
    if (!(zeno_rho >= 0.0)) throw ConfigError("aggregation.zeno_rho must be non-negative");
    if (heartbeat.trials == 0) throw ConfigError("heartbeat.trials must be at least 1");
    if (crypto != "rsa" && crypto != "fake") throw ConfigError("crypto must be 'rsa' or 'fake'");
    if (bytes.bytes_per_float == 0) throw ConfigError("store.bytes_per_float must be positive");

    std::set<int> initial;
    for (std::size_t i = 0; i < n_peers; ++i) initial.insert(static_cast<int>(i));
    faults::validate_schedule(faults, initial);
    faults::validate_attack(attack, initial);

    std::set<int> everyone = initial;
    std::map<int, std::size_t> joined_at;
    for (const auto& e : faults)
      if (e.kind == faults::FaultKind::JoinPeer) {
        everyone.insert(e.rank);
        joined_at[e.rank] = e.at_epoch;
      }
    std::size_t crashes = 0;
    for (const auto& e : faults) {
      if (e.kind != faults::FaultKind::CrashPeer) continue;
      ++crashes;
      if (auto j = joined_at.find(e.rank); j != joined_at.end() && e.at_epoch <= j->second)
        throw ConfigError("rank " + std::to_string(e.rank) + " crashes before it joins");
    }
    if (crashes >= everyone.size()) throw ConfigError("fault schedule leaves no surviving peer");
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  Fields top(j, "scenario");
  top.read("name", s.name);
  top.read("n_peers", s.n_peers);
  top.read("barrier_timeout", s.barrier_timeout);
  top.read("crypto", s.crypto);
  top.read("seed", s.seed);
  std::string mode = "det";
  top.read("mode", mode);
  s.mode = mode_from_string(mode);

  if (const json* d = top.child("dataset")) {
    Fields f(*d, "dataset");
    f.read("samples", s.dataset.samples);
    f.read("dim", s.dataset.dim);
    f.read("separation", s.dataset.separation);
    f.read("noise_sigma", s.dataset.noise_sigma);
    f.read("validation_samples", s.dataset.validation_samples);
    f.read("zeno_samples", s.dataset.zeno_samples);
    std::uint64_t seed = 0;
    if (d->contains("seed")) {
      f.read("seed", seed);
      s.dataset.seed = seed;
    }
    f.finish();
  }
  if (const json* t = top.child("training")) {
    Fields f(*t, "training");
    f.read("learning_rate", s.training.learning_rate);
    f.read("batch_size", s.training.batch_size);
    f.read("max_epochs", s.training.max_epochs);
    f.read("convergence_interval", s.training.convergence_interval);
    f.read("convergence_tolerance", s.training.convergence_tolerance);
    f.read("stop_on_convergence", s.stop_on_convergence);
    f.finish();
  }
  if (const json* a = top.child("aggregation")) {
    Fields f(*a, "aggregation");
    std::string rule = "average";
    f.read("rule", rule);
    try {
      s.rule.kind = aggregation::rule_from_string(rule);
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
    f.read("byzantine_bound", s.rule.byzantine_bound);
    f.read("geomed_tolerance", s.rule.geomed_tolerance);
    f.read("geomed_max_iter", s.rule.geomed_max_iter);
    f.read("zeno_rho", s.zeno_rho);
    f.finish();
  }
  if (const json* a = top.child("attack")) {
    Fields f(*a, "attack");
    std::string kind = "none";
    f.read("kind", kind);
    s.attack.kind = attack_from_string(kind);
    f.read("epsilon", s.attack.epsilon);
    f.read("sigma", s.attack.sigma);
    f.read("malicious_ranks", s.attack.malicious_ranks);
    f.finish();
  }
  if (const json* list = top.child("faults")) {
    if (!list->is_array()) throw ConfigError("faults: expected an array");
    for (const auto& item : *list) {
      Fields f(item, "faults[]");
      faults::FaultEvent e;
      std::string kind;
      f.read("kind", kind);
      if (kind == "crash")
        e.kind = faults::FaultKind::CrashPeer;
      else if (kind == "join")
        e.kind = faults::FaultKind::JoinPeer;
      else
        throw ConfigError("faults[].kind must be crash or join, got '" + kind + "'");
      f.read("rank", e.rank);
      f.read("at_epoch", e.at_epoch);
      std::string timing = "post_heartbeat";
      f.read("timing", timing);
      e.timing = timing_from_string(timing);
      f.finish();
      s.faults.push_back(e);
    }
  }
  if (const json* h = top.child("heartbeat")) {
    Fields f(*h, "heartbeat");
    f.read("timeout", s.heartbeat.timeout);
    f.read("trials", s.heartbeat.trials);
    f.finish();
  }
  if (const json* b = top.child("store")) {
    Fields f(*b, "store");
    f.read("bytes_per_float", s.bytes.bytes_per_float);
    f.read("command_overhead", s.bytes.command_overhead);
    f.finish();
  }
  top.finish();
  s.validate();
  return s;
}

json scenario_to_json(const Scenario& s) {
  json dataset{{"samples", s.dataset.samples},
               {"dim", s.dataset.dim},
               {"separation", s.dataset.separation},
               {"noise_sigma", s.dataset.noise_sigma},
               {"validation_samples", s.dataset.validation_samples},
               {"zeno_samples", s.dataset.zeno_samples}};
  if (s.dataset.seed) dataset["seed"] = *s.dataset.seed;
  json fault_list = json::array();
  for (const auto& e : s.faults)
    fault_list.push_back({{"kind", e.kind == faults::FaultKind::CrashPeer ? "crash" : "join"},
                          {"rank", e.rank},
                          {"at_epoch", e.at_epoch},
                          {"timing", std::string(faults::to_string(e.timing))}});
  return json{
      {"name", s.name},
      {"n_peers", s.n_peers},
      {"dataset", dataset},
      {"training",
       {{"learning_rate", s.training.learning_rate},
        {"batch_size", s.training.batch_size},
        {"max_epochs", s.training.max_epochs},
        {"convergence_interval", s.training.convergence_interval},
        {"convergence_tolerance", s.training.convergence_tolerance},
        {"stop_on_convergence", s.stop_on_convergence}}},
      {"aggregation",
       {{"rule", std::string(aggregation::to_string(s.rule.kind))},
        {"byzantine_bound", s.rule.byzantine_bound},
        {"geomed_tolerance", s.rule.geomed_tolerance},
        {"geomed_max_iter", s.rule.geomed_max_iter},
        {"zeno_rho", s.zeno_rho}}},
      {"attack",
       {{"kind", std::string(faults::to_string(s.attack.kind))},
        {"epsilon", s.attack.epsilon},
        {"sigma", s.attack.sigma},
        {"malicious_ranks", s.attack.malicious_ranks}}},
      {"faults", fault_list},
      {"heartbeat", {{"timeout", s.heartbeat.timeout}, {"trials", s.heartbeat.trials}}},
      {"barrier_timeout", s.barrier_timeout},
      {"store",
       {{"bytes_per_float", s.bytes.bytes_per_float},
        {"command_overhead", s.bytes.command_overhead}}},
      {"crypto", s.crypto},
      {"seed", s.seed},
      {"mode", s.mode == RunMode::Deterministic ? "det" : "conc"}};
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario file " + path.string() + " is not valid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

Scenario attack_study_scenario(aggregation::RuleKind rule, faults::AttackKind attack) {
  Scenario s;
  s.name = std::string("attack-") + std::string(aggregation::to_string(rule)) + "-" +
           std::string(faults::to_string(attack));
  s.n_peers = 4;
  s.dataset.samples = 2000;
  s.dataset.dim = 8;
  s.training.max_epochs = 200;
  s.rule.kind = rule;
  s.rule.byzantine_bound = 1;
  s.attack.kind = attack;
  if (attack != faults::AttackKind::None) s.attack.malicious_ranks = {3};
  s.seed = 20240601;
  return s;
}

}  // namespace peerlace
