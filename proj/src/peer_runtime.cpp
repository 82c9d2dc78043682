#include "peerlace/peer_runtime.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace peerlace::runtime {

std::string grad_key(std::size_t index) { return "grad:" + std::to_string(index); }
std::string local_average_key(std::size_t epoch) { return "local_avg:" + std::to_string(epoch); }

namespace {

std::string inactive_key(std::size_t epoch) { return "inactive:" + std::to_string(epoch); }

std::set<int> senders(const mq::Queue& queue) {
  std::set<int> out;
  const std::size_t n = queue.count();
  if (n == 0) return out;
  for (const auto& m : queue.receive(n)) out.insert(m.sender_rank);
  return out;
}

}  // namespace

BarrierResult sync_barrier(const mq::Queue& queue, const std::set<int>& expected,
                           std::uint64_t timeout, const std::function<void()>& tick) {
  if (expected.empty()) throw ContractViolation("sync_barrier: active count must be >= 1");
  BarrierResult result;
  for (;;) {
    result.observed_count = queue.count();
    if (result.observed_count >= expected.size()) {
      result.status = BarrierStatus::Complete;
      break;
    }
    if (result.waited_ticks >= timeout) {
      result.status = BarrierStatus::TimedOut;
      break;
    }
    tick();
    ++result.waited_ticks;
  }
  result.seen = senders(queue);
  std::set_difference(expected.begin(), expected.end(), result.seen.begin(), result.seen.end(),
                      std::inserter(result.missing, result.missing.end()));
  return result;
}

std::set<int> consensus_inactive(const std::map<int, std::set<int>>& local_lists) {
  if (local_lists.empty()) return {};
  std::set<int> out = local_lists.begin()->second;
  for (const auto& [_, list] : local_lists) {
    std::set<int> next;
    std::set_intersection(out.begin(), out.end(), list.begin(), list.end(),
                          std::inserter(next, next.end()));
    out = std::move(next);
  }
  return out;
}

ShardOwnership redistribute(const std::set<int>& failed, const std::set<int>& active,
                            const ShardOwnership& ownership) {
  for (int r : failed)
    if (active.contains(r)) throw ContractViolation("redistribute: rank is both failed and active");
  if (failed.empty()) return ownership;
  if (active.empty()) throw std::runtime_error("redistribute: no active peers left to take over shards");

  ShardOwnership out;
  std::vector<ShardId> orphaned;
  for (const auto& [rank, shards] : ownership) {
    if (failed.contains(rank))
      orphaned.insert(orphaned.end(), shards.begin(), shards.end());
    else
      out[rank] = shards;
  }
  for (int r : active) out[r];

  const std::size_t n = active.size();
  const std::size_t base = orphaned.size() / n;
  const std::size_t extra = orphaned.size() % n;
  std::size_t next = 0;
  std::size_t i = 0;
  for (int r : active) {
    const std::size_t take = base + (i < extra ? 1 : 0);
    auto& mine = out[r];
    mine.insert(mine.end(), orphaned.begin() + static_cast<std::ptrdiff_t>(next),
                orphaned.begin() + static_cast<std::ptrdiff_t>(next + take));
    next += take;
    ++i;
  }
  return out;
}

ShardOwnership rebalance_for_join(int new_rank, const ShardOwnership& ownership) {
  if (ownership.contains(new_rank))
    throw ContractViolation("rebalance_for_join: rank " + std::to_string(new_rank) + " already owns shards");
  ShardOwnership out = ownership;
  const std::size_t members = ownership.size();
  std::vector<ShardId> gained;
  for (auto& [rank, shards] : out) {
    const std::size_t give = shards.size() / (members + 1);
    gained.insert(gained.end(), shards.end() - static_cast<std::ptrdiff_t>(give), shards.end());
    shards.resize(shards.size() - give);
  }
  // Small holdings can round every share down to zero; the joiner then takes
  // one shard from the largest holder (lowest rank on ties) that can spare it.
  if (gained.empty()) {
    auto donor = out.end();
    for (auto it = out.begin(); it != out.end(); ++it)
      if (it->second.size() >= 2 && (donor == out.end() || it->second.size() > donor->second.size()))
        donor = it;
    if (donor != out.end()) {
      gained.push_back(donor->second.back());
      donor->second.pop_back();
    }
  }
  out[new_rank] = std::move(gained);
  return out;
}

bool convergence_check(std::span<const double> loss_history, const TrainingConfig& cfg) {
  if (loss_history.size() < 2) return false;
  const double change = loss_history[loss_history.size() - 2] - loss_history.back();
  return std::abs(change) < cfg.convergence_tolerance;
}

EpochConfig trigger_next_epoch(const EpochConfig& current, int self_rank,
                               const std::set<int>& consensus_result,
                               const std::set<int>& joined, const ShardOwnership& ownership,
                               std::size_t convergence_interval) {
  EpochConfig next;
  next.epoch = current.epoch + 1;
  auto it = ownership.find(self_rank);
  next.parallelism = it == ownership.end() ? 0 : it->second.size();
  next.convergence_check = convergence_due(next.epoch, convergence_interval);
  for (int r : current.active_ranks)
    if (!consensus_result.contains(r)) next.active_ranks.insert(r);
  next.active_ranks.insert(joined.begin(), joined.end());
  return next;
}

PeerRuntime::PeerRuntime(identity::PeerNode& node, const SharedContext& ctx,
                         ShardOwnership ownership, EpochConfig first_epoch,
                         std::uint64_t attack_seed)
    : node_(node),
      ctx_(ctx),
      ownership_(std::move(ownership)),
      epoch_(std::move(first_epoch)),
      attack_rng_(attack_seed) {
  epoch_active_ = epoch_.active_ranks;
}

std::vector<ShardId> PeerRuntime::assigned_shards() const {
  auto it = ownership_.find(rank());
  return it == ownership_.end() ? std::vector<ShardId>{} : it->second;
}

void PeerRuntime::crash() {
  crashed_ = true;
  node_.store().take_down();
}

PeerStore* PeerRuntime::store_of(int r) {
  if (r == rank()) return &node_.store();
  const auto& trusted = node_.trusted();
  auto it = trusted.find(r);
  if (it == trusted.end()) throw NotFoundError("rank " + std::to_string(r) + " is not trusted");
  auto store = ctx_.network->directory().find(it->second.store_address);
  if (!store) throw StoreUnavailable("no route to " + it->second.store_address.to_string());
  return store.get();
}

std::string PeerRuntime::password_of(int r) {
  return r == rank() ? node_.own_password() : node_.password_for(r);
}

void PeerRuntime::begin_epoch() {
  ctx_.network->queues().queue(kSyncQueue).purge();
  unreachable_.clear();
  last_barrier_ = {};
}

HeartbeatResult PeerRuntime::heartbeat_check() {
  if (node_.trusted().empty() && epoch_.active_ranks.size() > 1)
    throw ContractViolation("heartbeat: peer has no trusted neighbours");
  HeartbeatResult result;
  result.active.insert(rank());
  for (const auto& [r, record] : node_.trusted()) {
    bool alive = false;
    for (std::size_t t = 0; t < ctx_.heartbeat.trials && !alive; ++t) {
      ++result.probes;
      auto store = ctx_.network->directory().find(record.store_address);
      alive = store && store->ping();
      if (!alive && ctx_.clock) ctx_.clock->advance(ctx_.heartbeat.timeout);
    }
    if (alive) {
      result.active.insert(r);
      inactive_local_.erase(r);
    } else if (inactive_local_.insert(r).second) {
      result.newly_inactive.insert(r);
    }
  }
  epoch_active_.clear();
  for (int r : result.active)
    if (r == rank() || epoch_.active_ranks.contains(r)) epoch_active_.insert(r);
  return result;
}

double PeerRuntime::compute_phase() {
  const auto shard_ids = assigned_shards();
  if (shard_ids.empty())
    throw ContractViolation("peer " + std::to_string(rank()) + " has no shards assigned");
  const auto& password = node_.own_password();
  PeerStore& store = node_.store();

  auto task = [&](std::size_t i) {
    const ModelParams params = ModelParams::unflatten(store.get_tensor(password, kModelKey));
    const LabeledBatch& batch = (*ctx_.shards)[shard_ids[i]];
    store.put_tensor(password, grad_key(i), compute_gradient(params, batch));
    return forward_loss(params, batch);
  };

  std::vector<double> losses(shard_ids.size());
  if (ctx_.concurrent) {
    std::vector<std::future<double>> pending;
    pending.reserve(shard_ids.size());
    for (std::size_t i = 0; i < shard_ids.size(); ++i)
      pending.push_back(std::async(std::launch::async, task, i));
    for (std::size_t i = 0; i < pending.size(); ++i) losses[i] = pending[i].get();
  } else {
    for (std::size_t i = 0; i < shard_ids.size(); ++i) losses[i] = task(i);
  }
  epoch_.parallelism = shard_ids.size();
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

void PeerRuntime::local_average_phase() {
  const auto& password = node_.own_password();
  PeerStore& store = node_.store();
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < epoch_.parallelism; ++i) keys.push_back(grad_key(i));
  const std::string out_key = local_average_key(epoch_.epoch);
  if (epoch_.epoch > 1) store.erase(password, local_average_key(epoch_.epoch - 1));
  store.instore_average(password, keys, out_key);

  if (ctx_.attack.targets(rank())) {
    const DenseVector honest = store.read_local(password, out_key);
    store.put_tensor(password, out_key, faults::apply_attack(ctx_.attack, rank(), honest, attack_rng_));
  }

  const nlohmann::json note{{"epoch", epoch_.epoch}, {"rank", rank()}};
  ctx_.network->queues().queue(kSyncQueue).send(rank(), note.dump(), ctx_.clock ? ctx_.clock->now() : 0);
}

BarrierResult PeerRuntime::wait_for_peers() {
  const bool concurrent = ctx_.concurrent;
  SimClock* clock = ctx_.clock;
  auto tick = [concurrent, clock] {
    if (clock) clock->advance();
    if (concurrent) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  };
  last_barrier_ = sync_barrier(ctx_.network->queues().queue(kSyncQueue), epoch_active_,
                               ctx_.barrier_timeout, tick);
  return last_barrier_;
}

DenseVector PeerRuntime::aggregate_phase() {
  const std::string key = local_average_key(epoch_.epoch);
  std::vector<DenseVector> grads;
  for (int r : epoch_active_) {
    try {
      if (r == rank())
        grads.push_back(node_.store().read_local(node_.own_password(), key));
      else
        grads.push_back(store_of(r)->get_tensor(password_of(r), key));
    } catch (const StoreUnavailable&) {
      unreachable_.insert(r);
    } catch (const NotFoundError&) {
      unreachable_.insert(r);
    }
  }
  const ModelParams params =
      ModelParams::unflatten(node_.store().read_local(node_.own_password(), kModelKey));
  DenseVector aggregate = aggregation::apply(ctx_.rule, grads, &params, ctx_.zeno);
  node_.store().put_tensor(node_.own_password(), kAggregateKey, aggregate);
  return aggregate;
}

void PeerRuntime::update_phase() {
  node_.store().instore_model_update(node_.own_password(), kModelKey, kAggregateKey,
                                     ctx_.training.learning_rate);
}

std::optional<bool> PeerRuntime::convergence_phase() {
  if (!epoch_.convergence_check) return std::nullopt;
  const ModelParams params =
      ModelParams::unflatten(node_.store().get_tensor(node_.own_password(), kModelKey));
  validation_losses_.push_back(forward_loss(params, *ctx_.validation));
  return convergence_check(validation_losses_, ctx_.training);
}

void PeerRuntime::publish_inactive_list() {
  const nlohmann::json list(inactive_local_);
  node_.store().put_blob(node_.own_password(), inactive_key(epoch_.epoch),
                         crypto::to_bytes(list.dump()));
  if (epoch_.epoch > 1) node_.store().erase(node_.own_password(), inactive_key(epoch_.epoch - 1));
}

std::set<int> PeerRuntime::consensus_phase() {
  std::map<int, std::set<int>> lists;
  for (int r : epoch_active_) {
    try {
      const auto blob = store_of(r)->get_blob(password_of(r), inactive_key(epoch_.epoch));
      lists[r] = nlohmann::json::parse(blob.begin(), blob.end()).get<std::set<int>>();
    } catch (const StoreUnavailable&) {
    } catch (const NotFoundError&) {
    }
  }
  return consensus_inactive(lists);
}

void PeerRuntime::apply_consensus(const std::set<int>& removed) {
  if (removed.empty()) return;
  std::set<int> remaining;
  for (const auto& [r, _] : ownership_)
    if (!removed.contains(r)) remaining.insert(r);
  ownership_ = redistribute(removed, remaining, ownership_);
  for (int r : removed) {
    inactive_local_.erase(r);
    node_.forget(r);
  }
}

void PeerRuntime::apply_join(int new_rank) { ownership_ = rebalance_for_join(new_rank, ownership_); }

void PeerRuntime::advance_epoch(const std::set<int>& removed, const std::set<int>& joined) {
  epoch_ = trigger_next_epoch(epoch_, rank(), removed, joined, ownership_,
                              ctx_.training.convergence_interval);
  epoch_active_ = epoch_.active_ranks;
}

DenseVector PeerRuntime::model_snapshot() {
  return node_.store().read_local(node_.own_password(), kModelKey);
}

// --- Simulation -------------------------------------------------------------

Simulation::Simulation(Scenario scenario) : scenario_(std::move(scenario)) {
  scenario_.validate();
}

Simulation::~Simulation() = default;

template <class Fn>
void Simulation::for_each_live(Fn&& fn) {
  if (scenario_.mode == RunMode::Concurrent) {
    std::vector<std::future<void>> tasks;
    for (auto& [r, rt] : runtimes_)
      if (!rt->crashed()) tasks.push_back(std::async(std::launch::async, [&fn, p = rt.get()] { fn(*p); }));
    for (auto& t : tasks) t.get();
  } else {
    for (auto& [r, rt] : runtimes_)
      if (!rt->crashed()) fn(*rt);
  }
}

void Simulation::bootstrap() {
  provider_ = crypto::make_provider(scenario_.crypto);
  network_ = std::make_unique<identity::Network>(*provider_, queues_);

  std::vector<identity::PeerConfig> configs;
  for (std::size_t i = 0; i < scenario_.n_peers; ++i) {
    const int r = static_cast<int>(i);
    configs.push_back({r, crypto::derive_seed(scenario_.seed, "peer-" + std::to_string(r)),
                       scenario_.bytes, false});
  }
  const auto report = identity::init_network(*network_, configs);
  if (!report.rejected.empty()) throw std::runtime_error("network initialisation rejected a peer");

  const std::uint64_t data_seed =
      scenario_.dataset.seed.value_or(crypto::derive_seed(scenario_.seed, "dataset"));
  SyntheticSpec spec{scenario_.dataset.samples, scenario_.dataset.dim,
                     scenario_.dataset.separation, scenario_.dataset.noise_sigma};
  const LabeledBatch full = make_two_gaussians(spec, data_seed);
  spec.samples = scenario_.dataset.validation_samples;
  validation_ = make_two_gaussians(spec, crypto::derive_seed(data_seed, "validation"));
  spec.samples = scenario_.dataset.zeno_samples;
  zeno_ = aggregation::ZenoConfig{scenario_.zeno_rho, scenario_.training.learning_rate,
                                  make_two_gaussians(spec, crypto::derive_seed(data_seed, "zeno"))};

  ShardOwnership ownership;
  for (std::size_t i = 0; i < scenario_.n_peers; ++i) {
    auto& mine = ownership[static_cast<int>(i)];
    for (auto& b : shard(partition_dataset(full, scenario_.n_peers, i), scenario_.training.batch_size)) {
      mine.push_back(shards_.size());
      shards_.push_back(std::move(b));
    }
  }

  ctx_.network = network_.get();
  ctx_.shards = &shards_;
  ctx_.rule = scenario_.rule;
  ctx_.zeno = &zeno_;
  ctx_.validation = &validation_;
  ctx_.training = scenario_.training;
  ctx_.heartbeat = scenario_.heartbeat;
  ctx_.barrier_timeout = scenario_.barrier_timeout;
  ctx_.attack = scenario_.attack;
  ctx_.clock = &clock_;
  ctx_.concurrent = scenario_.mode == RunMode::Concurrent;

  // Shared starting point: small seeded weights, zero bias.
  std::mt19937_64 init_rng(crypto::derive_seed(scenario_.seed, "model"));
  std::normal_distribution<double> init(0.0, 0.01);
  DenseVector model(scenario_.dataset.dim + 1);
  for (std::size_t j = 0; j < scenario_.dataset.dim; ++j) model[j] = init(init_rng);

  std::set<int> all;
  for (const auto& [r, _] : ownership) all.insert(r);
  for (auto& [r, node] : network_->peers()) {
    node->store().put_tensor(node->own_password(), kModelKey, model);
    EpochConfig first{1, ownership.at(r).size(), convergence_due(1, scenario_.training.convergence_interval), all};
    runtimes_.emplace(r, std::make_unique<PeerRuntime>(
                             *node, ctx_, ownership, std::move(first),
                             crypto::derive_seed(scenario_.seed, "attack-" + std::to_string(r))));
    ledger_marks_[r] = node->store().ledger_report();
  }
  bootstrapped_ = true;
}

void Simulation::crash(int rank, std::size_t epoch, std::vector<std::string>& events) {
  auto it = runtimes_.find(rank);
  if (it == runtimes_.end())
    throw ConfigError("crash of rank " + std::to_string(rank) + " at epoch " +
                      std::to_string(epoch) + ": no such live peer");
  it->second->crash();
  events.push_back("crash:" + std::to_string(rank));
}

void Simulation::admit(int rank, std::size_t epoch, RunMetrics& metrics) {
  identity::PeerConfig cfg{rank, crypto::derive_seed(scenario_.seed, "peer-" + std::to_string(rank)),
                           scenario_.bytes, false};
  const auto report = identity::join_network(*network_, cfg);
  if (!report.accepted)
    throw std::runtime_error("join of rank " + std::to_string(rank) + " was not validated");
  metrics.summary.join_messages += report.messages_exchanged;
  metrics.summary.joined.insert(rank);

  identity::PeerNode& node = network_->peer(rank);
  // The joiner copies the current model from the lowest live trusted peer.
  for (const auto& [r, rt] : runtimes_) {
    if (rt->crashed() || !node.trusts(r)) continue;
    auto store = network_->directory().find(node.trusted().at(r).store_address);
    node.store().put_tensor(node.own_password(), kModelKey,
                            store->get_tensor(node.password_for(r), kModelKey));
    break;
  }

  ShardOwnership ownership;
  for (auto& [r, rt] : runtimes_)
    if (!rt->crashed()) {
      rt->apply_join(rank);
      ownership = rt->ownership();
    }
  std::set<int> active{rank};
  for (const auto& [r, _] : node.trusted()) active.insert(r);
  EpochConfig first{epoch + 1, ownership.at(rank).size(),
                    convergence_due(epoch + 1, scenario_.training.convergence_interval), active};
  runtimes_.emplace(rank, std::make_unique<PeerRuntime>(
                              node, ctx_, std::move(ownership), std::move(first),
                              crypto::derive_seed(scenario_.seed, "attack-" + std::to_string(rank))));
  ledger_marks_[rank] = node.store().ledger_report();
}

void Simulation::run_epoch(std::size_t epoch, RunMetrics& metrics, bool& stop) {
  std::map<int, std::vector<std::string>> events;
  std::vector<std::string> global_events;
  EpochTrace tr;
  tr.epoch = epoch;

  for (const auto& e : faults::crashes_at(scenario_.faults, epoch, faults::FaultTiming::EpochStart))
    crash(e.rank, epoch, global_events);

  for (auto& [r, rt] : runtimes_)
    if (!rt->crashed()) {
      tr.ownership_before[r] = rt->ownership();
      rt->begin_epoch();
    }

  std::map<int, HeartbeatResult> beats;
  std::mutex mu;
  for_each_live([&](PeerRuntime& p) {
    auto hb = p.heartbeat_check();
    std::lock_guard lock(mu);
    beats[p.rank()] = std::move(hb);
  });
  for (const auto& [r, hb] : beats)
    for (int gone : hb.newly_inactive) events[r].push_back("heartbeat_inactive:" + std::to_string(gone));

  for (const auto& e : faults::crashes_at(scenario_.faults, epoch, faults::FaultTiming::PostHeartbeat))
    crash(e.rank, epoch, global_events);

  std::map<int, double> losses;
  std::map<int, std::optional<bool>> converged;
  auto after_barrier = [&](PeerRuntime& p) {
    const DenseVector agg = p.aggregate_phase();
    p.update_phase();
    auto conv = p.convergence_phase();
    p.publish_inactive_list();
    std::lock_guard lock(mu);
    tr.aggregates[p.rank()] = agg;
    converged[p.rank()] = conv;
  };

  if (scenario_.mode == RunMode::Concurrent) {
    for_each_live([&](PeerRuntime& p) {
      const double loss = p.compute_phase();
      p.local_average_phase();
      {
        std::lock_guard lock(mu);
        losses[p.rank()] = loss;
      }
      p.wait_for_peers();
      after_barrier(p);
    });
  } else {
    for_each_live([&](PeerRuntime& p) {
      losses[p.rank()] = p.compute_phase();
      p.local_average_phase();
    });
    for_each_live([&](PeerRuntime& p) {
      p.wait_for_peers();
      after_barrier(p);
    });
  }

  for (auto& [r, rt] : runtimes_) {
    if (rt->crashed()) continue;
    tr.active_sets[r] = rt->epoch_active();
    tr.barriers[r] = rt->last_barrier();
    tr.barrier_expected[r] = rt->epoch_active().size();
    tr.inactive_lists[r] = rt->inactive_local();
    if (rt->last_barrier().status == BarrierStatus::TimedOut)
      for (int m : rt->last_barrier().missing) events[r].push_back("barrier_timeout:" + std::to_string(m));
    for (int u : rt->unreachable_during_aggregation())
      events[r].push_back("unreachable:" + std::to_string(u));
  }

  std::map<int, std::set<int>> decided;
  for_each_live([&](PeerRuntime& p) {
    auto c = p.consensus_phase();
    std::lock_guard lock(mu);
    decided[p.rank()] = std::move(c);
  });
  for (auto& [r, removed] : decided) {
    runtimes_.at(r)->apply_consensus(removed);
    tr.consensus[r] = removed;
    for (int gone : removed) {
      events[r].push_back("consensus_inactive:" + std::to_string(gone));
      events[r].push_back("redistributed:" + std::to_string(gone));
    }
  }

  // Metrics for this epoch, before membership changes.
  for (auto& [r, rt] : runtimes_) {
    if (rt->crashed() || !losses.contains(r)) continue;
    EpochRow row;
    row.epoch = epoch;
    row.peer = r;
    row.active_count = rt->epoch_active().size();
    row.train_loss = losses.at(r);
    const DenseVector model = rt->model_snapshot();
    tr.models[r] = model;
    row.val_accuracy = accuracy(ModelParams::unflatten(model), validation_);
    const TransferLedger now = rt->node().store().ledger_report();
    row.bytes_in = now.bytes_in - ledger_marks_[r].bytes_in;
    row.bytes_out = now.bytes_out - ledger_marks_[r].bytes_out;
    ledger_marks_[r] = now;
    row.events = global_events;
    for (auto& e : events[r]) row.events.push_back(e);
    if (converged[r].value_or(false)) row.events.push_back("converged");
    metrics.rows.push_back(std::move(row));
  }

  std::set<int> joined;
  for (const auto& e : faults::joins_after(scenario_.faults, epoch)) joined.insert(e.rank);

  for (auto& [r, removed] : decided) runtimes_.at(r)->advance_epoch(removed, joined);
  for (int r : joined) admit(r, epoch, metrics);

  trace_.push_back(std::move(tr));

  bool any_converged = false;
  for (const auto& [_, c] : converged) any_converged = any_converged || c.value_or(false);
  if (any_converged && !metrics.summary.converged_epoch) metrics.summary.converged_epoch = epoch;
  stop = any_converged && scenario_.stop_on_convergence;
}

RunMetrics Simulation::run() {
  if (bootstrapped_) throw std::logic_error("Simulation::run may only be called once");
  bootstrap();

  RunMetrics metrics;
  metrics.scenario = scenario_.name;
  metrics.rule = std::string(aggregation::to_string(scenario_.rule.kind));

  for (std::size_t epoch = 1; epoch <= scenario_.training.max_epochs; ++epoch) {
    bool any_live = std::any_of(runtimes_.begin(), runtimes_.end(),
                                [](const auto& kv) { return !kv.second->crashed(); });
    if (!any_live) throw std::runtime_error("no live peers left at epoch " + std::to_string(epoch));
    bool stop = false;
    run_epoch(epoch, metrics, stop);
    metrics.summary.epochs_run = epoch;
    if (stop) break;
  }

  auto& s = metrics.summary;
  std::map<std::size_t, std::pair<double, double>> worst;  // epoch → (min accuracy, mean loss)
  std::map<std::size_t, std::size_t> count;
  for (const auto& row : metrics.rows) {
    auto [it, inserted] = worst.try_emplace(row.epoch, row.val_accuracy, 0.0);
    if (!inserted) it->second.first = std::min(it->second.first, row.val_accuracy);
    it->second.second += row.train_loss;
    ++count[row.epoch];
    for (const auto& e : row.events) {
      if (!s.detection_epoch && e.starts_with("heartbeat_inactive:")) s.detection_epoch = row.epoch;
      if (!s.consensus_epoch && e.starts_with("consensus_inactive:")) s.consensus_epoch = row.epoch;
      if (e.starts_with("crash:")) s.crashed.insert(std::stoi(e.substr(6)));
    }
  }
  for (const auto& [epoch, acc_loss] : worst)
    if (!s.epochs_to_threshold && acc_loss.first >= 0.9) s.epochs_to_threshold = epoch;
  if (s.consensus_epoch && *s.consensus_epoch < s.epochs_run) s.recovery_epoch = *s.consensus_epoch + 1;
  if (!worst.empty()) {
    const auto last = worst.rbegin()->first;
    double acc = 0.0;
    for (const auto& row : metrics.rows)
      if (row.epoch == last) acc += row.val_accuracy;
    s.final_accuracy = acc / static_cast<double>(count[last]);
    s.final_train_loss = worst.rbegin()->second.second / static_cast<double>(count[last]);
  }
  for (const auto& [r, rt] : runtimes_) {
    if (!rt->crashed()) s.final_parallelism[r] = rt->assigned_shards().size();
    metrics.ledgers[r] = rt->node().store().ledger_report();
  }
  return metrics;
}

RunMetrics run_scenario(const Scenario& scenario) { return Simulation(scenario).run(); }

}  // namespace peerlace::runtime
