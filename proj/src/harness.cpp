#include "peerlace/harness.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "peerlace/crypto.hpp"

namespace peerlace::harness {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

bool same_bits(const DenseVector& a, const DenseVector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

std::string to_csv(const runtime::RunMetrics& metrics) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : metrics.rows) {
    out << r.epoch << ',' << r.peer << ',' << r.active_count << ',' << fmt_double(r.train_loss)
        << ',' << fmt_double(r.val_accuracy) << ',' << r.bytes_in << ',' << r.bytes_out << ','
        << join(r.events, '|') << '\n';
  }
  return out.str();
}

json ledger_to_json(const TransferLedger& ledger) {
  json per_op = json::object();
  for (const auto& [op, c] : ledger.per_op)
    per_op[op] = {{"bytes_in", c.bytes_in}, {"bytes_out", c.bytes_out}, {"calls", c.calls}};
  return {{"bytes_in", ledger.bytes_in}, {"bytes_out", ledger.bytes_out}, {"per_op", per_op}};
}

json to_json(const runtime::RunMetrics& metrics) {
  json rows = json::array();
  for (const auto& r : metrics.rows)
    rows.push_back({{"epoch", r.epoch},
                    {"peer", r.peer},
                    {"active_count", r.active_count},
                    {"train_loss", r.train_loss},
                    {"val_accuracy", r.val_accuracy},
                    {"bytes_in", r.bytes_in},
                    {"bytes_out", r.bytes_out},
                    {"events", r.events}});
  const auto& s = metrics.summary;
  json parallelism = json::object();
  for (const auto& [r, p] : s.final_parallelism) parallelism[std::to_string(r)] = p;
  json ledgers = json::object();
  for (const auto& [r, l] : metrics.ledgers) ledgers[std::to_string(r)] = ledger_to_json(l);
  return {{"scenario", metrics.scenario},
          {"rule", metrics.rule},
          {"rows", rows},
          {"summary",
           {{"final_accuracy", s.final_accuracy},
            {"final_train_loss", s.final_train_loss},
            {"epochs_run", s.epochs_run},
            {"epochs_to_threshold", optional_json(s.epochs_to_threshold)},
            {"detection_epoch", optional_json(s.detection_epoch)},
            {"consensus_epoch", optional_json(s.consensus_epoch)},
            {"recovery_epoch", optional_json(s.recovery_epoch)},
            {"converged_epoch", optional_json(s.converged_epoch)},
            {"crashed", s.crashed},
            {"joined", s.joined},
            {"final_parallelism", parallelism},
            {"join_messages", s.join_messages}}},
          {"ledgers", ledgers}};
}

std::string check_metrics_json(const json& doc) {
  if (!doc.is_object()) return "document is not an object";
  for (const char* k : {"scenario", "rule", "rows", "summary", "ledgers"})
    if (!doc.contains(k)) return std::string("missing '") + k + "'";
  if (!doc["rows"].is_array()) return "rows is not an array";
  std::size_t last_epoch = 0;
  for (const auto& row : doc["rows"]) {
    for (const char* k : {"epoch", "peer", "active_count", "train_loss", "val_accuracy",
                          "bytes_in", "bytes_out", "events"})
      if (!row.contains(k)) return std::string("row missing '") + k + "'";
    if (!row["epoch"].is_number_unsigned()) return "row epoch is not an unsigned integer";
    const auto epoch = row["epoch"].get<std::size_t>();
    if (epoch < last_epoch) return "row epochs are not monotone";
    last_epoch = epoch;
    const double acc = row["val_accuracy"].get<double>();
    if (acc < 0.0 || acc > 1.0) return "val_accuracy outside [0, 1]";
    if (!row["events"].is_array()) return "events is not an array";
  }
  const auto& s = doc["summary"];
  for (const char* k : {"final_accuracy", "epochs_run", "epochs_to_threshold", "detection_epoch",
                        "consensus_epoch", "recovery_epoch", "crashed", "joined",
                        "final_parallelism"})
    if (!s.contains(k)) return std::string("summary missing '") + k + "'";
  for (const auto& [rank, l] : doc["ledgers"].items()) {
    std::uint64_t in = 0, out = 0;
    for (const auto& [op, c] : l["per_op"].items()) {
      in += c["bytes_in"].get<std::uint64_t>();
      out += c["bytes_out"].get<std::uint64_t>();
    }
    if (in != l["bytes_in"].get<std::uint64_t>() || out != l["bytes_out"].get<std::uint64_t>())
      return "ledger " + rank + ": per-op sums differ from totals";
  }
  return {};
}

std::filesystem::path emit(const runtime::RunMetrics& metrics, Format format,
                           const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto path = dir / (format == Format::Csv ? "metrics.csv" : "metrics.json");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (format == Format::Csv)
    out << to_csv(metrics);
  else
    out << to_json(metrics).dump(2) << '\n';
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
  return path;
}

StoreComparison compare_store_paths(std::size_t model_len, std::size_t n_grads,
                                    std::size_t repetitions, std::uint64_t seed) {
  if (model_len == 0 || n_grads == 0 || repetitions == 0)
    throw ConfigError("compare-store: length, gradient count and repetitions must be positive");
  StoreComparison report{model_len, n_grads, repetitions, {}, {}, true, 0};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::uniform_real_distribution<double> lr_dist(1e-3, 1.0);
  auto random_vector = [&] {
    DenseVector v(model_len);
    for (std::size_t j = 0; j < model_len; ++j) v[j] = dist(rng);
    return v;
  };

  const std::string pw = "compare-store";
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < n_grads; ++i) keys.push_back("grad:" + std::to_string(i));

  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    PeerStore inside(StoreAddress{"inside", 1}, pw);
    PeerStore outside(StoreAddress{"outside", 1}, pw);
    const DenseVector model = random_vector();
    for (auto* store : {&inside, &outside}) store->put_tensor(pw, "model", model);
    for (const auto& k : keys) {
      const DenseVector g = random_vector();
      inside.put_tensor(pw, k, g);
      outside.put_tensor(pw, k, g);
    }
    const double lr = lr_dist(rng);

    const auto in0 = inside.ledger_report().total();
    const auto out0 = outside.ledger_report().total();
    inside.instore_average(pw, keys, "avg");
    outside.external_average(pw, keys, "avg");
    const auto in1 = inside.ledger_report().total();
    const auto out1 = outside.ledger_report().total();
    inside.instore_model_update(pw, "model", "avg", lr);
    outside.external_model_update(pw, "model", "avg", lr);
    const auto in2 = inside.ledger_report().total();
    const auto out2 = outside.ledger_report().total();

    report.average = PathBytes{out1 - out0, in1 - in0};
    report.update = PathBytes{out2 - out1, in2 - in1};

    const bool same = same_bits(inside.read_local(pw, "avg"), outside.read_local(pw, "avg")) &&
                      same_bits(inside.read_local(pw, "model"), outside.read_local(pw, "model"));
    if (!same) {
      report.outputs_identical = false;
      ++report.mismatches;
    }
  }
  return report;
}

json to_json(const StoreComparison& c) {
  auto path = [](const PathBytes& p) {
    return json{{"external_bytes", p.external}, {"instore_bytes", p.instore}, {"reduction", p.reduction()}};
  };
  return {{"model_len", c.model_len},
          {"n_grads", c.n_grads},
          {"repetitions", c.repetitions},
          {"average", path(c.average)},
          {"update", path(c.update)},
          {"outputs_identical", c.outputs_identical},
          {"mismatches", c.mismatches}};
}

std::vector<ScalingRow> scaling_study(const std::vector<std::size_t>& peer_counts,
                                      const std::vector<std::size_t>& batch_sizes,
                                      const Scenario& base) {
  std::vector<ScalingRow> out;
  for (std::size_t peers : peer_counts) {
    for (std::size_t batch : batch_sizes) {
      Scenario s = base;
      s.n_peers = peers;
      s.training.batch_size = batch;
      s.rule.byzantine_bound = std::min(s.rule.byzantine_bound, peers - 1);
      s.name = base.name + "-p" + std::to_string(peers) + "-b" + std::to_string(batch);
      runtime::Simulation sim(s);
      const auto metrics = sim.run();

      ScalingRow row;
      row.peers = peers;
      row.batch_size = batch;
      row.min_shards_per_peer = static_cast<std::size_t>(-1);
      for (const auto& [r, rt] : sim.peers()) {
        const std::size_t n = rt->assigned_shards().size();
        row.min_shards_per_peer = std::min(row.min_shards_per_peer, n);
        row.max_shards_per_peer = std::max(row.max_shards_per_peer, n);
        row.gradients_per_epoch += n;
        for (auto id : rt->assigned_shards()) row.rows_per_epoch += sim.shards()[id].rows();
      }
      double in = 0.0, outb = 0.0;
      for (const auto& r : metrics.rows) {
        in += static_cast<double>(r.bytes_in);
        outb += static_cast<double>(r.bytes_out);
      }
      const double n = static_cast<double>(std::max<std::size_t>(metrics.rows.size(), 1));
      row.mean_bytes_in_per_peer_epoch = in / n;
      row.mean_bytes_out_per_peer_epoch = outb / n;
      row.final_accuracy = metrics.summary.final_accuracy;
      row.epochs_run = metrics.summary.epochs_run;
      out.push_back(row);
    }
  }
  return out;
}

std::string scaling_csv(const std::vector<ScalingRow>& rows) {
  std::ostringstream out;
  out << "peers,batch_size,min_shards_per_peer,max_shards_per_peer,gradients_per_epoch,"
         "rows_per_epoch,mean_bytes_in_per_peer_epoch,mean_bytes_out_per_peer_epoch,"
         "final_accuracy,epochs_run\n";
  for (const auto& r : rows)
    out << r.peers << ',' << r.batch_size << ',' << r.min_shards_per_peer << ','
        << r.max_shards_per_peer << ',' << r.gradients_per_epoch << ',' << r.rows_per_epoch << ','
        << fmt_double(r.mean_bytes_in_per_peer_epoch) << ','
        << fmt_double(r.mean_bytes_out_per_peer_epoch) << ',' << fmt_double(r.final_accuracy)
        << ',' << r.epochs_run << '\n';
  return out.str();
}

void apply_seed_override(Scenario& s, std::optional<std::uint64_t> explicit_seed) {
  if (explicit_seed) {
    s.seed = *explicit_seed;
    return;
  }
  if (const char* env = std::getenv("PEERLACE_SEED"); env && *env) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0')
      throw ConfigError(std::string("PEERLACE_SEED is not an unsigned integer: ") + env);
    s.seed = v;
  }
}

}  // namespace peerlace::harness
