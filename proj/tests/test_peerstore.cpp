#include <gtest/gtest.h>

#include <random>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "peerlace/aggregation.hpp"
#include "peerlace/peerstore.hpp"

using namespace peerlace;

namespace {

constexpr const char* kPw = "s3cret";

PeerStore make_store() { return PeerStore({"10.0.0.1", 6379}, kPw); }

std::vector<std::string> fill(PeerStore& s, std::mt19937_64& rng, std::size_t n, std::size_t len) {
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < n; ++i) {
    keys.push_back("g" + std::to_string(i));
    s.put_tensor(kPw, keys.back(), oracle::random_vector(rng, len));
  }
  return keys;
}

std::uint64_t moved(const TransferLedger& before, const TransferLedger& after) {
  return after.total() - before.total();
}

}  // namespace

TEST(PeerStoreTest, PutGetRoundTripAndByteCounts) {
  auto s = make_store();
  EXPECT_EQ(s.ledger_report(), TransferLedger{});
  DenseVector v(100, 1.25);
  s.put_tensor(kPw, "v", v);
  EXPECT_EQ(s.ledger_report().bytes_in, 800u);
  EXPECT_EQ(s.get_tensor(kPw, "v"), v);
  EXPECT_EQ(s.ledger_report().bytes_out, 800u);
  s.get_tensor(kPw, "v");
  EXPECT_EQ(s.ledger_report().bytes_out, 1600u);
}

TEST(PeerStoreTest, SmallPutCountsEightBytesPerFloat) {
  auto s = make_store();
  s.put_tensor(kPw, "x", DenseVector(10));
  EXPECT_EQ(s.ledger_report().bytes_in, 80u);
}

TEST(PeerStoreTest, MissingKeyIsNotFound) {
  auto s = make_store();
  EXPECT_THROW(s.get_tensor(kPw, "nope"), NotFoundError);
}

TEST(PeerStoreTest, WrongPasswordRejectedWithoutSideEffects) {
  auto s = make_store();
  s.put_tensor(kPw, "a", DenseVector{1, 2});
  s.put_tensor(kPw, "b", DenseVector{3, 4});
  const auto before = s.ledger_report();
  std::vector<std::string> keys{"a", "b"};
  EXPECT_THROW(s.put_tensor("bad", "a", DenseVector{9, 9}), AuthError);
  EXPECT_THROW(s.get_tensor("bad", "a"), AuthError);
  EXPECT_THROW(s.contains("bad", "a"), AuthError);
  EXPECT_THROW(s.erase("bad", "a"), AuthError);
  EXPECT_THROW(s.read_local("bad", "a"), AuthError);
  EXPECT_THROW(s.get_blob("bad", "a"), AuthError);
  EXPECT_THROW(s.instore_average("bad", keys, "out"), AuthError);
  EXPECT_THROW(s.external_average("bad", keys, "out"), AuthError);
  EXPECT_THROW(s.instore_model_update("bad", "a", "b", 0.5), AuthError);
  EXPECT_THROW(s.external_model_update("bad", "a", "b", 0.5), AuthError);
  EXPECT_EQ(s.ledger_report(), before);
  EXPECT_EQ(s.read_local(kPw, "a"), (DenseVector{1, 2}));
  EXPECT_FALSE(s.contains(kPw, "out"));
}

TEST(PeerStoreTest, InstoreAverageExamples) {
  auto s = make_store();
  s.put_tensor(kPw, "a", DenseVector{0, 0});
  s.put_tensor(kPw, "b", DenseVector{2, 4});
  const auto before = s.ledger_report();
  std::vector<std::string> keys{"a", "b"};
  s.instore_average(kPw, keys, "avg");
  // Only the fixed command overhead crosses the boundary; no tensor payload.
  const auto overhead = s.byte_convention().command_overhead;
  EXPECT_EQ(moved(before, s.ledger_report()), overhead);
  EXPECT_LT(moved(before, s.ledger_report()) - overhead, 8u * 2);
  EXPECT_EQ(s.read_local(kPw, "avg"), (DenseVector{1, 2}));

  std::vector<std::string> one{"b"};
  s.instore_average(kPw, one, "copy");
  EXPECT_EQ(s.read_local(kPw, "copy"), (DenseVector{2, 4}));
}

TEST(PeerStoreTest, TenGradientsAverageByteContract) {
  std::mt19937_64 rng(1);
  auto a = make_store();
  auto b = make_store();
  auto ka = fill(a, rng, 10, 1000);
  rng.seed(1);
  auto kb = fill(b, rng, 10, 1000);

  auto a0 = a.ledger_report();
  a.instore_average(kPw, ka, "out");
  EXPECT_LE(moved(a0, a.ledger_report()), 64u);

  auto b0 = b.ledger_report();
  b.external_average(kPw, kb, "out");
  auto b1 = b.ledger_report();
  EXPECT_GE(b1.bytes_out - b0.bytes_out, 80000u);
  EXPECT_GE(b1.bytes_in - b0.bytes_in, 8000u);
  EXPECT_GE(moved(b0, b1), 88000u);

  EXPECT_EQ(a.read_local(kPw, "out"), b.read_local(kPw, "out"));
}

TEST(PeerStoreTest, ExternalAverageOfOneMovesTwiceTheTensor) {
  auto s = make_store();
  s.put_tensor(kPw, "g", DenseVector(50, 0.5));
  auto before = s.ledger_report();
  std::vector<std::string> keys{"g"};
  s.external_average(kPw, keys, "out");
  auto after = s.ledger_report();
  EXPECT_EQ(after.bytes_out - before.bytes_out, 400u);
  EXPECT_EQ(after.bytes_in - before.bytes_in, 400u);
}

TEST(PeerStoreTest, InstoreAverageMatchesAggregationAverage) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = make_store();
    std::vector<DenseVector> grads;
    std::vector<std::string> keys;
    for (int i = 0; i < 1 + trial % 7; ++i) {
      grads.push_back(oracle::random_vector(rng, 13));
      keys.push_back("k" + std::to_string(i));
      s.put_tensor(kPw, keys.back(), grads.back());
    }
    s.instore_average(kPw, keys, "avg");
    EXPECT_EQ(s.read_local(kPw, "avg"), aggregation::average(grads));
  }
}

TEST(PeerStoreTest, AverageErrors) {
  auto s = make_store();
  s.put_tensor(kPw, "a", DenseVector{1, 2});
  s.put_tensor(kPw, "b", DenseVector{1});
  std::vector<std::string> missing{"a", "zz"};
  std::vector<std::string> ragged{"a", "b"};
  EXPECT_THROW(s.instore_average(kPw, missing, "o"), NotFoundError);
  EXPECT_THROW(s.instore_average(kPw, ragged, "o"), ContractViolation);
  EXPECT_THROW(s.external_average(kPw, missing, "o"), NotFoundError);
}

TEST(PeerStoreTest, InstoreUpdateExamples) {
  auto s = make_store();
  s.put_tensor(kPw, "w", DenseVector{1, 1});
  s.put_tensor(kPw, "g", DenseVector{2, 0});
  s.put_tensor(kPw, "zero", DenseVector{0, 0});
  s.instore_model_update(kPw, "w", "zero", 0.5);
  EXPECT_EQ(s.read_local(kPw, "w"), (DenseVector{1, 1}));
  s.instore_model_update(kPw, "w", "g", 0.5);
  EXPECT_EQ(s.read_local(kPw, "w"), (DenseVector{0, 1}));
  s.put_tensor(kPw, "short", DenseVector{1});
  EXPECT_THROW(s.instore_model_update(kPw, "w", "short", 0.5), ContractViolation);
  EXPECT_THROW(s.instore_model_update(kPw, "w", "none", 0.5), NotFoundError);
}

TEST(PeerStoreTest, UpdateBytesAcrossModelSizes) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {1u, 10u, 300u, 1000u, 5000u}) {
    auto a = make_store();
    a.put_tensor(kPw, "w", oracle::random_vector(rng, n));
    a.put_tensor(kPw, "g", oracle::random_vector(rng, n));
    auto before = a.ledger_report();
    a.instore_model_update(kPw, "w", "g", 0.1);
    EXPECT_LE(moved(before, a.ledger_report()), 64u);

    before = a.ledger_report();
    a.external_model_update(kPw, "w", "g", 0.1);
    EXPECT_EQ(moved(before, a.ledger_report()), 24u * n);
    if (n >= 300) EXPECT_GE(1.0 - 64.0 / (24.0 * n), 0.99);
  }
}

TEST(PeerStoreTest, ExternalUpdateWithZeroRateStillCounts) {
  auto s = make_store();
  s.put_tensor(kPw, "w", DenseVector{1, 2, 3});
  s.put_tensor(kPw, "g", DenseVector{4, 5, 6});
  auto before = s.ledger_report();
  s.external_model_update(kPw, "w", "g", 0.0);
  EXPECT_EQ(s.read_local(kPw, "w"), (DenseVector{1, 2, 3}));
  EXPECT_EQ(moved(before, s.ledger_report()), 72u);
}

TEST(PeerStoreTest, PathsAreBitIdenticalOnRandomTensors) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = make_store();
    auto b = make_store();
    const std::size_t len = 1 + trial * 7 % 200;
    auto w = oracle::random_vector(rng, len);
    a.put_tensor(kPw, "w", w);
    b.put_tensor(kPw, "w", w);
    std::vector<std::string> keys;
    for (int i = 0; i < 1 + trial % 9; ++i) {
      auto g = oracle::random_vector(rng, len);
      keys.push_back("g" + std::to_string(i));
      a.put_tensor(kPw, keys.back(), g);
      b.put_tensor(kPw, keys.back(), g);
    }
    a.instore_average(kPw, keys, "avg");
    b.external_average(kPw, keys, "avg");
    ASSERT_EQ(a.read_local(kPw, "avg"), b.read_local(kPw, "avg"));
    a.instore_model_update(kPw, "w", "avg", 0.37);
    b.external_model_update(kPw, "w", "avg", 0.37);
    ASSERT_EQ(a.read_local(kPw, "w"), b.read_local(kPw, "w"));
    ASSERT_EQ(a.read_local(kPw, "w"), sgd_step_flat(w, a.read_local(kPw, "avg"), 0.37));
  }
}

TEST(PeerStoreTest, PerOpSumsEqualTotals) {
  std::mt19937_64 rng(8);
  auto s = make_store();
  auto keys = fill(s, rng, 4, 20);
  s.put_tensor(kPw, "w", oracle::random_vector(rng, 20));
  s.instore_average(kPw, keys, "a1");
  s.external_average(kPw, keys, "a2");
  s.instore_model_update(kPw, "w", "a1", 0.5);
  s.external_model_update(kPw, "w", "a2", 0.5);
  s.get_tensor(kPw, "w");
  s.read_local(kPw, "w");
  auto l = s.ledger_report();
  std::uint64_t in = 0, out = 0;
  for (const auto& [op, c] : l.per_op) {
    in += c.bytes_in;
    out += c.bytes_out;
  }
  EXPECT_EQ(in, l.bytes_in);
  EXPECT_EQ(out, l.bytes_out);
}

TEST(PeerStoreTest, DownStoreRefusesEverything) {
  auto s = make_store();
  s.put_tensor(kPw, "a", DenseVector{1});
  EXPECT_TRUE(s.ping());
  s.take_down();
  EXPECT_TRUE(s.is_down());
  EXPECT_FALSE(s.ping());
  EXPECT_THROW(s.get_tensor(kPw, "a"), StoreUnavailable);
  EXPECT_THROW(s.put_tensor(kPw, "a", DenseVector{1}), StoreUnavailable);
}

TEST(PeerStoreTest, ConcurrentWritersKeepLedgerConsistent) {
  auto s = make_store();
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < 200; ++i) {
        const auto key = "t" + std::to_string(t) + "-" + std::to_string(i % 5);
        s.put_tensor(kPw, key, DenseVector(4, t));
        s.get_tensor(kPw, key);
      }
    });
  for (auto& th : threads) th.join();
  auto l = s.ledger_report();
  EXPECT_EQ(l.bytes_in, 8u * 200 * 32);
  EXPECT_EQ(l.bytes_out, 8u * 200 * 32);
}
