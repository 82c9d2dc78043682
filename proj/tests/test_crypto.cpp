#include <gtest/gtest.h>

#include "peerlace/crypto.hpp"

using namespace peerlace::crypto;

class ProviderTest : public ::testing::TestWithParam<std::string> {
 protected:
  void SetUp() override { provider = make_provider(GetParam()); }
  std::unique_ptr<CryptoProvider> provider;
};

TEST_P(ProviderTest, SignVerify) {
  auto a = provider->generate(1);
  auto b = provider->generate(2);
  auto msg = to_bytes("epoch 3 completion");
  auto sig = provider->sign(a.private_key, msg);
  EXPECT_TRUE(provider->verify(a.public_key, msg, sig));
  EXPECT_FALSE(provider->verify(a.public_key, to_bytes("epoch 4 completion"), sig));
  EXPECT_FALSE(provider->verify(b.public_key, msg, sig));
  sig[sig.size() / 2] ^= 0x01;
  EXPECT_FALSE(provider->verify(a.public_key, msg, sig));
}

TEST_P(ProviderTest, SameSeedSameKeys) {
  auto a = provider->generate(77);
  auto b = provider->generate(77);
  EXPECT_EQ(a.public_key, b.public_key);
  EXPECT_EQ(a.private_key, b.private_key);
  EXPECT_NE(provider->generate(78).public_key, a.public_key);
}

TEST_P(ProviderTest, EncryptDecrypt) {
  auto a = provider->generate(5);
  auto b = provider->generate(6);
  auto msg = to_bytes("0123456789abcdef0123456789abcdef");
  auto ct = provider->encrypt_for(a.public_key, msg);
  EXPECT_EQ(provider->decrypt(a.private_key, ct), msg);
  EXPECT_THROW(provider->decrypt(b.private_key, ct), IntegrityError);
  ct[ct.size() - 1] ^= 0x80;
  EXPECT_THROW(provider->decrypt(a.private_key, ct), IntegrityError);
}

INSTANTIATE_TEST_SUITE_P(Providers, ProviderTest, ::testing::Values("rsa", "fake"),
                         [](const auto& info) { return info.param; });

TEST(Kms, RoundTripAndFreshNonce) {
  auto kms = KmsKey::generate("kms-0", 1);
  auto msg = to_bytes("private key material");
  auto w1 = kms_wrap(kms, msg);
  auto w2 = kms_wrap(kms, msg);
  EXPECT_NE(w1, w2);
  EXPECT_EQ(kms_unwrap(kms, w1), msg);
  EXPECT_EQ(kms_unwrap(kms, w2), msg);
}

TEST(Kms, TamperAndWrongKeyFail) {
  auto kms = KmsKey::generate("kms-0", 1);
  auto other = KmsKey::generate("kms-1", 2);
  auto w = kms_wrap(kms, to_bytes("abc"));
  EXPECT_THROW(kms_unwrap(other, w), IntegrityError);
  auto renamed = kms;
  renamed.key_id = "kms-9";
  EXPECT_THROW(kms_unwrap(renamed, w), IntegrityError);
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto t = w;
    t[i] ^= 0x04;
    EXPECT_THROW(kms_unwrap(kms, t), IntegrityError) << "byte " << i;
  }
  EXPECT_THROW(kms_unwrap(kms, Bytes(5)), IntegrityError);
}

TEST(Keypair, PrivateKeyOnlyRecoverableWithOwningKms) {
  auto provider = make_provider("fake");
  auto kms = KmsKey::generate("kms-3", 3);
  auto kp = generate_keypair(*provider, kms, 11);
  EXPECT_EQ(kp.kms_key_id, "kms-3");
  EXPECT_EQ(kms_unwrap(kms, kp.private_key_wrapped), provider->generate(11).private_key);
  EXPECT_THROW(kms_unwrap(KmsKey::generate("kms-3", 4), kp.private_key_wrapped), IntegrityError);
}

TEST(Encoding, Base64RoundTrip) {
  for (std::size_t n = 0; n < 40; ++n) {
    auto b = seeded_bytes(n, n);
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
  EXPECT_EQ(base64_encode(to_bytes("peer")), "cGVlcg==");
  EXPECT_THROW(base64_decode("not base64!"), IntegrityError);
  EXPECT_THROW(base64_decode("ab$="), IntegrityError);
}

TEST(Seeds, DeriveSeedIsStableAndLabelSensitive) {
  EXPECT_EQ(derive_seed(1, "dataset"), derive_seed(1, "dataset"));
  EXPECT_NE(derive_seed(1, "dataset"), derive_seed(2, "dataset"));
  EXPECT_NE(derive_seed(1, "dataset"), derive_seed(1, "model"));
  // First 8 bytes of SHA-256(le64(1) || "dataset"), little endian, from an
  // independent computation.
  Bytes input{1, 0, 0, 0, 0, 0, 0, 0};
  for (char c : std::string("dataset")) input.push_back(static_cast<std::uint8_t>(c));
  auto h = sha256(input);
  std::uint64_t expect = 0;
  for (int i = 7; i >= 0; --i) expect = (expect << 8) | h[i];
  EXPECT_EQ(derive_seed(1, "dataset"), expect);
}

TEST(Sha256, KnownVector) {
  auto h = sha256(to_bytes("abc"));
  EXPECT_EQ(h[0], 0xba);
  EXPECT_EQ(h[1], 0x78);
  EXPECT_EQ(h[31], 0xad);
}
