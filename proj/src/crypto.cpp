#include "peerlace/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/param_build.h>
#include <openssl/rand.h>
#include <openssl/rsa.h>
#include <openssl/x509.h>

#include <algorithm>
#include <cstring>
#include <random>

namespace peerlace::crypto {

namespace {

struct EvpPkeyDeleter { void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); } };
struct EvpPkeyCtxDeleter { void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); } };
struct EvpMdCtxDeleter { void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); } };
struct EvpCipherCtxDeleter { void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); } };
struct BnDeleter { void operator()(BIGNUM* p) const { BN_clear_free(p); } };
struct BnCtxDeleter { void operator()(BN_CTX* p) const { BN_CTX_free(p); } };
struct ParamBldDeleter { void operator()(OSSL_PARAM_BLD* p) const { OSSL_PARAM_BLD_free(p); } };
struct ParamDeleter { void operator()(OSSL_PARAM* p) const { OSSL_PARAM_free(p); } };

using PkeyPtr = std::unique_ptr<EVP_PKEY, EvpPkeyDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, EvpPkeyCtxDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, EvpMdCtxDeleter>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, EvpCipherCtxDeleter>;
using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxDeleter>;

[[noreturn]] void fail(const char* what) {
  const unsigned long code = ERR_get_error();
  char buf[256] = {0};
  if (code != 0) ERR_error_string_n(code, buf, sizeof buf);
  ERR_clear_error();
  throw CryptoError(std::string(what) + (code ? std::string(": ") + buf : std::string()));
}

void check(int rc, const char* what) {
  if (rc <= 0) fail(what);
}

BnPtr new_bn() {
  BnPtr b(BN_new());
  if (!b) fail("BN_new");
  return b;
}

constexpr std::size_t kGcmNonce = 12;
constexpr std::size_t kGcmTag = 16;
constexpr int kRsaBits = 2048;
constexpr unsigned long kRsaExponent = 65537;

// Random odd candidate of `bits` bits with the top two bits set, then the
// next probable prime p with gcd(p - 1, e) = 1.
BnPtr seeded_prime(std::mt19937_64& rng, int bits, BN_CTX* ctx) {
  Bytes raw(static_cast<std::size_t>(bits / 8));
  for (auto& byte : raw) byte = static_cast<std::uint8_t>(rng());
  raw.front() |= 0xC0;
  raw.back() |= 0x01;
  BnPtr p(BN_bin2bn(raw.data(), static_cast<int>(raw.size()), nullptr));
  if (!p) fail("BN_bin2bn");
  for (;;) {
    if (BN_mod_word(p.get(), kRsaExponent) != 1) {
      const int prime = BN_check_prime(p.get(), ctx, nullptr);
      if (prime < 0) fail("BN_check_prime");
      if (prime == 1) return p;
    }
    check(BN_add_word(p.get(), 2), "BN_add_word");
  }
}

PkeyPtr load_public(std::span<const std::uint8_t> der) {
  const unsigned char* p = der.data();
  PkeyPtr key(d2i_PUBKEY(nullptr, &p, static_cast<long>(der.size())));
  if (!key) {
    ERR_clear_error();
    throw IntegrityError("malformed public key");
  }
  return key;
}

PkeyPtr load_private(std::span<const std::uint8_t> der) {
  const unsigned char* p = der.data();
  PkeyPtr key(d2i_AutoPrivateKey(nullptr, &p, static_cast<long>(der.size())));
  if (!key) {
    ERR_clear_error();
    throw IntegrityError("malformed private key");
  }
  return key;
}

Bytes fake_public_from_private(std::span<const std::uint8_t> priv) {
  Bytes material = to_bytes("peerlace-fake-public");
  material.insert(material.end(), priv.begin(), priv.end());
  const auto digest = sha256(material);
  return Bytes(digest.begin(), digest.end());
}

Bytes fake_keystream(std::span<const std::uint8_t> pub, std::size_t n) {
  Bytes out;
  for (std::uint32_t block = 0; out.size() < n; ++block) {
    Bytes material(pub.begin(), pub.end());
    for (int i = 0; i < 4; ++i) material.push_back(static_cast<std::uint8_t>(block >> (8 * i)));
    const auto digest = sha256(material);
    out.insert(out.end(), digest.begin(), digest.end());
  }
  out.resize(n);
  return out;
}

Bytes fake_tag(std::span<const std::uint8_t> pub, std::span<const std::uint8_t> msg) {
  Bytes material = to_bytes("peerlace-fake-tag");
  material.insert(material.end(), pub.begin(), pub.end());
  material.insert(material.end(), msg.begin(), msg.end());
  const auto digest = sha256(material);
  return Bytes(digest.begin(), digest.begin() + 16);
}

}  // namespace

Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

std::string to_string(std::span<const std::uint8_t> b) { return std::string(b.begin(), b.end()); }

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw IntegrityError("base64: length not a multiple of 4");
  Bytes out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw IntegrityError("base64: invalid input");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the bytes produced by padding.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  check(EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr), "EVP_Digest");
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  Bytes material;
  for (int i = 0; i < 8; ++i) material.push_back(static_cast<std::uint8_t>(master >> (8 * i)));
  material.insert(material.end(), label.begin(), label.end());
  const auto digest = sha256(material);
  std::uint64_t out = 0;
  for (int i = 7; i >= 0; --i) out = (out << 8) | digest[static_cast<std::size_t>(i)];
  return out;
}

Bytes seeded_bytes(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

Bytes random_bytes(std::size_t n) {
  Bytes out(n);
  check(RAND_bytes(out.data(), static_cast<int>(n)), "RAND_bytes");
  return out;
}

KmsKey KmsKey::generate(std::string key_id, std::uint64_t seed) {
  return KmsKey{std::move(key_id), seeded_bytes(seed, 32)};
}

Bytes kms_wrap(const KmsKey& kms, std::span<const std::uint8_t> plaintext) {
  if (kms.secret.size() != 32) throw CryptoError("kms key must be 32 bytes");
  Bytes out = random_bytes(kGcmNonce);
  out.resize(kGcmNonce + plaintext.size() + kGcmTag);
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx) fail("EVP_CIPHER_CTX_new");
  check(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, kms.secret.data(), out.data()),
        "EncryptInit");
  int len = 0;
  check(EVP_EncryptUpdate(ctx.get(), nullptr, &len,
                          reinterpret_cast<const unsigned char*>(kms.key_id.data()),
                          static_cast<int>(kms.key_id.size())),
        "EncryptUpdate(aad)");
  check(EVP_EncryptUpdate(ctx.get(), out.data() + kGcmNonce, &len, plaintext.data(),
                          static_cast<int>(plaintext.size())),
        "EncryptUpdate");
  int tail = 0;
  check(EVP_EncryptFinal_ex(ctx.get(), out.data() + kGcmNonce + len, &tail), "EncryptFinal");
  check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kGcmTag,
                            out.data() + kGcmNonce + plaintext.size()),
        "GET_TAG");
  return out;
}

Bytes kms_unwrap(const KmsKey& kms, std::span<const std::uint8_t> wrapped) {
  if (kms.secret.size() != 32) throw CryptoError("kms key must be 32 bytes");
  if (wrapped.size() < kGcmNonce + kGcmTag) throw IntegrityError("kms: ciphertext too short");
  const std::size_t body = wrapped.size() - kGcmNonce - kGcmTag;
  Bytes out(body);
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx) fail("EVP_CIPHER_CTX_new");
  check(EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, kms.secret.data(),
                           wrapped.data()),
        "DecryptInit");
  int len = 0;
  check(EVP_DecryptUpdate(ctx.get(), nullptr, &len,
                          reinterpret_cast<const unsigned char*>(kms.key_id.data()),
                          static_cast<int>(kms.key_id.size())),
        "DecryptUpdate(aad)");
  check(EVP_DecryptUpdate(ctx.get(), out.data(), &len, wrapped.data() + kGcmNonce,
                          static_cast<int>(body)),
        "DecryptUpdate");
  Bytes tag(wrapped.end() - kGcmTag, wrapped.end());
  check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kGcmTag, tag.data()), "SET_TAG");
  int tail = 0;
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &tail) <= 0) {
    ERR_clear_error();
    OPENSSL_cleanse(out.data(), out.size());
    throw IntegrityError("kms: unwrap failed (wrong key or corrupted ciphertext)");
  }
  return out;
}

RawKeyPair RsaProvider::generate(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  BnCtxPtr ctx(BN_CTX_new());
  if (!ctx) fail("BN_CTX_new");
  BnPtr p = seeded_prime(rng, kRsaBits / 2, ctx.get());
  BnPtr q = seeded_prime(rng, kRsaBits / 2, ctx.get());
  while (BN_cmp(p.get(), q.get()) == 0) q = seeded_prime(rng, kRsaBits / 2, ctx.get());

  BnPtr n = new_bn(), e = new_bn(), d = new_bn(), pm1 = new_bn(), qm1 = new_bn(), phi = new_bn();
  BnPtr dmp1 = new_bn(), dmq1 = new_bn(), iqmp = new_bn();
  check(BN_mul(n.get(), p.get(), q.get(), ctx.get()), "BN_mul");
  check(BN_set_word(e.get(), kRsaExponent), "BN_set_word");
  check(BN_sub(pm1.get(), p.get(), BN_value_one()), "BN_sub");
  check(BN_sub(qm1.get(), q.get(), BN_value_one()), "BN_sub");
  check(BN_mul(phi.get(), pm1.get(), qm1.get(), ctx.get()), "BN_mul");
  if (!BN_mod_inverse(d.get(), e.get(), phi.get(), ctx.get())) fail("BN_mod_inverse(d)");
  check(BN_mod(dmp1.get(), d.get(), pm1.get(), ctx.get()), "BN_mod");
  check(BN_mod(dmq1.get(), d.get(), qm1.get(), ctx.get()), "BN_mod");
  if (!BN_mod_inverse(iqmp.get(), q.get(), p.get(), ctx.get())) fail("BN_mod_inverse(iqmp)");

  std::unique_ptr<OSSL_PARAM_BLD, ParamBldDeleter> bld(OSSL_PARAM_BLD_new());
  if (!bld) fail("OSSL_PARAM_BLD_new");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_N, n.get()), "push n");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_E, e.get()), "push e");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_D, d.get()), "push d");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_FACTOR1, p.get()), "push p");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_FACTOR2, q.get()), "push q");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_EXPONENT1, dmp1.get()), "push dmp1");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_EXPONENT2, dmq1.get()), "push dmq1");
  check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_COEFFICIENT1, iqmp.get()), "push iqmp");
  std::unique_ptr<OSSL_PARAM, ParamDeleter> params(OSSL_PARAM_BLD_to_param(bld.get()));
  if (!params) fail("OSSL_PARAM_BLD_to_param");

  PkeyCtxPtr pctx(EVP_PKEY_CTX_new_from_name(nullptr, "RSA", nullptr));
  if (!pctx) fail("EVP_PKEY_CTX_new_from_name");
  check(EVP_PKEY_fromdata_init(pctx.get()), "fromdata_init");
  EVP_PKEY* raw = nullptr;
  check(EVP_PKEY_fromdata(pctx.get(), &raw, EVP_PKEY_KEYPAIR, params.get()), "fromdata");
  PkeyPtr key(raw);

  RawKeyPair out;
  unsigned char* buf = nullptr;
  int len = i2d_PUBKEY(key.get(), &buf);
  if (len <= 0) fail("i2d_PUBKEY");
  out.public_key.assign(buf, buf + len);
  OPENSSL_free(buf);
  buf = nullptr;
  len = i2d_PrivateKey(key.get(), &buf);
  if (len <= 0) fail("i2d_PrivateKey");
  out.private_key.assign(buf, buf + len);
  OPENSSL_clear_free(buf, static_cast<std::size_t>(len));
  return out;
}

Bytes RsaProvider::sign(std::span<const std::uint8_t> private_key,
                        std::span<const std::uint8_t> msg) const {
  PkeyPtr key = load_private(private_key);
  MdCtxPtr md(EVP_MD_CTX_new());
  if (!md) fail("EVP_MD_CTX_new");
  EVP_PKEY_CTX* pctx = nullptr;
  check(EVP_DigestSignInit(md.get(), &pctx, EVP_sha256(), nullptr, key.get()), "DigestSignInit");
  check(EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING), "set_rsa_padding");
  check(EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_DIGEST), "set_pss_saltlen");
  std::size_t len = 0;
  check(EVP_DigestSign(md.get(), nullptr, &len, msg.data(), msg.size()), "DigestSign(size)");
  Bytes sig(len);
  check(EVP_DigestSign(md.get(), sig.data(), &len, msg.data(), msg.size()), "DigestSign");
  sig.resize(len);
  return sig;
}

bool RsaProvider::verify(std::span<const std::uint8_t> public_key,
                         std::span<const std::uint8_t> msg,
                         std::span<const std::uint8_t> sig) const {
  PkeyPtr key;
  try {
    key = load_public(public_key);
  } catch (const IntegrityError&) {
    return false;
  }
  MdCtxPtr md(EVP_MD_CTX_new());
  if (!md) fail("EVP_MD_CTX_new");
  EVP_PKEY_CTX* pctx = nullptr;
  check(EVP_DigestVerifyInit(md.get(), &pctx, EVP_sha256(), nullptr, key.get()), "DigestVerifyInit");
  check(EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING), "set_rsa_padding");
  check(EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_DIGEST), "set_pss_saltlen");
  const int rc = EVP_DigestVerify(md.get(), sig.data(), sig.size(), msg.data(), msg.size());
  ERR_clear_error();
  return rc == 1;
}

Bytes RsaProvider::encrypt_for(std::span<const std::uint8_t> public_key,
                               std::span<const std::uint8_t> msg) const {
  PkeyPtr key = load_public(public_key);
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new(key.get(), nullptr));
  if (!ctx) fail("EVP_PKEY_CTX_new");
  check(EVP_PKEY_encrypt_init(ctx.get()), "encrypt_init");
  check(EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING), "set_rsa_padding");
  check(EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()), "set_oaep_md");
  check(EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()), "set_mgf1_md");
  std::size_t len = 0;
  check(EVP_PKEY_encrypt(ctx.get(), nullptr, &len, msg.data(), msg.size()), "encrypt(size)");
  Bytes out(len);
  check(EVP_PKEY_encrypt(ctx.get(), out.data(), &len, msg.data(), msg.size()), "encrypt");
  out.resize(len);
  return out;
}

Bytes RsaProvider::decrypt(std::span<const std::uint8_t> private_key,
                           std::span<const std::uint8_t> ciphertext) const {
  PkeyPtr key = load_private(private_key);
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new(key.get(), nullptr));
  if (!ctx) fail("EVP_PKEY_CTX_new");
  check(EVP_PKEY_decrypt_init(ctx.get()), "decrypt_init");
  check(EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING), "set_rsa_padding");
  check(EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()), "set_oaep_md");
  check(EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()), "set_mgf1_md");
  std::size_t len = 0;
  if (EVP_PKEY_decrypt(ctx.get(), nullptr, &len, ciphertext.data(), ciphertext.size()) <= 0) {
    ERR_clear_error();
    throw IntegrityError("rsa: decryption failed");
  }
  Bytes out(len);
  if (EVP_PKEY_decrypt(ctx.get(), out.data(), &len, ciphertext.data(), ciphertext.size()) <= 0) {
    ERR_clear_error();
    throw IntegrityError("rsa: decryption failed");
  }
  out.resize(len);
  return out;
}

RawKeyPair FakeProvider::generate(std::uint64_t seed) const {
  RawKeyPair out;
  out.private_key = seeded_bytes(seed, 32);
  out.public_key = fake_public_from_private(out.private_key);
  return out;
}

Bytes FakeProvider::sign(std::span<const std::uint8_t> private_key,
                         std::span<const std::uint8_t> msg) const {
  return fake_tag(fake_public_from_private(private_key), msg);
}

bool FakeProvider::verify(std::span<const std::uint8_t> public_key,
                          std::span<const std::uint8_t> msg,
                          std::span<const std::uint8_t> sig) const {
  const Bytes expected = fake_tag(public_key, msg);
  return sig.size() == expected.size() &&
         CRYPTO_memcmp(sig.data(), expected.data(), expected.size()) == 0;
}

Bytes FakeProvider::encrypt_for(std::span<const std::uint8_t> public_key,
                                std::span<const std::uint8_t> msg) const {
  Bytes out = fake_tag(public_key, msg);
  const Bytes ks = fake_keystream(public_key, msg.size());
  for (std::size_t i = 0; i < msg.size(); ++i) out.push_back(msg[i] ^ ks[i]);
  return out;
}

Bytes FakeProvider::decrypt(std::span<const std::uint8_t> private_key,
                            std::span<const std::uint8_t> ciphertext) const {
  if (ciphertext.size() < 16) throw IntegrityError("fake: ciphertext too short");
  const Bytes pub = fake_public_from_private(private_key);
  const Bytes ks = fake_keystream(pub, ciphertext.size() - 16);
  Bytes msg(ciphertext.size() - 16);
  for (std::size_t i = 0; i < msg.size(); ++i) msg[i] = ciphertext[16 + i] ^ ks[i];
  const Bytes tag = fake_tag(pub, msg);
  if (CRYPTO_memcmp(tag.data(), ciphertext.data(), 16) != 0)
    throw IntegrityError("fake: decryption failed");
  return msg;
}

std::unique_ptr<CryptoProvider> make_provider(std::string_view name) {
  if (name == "rsa") return std::make_unique<RsaProvider>();
  if (name == "fake") return std::make_unique<FakeProvider>();
  throw std::invalid_argument("unknown crypto provider '" + std::string(name) + "'");
}

KeyPair generate_keypair(const CryptoProvider& provider, const KmsKey& kms, std::uint64_t seed) {
  RawKeyPair raw = provider.generate(seed);
  KeyPair out{std::move(raw.public_key), kms_wrap(kms, raw.private_key), kms.key_id};
  OPENSSL_cleanse(raw.private_key.data(), raw.private_key.size());
  return out;
}

}  // namespace peerlace::crypto
