#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace peerlace::crypto {

using Bytes = std::vector<std::uint8_t>;

// Authentication or integrity check failed (wrong key, tampered ciphertext).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Underlying library failure.
class CryptoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Bytes to_bytes(std::string_view s);
std::string to_string(std::span<const std::uint8_t> b);

std::string base64_encode(std::span<const std::uint8_t> data);
Bytes base64_decode(std::string_view text);

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data);

// Deterministic 64-bit sub-seed: first 8 bytes (little endian) of
// SHA-256(le64(master) ‖ label).
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

// Bytes from a deterministic generator seeded with `seed`.
Bytes seeded_bytes(std::uint64_t seed, std::size_t n);
// Bytes from the system CSPRNG.
Bytes random_bytes(std::size_t n);

// Symmetric wrapping key held by the key-management service analog.
// The secret must never reach logs or outputs.
struct KmsKey {
  std::string key_id;
  Bytes secret;

  static KmsKey generate(std::string key_id, std::uint64_t seed);
};

// AES-256-GCM with a fresh random nonce; the key id is bound as associated
// data. Layout: nonce(12) ‖ ciphertext ‖ tag(16).
Bytes kms_wrap(const KmsKey& kms, std::span<const std::uint8_t> plaintext);
Bytes kms_unwrap(const KmsKey& kms, std::span<const std::uint8_t> wrapped);

struct RawKeyPair {
  Bytes public_key;
  Bytes private_key;
};

// Asymmetric scheme used by the membership protocols.
class CryptoProvider {
 public:
  virtual ~CryptoProvider() = default;
  virtual std::string_view name() const noexcept = 0;
  // Same seed yields the same key pair.
  virtual RawKeyPair generate(std::uint64_t seed) const = 0;
  virtual Bytes sign(std::span<const std::uint8_t> private_key,
                     std::span<const std::uint8_t> msg) const = 0;
  virtual bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> msg,
                      std::span<const std::uint8_t> sig) const = 0;
  virtual Bytes encrypt_for(std::span<const std::uint8_t> public_key,
                            std::span<const std::uint8_t> msg) const = 0;
  // Throws IntegrityError when the ciphertext was not made for this key.
  virtual Bytes decrypt(std::span<const std::uint8_t> private_key,
                        std::span<const std::uint8_t> ciphertext) const = 0;
};

// RSA-2048: PSS/SHA-256 signatures, OAEP/SHA-256 encryption. Keys are DER
// (SubjectPublicKeyInfo / PKCS#1 private).
class RsaProvider final : public CryptoProvider {
 public:
  std::string_view name() const noexcept override { return "rsa"; }
  RawKeyPair generate(std::uint64_t seed) const override;
  Bytes sign(std::span<const std::uint8_t> private_key, std::span<const std::uint8_t> msg) const override;
  bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> msg,
              std::span<const std::uint8_t> sig) const override;
  Bytes encrypt_for(std::span<const std::uint8_t> public_key,
                    std::span<const std::uint8_t> msg) const override;
  Bytes decrypt(std::span<const std::uint8_t> private_key,
                std::span<const std::uint8_t> ciphertext) const override;
};

// Hash-based stand-in with the same interface for fast protocol tests.
// Offers no secrecy against anyone holding the public key.
class FakeProvider final : public CryptoProvider {
 public:
  std::string_view name() const noexcept override { return "fake"; }
  RawKeyPair generate(std::uint64_t seed) const override;
  Bytes sign(std::span<const std::uint8_t> private_key, std::span<const std::uint8_t> msg) const override;
  bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> msg,
              std::span<const std::uint8_t> sig) const override;
  Bytes encrypt_for(std::span<const std::uint8_t> public_key,
                    std::span<const std::uint8_t> msg) const override;
  Bytes decrypt(std::span<const std::uint8_t> private_key,
                std::span<const std::uint8_t> ciphertext) const override;
};

std::unique_ptr<CryptoProvider> make_provider(std::string_view name);

// Public key in the clear, private key wrapped under a KMS key.
struct KeyPair {
  Bytes public_key;
  Bytes private_key_wrapped;
  std::string kms_key_id;
};

KeyPair generate_keypair(const CryptoProvider& provider, const KmsKey& kms, std::uint64_t seed);

}  // namespace peerlace::crypto
