#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

// Thin wrappers over libsodium used for sealing secrets at rest and signing
// identity credentials.
namespace agynlite::crypto {

inline constexpr std::size_t kKeyBytes = 32;
using Key = std::array<unsigned char, kKeyBytes>;

void ensure_init();

std::string to_hex(std::string_view bytes);
std::optional<std::string> from_hex(std::string_view hex);

// URL-safe base64 without padding.
std::string base64url_encode(std::string_view bytes);
std::optional<std::string> base64url_decode(std::string_view text);

std::string random_bytes(std::size_t n);
// prefix + "-" + 16 hex chars
std::string random_id(std::string_view prefix);

Key random_key();
// Parses a 64-char hex key; nullopt on malformed input.
std::optional<Key> parse_key(std::string_view hex);
// Derives an independent subkey for a named purpose (libsodium KDF).
Key derive_key(const Key& master, std::uint64_t subkey_id, std::string_view context8);

// Authenticated symmetric encryption; output is nonce ++ ciphertext.
std::string seal(const Key& key, std::string_view plaintext);
std::optional<std::string> open(const Key& key, std::string_view sealed);

bool equal_constant_time(std::string_view a, std::string_view b);

class Signer {
public:
    explicit Signer(const Key& seed);

    std::string sign(std::string_view message) const;
    bool verify(std::string_view message, std::string_view signature) const;

private:
    std::array<unsigned char, 32> public_key_{};
    std::array<unsigned char, 64> secret_key_{};
};

} // namespace agynlite::crypto
