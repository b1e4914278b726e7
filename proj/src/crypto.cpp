#include "agynlite/crypto.hpp"

#include <mutex>
#include <stdexcept>
#include <vector>

#include <sodium.h>

namespace agynlite::crypto {

namespace {
const unsigned char* bytes_of(std::string_view s) {
    return reinterpret_cast<const unsigned char*>(s.data());
}
} // namespace

void ensure_init() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) {
            throw std::runtime_error("libsodium initialisation failed");
        }
    });
}

std::string to_hex(std::string_view bytes) {
    std::string out(bytes.size() * 2 + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), bytes_of(bytes), bytes.size());
    out.pop_back();
    return out;
}

std::optional<std::string> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) {
        return std::nullopt;
    }
    std::string out(hex.size() / 2, '\0');
    std::size_t written = 0;
    const char* end = nullptr;
    if (sodium_hex2bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), hex.data(),
                       hex.size(), nullptr, &written, &end) != 0 ||
        written != out.size() || end != hex.data() + hex.size()) {
        return std::nullopt;
    }
    return out;
}

std::string base64url_encode(std::string_view bytes) {
    constexpr int variant = sodium_base64_VARIANT_URLSAFE_NO_PADDING;
    std::string out(sodium_base64_ENCODED_LEN(bytes.size(), variant), '\0');
    sodium_bin2base64(out.data(), out.size(), bytes_of(bytes), bytes.size(), variant);
    out.resize(out.size() - 1);
    return out;
}

std::optional<std::string> base64url_decode(std::string_view text) {
    std::string out(text.size(), '\0');
    std::size_t written = 0;
    const char* end = nullptr;
    if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(),
                          text.size(), nullptr, &written, &end,
                          sodium_base64_VARIANT_URLSAFE_NO_PADDING) != 0 ||
        end != text.data() + text.size()) {
        return std::nullopt;
    }
    out.resize(written);
    return out;
}

std::string random_bytes(std::size_t n) {
    ensure_init();
    std::string out(n, '\0');
    randombytes_buf(out.data(), n);
    return out;
}

std::string random_id(std::string_view prefix) {
    return std::string(prefix) + "-" + to_hex(random_bytes(8));
}

Key random_key() {
    ensure_init();
    Key key{};
    randombytes_buf(key.data(), key.size());
    return key;
}

std::optional<Key> parse_key(std::string_view hex) {
    auto raw = from_hex(hex);
    if (!raw || raw->size() != kKeyBytes) {
        return std::nullopt;
    }
    Key key{};
    std::copy(raw->begin(), raw->end(), key.begin());
    return key;
}

Key derive_key(const Key& master, std::uint64_t subkey_id, std::string_view context8) {
    ensure_init();
    char ctx[crypto_kdf_CONTEXTBYTES] = {};
    for (std::size_t i = 0; i < crypto_kdf_CONTEXTBYTES && i < context8.size(); ++i) {
        ctx[i] = context8[i];
    }
    Key out{};
    crypto_kdf_derive_from_key(out.data(), out.size(), subkey_id, ctx, master.data());
    return out;
}

std::string seal(const Key& key, std::string_view plaintext) {
    ensure_init();
    std::string out(crypto_secretbox_NONCEBYTES + crypto_secretbox_MACBYTES + plaintext.size(),
                    '\0');
    auto* nonce = reinterpret_cast<unsigned char*>(out.data());
    randombytes_buf(nonce, crypto_secretbox_NONCEBYTES);
    crypto_secretbox_easy(nonce + crypto_secretbox_NONCEBYTES, bytes_of(plaintext),
                          plaintext.size(), nonce, key.data());
    return out;
}

std::optional<std::string> open(const Key& key, std::string_view sealed) {
    ensure_init();
    if (sealed.size() < crypto_secretbox_NONCEBYTES + crypto_secretbox_MACBYTES) {
        return std::nullopt;
    }
    const auto* nonce = bytes_of(sealed);
    const auto* cipher = nonce + crypto_secretbox_NONCEBYTES;
    std::size_t cipher_len = sealed.size() - crypto_secretbox_NONCEBYTES;
    std::string out(cipher_len - crypto_secretbox_MACBYTES, '\0');
    if (crypto_secretbox_open_easy(reinterpret_cast<unsigned char*>(out.data()), cipher,
                                   cipher_len, nonce, key.data()) != 0) {
        return std::nullopt;
    }
    return out;
}

bool equal_constant_time(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) {
        return false;
    }
    return a.empty() || sodium_memcmp(a.data(), b.data(), a.size()) == 0;
}

Signer::Signer(const Key& seed) {
    ensure_init();
    crypto_sign_seed_keypair(public_key_.data(), secret_key_.data(), seed.data());
}

std::string Signer::sign(std::string_view message) const {
    std::string sig(crypto_sign_BYTES, '\0');
    crypto_sign_detached(reinterpret_cast<unsigned char*>(sig.data()), nullptr,
                         bytes_of(message), message.size(), secret_key_.data());
    return sig;
}

bool Signer::verify(std::string_view message, std::string_view signature) const {
    if (signature.size() != crypto_sign_BYTES) {
        return false;
    }
    return crypto_sign_verify_detached(bytes_of(signature), bytes_of(message), message.size(),
                                       public_key_.data()) == 0;
}

} // namespace agynlite::crypto
