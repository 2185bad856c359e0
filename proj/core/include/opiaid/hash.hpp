#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

namespace opiaid {

// Incremental SHA-256 (OpenSSL EVP). Used for data hashes in train metadata
// and for model snapshot version hashes.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t size);
    void update(std::string_view s) { update(s.data(), s.size()); }
    // Lowercase hex; the object cannot be updated afterwards.
    std::string hex_digest();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace opiaid
