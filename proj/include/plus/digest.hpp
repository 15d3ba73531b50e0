#pragma once

#include <string>

namespace plus {

// Incremental SHA-256, hex output.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::string hex();  // finalizes

private:
    void* ctx_;
};

std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::string& path);

}  // namespace plus
