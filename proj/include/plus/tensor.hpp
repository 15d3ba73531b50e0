#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace plus {

// Base for all structured errors thrown by the lab.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct DigestError : Error {
    using Error::Error;
};
struct DivergenceError : Error {
    using Error::Error;
};

// Dense row-major float32 tensor. Rank is 1 or 2 everywhere in this codebase.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(std::vector<int> s);
    static Tensor full(std::vector<int> s, float v);
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    std::int64_t numel() const;
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    float& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    float at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::string shape_str(const std::vector<int>& s);

// Deterministic, platform-independent RNG (xoshiro256** seeded via splitmix64).
// std:: distributions are implementation-defined, so sampling is hand-rolled.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // [0, 1)
    double uniform();
    // [0, n)
    int uniform_int(int n);
    // standard normal via Box-Muller
    double normal();
    // derive a child stream seed
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

private:
    std::uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace plus
