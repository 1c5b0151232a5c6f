#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace smokenet {

// Base for everything thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension/shape violations. Message always names the offending axis.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration (model config, CLI options, schedules).
class ConfigError : public Error {
public:
    using Error::Error;
};

// File system / raster decoding problems.
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed or truncated checkpoint files.
class CheckpointError : public Error {
public:
    using Error::Error;
};

// Dense NCHW extents. Vectors are stored as (C,1,1,1), scalars as (1,1,1,1).
struct Shape {
    std::int64_t n = 1;
    std::int64_t c = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;

    std::int64_t numel() const { return n * c * h * w; }

    bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

template <typename... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

// splitmix64 finalizer; used to derive independent RNG streams from
// (seed, epoch, sample-id) tuples so every draw is reproducible without
// carrying RNG state across epochs or checkpoints.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

inline std::uint64_t hash_str(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

// One-line warnings for non-fatal conditions (e.g. eval-mode batch norm
// before any training update). Kept free of any logging framework.
void warn(const std::string& msg);

// Human-readable CPU model string for benchmark reports.
std::string cpu_model_name();

}  // namespace smokenet
