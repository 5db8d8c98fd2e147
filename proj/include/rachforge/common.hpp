// Shared error types, seeding helpers and small utilities.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rachforge {

inline constexpr const char* kVersion = "0.1.0";

// Thrown on malformed run configuration (CLI maps it to exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on file read/write failures (exit code 3).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when training produces non-finite losses or weights (exit code 4).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and named stream ids.
// One trail owns several decoupled streams (environment, exploration,
// minibatch sampling); deriving them this way keeps trails reproducible
// regardless of how many draws each stream consumes.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index = 0) {
    return splitmix64(splitmix64(base ^ 0x5851f42d4c957f2dULL) ^
                      splitmix64(stream * 0x14057b7ef767814fULL + index));
}

inline Rng make_rng(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
    return Rng(derive_seed(base, stream, index));
}

// Stream ids used across the project.
namespace stream {
inline constexpr std::uint64_t kEnv = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kExplore = 3;
inline constexpr std::uint64_t kReplay = 4;
inline constexpr std::uint64_t kEval = 5;
}  // namespace stream

inline double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

}  // namespace rachforge
