#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

// Shared numeric utilities: constants, counter-based RNG primitives,
// normal CDF / quantile, error types.

namespace shelab {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kSqrt2 = 1.41421356237309504880;

// Thrown when a quadrature/series/stepping routine cannot certify its result.
// Carries a residual or diagnostic in the message.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class UnsupportedError : public std::runtime_error {
public:
    explicit UnsupportedError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Counter-based random stream primitives.
//
// All randomness in the project is derived by hashing (seed, path, step, lane)
// through the splitmix64 finalizer.  No sequential state: the same key always
// produces the same variate, independent of thread schedule.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t counter_key(uint64_t seed, uint64_t path_id, uint64_t step, uint64_t lane) {
    uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ (path_id * 0xd6e8feb86659fd93ULL));
    h = splitmix64(h ^ (step * 0xa0761d6478bd642fULL));
    h = splitmix64(h ^ (lane * 0xe7037ed1a0b428dbULL));
    return h;
}

// Map a 64-bit word to (0,1), never returning 0 or 1 exactly.
inline double u64_to_unit(uint64_t h) {
    return (static_cast<double>(h >> 11) + 0.5) * 0x1p-53;
}

// Standard normal CDF.
inline double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / kSqrt2);
}

// Standard normal density.
inline double normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(kTwoPi);
}

// Inverse standard normal CDF.  Acklam's rational approximation followed by
// one Halley step against erfc, giving ~1 ulp over (0,1).
double inv_normal_cdf(double p);

// Normal variate from a counter key: inverse-CDF of the keyed uniform.
inline double counter_normal(uint64_t seed, uint64_t path_id, uint64_t step, uint64_t lane) {
    return inv_normal_cdf(u64_to_unit(counter_key(seed, path_id, step, lane)));
}

}  // namespace shelab
