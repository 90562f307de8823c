#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace gnaq {

// FP8 E4M3 codec: 1 sign bit, 4 exponent bits (bias 7), 3 mantissa bits.
// The all-ones exponent is ordinary except mantissa 111, which is NaN (no
// infinities), so the max normal is 1.75 * 2^8 = 448. Magnitudes beyond 448
// clamp. Used purely as a storage codec for scale rows.

inline constexpr double FP8_MAX = 448.0;

// E4M3 value of a byte. Subnormals are mant * 2^-9. NaN keeps its sign bit
// so the byte round-trips through encode.
inline double fp8_decode(std::uint8_t b) {
    const bool neg = (b & 0x80) != 0;
    const int exp = (b >> 3) & 0xF;
    const int mant = b & 0x7;
    if (exp == 0xF && mant == 0x7) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return neg ? -nan : nan;
    }
    double mag;
    if (exp == 0)
        mag = std::ldexp(static_cast<double>(mant), -9);
    else
        mag = std::ldexp(1.0 + static_cast<double>(mant) / 8.0, exp - 7);
    return neg ? -mag : mag;
}

namespace detail {

// Round-to-nearest-even for a non-negative value whose fractional part is
// exact (callers scale by powers of two, which is lossless).
inline double round_half_even(double x) {
    const double fl = std::floor(x);
    const double frac = x - fl;
    if (frac > 0.5) return fl + 1.0;
    if (frac < 0.5) return fl;
    return (static_cast<std::uint64_t>(fl) % 2 == 0) ? fl : fl + 1.0;
}

}  // namespace detail

// Round-to-nearest-even to E4M3; |x| > 448 (and infinities) clamp to ±448.
inline std::uint8_t fp8_encode(double x) {
    if (std::isnan(x)) return std::signbit(x) ? 0xFF : 0x7F;
    const std::uint8_t sign = std::signbit(x) ? 0x80 : 0x00;
    double mag = std::fabs(x);
    if (mag > FP8_MAX) mag = FP8_MAX;
    if (mag == 0.0) return sign;

    // below the smallest normal 2^-6 the ulp is 2^-9 (subnormal space)
    if (mag < std::ldexp(1.0, -6)) {
        const double mant = detail::round_half_even(std::ldexp(mag, 9));
        if (mant >= 8.0) return sign | 0x08;  // rounds up to the smallest normal
        return sign | static_cast<std::uint8_t>(mant);
    }

    int e2 = 0;
    std::frexp(mag, &e2);  // mag = f * 2^e2 with f in [0.5, 1)
    int exp = e2 - 1;      // mag = (1 + frac) * 2^exp
    // mantissa in eighths, in [8, 16)
    double mant = detail::round_half_even(std::ldexp(mag, 3 - exp));
    if (mant == 16.0) {
        mant = 8.0;
        ++exp;
    }
    if (exp > 8 || (exp == 8 && mant > 14.0)) {
        exp = 8;
        mant = 14.0;  // 448, the largest normal
    }
    const std::uint8_t ebits = static_cast<std::uint8_t>(exp + 7);
    const std::uint8_t mbits = static_cast<std::uint8_t>(static_cast<int>(mant) - 8);
    return sign | static_cast<std::uint8_t>(ebits << 3) | mbits;
}

// The value x would round-trip to on disk.
inline double fp8_round(double x) { return fp8_decode(fp8_encode(x)); }

}  // namespace gnaq
