#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

#include "atq/errors.hpp"

namespace atq::fp16 {

inline constexpr double kMaxFinite = 65504.0;
inline constexpr double kOverflowBound = 65536.0;

// binary32 -> binary16 bits, round-to-nearest-even. Out-of-range values
// round to infinity; callers apply the storage saturation policy on top.
inline std::uint16_t bits_from_float_rne(float f) {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    const std::uint32_t absx = x & 0x7FFFFFFFu;
    if (absx >= 0x7F800000u) { // inf or nan
        const std::uint32_t nan_payload = absx > 0x7F800000u ? 0x200u : 0u;
        return static_cast<std::uint16_t>(sign | 0x7C00u | nan_payload);
    }
    const std::int32_t hexp = static_cast<std::int32_t>(absx >> 23) - 112;
    std::uint32_t mant = absx & 0x7FFFFFu;
    if (hexp >= 0x1F) {
        return static_cast<std::uint16_t>(sign | 0x7C00u);
    }
    if (hexp <= 0) {
        if (hexp < -10) {
            return static_cast<std::uint16_t>(sign); // underflows to zero
        }
        mant |= 0x800000u;
        const std::uint32_t shift = static_cast<std::uint32_t>(14 - hexp);
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) {
            ++half_mant; // carry into the exponent field is correct here
        }
        return static_cast<std::uint16_t>(sign | half_mant);
    }
    std::uint32_t h = sign | (static_cast<std::uint32_t>(hexp) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) {
        ++h;
    }
    return static_cast<std::uint16_t>(h);
}

inline double double_from_bits(std::uint16_t h) {
    const std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1Fu;
    const std::uint32_t mant = h & 0x3FFu;
    std::uint32_t fbits;
    if (exp == 0) {
        if (mant == 0) {
            fbits = sign;
        } else {
            // subnormal: normalize into binary32
            int e = -1;
            std::uint32_t m = mant;
            while ((m & 0x400u) == 0) {
                m <<= 1;
                ++e;
            }
            fbits = sign | (static_cast<std::uint32_t>(113 - e - 1) << 23) | ((m & 0x3FFu) << 13);
        }
    } else if (exp == 0x1F) {
        fbits = sign | 0x7F800000u | (mant << 13);
    } else {
        fbits = sign | ((exp + 112) << 23) | (mant << 13);
    }
    return static_cast<double>(std::bit_cast<float>(fbits));
}

// Storage conversion. Saturates magnitudes in (65504, 65536) to +/-65504;
// anything at or beyond 65536 (or non-finite) is rejected.
inline std::uint16_t bits_from_double(double v) {
    if (!std::isfinite(v)) {
        throw ValidationError("fp16 storage requires finite values");
    }
    if (std::abs(v) >= kOverflowBound) {
        throw ValidationError("value " + std::to_string(v) + " exceeds fp16 range");
    }
    std::uint16_t h = bits_from_float_rne(static_cast<float>(v));
    if ((h & 0x7FFFu) == 0x7C00u) {
        h = static_cast<std::uint16_t>((h & 0x8000u) | 0x7BFFu);
    }
    return h;
}

// Round a double onto the fp16 grid (storage policy applied).
inline double canonical(double v) {
    return double_from_bits(bits_from_double(v));
}

} // namespace atq::fp16
