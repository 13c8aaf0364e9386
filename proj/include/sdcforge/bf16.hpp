// Software bfloat16: 16-bit truncated float used as the storage type for all
// model tensors. Layout: sign = bit 15, exponent = bits 14..7, mantissa = bits 6..0.
#pragma once

#include <bit>
#include <cstdint>

namespace sdcforge {

struct Bf16 {
    std::uint16_t bits = 0;

    friend constexpr bool operator==(Bf16 a, Bf16 b) { return a.bits == b.bits; }
    friend constexpr bool operator!=(Bf16 a, Bf16 b) { return a.bits != b.bits; }
};

inline constexpr std::uint16_t kBf16SignMask = 0x8000;
inline constexpr std::uint16_t kBf16ExponentMask = 0x7F80;
inline constexpr std::uint16_t kBf16MantissaMask = 0x007F;
inline constexpr int kBf16ExponentMsbBit = 14;

// Exact widening: a bf16 pattern is the top half of an f32 pattern.
constexpr float bf16_decode(Bf16 v) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(v.bits) << 16);
}

constexpr bool bf16_is_nan(Bf16 v) {
    return (v.bits & kBf16ExponentMask) == kBf16ExponentMask && (v.bits & kBf16MantissaMask) != 0;
}

constexpr bool bf16_is_inf(Bf16 v) {
    return (v.bits & ~kBf16SignMask) == kBf16ExponentMask;
}

constexpr bool bf16_is_finite(Bf16 v) {
    return (v.bits & kBf16ExponentMask) != kBf16ExponentMask;
}

// Round-to-nearest-even truncation of the low 16 mantissa bits.
// Inf stays Inf; NaN maps to a quiet NaN (the truncated payload may be zero,
// which would otherwise read back as Inf).
constexpr Bf16 bf16_encode(float x) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    if ((u & 0x7F800000u) == 0x7F800000u && (u & 0x007FFFFFu) != 0) {
        std::uint16_t hi = static_cast<std::uint16_t>(u >> 16);
        return Bf16{static_cast<std::uint16_t>(hi | 0x0040)};
    }
    const std::uint32_t lower = u & 0xFFFFu;
    std::uint32_t upper = u >> 16;
    if (lower > 0x8000u || (lower == 0x8000u && (upper & 1u))) {
        ++upper;  // may carry into the exponent; saturation to Inf is the correct result
    }
    return Bf16{static_cast<std::uint16_t>(upper)};
}

// XOR the pattern with a mask. The stored operand is never modified by callers;
// corruption is confined to the computation that requested the flip.
constexpr Bf16 flip_bits(Bf16 v, std::uint16_t mask) {
    return Bf16{static_cast<std::uint16_t>(v.bits ^ mask)};
}

}  // namespace sdcforge
