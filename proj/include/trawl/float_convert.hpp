#pragma once

#include <cstdint>

namespace trawl {

// IEEE-754 binary16 / bfloat16 conversions. Narrowing rounds to nearest,
// ties to even, directly from double (no intermediate float rounding).
std::uint16_t double_to_f16_bits(double value);
std::uint16_t double_to_bf16_bits(double value);
double f16_bits_to_double(std::uint16_t bits);
double bf16_bits_to_double(std::uint16_t bits);

}  // namespace trawl
