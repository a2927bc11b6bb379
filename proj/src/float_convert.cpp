#include "trawl/float_convert.hpp"

#include <cmath>
#include <limits>

namespace trawl {

namespace {

// Narrow `value` to a binary format with the given exponent and explicit
// mantissa widths. Works on the exact quotient |value| / quantum, which is
// representable in a double for every target format used here.
std::uint16_t narrow(double value, int exp_bits, int mant_bits) {
    const std::uint16_t sign = std::signbit(value) ? std::uint16_t(1u << (exp_bits + mant_bits)) : 0;
    const std::uint32_t exp_all_ones = (1u << exp_bits) - 1;
    const std::uint32_t inf_bits = exp_all_ones << mant_bits;

    if (std::isnan(value))
        return static_cast<std::uint16_t>(sign | inf_bits | (1u << (mant_bits - 1)));
    const double a = std::fabs(value);
    if (std::isinf(a)) return static_cast<std::uint16_t>(sign | inf_bits);
    if (a == 0) return sign;

    const int bias = (1 << (exp_bits - 1)) - 1;
    const int emin = 1 - bias;
    int e = 0;
    std::frexp(a, &e);  // a = f * 2^e, f in [0.5, 1)
    int exponent = e - 1;

    const bool subnormal = exponent < emin;
    const int quantum_exp = (subnormal ? emin : exponent) - mant_bits;
    const double scaled = std::ldexp(a, -quantum_exp);
    const auto r = static_cast<std::uint64_t>(std::nearbyint(scaled));  // ties to even

    if (subnormal) {
        // r == 2^mant_bits rounds up into the smallest normal, which the bit
        // pattern below encodes without special casing.
        return static_cast<std::uint16_t>(sign | r);
    }
    // A carry out of the mantissa (r == 2^(mant_bits+1)) bumps the exponent
    // field by one through the addition.
    const std::uint64_t bits = (static_cast<std::uint64_t>(exponent + bias) << mant_bits) +
                               (r - (std::uint64_t{1} << mant_bits));
    if (bits >= inf_bits) return static_cast<std::uint16_t>(sign | inf_bits);
    return static_cast<std::uint16_t>(sign | bits);
}

double widen(std::uint16_t bits, int exp_bits, int mant_bits) {
    const bool negative = (bits >> (exp_bits + mant_bits)) & 1u;
    const int exp_field = (bits >> mant_bits) & ((1 << exp_bits) - 1);
    const int mant = bits & ((1 << mant_bits) - 1);
    const int bias = (1 << (exp_bits - 1)) - 1;

    double magnitude = 0.0;
    if (exp_field == (1 << exp_bits) - 1)
        magnitude = mant ? std::numeric_limits<double>::quiet_NaN()
                         : std::numeric_limits<double>::infinity();
    else if (exp_field == 0)
        magnitude = std::ldexp(static_cast<double>(mant), 1 - bias - mant_bits);
    else
        magnitude = std::ldexp(static_cast<double>(mant + (1 << mant_bits)),
                               exp_field - bias - mant_bits);
    return negative ? -magnitude : magnitude;
}

}  // namespace

std::uint16_t double_to_f16_bits(double value) { return narrow(value, 5, 10); }
std::uint16_t double_to_bf16_bits(double value) { return narrow(value, 8, 7); }
double f16_bits_to_double(std::uint16_t bits) { return widen(bits, 5, 10); }
double bf16_bits_to_double(std::uint16_t bits) { return widen(bits, 8, 7); }

}  // namespace trawl
