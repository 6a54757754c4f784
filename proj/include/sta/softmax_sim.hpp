#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sta/types.hpp"

namespace sta {

// Output fraction values carry q_out bits; exponent values carry this
// many fraction bits.
inline constexpr unsigned kExpFracBits = 15;
inline constexpr std::uint32_t kExpOne = 1u << kExpFracBits;

struct SoftmaxConfig {
    std::uint32_t p = 8;        // exponent/divider lanes
    std::uint32_t q_out = 8;    // divider depth == output fraction bits
    std::uint32_t lut_bits = 6; // log2 of the segment count
    std::uint32_t frac_bits = 10; // fixed-point position of the inputs
    double x_min = -8.0;        // clamp floor; inputs above 0 clamp to 0

    std::uint32_t segments() const { return 1u << lut_bits; }
    // Clamp range expressed in input units.
    std::uint32_t range_units() const;
    std::uint32_t segment_units() const { return range_units() / segments(); }

    void validate() const;
};

// Node table for the piecewise-linear exponential: segments()+1 nodes of
// e^(segment base) in Q15, monotonically increasing with the base.
class ExpLut {
public:
    explicit ExpLut(const SoftmaxConfig& config);

    std::uint32_t node(std::uint32_t i) const { return nodes_[i]; }
    std::uint32_t min_entry() const { return nodes_.back(); }
    std::size_t node_count() const { return nodes_.size(); }

    void dump_csv(std::ostream& out) const;

private:
    std::vector<std::uint32_t> nodes_;
    SoftmaxConfig config_;
};

// e^x for clamped 16-bit fixed-point x, via the node table and one
// multiply + one add per lookup. Q15 result, always positive.
std::uint32_t exp_approx(std::int16_t x, const SoftmaxConfig& config, const ExpLut& lut);

// Restoring shift-subtract division: q_out stages, one quotient bit each,
// truncated q_out-bit fraction. Requires numerator <= denominator.
std::uint32_t pipelined_divide(std::uint64_t numerator, std::uint64_t denominator,
                               std::uint32_t q_out);

struct SoftmaxResult {
    std::vector<std::uint32_t> values; // q_out-bit fractions
    std::uint64_t cycles = 0;
};

// Streams exponents p per cycle with accumulation pipelined behind them,
// then divides p outputs per cycle after a Q-cycle fill. Intermediates
// never leave the module.
SoftmaxResult softmax_vector(std::span<const std::int16_t> x, const SoftmaxConfig& config,
                             const ExpLut& lut);

// Closed-form cycle count: ceil(len/p) + Q + ceil(len/p).
std::uint64_t softmax_cycles(std::uint64_t len, const SoftmaxConfig& config);

} // namespace sta
