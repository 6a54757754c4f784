#include "sta/softmax_sim.hpp"

#include <cassert>
#include <cmath>
#include <ostream>

namespace sta {

std::uint32_t SoftmaxConfig::range_units() const {
    return static_cast<std::uint32_t>(std::llround(-x_min * (1 << frac_bits)));
}

void SoftmaxConfig::validate() const {
    if (p < 1) {
        throw InvalidConfig("softmax parallelism must be >= 1");
    }
    if (q_out < 4 || q_out > 16) {
        throw InvalidConfig("q_out must be in [4, 16]");
    }
    if (x_min >= 0.0) {
        throw InvalidConfig("x_min must be negative");
    }
    if (frac_bits < 1 || frac_bits > 14) {
        throw InvalidConfig("frac_bits must be in [1, 14]");
    }
    if (range_units() == 0 || range_units() % segments() != 0) {
        throw InvalidConfig("clamp range must cover a whole number of segments");
    }
    if (range_units() > 32767) {
        throw InvalidConfig("clamp range exceeds 16-bit inputs");
    }
}

ExpLut::ExpLut(const SoftmaxConfig& config) : config_(config) {
    config.validate();
    const double width = -config.x_min / config.segments();
    nodes_.resize(config.segments() + 1);
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        nodes_[i] = static_cast<std::uint32_t>(std::llround(std::exp(-width * i) * kExpOne));
        assert(nodes_[i] > 0);
    }
}

void ExpLut::dump_csv(std::ostream& out) const {
    const double width = -config_.x_min / config_.segments();
    out << "segment,base,entry_q15,entry\n";
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        out << i << ',' << -width * i << ',' << nodes_[i] << ','
            << static_cast<double>(nodes_[i]) / kExpOne << '\n';
    }
}

std::uint32_t exp_approx(std::int16_t x, const SoftmaxConfig& config, const ExpLut& lut) {
    const std::uint32_t range = config.range_units();
    std::uint32_t u; // distance below zero, saturating clamp
    if (x >= 0) {
        u = 0;
    } else {
        u = static_cast<std::uint32_t>(-static_cast<std::int32_t>(x));
        if (u >= range) {
            return lut.min_entry();
        }
    }

    const std::uint32_t seg_units = config.segment_units();
    const std::uint32_t seg = u / seg_units;
    const std::uint32_t low = u % seg_units;
    const std::uint64_t hi = lut.node(seg);
    const std::uint64_t delta = hi - lut.node(seg + 1);
    // interpolate toward the next node; exact at both ends, floor between
    return static_cast<std::uint32_t>((hi * seg_units - low * delta) / seg_units);
}

std::uint32_t pipelined_divide(std::uint64_t numerator, std::uint64_t denominator,
                               std::uint32_t q_out) {
    if (denominator == 0) {
        throw DivideByZero("softmax divider fed a zero denominator");
    }
    if (numerator > denominator) {
        throw InvalidConfig("divider requires numerator <= denominator");
    }
    std::uint64_t remainder = numerator;
    std::uint32_t quotient = 0;
    for (std::uint32_t stage = 0; stage < q_out; ++stage) {
        remainder <<= 1;
        quotient <<= 1;
        if (remainder >= denominator) {
            remainder -= denominator;
            quotient |= 1u;
        }
    }
    return quotient;
}

SoftmaxResult softmax_vector(std::span<const std::int16_t> x, const SoftmaxConfig& config,
                             const ExpLut& lut) {
    if (x.empty()) {
        throw InvalidConfig("softmax needs at least one element");
    }

    SoftmaxResult result;
    result.values.reserve(x.size());

    // Exponent phase: the outputs land in the local data buffer and feed
    // the running accumulator in the same stream.
    std::vector<std::uint32_t> exponents(x.size());
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        exponents[i] = exp_approx(x[i], config, lut);
        total += exponents[i];
    }
    assert(total > 0);

    for (const std::uint32_t e : exponents) {
        result.values.push_back(pipelined_divide(e, total, config.q_out));
    }
    result.cycles = softmax_cycles(x.size(), config);
    return result;
}

std::uint64_t softmax_cycles(std::uint64_t len, const SoftmaxConfig& config) {
    const std::uint64_t stream = (len + config.p - 1) / config.p;
    return stream + config.q_out + stream;
}

} // namespace sta
