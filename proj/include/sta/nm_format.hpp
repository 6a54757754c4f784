#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <boost/rational.hpp>

#include "sta/types.hpp"

namespace sta {

// Which dimension of the stored matrix the N:M groups run along. Groups
// always follow the reduction dimension of the MatMul the matrix feeds;
// this enum records where that dimension landed in the stored layout.
enum class GroupAxis : std::uint8_t {
    Rows = 0,
    Cols = 1,
};

// The N:M sparsity pattern plus the quantized value width.
struct NmConfig {
    std::uint32_t n = 2; // kept elements per group
    std::uint32_t m = 4; // group size
    std::uint32_t q = 16; // value bit width

    void validate() const;

    friend bool operator==(const NmConfig&, const NmConfig&) = default;
};

// One group's m-bit occupancy mask. Bit i (LSB first) marks position i
// within the group as stored.
struct GroupMask {
    std::uint64_t bits = 0;

    bool test(unsigned i) const { return (bits >> i) & 1u; }
    void set(unsigned i) { bits |= std::uint64_t{1} << i; }
    int popcount() const;

    friend bool operator==(const GroupMask&, const GroupMask&) = default;
};

// Bitmap-packed N:M sparse matrix. Masks are ordered group-major along
// the reduction dimension, then across the other dimension; every group
// owns exactly n value slots, kept values in ascending within-group
// position and zero padding after them.
struct CompressedMatrix {
    NmConfig config;
    std::uint32_t rows = 0; // true extent, before group padding
    std::uint32_t cols = 0;
    GroupAxis group_axis = GroupAxis::Rows;
    std::vector<GroupMask> masks;
    std::vector<std::int32_t> values;

    std::uint32_t reduction_extent() const {
        return group_axis == GroupAxis::Rows ? rows : cols;
    }
    std::uint32_t other_extent() const {
        return group_axis == GroupAxis::Rows ? cols : rows;
    }
    // Groups per reduction line, i.e. ceil(K / m).
    std::uint32_t groups_per_line() const {
        return (reduction_extent() + config.m - 1) / config.m;
    }
    std::size_t group_index(std::uint32_t other, std::uint32_t group) const {
        return static_cast<std::size_t>(other) * groups_per_line() + group;
    }
    const GroupMask& mask_at(std::uint32_t other, std::uint32_t group) const {
        return masks[group_index(other, group)];
    }
    // First value slot of a group.
    std::size_t value_base(std::uint32_t other, std::uint32_t group) const {
        return group_index(other, group) * config.n;
    }

    void validate() const;
};

// Packs an already N:M sparse matrix. The reduction axis is zero-padded
// to a whole number of groups; the true extent is kept in the header.
// Throws PatternViolation when a group holds more than n nonzeros.
CompressedMatrix compress(const DenseMatrix& dense, const NmConfig& config,
                          GroupAxis group_axis = GroupAxis::Rows);

// Exact inverse of compress. Throws CorruptStream when mask/value lengths
// disagree with the recorded dims.
DenseMatrix decompress(const CompressedMatrix& compressed);

using Ratio = boost::rational<long long>;

// Eq. ratio of dense bits to bitmap-compressed bits for a reduction line
// of length C: qC / (q * ceil(C/M) * N + C).
Ratio compression_ratio(const NmConfig& config, std::uint64_t cols_along_group_axis);

enum class StorageFormat {
    Bitmap,
    Coo,
    Csr,
    Csc,
    StepIndex,
};

inline constexpr unsigned kDefaultStepBits = 4;

// Total storage in bits under standard format definitions. `rows` is the
// group-axis extent.
std::uint64_t storage_cost(StorageFormat format, std::uint64_t rows, std::uint64_t cols,
                           const NmConfig& config, std::uint64_t nnz,
                           unsigned step_bits = kDefaultStepBits);

// Mask + value payload size of the NMSP encoding, header excluded.
std::uint64_t compressed_payload_bytes(std::uint32_t rows, std::uint32_t cols,
                                       const NmConfig& config,
                                       GroupAxis group_axis = GroupAxis::Rows);

inline constexpr std::size_t kNmspHeaderBytes = 20;
inline constexpr std::uint8_t kNmspVersion = 1;

void write_nmsp(const CompressedMatrix& compressed, std::ostream& sink);
CompressedMatrix read_nmsp(std::istream& source);

void write_nmsp_file(const CompressedMatrix& compressed, const std::filesystem::path& path);
CompressedMatrix read_nmsp_file(const std::filesystem::path& path);

} // namespace sta
