#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sta/nm_format.hpp"
#include "sta/types.hpp"

namespace sta {

// H parallel R x C unified systolic engines. The bandwidth-balance rule
// n * h = m keeps input-memory reads equal across computing modes.
struct EngineGeometry {
    std::uint32_t h = 4;
    std::uint32_t r = 4;
    std::uint32_t c = 8;
    NmConfig nm{2, 8, 16};

    void validate() const;
};

enum class PeMode : std::uint8_t {
    Idle,
    DenseDense,
    SparseDense,
    Shifting,
};

// Registers of one unified systolic PE.
struct PeState {
    std::int32_t psum = 0;
    std::vector<std::int16_t> west_regs;  // n operand latches
    std::vector<std::int16_t> north_regs; // m operand latches
    std::uint64_t mask_reg = 0;
    PeMode mode = PeMode::Idle;
};

struct CycleRecord {
    std::uint64_t cycle = 0;
    std::uint32_t active_pes = 0;
    std::uint64_t macs = 0;
    std::uint64_t weight_reads = 0; // weight elements from weight memory
    std::uint64_t input_reads = 0;  // bank words from input memory
    std::uint64_t selector_ops = 0;
};

struct CycleTrace {
    std::uint64_t total_cycles = 0; // fill + steady over all passes
    std::uint64_t fill_cycles = 0;
    std::uint64_t steady_cycles = 0;
    std::uint64_t drain_cycles = 0; // tracked separately, see cycle model
    std::uint64_t passes = 0;
    std::uint64_t total_macs = 0;
    std::uint64_t weight_elems_read = 0;
    std::uint64_t input_words_read = 0; // north-path bank words, m elements each
    std::uint64_t input_west_elems_read = 0; // dense-mode west operands
    std::uint64_t selector_ops = 0;
    std::uint64_t overflow_count = 0;
    bool detailed = false;
    std::vector<CycleRecord> cycles;

    void merge(const CycleTrace& other);
    void to_csv(std::ostream& out) const;
};

enum class TraceDetail : std::uint8_t {
    Summary,
    PerCycle,
};

// Cycle-model calibration, pinned by the 1:2 dataflow micro-benchmark
// (5 cycles dense, 3 cycles sparse on 2x4 by 4x2 operands): operands skew
// one cycle per column, steady state consumes one n-chunk (dense) or one
// m-group (sparse) per cycle, and the headline count excludes the result
// drain, which is reported separately.
inline constexpr std::uint32_t kFillCyclesPerColumn = 1;
inline constexpr bool kDrainInTotalCycles = false;

// Closed-form cycle count for one MatMul; the simulated trace must agree.
std::uint64_t matmul_cycles(MatMulMode mode, std::uint64_t j, std::uint64_t k, std::uint64_t l,
                            std::uint64_t heads_parallel, const EngineGeometry& geometry);

// Decodes an m-bit group mask into n one-hot selects, lowest set bit
// first; selects past the popcount are all-zero. Throws PatternViolation
// when more than n bits are set.
std::vector<std::uint64_t> selector_decode(std::uint64_t mask, std::uint32_t m, std::uint32_t n);

// psum + sum(w[i] * d[i]) with 32-bit products, exact adder tree, and
// two's-complement wrap-around. Sets *overflowed when the wide sum left
// the 32-bit range.
std::int32_t n_parallel_mac(std::span<const std::int16_t> weights,
                            std::span<const std::int16_t> data, std::int32_t psum,
                            bool* overflowed = nullptr);

struct DrainResult {
    Matrix<std::int32_t> tile;
    std::uint64_t cycles = 0;
};

// Eastward shift of an engine's psum grid: column by column, c cycles,
// reconstructing the tile from the east-edge emissions.
DrainResult drain_results(const Matrix<std::int32_t>& psums);

enum class Routing : std::uint8_t {
    Direct,
    MuxSelect,
    Broadcast,
};

struct BankAccess {
    std::uint32_t bank = 0;
    std::uint64_t address = 0;
    Routing routing = Routing::Direct;
};

// Input-memory access pattern: one bank per engine column, word addresses
// streaming with stride one. Dense mode slices the word across heads
// (head 0 takes the low n elements directly, later heads mux their
// slice); sparse mode broadcasts the whole m-element group to every head.
BankAccess bank_address(MatMulMode mode, const EngineGeometry& geometry, std::uint32_t column,
                        std::uint64_t cycle, std::uint32_t head = 0);

struct MatMulRun {
    DenseMatrix result; // 32-bit accumulators
    CycleTrace trace;
};

// a (J x K) times dense b (K x L); output features tile across all
// engines. Operands must fit 16 bits.
MatMulRun run_matmul(const DenseMatrix& a, const DenseMatrix& b, const EngineGeometry& geometry,
                     TraceDetail detail = TraceDetail::Summary);

// a (J x K) times compressed b (K x L, groups along K). The non-zero
// element selector feeds each PE only the activations paired with stored
// weights.
MatMulRun run_matmul(const DenseMatrix& a, const CompressedMatrix& b,
                     const EngineGeometry& geometry, TraceDetail detail = TraceDetail::Summary);

// Parameter-free attention product: one head per engine, batches of h.
// All heads share dims; bank words are read once and sliced across heads.
MatMulRun run_attention(std::span<const DenseMatrix> a_heads,
                        std::span<const DenseMatrix> b_heads, const EngineGeometry& geometry,
                        TraceDetail detail = TraceDetail::Summary);

} // namespace sta
