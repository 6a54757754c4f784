#include "sta/dmme_sim.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <ostream>

namespace sta {
namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

void check_16bit(const DenseMatrix& m, const char* which) {
    for (const std::int32_t v : m.values) {
        if (v < -32768 || v > 32767) {
            throw GeometryMismatch(std::string(which) + " operand exceeds 16-bit range");
        }
    }
}

// One engine's worth of work for a tile pass.
struct EngineJob {
    bool active = false;
    const DenseMatrix* a = nullptr;         // J x K activations
    const DenseMatrix* b_dense = nullptr;   // K x L weights, dense mode
    const CompressedMatrix* b_sparse = nullptr;
    std::uint64_t feature_base = 0; // first output feature (column of B)
    std::uint32_t feature_count = 0;
    std::uint64_t seq_base = 0; // first sequence row (row of A)
    std::uint32_t seq_count = 0;
    std::uint64_t k = 0;
    DenseMatrix* out = nullptr; // J x L accumulator target
};

class DmmeSim {
public:
    DmmeSim(const EngineGeometry& g, MatMulMode mode, TraceDetail detail)
        : g_(g), mode_(mode) {
        trace_.detailed = detail == TraceDetail::PerCycle;
        pes_.resize(static_cast<std::size_t>(g.h) * g.r * g.c);
        for (PeState& pe : pes_) {
            pe.west_regs.assign(g.nm.n, 0);
            pe.north_regs.assign(g.nm.m, 0);
        }
    }

    CycleTrace take_trace() { return std::move(trace_); }

    // Runs one tile pass across all engines: fill + steady compute
    // cycles, then the eastward result drain.
    void run_pass(std::span<const EngineJob> jobs, std::uint64_t steady) {
        const std::uint32_t chunk = mode_ == MatMulMode::SparseDense ? g_.nm.m : g_.nm.n;
        for (PeState& pe : pes_) {
            pe.psum = 0;
            pe.mode = mode_ == MatMulMode::SparseDense ? PeMode::SparseDense
                                                       : PeMode::DenseDense;
        }

        const std::uint64_t pass_cycles =
            static_cast<std::uint64_t>(g_.c - 1) * kFillCyclesPerColumn + steady;
        for (std::uint64_t t = 0; t < pass_cycles; ++t) {
            CycleRecord record;
            record.cycle = trace_.total_cycles + t;

            // north path: one bank word per active column per chunk
            for (std::uint32_t j = 0; j < g_.c; ++j) {
                const std::int64_t chunk_idx = static_cast<std::int64_t>(t) - j;
                if (chunk_idx < 0 || chunk_idx >= static_cast<std::int64_t>(steady)) {
                    continue;
                }
                bool column_used = false;
                for (const EngineJob& job : jobs) {
                    if (job.active && job.seq_base + j < job.a->rows && j < job.seq_count) {
                        column_used = true;
                        break;
                    }
                }
                if (column_used) {
                    trace_.input_words_read += 1;
                    record.input_reads += 1;
                }
            }

            // west path: weights (sparse) or second operand (dense) enter
            // column 0 once per chunk and propagate east
            if (t < steady) {
                for (std::size_t e = 0; e < jobs.size(); ++e) {
                    if (!jobs[e].active) continue;
                    const std::uint64_t elems =
                        static_cast<std::uint64_t>(g_.nm.n) * jobs[e].feature_count;
                    if (mode_ == MatMulMode::SparseDense) {
                        trace_.weight_elems_read += elems;
                        record.weight_reads += elems;
                    } else {
                        trace_.input_west_elems_read += elems;
                    }
                }
            }

            for (std::size_t e = 0; e < jobs.size(); ++e) {
                const EngineJob& job = jobs[e];
                if (!job.active) continue;
                for (std::uint32_t j = 0; j < job.seq_count; ++j) {
                    const std::int64_t chunk_idx = static_cast<std::int64_t>(t) - j;
                    if (chunk_idx < 0 || chunk_idx >= static_cast<std::int64_t>(steady)) {
                        continue;
                    }
                    const std::uint64_t s = job.seq_base + j;
                    for (std::uint32_t i = 0; i < job.feature_count; ++i) {
                        step_pe(job, e, i, j, static_cast<std::uint64_t>(chunk_idx), chunk);
                        record.active_pes += 1;
                        record.macs += g_.nm.n;
                        if (mode_ == MatMulMode::SparseDense) {
                            record.selector_ops += 1;
                        }
                    }
                    (void)s;
                }
            }

            trace_.total_macs += record.macs;
            trace_.selector_ops += record.selector_ops;
            if (trace_.detailed) {
                trace_.cycles.push_back(record);
            }
        }

        trace_.total_cycles += pass_cycles;
        trace_.fill_cycles += static_cast<std::uint64_t>(g_.c - 1) * kFillCyclesPerColumn;
        trace_.steady_cycles += steady;
        trace_.passes += 1;

        drain_pass(jobs);
    }

    // Per-pass result drain: shift the psum grids east, column by column,
    // and scatter the emitted tiles into the output matrices.
    void drain_pass(std::span<const EngineJob> jobs) {
        for (std::size_t e = 0; e < jobs.size(); ++e) {
            const EngineJob& job = jobs[e];
            if (!job.active) continue;
            Matrix<std::int32_t> grid(g_.r, g_.c);
            for (std::uint32_t i = 0; i < g_.r; ++i) {
                for (std::uint32_t j = 0; j < g_.c; ++j) {
                    grid.at(i, j) = pe(e, i, j).psum;
                    pe(e, i, j).mode = PeMode::Shifting;
                }
            }
            const DrainResult drained = drain_results(grid);
            assert(drained.cycles == g_.c);
            for (std::uint32_t i = 0; i < job.feature_count; ++i) {
                for (std::uint32_t j = 0; j < job.seq_count; ++j) {
                    job.out->at(job.seq_base + j, job.feature_base + i) = drained.tile.at(i, j);
                }
            }
            for (std::uint32_t i = 0; i < g_.r; ++i) {
                for (std::uint32_t j = 0; j < g_.c; ++j) {
                    pe(e, i, j).mode = PeMode::Idle;
                }
            }
        }
        trace_.drain_cycles += g_.c;
    }

private:
    PeState& pe(std::size_t engine, std::uint32_t i, std::uint32_t j) {
        return pes_[(engine * g_.r + i) * g_.c + j];
    }

    void step_pe(const EngineJob& job, std::size_t e, std::uint32_t i, std::uint32_t j,
                 std::uint64_t chunk_idx, std::uint32_t chunk) {
        PeState& state = pe(e, i, j);
        const std::uint64_t f = job.feature_base + i;
        const std::uint64_t s = job.seq_base + j;
        const std::uint64_t k_base = chunk_idx * chunk;

        if (mode_ == MatMulMode::SparseDense) {
            const CompressedMatrix& b = *job.b_sparse;
            const GroupMask mask = b.mask_at(static_cast<std::uint32_t>(f),
                                             static_cast<std::uint32_t>(chunk_idx));
            const std::size_t slot = b.value_base(static_cast<std::uint32_t>(f),
                                                  static_cast<std::uint32_t>(chunk_idx));
            state.mask_reg = mask.bits;
            for (std::uint32_t v = 0; v < g_.nm.n; ++v) {
                state.west_regs[v] = static_cast<std::int16_t>(b.values[slot + v]);
            }
            for (std::uint32_t v = 0; v < g_.nm.m; ++v) {
                const std::uint64_t k = k_base + v;
                state.north_regs[v] =
                    k < job.k ? static_cast<std::int16_t>(job.a->at(s, k)) : 0;
            }
            // non-zero element selector: route the activations paired
            // with the stored weights, lowest set bit first
            selected_.assign(g_.nm.n, 0);
            std::uint64_t bits = mask.bits;
            std::uint32_t v = 0;
            while (bits != 0) {
                const std::uint64_t low = bits & (~bits + 1);
                selected_[v++] = state.north_regs[std::countr_zero(bits)];
                bits ^= low;
            }
            bool overflowed = false;
            state.psum = n_parallel_mac(state.west_regs, selected_, state.psum, &overflowed);
            trace_.overflow_count += overflowed;
        } else {
            const DenseMatrix& b = *job.b_dense;
            for (std::uint32_t v = 0; v < g_.nm.n; ++v) {
                const std::uint64_t k = k_base + v;
                const bool in_range = k < job.k;
                state.west_regs[v] = in_range ? static_cast<std::int16_t>(b.at(k, f)) : 0;
                state.north_regs[v] = in_range ? static_cast<std::int16_t>(job.a->at(s, k)) : 0;
            }
            bool overflowed = false;
            state.psum = n_parallel_mac(state.west_regs,
                                        std::span<const std::int16_t>(state.north_regs.data(),
                                                                      g_.nm.n),
                                        state.psum, &overflowed);
            trace_.overflow_count += overflowed;
        }
    }

    EngineGeometry g_;
    MatMulMode mode_;
    CycleTrace trace_;
    std::vector<PeState> pes_;
    std::vector<std::int16_t> selected_;
};

} // namespace

void EngineGeometry::validate() const {
    nm.validate();
    if (h < 1 || r < 1 || c < 1) {
        throw InvalidConfig("engine dims must be >= 1");
    }
    if (static_cast<std::uint64_t>(nm.n) * h != nm.m) {
        throw InvalidConfig("bandwidth balance requires n * h == m");
    }
    if (nm.q > 16) {
        throw InvalidConfig("PE datapath is 16-bit");
    }
}

void CycleTrace::merge(const CycleTrace& other) {
    const std::uint64_t base = total_cycles;
    total_cycles += other.total_cycles;
    fill_cycles += other.fill_cycles;
    steady_cycles += other.steady_cycles;
    drain_cycles += other.drain_cycles;
    passes += other.passes;
    total_macs += other.total_macs;
    weight_elems_read += other.weight_elems_read;
    input_words_read += other.input_words_read;
    input_west_elems_read += other.input_west_elems_read;
    selector_ops += other.selector_ops;
    overflow_count += other.overflow_count;
    if (detailed && other.detailed) {
        for (CycleRecord record : other.cycles) {
            record.cycle += base;
            cycles.push_back(record);
        }
    }
}

void CycleTrace::to_csv(std::ostream& out) const {
    out << "cycle,macs,weight_reads,input_reads,selector_ops,active_pes\n";
    for (const CycleRecord& record : cycles) {
        out << record.cycle << ',' << record.macs << ',' << record.weight_reads << ','
            << record.input_reads << ',' << record.selector_ops << ',' << record.active_pes
            << '\n';
    }
}

std::uint64_t matmul_cycles(MatMulMode mode, std::uint64_t j, std::uint64_t k, std::uint64_t l,
                            std::uint64_t heads_parallel, const EngineGeometry& geometry) {
    geometry.validate();
    const std::uint64_t fill = static_cast<std::uint64_t>(geometry.c - 1) * kFillCyclesPerColumn;
    const std::uint64_t steady = mode == MatMulMode::SparseDense
                                     ? ceil_div(k, geometry.nm.m)
                                     : ceil_div(k, geometry.nm.n);
    std::uint64_t passes;
    if (heads_parallel > 1) {
        // one head per engine, batches of h
        passes = ceil_div(heads_parallel, geometry.h) * ceil_div(l, geometry.r) *
                 ceil_div(j, geometry.c);
    } else {
        // output features tile across every engine
        passes = ceil_div(l, static_cast<std::uint64_t>(geometry.h) * geometry.r) *
                 ceil_div(j, geometry.c);
    }
    return passes * (fill + steady);
}

std::vector<std::uint64_t> selector_decode(std::uint64_t mask, std::uint32_t m,
                                           std::uint32_t n) {
    if (m < 1 || m > 64 || n < 1 || n > m) {
        throw InvalidConfig("selector requires 1 <= n <= m <= 64");
    }
    if (m < 64) {
        mask &= (std::uint64_t{1} << m) - 1;
    }
    if (std::popcount(mask) > static_cast<int>(n)) {
        throw PatternViolation(0);
    }
    std::vector<std::uint64_t> one_hots(n, 0);
    // cascaded lowest-set-bit isolation with XOR clears
    for (std::uint32_t i = 0; i < n && mask != 0; ++i) {
        const std::uint64_t low = mask & (~mask + 1);
        one_hots[i] = low;
        mask ^= low;
    }
    return one_hots;
}

std::int32_t n_parallel_mac(std::span<const std::int16_t> weights,
                            std::span<const std::int16_t> data, std::int32_t psum,
                            bool* overflowed) {
    assert(weights.size() == data.size());
    std::int64_t wide = psum;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        wide += static_cast<std::int32_t>(weights[i]) * static_cast<std::int32_t>(data[i]);
    }
    const std::int32_t wrapped =
        static_cast<std::int32_t>(static_cast<std::uint32_t>(wide & 0xffffffffll));
    if (overflowed != nullptr) {
        *overflowed = wide != wrapped;
    }
    return wrapped;
}

DrainResult drain_results(const Matrix<std::int32_t>& psums) {
    DrainResult out;
    out.tile = Matrix<std::int32_t>(psums.rows, psums.cols);
    Matrix<std::int32_t> regs = psums;
    for (std::uint64_t shift = 0; shift < psums.cols; ++shift) {
        for (std::size_t i = 0; i < psums.rows; ++i) {
            // east edge emits, everything else moves one PE east
            out.tile.at(i, psums.cols - 1 - shift) = regs.at(i, psums.cols - 1);
            for (std::size_t j = psums.cols - 1; j > 0; --j) {
                regs.at(i, j) = regs.at(i, j - 1);
            }
        }
        out.cycles += 1;
    }
    return out;
}

BankAccess bank_address(MatMulMode mode, const EngineGeometry& geometry, std::uint32_t column,
                        std::uint64_t cycle, std::uint32_t head) {
    geometry.validate();
    if (column >= geometry.c) {
        throw InvalidConfig("column out of range");
    }
    if (head >= geometry.h) {
        throw InvalidConfig("head out of range");
    }
    BankAccess access;
    access.bank = column;
    access.address = cycle;
    if (mode == MatMulMode::SparseDense) {
        access.routing = Routing::Broadcast;
    } else {
        access.routing = head == 0 ? Routing::Direct : Routing::MuxSelect;
    }
    return access;
}

MatMulRun run_matmul(const DenseMatrix& a, const DenseMatrix& b, const EngineGeometry& geometry,
                     TraceDetail detail) {
    geometry.validate();
    if (a.cols != b.rows) {
        throw GeometryMismatch("reduction dims disagree");
    }
    check_16bit(a, "north");
    check_16bit(b, "west");

    const std::uint64_t j_total = a.rows, k = a.cols, l_total = b.cols;
    MatMulRun run;
    run.result = DenseMatrix(j_total, l_total);

    DmmeSim sim(geometry, MatMulMode::DenseDense, detail);
    const std::uint64_t steady = ceil_div(k, geometry.nm.n);
    const std::uint64_t tile_features = static_cast<std::uint64_t>(geometry.h) * geometry.r;
    std::vector<EngineJob> jobs(geometry.h);
    for (std::uint64_t f0 = 0; f0 < l_total; f0 += tile_features) {
        for (std::uint64_t s0 = 0; s0 < j_total; s0 += geometry.c) {
            for (std::uint32_t e = 0; e < geometry.h; ++e) {
                EngineJob& job = jobs[e];
                const std::uint64_t base = f0 + static_cast<std::uint64_t>(e) * geometry.r;
                job.active = base < l_total;
                if (!job.active) continue;
                job.a = &a;
                job.b_dense = &b;
                job.feature_base = base;
                job.feature_count =
                    static_cast<std::uint32_t>(std::min<std::uint64_t>(geometry.r, l_total - base));
                job.seq_base = s0;
                job.seq_count =
                    static_cast<std::uint32_t>(std::min<std::uint64_t>(geometry.c, j_total - s0));
                job.k = k;
                job.out = &run.result;
            }
            sim.run_pass(jobs, steady);
        }
    }
    run.trace = sim.take_trace();
    return run;
}

MatMulRun run_matmul(const DenseMatrix& a, const CompressedMatrix& b,
                     const EngineGeometry& geometry, TraceDetail detail) {
    geometry.validate();
    b.validate();
    if (!(b.config == geometry.nm)) {
        throw GeometryMismatch("weight pattern disagrees with engine geometry");
    }
    if (b.group_axis != GroupAxis::Rows) {
        throw GeometryMismatch("weights must be grouped along the reduction rows");
    }
    if (a.cols != b.rows) {
        throw GeometryMismatch("reduction dims disagree");
    }
    check_16bit(a, "north");

    const std::uint64_t j_total = a.rows, k = a.cols, l_total = b.cols;
    MatMulRun run;
    run.result = DenseMatrix(j_total, l_total);

    DmmeSim sim(geometry, MatMulMode::SparseDense, detail);
    const std::uint64_t steady = b.groups_per_line();
    const std::uint64_t tile_features = static_cast<std::uint64_t>(geometry.h) * geometry.r;
    std::vector<EngineJob> jobs(geometry.h);
    for (std::uint64_t f0 = 0; f0 < l_total; f0 += tile_features) {
        for (std::uint64_t s0 = 0; s0 < j_total; s0 += geometry.c) {
            for (std::uint32_t e = 0; e < geometry.h; ++e) {
                EngineJob& job = jobs[e];
                const std::uint64_t base = f0 + static_cast<std::uint64_t>(e) * geometry.r;
                job.active = base < l_total;
                if (!job.active) continue;
                job.a = &a;
                job.b_sparse = &b;
                job.feature_base = base;
                job.feature_count =
                    static_cast<std::uint32_t>(std::min<std::uint64_t>(geometry.r, l_total - base));
                job.seq_base = s0;
                job.seq_count =
                    static_cast<std::uint32_t>(std::min<std::uint64_t>(geometry.c, j_total - s0));
                job.k = k;
                job.out = &run.result;
            }
            sim.run_pass(jobs, steady);
        }
    }
    run.trace = sim.take_trace();
    return run;
}

MatMulRun run_attention(std::span<const DenseMatrix> a_heads,
                        std::span<const DenseMatrix> b_heads, const EngineGeometry& geometry,
                        TraceDetail detail) {
    geometry.validate();
    if (a_heads.empty() || a_heads.size() != b_heads.size()) {
        throw GeometryMismatch("attention needs matching head operand lists");
    }
    const std::uint64_t j_total = a_heads[0].rows;
    const std::uint64_t k = a_heads[0].cols;
    const std::uint64_t l_total = b_heads[0].cols;
    for (std::size_t hd = 0; hd < a_heads.size(); ++hd) {
        if (a_heads[hd].rows != j_total || a_heads[hd].cols != k ||
            b_heads[hd].rows != k || b_heads[hd].cols != l_total) {
            throw GeometryMismatch("attention heads must share dims");
        }
        check_16bit(a_heads[hd], "north");
        check_16bit(b_heads[hd], "west");
    }

    MatMulRun run;
    // heads stack along the feature axis: result column block per head
    run.result = DenseMatrix(j_total, l_total * a_heads.size());
    std::vector<DenseMatrix> head_results(a_heads.size(), DenseMatrix(j_total, l_total));

    DmmeSim sim(geometry, MatMulMode::DenseDense, detail);
    const std::uint64_t steady = ceil_div(k, geometry.nm.n);
    std::vector<EngineJob> jobs(geometry.h);
    for (std::uint64_t batch = 0; batch < a_heads.size(); batch += geometry.h) {
        for (std::uint64_t f0 = 0; f0 < l_total; f0 += geometry.r) {
            for (std::uint64_t s0 = 0; s0 < j_total; s0 += geometry.c) {
                for (std::uint32_t e = 0; e < geometry.h; ++e) {
                    EngineJob& job = jobs[e];
                    const std::uint64_t head = batch + e;
                    job.active = head < a_heads.size();
                    if (!job.active) continue;
                    job.a = &a_heads[head];
                    job.b_dense = &b_heads[head];
                    job.feature_base = f0;
                    job.feature_count = static_cast<std::uint32_t>(
                        std::min<std::uint64_t>(geometry.r, l_total - f0));
                    job.seq_base = s0;
                    job.seq_count = static_cast<std::uint32_t>(
                        std::min<std::uint64_t>(geometry.c, j_total - s0));
                    job.k = k;
                    job.out = &head_results[head];
                }
                sim.run_pass(jobs, steady);
            }
        }
    }
    for (std::size_t hd = 0; hd < head_results.size(); ++hd) {
        for (std::uint64_t s = 0; s < j_total; ++s) {
            for (std::uint64_t f = 0; f < l_total; ++f) {
                run.result.at(s, hd * l_total + f) = head_results[hd].at(s, f);
            }
        }
    }
    run.trace = sim.take_trace();
    return run;
}

} // namespace sta
