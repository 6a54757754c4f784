#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "sta/nm_format.hpp"
#include "sta/types.hpp"

namespace sta {

// Group masks mirroring a weight matrix, one GroupMask per reduction-axis
// group. Same group ordering as CompressedMatrix.
struct MaskTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    GroupAxis axis = GroupAxis::Rows;
    std::uint32_t m = 0;
    std::vector<GroupMask> groups;

    std::size_t reduction_extent() const { return axis == GroupAxis::Rows ? rows : cols; }
    std::size_t other_extent() const { return axis == GroupAxis::Rows ? cols : rows; }
    std::size_t groups_per_line() const { return (reduction_extent() + m - 1) / m; }

    bool test(std::size_t r, std::size_t c) const {
        const std::size_t red = axis == GroupAxis::Rows ? r : c;
        const std::size_t oth = axis == GroupAxis::Rows ? c : r;
        return groups[oth * groups_per_line() + red / m].test(static_cast<unsigned>(red % m));
    }

    // Set bits over the true extent.
    std::size_t popcount() const;
    // True when every group keeps at most n elements.
    bool obeys(std::uint32_t n) const;
    // Support comparison: every set bit of this mask is set in `outer`.
    bool subset_of(const MaskTensor& outer) const;

    friend bool operator==(const MaskTensor&, const MaskTensor&) = default;
};

// IDP schedule: walk N from n_start down to n_end, a fixed number of
// dynamic-pruning iterations per step.
struct IdpSchedule {
    std::uint32_t m = 4;
    std::uint32_t n_start = 3; // first kept count, conventionally m - 1
    std::uint32_t n_end = 1;   // the hyper-parameter n
    std::uint32_t epochs_per_step = 1;
    double learning_rate = 0.1;
    double regularizer = 0.0;
    // The update rule is implemented with the regularizer sign as printed,
    // which grows pruned weights. Set true to decay them instead.
    bool decay_pruned = false;

    void validate() const;
};

struct IdpWinner {
    std::uint32_t n = 0;
    RealMatrix weights;
    MaskTensor mask;          // final mask of the step
    MaskTensor boundary_mask; // first mask generated after inheritance
};

using WinnerSet = std::vector<IdpWinner>;

// Per group, keeps the n largest magnitudes; equal magnitudes keep the
// lowest index. Tail groups shorter than m select over the true extent
// only, so they may set fewer than n bits.
MaskTensor group_topn_mask(const RealMatrix& weights, std::uint32_t n, std::uint32_t m,
                           GroupAxis axis = GroupAxis::Rows);
MaskTensor group_topn_mask(const DenseMatrix& weights, std::uint32_t n, std::uint32_t m,
                           GroupAxis axis = GroupAxis::Rows);

RealMatrix apply_mask(const RealMatrix& weights, const MaskTensor& mask);
DenseMatrix apply_mask(const DenseMatrix& weights, const MaskTensor& mask);

// One dynamic backward update: W - lr * gradient + reg * ((1 - B) ⊙ W).
RealMatrix dynamic_update_step(const RealMatrix& weights, const MaskTensor& mask,
                               const RealMatrix& gradient, double learning_rate,
                               double regularizer, bool decay_pruned = false);

// Supplies the gradient evaluated at the masked weights; this module does
// no differentiation of its own.
using GradientFn = std::function<RealMatrix(const RealMatrix& weights, const MaskTensor& mask)>;

// Inherited dynamic pruning. Each step initializes from the kept
// parameters of the previous winner, regenerates the mask every
// iteration, and records the last-epoch model as the step's winner.
WinnerSet run_idp(const RealMatrix& initial_weights, const IdpSchedule& schedule,
                  const GradientFn& gradient);

// 1 - kept/total over the true extent.
double sparsity_of(const MaskTensor& mask);

// One NMSP file per winner plus a JSON-lines manifest (n, m, sparsity,
// file). Winner weights are masked, then quantized symmetrically to q
// bits. Returns the manifest path.
std::filesystem::path write_winner_set(const WinnerSet& winners, std::uint32_t m,
                                       const std::filesystem::path& dir,
                                       std::uint32_t q = 16);

} // namespace sta
