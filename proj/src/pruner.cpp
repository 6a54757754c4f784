#include "sta/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace sta {
namespace {

template <typename T>
MaskTensor topn_impl(const Matrix<T>& weights, std::uint32_t n, std::uint32_t m,
                     GroupAxis axis) {
    if (m < 1 || n < 1 || n > m) {
        throw InvalidConfig("require 1 <= n <= m");
    }
    MaskTensor mask;
    mask.rows = weights.rows;
    mask.cols = weights.cols;
    mask.axis = axis;
    mask.m = m;

    const std::size_t reduction = mask.reduction_extent();
    const std::size_t other = mask.other_extent();
    const std::size_t groups = mask.groups_per_line();
    mask.groups.resize(groups * other);

    std::vector<unsigned> order(m);
    for (std::size_t j = 0; j < other; ++j) {
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = g * m;
            const unsigned extent =
                static_cast<unsigned>(std::min<std::size_t>(m, reduction - base));
            order.resize(extent);
            std::iota(order.begin(), order.end(), 0u);
            const auto magnitude = [&](unsigned i) {
                const T v = axis == GroupAxis::Rows ? weights.at(base + i, j)
                                                    : weights.at(j, base + i);
                return std::abs(static_cast<double>(v));
            };
            std::stable_sort(order.begin(), order.end(), [&](unsigned a, unsigned b) {
                return magnitude(a) > magnitude(b); // stable: lowest index wins ties
            });
            GroupMask& out = mask.groups[j * groups + g];
            for (unsigned k = 0; k < std::min(n, extent); ++k) {
                out.set(order[k]);
            }
        }
    }
    return mask;
}

template <typename T>
Matrix<T> apply_impl(const Matrix<T>& weights, const MaskTensor& mask) {
    if (weights.rows != mask.rows || weights.cols != mask.cols) {
        throw DimMismatch("mask dims disagree with weights");
    }
    Matrix<T> out = weights;
    for (std::size_t r = 0; r < out.rows; ++r) {
        for (std::size_t c = 0; c < out.cols; ++c) {
            if (!mask.test(r, c)) {
                out.at(r, c) = T{};
            }
        }
    }
    return out;
}

} // namespace

std::size_t MaskTensor::popcount() const {
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            count += test(r, c);
        }
    }
    return count;
}

bool MaskTensor::obeys(std::uint32_t n) const {
    for (const GroupMask& g : groups) {
        if (g.popcount() > static_cast<int>(n)) {
            return false;
        }
    }
    return true;
}

bool MaskTensor::subset_of(const MaskTensor& outer) const {
    if (rows != outer.rows || cols != outer.cols) {
        throw DimMismatch("mask dims disagree");
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (test(r, c) && !outer.test(r, c)) {
                return false;
            }
        }
    }
    return true;
}

void IdpSchedule::validate() const {
    if (!(1 <= n_end && n_end <= n_start && n_start < m)) {
        throw InvalidConfig("require 1 <= n_end <= n_start < m");
    }
    if (epochs_per_step < 1) {
        throw InvalidConfig("epochs_per_step must be >= 1");
    }
}

MaskTensor group_topn_mask(const RealMatrix& weights, std::uint32_t n, std::uint32_t m,
                           GroupAxis axis) {
    return topn_impl(weights, n, m, axis);
}

MaskTensor group_topn_mask(const DenseMatrix& weights, std::uint32_t n, std::uint32_t m,
                           GroupAxis axis) {
    return topn_impl(weights, n, m, axis);
}

RealMatrix apply_mask(const RealMatrix& weights, const MaskTensor& mask) {
    return apply_impl(weights, mask);
}

DenseMatrix apply_mask(const DenseMatrix& weights, const MaskTensor& mask) {
    return apply_impl(weights, mask);
}

RealMatrix dynamic_update_step(const RealMatrix& weights, const MaskTensor& mask,
                               const RealMatrix& gradient, double learning_rate,
                               double regularizer, bool decay_pruned) {
    if (!weights.same_shape(gradient)) {
        throw DimMismatch("gradient dims disagree with weights");
    }
    if (weights.rows != mask.rows || weights.cols != mask.cols) {
        throw DimMismatch("mask dims disagree with weights");
    }
    const double reg = decay_pruned ? -regularizer : regularizer;
    RealMatrix out = weights;
    for (std::size_t r = 0; r < out.rows; ++r) {
        for (std::size_t c = 0; c < out.cols; ++c) {
            double w = weights.at(r, c) - learning_rate * gradient.at(r, c);
            if (!mask.test(r, c)) {
                w += reg * weights.at(r, c);
            }
            out.at(r, c) = w;
        }
    }
    return out;
}

WinnerSet run_idp(const RealMatrix& initial_weights, const IdpSchedule& schedule,
                  const GradientFn& gradient) {
    schedule.validate();

    WinnerSet winners;
    winners.reserve(schedule.n_start - schedule.n_end + 1);

    // Step 1: the dense pretrained model is the first winner; inheritance
    // from it keeps everything.
    RealMatrix weights = initial_weights;

    for (std::uint32_t n = schedule.n_start;; --n) {
        IdpWinner winner;
        winner.n = n;
        MaskTensor mask;
        for (std::uint32_t epoch = 0; epoch < schedule.epochs_per_step; ++epoch) {
            mask = group_topn_mask(weights, n, schedule.m);
            if (epoch == 0) {
                winner.boundary_mask = mask;
            }
            const RealMatrix grad = gradient(weights, mask);
            weights = dynamic_update_step(weights, mask, grad, schedule.learning_rate,
                                          schedule.regularizer, schedule.decay_pruned);
        }
        winner.mask = std::move(mask);
        winner.weights = weights;
        winners.push_back(std::move(winner));

        if (n == schedule.n_end) {
            break;
        }
        // Step 2, sparsity inheritance: the next model starts from the
        // kept parameters of this winner.
        weights = apply_mask(winners.back().weights, winners.back().mask);
    }
    return winners;
}

double sparsity_of(const MaskTensor& mask) {
    const std::size_t total = mask.rows * mask.cols;
    if (total == 0) {
        throw InvalidConfig("empty mask");
    }
    return 1.0 - static_cast<double>(mask.popcount()) / static_cast<double>(total);
}

std::filesystem::path write_winner_set(const WinnerSet& winners, std::uint32_t m,
                                       const std::filesystem::path& dir, std::uint32_t q) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path manifest_path = dir / "manifest.jsonl";
    std::ofstream manifest(manifest_path);
    if (!manifest) {
        throw Error("cannot open " + manifest_path.string());
    }

    for (const IdpWinner& winner : winners) {
        const RealMatrix masked = apply_mask(winner.weights, winner.mask);
        double peak = 0.0;
        for (double v : masked.values) {
            peak = std::max(peak, std::abs(v));
        }
        const double limit = static_cast<double>((std::int64_t{1} << (q - 1)) - 1);
        const double scale = peak > 0.0 ? limit / peak : 1.0;

        DenseMatrix quantized(masked.rows, masked.cols);
        for (std::size_t i = 0; i < masked.values.size(); ++i) {
            quantized.values[i] = static_cast<std::int32_t>(std::llround(masked.values[i] * scale));
        }

        const std::string name = "winner_n" + std::to_string(winner.n) + ".nmsp";
        write_nmsp_file(compress(quantized, {winner.n, m, q}), dir / name);
        manifest << "{\"n\": " << winner.n << ", \"m\": " << m
                 << ", \"sparsity\": " << sparsity_of(winner.mask) << ", \"file\": \"" << name
                 << "\"}\n";
    }
    return manifest_path;
}

} // namespace sta
