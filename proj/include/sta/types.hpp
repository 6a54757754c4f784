#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sta {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A group holds more nonzeros than the N:M pattern allows.
class PatternViolation : public Error {
public:
    explicit PatternViolation(std::size_t group_index)
        : Error("pattern violation in group " + std::to_string(group_index)),
          group_index(group_index) {}

    std::size_t group_index;
};

class DimMismatch : public Error {
public:
    using Error::Error;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

class GeometryMismatch : public Error {
public:
    using Error::Error;
};

class CorruptStream : public Error {
public:
    using Error::Error;
};

class BadMagic : public Error {
public:
    using Error::Error;
};

class UnsupportedVersion : public Error {
public:
    using Error::Error;
};

class DivideByZero : public Error {
public:
    using Error::Error;
};

// The two MatMul flavors the engine executes: parameter-free dense-dense
// products and sparse-dense products against N:M compressed weights.
enum class MatMulMode : std::uint8_t {
    DenseDense,
    SparseDense,
};

// Row-major 2-D container. Integer matrices hold quantized fixed-point
// values, real matrices hold training weights.
template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T{})
        : rows(r), cols(c), values(r * c, fill) {}

    T& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::size_t size() const { return values.size(); }
    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows == b.rows && a.cols == b.cols && a.values == b.values;
    }
};

using DenseMatrix = Matrix<std::int32_t>;
using RealMatrix = Matrix<double>;

// xorshift64* generator for seeded synthetic data. Deterministic across
// platforms, unlike distributions layered on std::mt19937.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // splitmix64 scramble so that small seeds do not start near zero
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        state_ = (z ^ (z >> 31)) | 1ULL;
    }

    std::uint64_t next() {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545f4914f6cdd1dULL;
    }

    // Uniform in [lo, hi], inclusive.
    std::int64_t int_in(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next() % span);
    }

    // Uniform in [0, 1).
    double real01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

} // namespace sta
