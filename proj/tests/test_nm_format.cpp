#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <sstream>

#include "sta/nm_format.hpp"

using namespace sta;

namespace {

// Random matrix already obeying the N:M pattern: per reduction group,
// pick up to n positions and fill them with nonzero values.
DenseMatrix random_nm_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                             const NmConfig& nm) {
    DenseMatrix out(rows, cols);
    const std::size_t groups = (rows + nm.m - 1) / nm.m;
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t g = 0; g < groups; ++g) {
            const std::uint32_t keep = static_cast<std::uint32_t>(rng.int_in(0, nm.n));
            std::vector<std::uint32_t> positions(nm.m);
            for (std::uint32_t i = 0; i < nm.m; ++i) positions[i] = i;
            for (std::uint32_t i = 0; i < nm.m; ++i) {
                std::swap(positions[i], positions[rng.int_in(i, nm.m - 1)]);
            }
            for (std::uint32_t k = 0; k < keep; ++k) {
                const std::size_t r = g * nm.m + positions[k];
                if (r >= rows) continue;
                std::int32_t v = 0;
                while (v == 0) v = static_cast<std::int32_t>(rng.int_in(-32768, 32767));
                out.at(r, c) = v;
            }
        }
    }
    return out;
}

} // namespace

TEST_CASE("compress packs a 2:4 column as in the bitmap definition") {
    DenseMatrix col(4, 1);
    col.at(0, 0) = 5;
    col.at(3, 0) = -3;
    const CompressedMatrix z = compress(col, {2, 4, 16});
    REQUIRE(z.masks.size() == 1);
    CHECK(z.masks[0].bits == 0b1001);
    REQUIRE(z.values.size() == 2);
    CHECK(z.values[0] == 5);
    CHECK(z.values[1] == -3);
}

TEST_CASE("compress of an all-zero matrix yields empty masks and zero slots") {
    DenseMatrix zero(8, 2);
    const CompressedMatrix z = compress(zero, {1, 8, 16});
    REQUIRE(z.masks.size() == 2);
    for (const GroupMask& m : z.masks) CHECK(m.bits == 0);
    REQUIRE(z.values.size() == 2);
    for (std::int32_t v : z.values) CHECK(v == 0);
}

TEST_CASE("compress rejects groups with more nonzeros than n") {
    DenseMatrix col(4, 1);
    col.at(0, 0) = 1;
    col.at(1, 0) = 2;
    col.at(2, 0) = 3;
    CHECK_THROWS_AS(compress(col, {2, 4, 16}), PatternViolation);
}

TEST_CASE("round trip on random 64x64 2:8 matrices") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const DenseMatrix dense = random_nm_matrix(rng, 64, 64, {2, 8, 16});
        CHECK(decompress(compress(dense, {2, 8, 16})) == dense);
    }
}

TEST_CASE("round trip survives a padded reduction axis") {
    Rng rng(7);
    const DenseMatrix dense = random_nm_matrix(rng, 13, 5, {2, 8, 16});
    CHECK(decompress(compress(dense, {2, 8, 16})) == dense);
}

TEST_CASE("decompress places slots at mask positions") {
    CompressedMatrix z;
    z.config = {2, 4, 16};
    z.rows = 4;
    z.cols = 1;
    z.masks = {GroupMask{0b0101}};
    z.values = {7, 9};
    const DenseMatrix d = decompress(z);
    CHECK(d.at(0, 0) == 7);
    CHECK(d.at(1, 0) == 0);
    CHECK(d.at(2, 0) == 9);
    CHECK(d.at(3, 0) == 0);
}

TEST_CASE("decompress rejects slot counts that disagree with dims") {
    CompressedMatrix z;
    z.config = {2, 4, 16};
    z.rows = 4;
    z.cols = 1;
    z.masks = {GroupMask{0b0101}};
    z.values = {7};
    CHECK_THROWS_AS(decompress(z), CorruptStream);
}

TEST_CASE("BERT-shaped 768x768 2:8 round trip") {
    Rng rng(42);
    const DenseMatrix dense = random_nm_matrix(rng, 768, 768, {2, 8, 16});
    CHECK(decompress(compress(dense, {2, 8, 16})) == dense);
}

TEST_CASE("mask/value coherence, exhaustive over all masks for m <= 8") {
    for (std::uint32_t m : {2u, 4u, 8u}) {
        for (std::uint32_t n = 1; n <= m; ++n) {
            for (std::uint64_t bits = 0; bits < (1ull << m); ++bits) {
                if (std::popcount(bits) > static_cast<int>(n)) continue;
                DenseMatrix col(m, 1);
                for (std::uint32_t i = 0; i < m; ++i) {
                    if ((bits >> i) & 1) col.at(i, 0) = static_cast<std::int32_t>(i) + 1;
                }
                const CompressedMatrix z = compress(col, {n, m, 16});
                REQUIRE(z.masks[0].bits == bits);
                std::uint32_t slot = 0;
                for (std::uint32_t i = 0; i < m; ++i) {
                    if ((bits >> i) & 1) {
                        CHECK(z.values[slot] == static_cast<std::int32_t>(i) + 1);
                        ++slot;
                    }
                }
                for (; slot < n; ++slot) CHECK(z.values[slot] == 0);
            }
        }
    }
}

TEST_CASE("compression ratio matches the closed form") {
    CHECK(compression_ratio({2, 4, 16}, 768) == Ratio(64, 36));
    CHECK(doctest::Approx(boost::rational_cast<double>(compression_ratio({2, 4, 16}, 768)))
              .epsilon(1e-6) == 1.7777778);
    CHECK(compression_ratio({1, 8, 16}, 768) == Ratio(128, 24));
    CHECK(doctest::Approx(boost::rational_cast<double>(compression_ratio({1, 8, 16}, 768)))
              .epsilon(1e-6) == 5.3333333);
    // n = m: the bitmap is pure overhead, q/(q+1)
    CHECK(compression_ratio({4, 4, 16}, 64) == Ratio(16, 17));
    CHECK(compression_ratio({8, 8, 16}, 768) == Ratio(16, 17));
}

TEST_CASE("compression ratio strictly decreases as n grows") {
    for (std::uint32_t q : {4u, 8u, 16u, 32u}) {
        for (std::uint32_t m : {4u, 8u, 16u}) {
            Ratio prev = compression_ratio({1, m, q}, 768);
            for (std::uint32_t n = 2; n <= m; ++n) {
                const Ratio cur = compression_ratio({n, m, q}, 768);
                CHECK(cur < prev);
                prev = cur;
            }
        }
    }
}

TEST_CASE("closed-form ratio equals dense bits over counted bitmap bits") {
    for (std::uint32_t n : {1u, 2u, 4u}) {
        for (std::uint32_t m : {4u, 8u, 16u}) {
            if (n > m) continue;
            const NmConfig nm{n, m, 16};
            const std::uint64_t rows = 768; // multiple of every m above
            const std::uint64_t cols = 512;
            const std::uint64_t dense_bits = nm.q * rows * cols;
            const std::uint64_t bitmap_bits =
                storage_cost(StorageFormat::Bitmap, rows, cols, nm, 0);
            CHECK(compression_ratio(nm, rows) ==
                  Ratio(static_cast<long long>(dense_bits), static_cast<long long>(bitmap_bits)));
        }
    }
}

TEST_CASE("storage cost of a dense 4x4 bitmap") {
    CHECK(storage_cost(StorageFormat::Bitmap, 4, 4, {4, 4, 16}, 16) == 272);
}

TEST_CASE("bitmap beats CSR on a 2:4 768x768 matrix") {
    const NmConfig nm{2, 4, 16};
    const std::uint64_t nnz = 768 / 4 * 2 * 768;
    CHECK(storage_cost(StorageFormat::Bitmap, 768, 768, nm, nnz) <
          storage_cost(StorageFormat::Csr, 768, 768, nm, nnz));
}

TEST_CASE("format sweep reproduces the bitmap-first ordering") {
    const std::pair<std::uint32_t, std::uint32_t> patterns[] = {
        {2, 4}, {4, 8}, {2, 8}, {1, 8}, {2, 16}};
    for (const auto& [n, m] : patterns) {
        const NmConfig nm{n, m, 16};
        const std::uint64_t rows = 768, cols = 768;
        const std::uint64_t nnz = rows / m * n * cols;
        const std::uint64_t bitmap = storage_cost(StorageFormat::Bitmap, rows, cols, nm, nnz);
        // strictly below every coordinate-index format
        CHECK(bitmap < storage_cost(StorageFormat::Coo, rows, cols, nm, nnz));
        CHECK(bitmap < storage_cost(StorageFormat::Csr, rows, cols, nm, nnz));
        CHECK(bitmap < storage_cost(StorageFormat::Csc, rows, cols, nm, nnz));
        // Against step indexing the ordering depends on the step width.
        // 4-bit steps only hold up to 75% sparsity; byte-wide steps keep
        // the bitmap at the minimum across the whole sweep.
        if (m <= 2 * n) {
            CHECK(bitmap <= storage_cost(StorageFormat::StepIndex, rows, cols, nm, nnz, 4));
        }
        CHECK(bitmap <= storage_cost(StorageFormat::StepIndex, rows, cols, nm, nnz, 8));
    }
}

TEST_CASE("nmsp golden header bytes for a 2:8 16-bit 8x8 matrix") {
    Rng rng(3);
    const DenseMatrix dense = random_nm_matrix(rng, 8, 8, {2, 8, 16});
    std::ostringstream sink(std::ios::binary);
    write_nmsp(compress(dense, {2, 8, 16}), sink);
    const std::string bytes = sink.str();

    const unsigned char expected[kNmspHeaderBytes] = {
        'N', 'M', 'S', 'P', // magic
        1,                  // version
        16, 2, 8,           // q, n, m
        8, 0, 0, 0,         // rows, u32 LE
        8, 0, 0, 0,         // cols, u32 LE
        0,                  // group axis: reduction along rows
        0, 0, 0,            // reserved
    };
    REQUIRE(bytes.size() >= kNmspHeaderBytes);
    for (std::size_t i = 0; i < kNmspHeaderBytes; ++i) {
        CHECK(static_cast<unsigned char>(bytes[i]) == expected[i]);
    }
    // 8 groups: masks 8x8 bits = 8 bytes, values 8x2 slots x 16 bits = 32 bytes
    CHECK(bytes.size() == kNmspHeaderBytes + 8 + 32);
}

TEST_CASE("nmsp full golden stream for the 4x1 example column") {
    DenseMatrix col(4, 1);
    col.at(0, 0) = 5;
    col.at(3, 0) = -3;
    std::ostringstream sink(std::ios::binary);
    write_nmsp(compress(col, {2, 4, 16}), sink);
    const std::string bytes = sink.str();

    const unsigned char expected[] = {
        'N', 'M', 'S', 'P', 1, 16, 2, 4,
        4, 0, 0, 0,
        1, 0, 0, 0,
        0, 0, 0, 0,
        0x09,             // mask 0b1001, LSB first, padded to a byte
        0x05, 0x00,       // 5
        0xfd, 0xff,       // -3
    };
    REQUIRE(bytes.size() == sizeof(expected));
    for (std::size_t i = 0; i < sizeof(expected); ++i) {
        CHECK(static_cast<unsigned char>(bytes[i]) == expected[i]);
    }
}

TEST_CASE("nmsp write/read round trip across patterns and widths") {
    const NmConfig configs[] = {
        {2, 4, 16}, {1, 8, 16}, {2, 8, 8}, {3, 7, 32}, {2, 16, 4}, {5, 5, 16}};
    std::uint64_t seed = 1000;
    for (const NmConfig& nm : configs) {
        Rng dims_rng(seed);
        for (int i = 0; i < 8; ++i) {
            Rng rng(++seed);
            const std::size_t rows = static_cast<std::size_t>(dims_rng.int_in(1, 70));
            const std::size_t cols = static_cast<std::size_t>(dims_rng.int_in(1, 70));
            DenseMatrix dense = random_nm_matrix(rng, rows, cols, nm);
            if (nm.q < 16) {
                const std::int32_t hi = (1 << (nm.q - 1)) - 1;
                for (std::int32_t& v : dense.values) {
                    if (v > hi) v = hi;
                    if (v < -hi - 1) v = -hi - 1;
                }
            }
            const CompressedMatrix z = compress(dense, nm);
            std::ostringstream sink(std::ios::binary);
            write_nmsp(z, sink);
            std::istringstream source(sink.str(), std::ios::binary);
            const CompressedMatrix back = read_nmsp(source);
            CHECK(back.masks == z.masks);
            CHECK(back.values == z.values);
            CHECK(decompress(back) == dense);
        }
    }
}

TEST_CASE("nmsp rejects bad magic, bad version, truncation") {
    DenseMatrix col(4, 1);
    col.at(1, 0) = 11;
    std::ostringstream sink(std::ios::binary);
    write_nmsp(compress(col, {2, 4, 16}), sink);
    const std::string good = sink.str();

    {
        std::string bad = good;
        bad[0] = 'X';
        std::istringstream s(bad, std::ios::binary);
        CHECK_THROWS_AS(read_nmsp(s), BadMagic);
    }
    {
        std::string bad = good;
        bad[4] = 9;
        std::istringstream s(bad, std::ios::binary);
        CHECK_THROWS_AS(read_nmsp(s), UnsupportedVersion);
    }
    for (std::size_t cut : {std::size_t{3}, kNmspHeaderBytes, good.size() - 1}) {
        std::istringstream s(good.substr(0, cut), std::ios::binary);
        CHECK_THROWS_AS(read_nmsp(s), CorruptStream);
    }
    {
        std::string bad = good;
        bad[6] = 9; // n > m
        std::istringstream s(bad, std::ios::binary);
        CHECK_THROWS_AS(read_nmsp(s), CorruptStream);
    }
}

TEST_CASE("config invariants are enforced") {
    CHECK_THROWS_AS(NmConfig({0, 4, 16}).validate(), InvalidConfig);
    CHECK_THROWS_AS(NmConfig({5, 4, 16}).validate(), InvalidConfig);
    CHECK_THROWS_AS(NmConfig({2, 65, 16}).validate(), InvalidConfig);
    CHECK_THROWS_AS(NmConfig({2, 4, 12}).validate(), InvalidConfig);
    CHECK_NOTHROW(NmConfig({2, 4, 16}).validate());
}
