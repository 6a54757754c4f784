#include "sta/nm_format.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace sta {
namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

// Bits needed to index `count` distinct positions.
unsigned ceil_log2(std::uint64_t count) {
    if (count <= 1) {
        return 0;
    }
    return static_cast<unsigned>(std::bit_width(count - 1));
}

// Smallest/largest value representable in q bits, two's complement.
std::int64_t q_min(std::uint32_t q) { return -(std::int64_t{1} << (q - 1)); }
std::int64_t q_max(std::uint32_t q) { return (std::int64_t{1} << (q - 1)) - 1; }

// LSB-first bit packer for the NMSP payload sections.
class BitWriter {
public:
    void put(std::uint64_t value, unsigned bits) {
        for (unsigned i = 0; i < bits; ++i) {
            if (bit_ == 0) {
                bytes_.push_back(0);
            }
            if ((value >> i) & 1u) {
                bytes_.back() |= static_cast<std::uint8_t>(1u << bit_);
            }
            bit_ = (bit_ + 1) % 8;
        }
    }

    // Pad to a byte boundary and hand over the buffer.
    std::vector<std::uint8_t> finish() {
        bit_ = 0;
        return std::move(bytes_);
    }

private:
    std::vector<std::uint8_t> bytes_;
    unsigned bit_ = 0;
};

class BitReader {
public:
    BitReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint64_t get(unsigned bits) {
        std::uint64_t value = 0;
        for (unsigned i = 0; i < bits; ++i) {
            const std::size_t byte = pos_ / 8;
            if (byte >= size_) {
                throw CorruptStream("nmsp payload truncated");
            }
            if ((data_[byte] >> (pos_ % 8)) & 1u) {
                value |= std::uint64_t{1} << i;
            }
            ++pos_;
        }
        return value;
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::int32_t sign_extend(std::uint64_t raw, std::uint32_t q) {
    const std::uint64_t sign = std::uint64_t{1} << (q - 1);
    if (q < 64 && (raw & sign)) {
        raw |= ~((std::uint64_t{1} << q) - 1);
    }
    return static_cast<std::int32_t>(static_cast<std::int64_t>(raw));
}

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

std::uint32_t get_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

} // namespace

void NmConfig::validate() const {
    if (n < 1 || n > m || m > 64) {
        throw InvalidConfig("require 1 <= n <= m <= 64, got " + std::to_string(n) + ":" +
                            std::to_string(m));
    }
    if (q != 4 && q != 8 && q != 16 && q != 32) {
        throw InvalidConfig("q must be one of 4, 8, 16, 32, got " + std::to_string(q));
    }
}

int GroupMask::popcount() const { return std::popcount(bits); }

void CompressedMatrix::validate() const {
    config.validate();
    const std::size_t expected_masks =
        static_cast<std::size_t>(groups_per_line()) * other_extent();
    if (masks.size() != expected_masks) {
        throw CorruptStream("mask count disagrees with dims");
    }
    if (values.size() != masks.size() * config.n) {
        throw CorruptStream("value count disagrees with dims");
    }
    for (std::size_t g = 0; g < masks.size(); ++g) {
        if (masks[g].popcount() > static_cast<int>(config.n)) {
            throw PatternViolation(g);
        }
    }
}

CompressedMatrix compress(const DenseMatrix& dense, const NmConfig& config,
                          GroupAxis group_axis) {
    config.validate();
    if (dense.values.size() != dense.rows * dense.cols) {
        throw DimMismatch("dense value count disagrees with dims");
    }

    CompressedMatrix out;
    out.config = config;
    out.rows = static_cast<std::uint32_t>(dense.rows);
    out.cols = static_cast<std::uint32_t>(dense.cols);
    out.group_axis = group_axis;

    const std::uint32_t reduction = out.reduction_extent();
    const std::uint32_t other = out.other_extent();
    const std::uint32_t groups = out.groups_per_line();
    out.masks.resize(static_cast<std::size_t>(groups) * other);
    out.values.assign(out.masks.size() * config.n, 0);

    const auto element = [&](std::uint32_t red, std::uint32_t oth) {
        return group_axis == GroupAxis::Rows ? dense.at(red, oth) : dense.at(oth, red);
    };

    for (std::uint32_t j = 0; j < other; ++j) {
        for (std::uint32_t g = 0; g < groups; ++g) {
            GroupMask mask;
            std::uint32_t kept = 0;
            const std::size_t base = out.value_base(j, g);
            for (std::uint32_t i = 0; i < config.m; ++i) {
                const std::uint32_t red = g * config.m + i;
                if (red >= reduction) {
                    break; // zero padding past the true extent
                }
                const std::int32_t v = element(red, j);
                if (v == 0) {
                    continue;
                }
                if (v < q_min(config.q) || v > q_max(config.q)) {
                    throw InvalidConfig("value out of q-bit range");
                }
                if (kept == config.n) {
                    throw PatternViolation(out.group_index(j, g));
                }
                mask.set(i);
                out.values[base + kept] = v;
                ++kept;
            }
            out.masks[out.group_index(j, g)] = mask;
        }
    }
    return out;
}

DenseMatrix decompress(const CompressedMatrix& compressed) {
    compressed.validate();

    DenseMatrix out(compressed.rows, compressed.cols);
    const std::uint32_t reduction = compressed.reduction_extent();
    const std::uint32_t other = compressed.other_extent();
    const std::uint32_t groups = compressed.groups_per_line();

    for (std::uint32_t j = 0; j < other; ++j) {
        for (std::uint32_t g = 0; g < groups; ++g) {
            const GroupMask mask = compressed.mask_at(j, g);
            std::size_t slot = compressed.value_base(j, g);
            for (std::uint32_t i = 0; i < compressed.config.m; ++i) {
                if (!mask.test(i)) {
                    continue;
                }
                const std::uint32_t red = g * compressed.config.m + i;
                if (red >= reduction) {
                    throw CorruptStream("mask bit set past the true extent");
                }
                const std::int32_t v = compressed.values[slot++];
                if (compressed.group_axis == GroupAxis::Rows) {
                    out.at(red, j) = v;
                } else {
                    out.at(j, red) = v;
                }
            }
        }
    }
    return out;
}

Ratio compression_ratio(const NmConfig& config, std::uint64_t cols_along_group_axis) {
    config.validate();
    if (cols_along_group_axis < 1) {
        throw InvalidConfig("group-axis extent must be >= 1");
    }
    const long long q = config.q;
    const long long c = static_cast<long long>(cols_along_group_axis);
    const long long groups = static_cast<long long>(ceil_div(cols_along_group_axis, config.m));
    return Ratio(q * c, q * groups * config.n + c);
}

std::uint64_t storage_cost(StorageFormat format, std::uint64_t rows, std::uint64_t cols,
                           const NmConfig& config, std::uint64_t nnz, unsigned step_bits) {
    config.validate();
    if (nnz > rows * cols) {
        throw InvalidConfig("nnz exceeds rows * cols");
    }
    const std::uint64_t q = config.q;
    switch (format) {
    case StorageFormat::Bitmap:
        return q * ceil_div(rows, config.m) * config.n * cols + rows * cols;
    case StorageFormat::Coo:
        return nnz * (q + ceil_log2(rows) + ceil_log2(cols));
    case StorageFormat::Csr:
        return nnz * (q + ceil_log2(cols)) + (rows + 1) * ceil_log2(nnz + 1);
    case StorageFormat::Csc:
        return nnz * (q + ceil_log2(rows)) + (cols + 1) * ceil_log2(nnz + 1);
    case StorageFormat::StepIndex:
        return nnz * (q + step_bits);
    }
    throw InvalidConfig("unknown storage format");
}

std::uint64_t compressed_payload_bytes(std::uint32_t rows, std::uint32_t cols,
                                       const NmConfig& config, GroupAxis group_axis) {
    config.validate();
    const std::uint64_t reduction = group_axis == GroupAxis::Rows ? rows : cols;
    const std::uint64_t other = group_axis == GroupAxis::Rows ? cols : rows;
    const std::uint64_t groups = ceil_div(reduction, config.m) * other;
    const std::uint64_t mask_bytes = ceil_div(groups * config.m, 8);
    const std::uint64_t value_bytes = ceil_div(groups * config.n * config.q, 8);
    return mask_bytes + value_bytes;
}

void write_nmsp(const CompressedMatrix& compressed, std::ostream& sink) {
    compressed.validate();

    std::vector<std::uint8_t> header;
    header.reserve(kNmspHeaderBytes);
    header.insert(header.end(), {'N', 'M', 'S', 'P'});
    header.push_back(kNmspVersion);
    header.push_back(static_cast<std::uint8_t>(compressed.config.q));
    header.push_back(static_cast<std::uint8_t>(compressed.config.n));
    header.push_back(static_cast<std::uint8_t>(compressed.config.m));
    put_u32le(header, compressed.rows);
    put_u32le(header, compressed.cols);
    header.push_back(static_cast<std::uint8_t>(compressed.group_axis));
    header.insert(header.end(), {0, 0, 0});
    sink.write(reinterpret_cast<const char*>(header.data()),
               static_cast<std::streamsize>(header.size()));

    BitWriter mask_bits;
    for (const GroupMask& mask : compressed.masks) {
        mask_bits.put(mask.bits, compressed.config.m);
    }
    const std::vector<std::uint8_t> mask_section = mask_bits.finish();
    sink.write(reinterpret_cast<const char*>(mask_section.data()),
               static_cast<std::streamsize>(mask_section.size()));

    BitWriter value_bits;
    const std::uint64_t keep = compressed.config.q == 64
                                   ? ~std::uint64_t{0}
                                   : (std::uint64_t{1} << compressed.config.q) - 1;
    for (const std::int32_t v : compressed.values) {
        value_bits.put(static_cast<std::uint64_t>(static_cast<std::int64_t>(v)) & keep,
                       compressed.config.q);
    }
    const std::vector<std::uint8_t> value_section = value_bits.finish();
    sink.write(reinterpret_cast<const char*>(value_section.data()),
               static_cast<std::streamsize>(value_section.size()));
    if (!sink) {
        throw Error("nmsp write failed");
    }
}

CompressedMatrix read_nmsp(std::istream& source) {
    std::uint8_t header[kNmspHeaderBytes];
    source.read(reinterpret_cast<char*>(header), kNmspHeaderBytes);
    if (source.gcount() != static_cast<std::streamsize>(kNmspHeaderBytes)) {
        throw CorruptStream("nmsp header truncated");
    }
    if (std::memcmp(header, "NMSP", 4) != 0) {
        throw BadMagic("not an NMSP stream");
    }
    if (header[4] != kNmspVersion) {
        throw UnsupportedVersion("nmsp version " + std::to_string(header[4]));
    }

    CompressedMatrix out;
    out.config.q = header[5];
    out.config.n = header[6];
    out.config.m = header[7];
    out.rows = get_u32le(header + 8);
    out.cols = get_u32le(header + 12);
    if (header[16] > 1) {
        throw CorruptStream("bad group axis");
    }
    out.group_axis = static_cast<GroupAxis>(header[16]);
    try {
        out.config.validate();
    } catch (const InvalidConfig& e) {
        throw CorruptStream(e.what());
    }

    const std::uint64_t groups =
        static_cast<std::uint64_t>(out.groups_per_line()) * out.other_extent();
    const std::uint64_t mask_bytes = ceil_div(groups * out.config.m, 8);
    const std::uint64_t value_bytes = ceil_div(groups * out.config.n * out.config.q, 8);

    std::vector<std::uint8_t> payload(mask_bytes + value_bytes);
    source.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
    if (source.gcount() != static_cast<std::streamsize>(payload.size())) {
        throw CorruptStream("nmsp payload truncated");
    }

    BitReader mask_reader(payload.data(), mask_bytes);
    out.masks.resize(groups);
    for (std::uint64_t g = 0; g < groups; ++g) {
        out.masks[g].bits = mask_reader.get(out.config.m);
    }

    BitReader value_reader(payload.data() + mask_bytes, value_bytes);
    out.values.resize(groups * out.config.n);
    for (std::uint64_t s = 0; s < out.values.size(); ++s) {
        out.values[s] = sign_extend(value_reader.get(out.config.q), out.config.q);
    }

    out.validate();
    return out;
}

void write_nmsp_file(const CompressedMatrix& compressed, const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    write_nmsp(compressed, file);
}

CompressedMatrix read_nmsp_file(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw Error("cannot open " + path.string());
    }
    return read_nmsp(file);
}

} // namespace sta
