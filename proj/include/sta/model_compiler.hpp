#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sta/nm_format.hpp"
#include "sta/types.hpp"

namespace sta {

enum class Activation : std::uint8_t {
    Gelu,
    Relu,
};

struct ModelConfig {
    std::string name = "model";
    std::uint32_t num_encoders = 0;
    std::uint32_t num_decoders = 0;
    std::uint32_t seq_len = 0;
    std::uint32_t heads = 0;
    std::uint32_t hidden = 0;
    std::uint32_t intermediate = 0;
    Activation activation = Activation::Gelu;
    // LayerNorm is not one of the engine's fused vector kinds; it can be
    // emitted as a functional-only vector op when enabled.
    bool layer_norm = false;

    std::uint32_t head_dim() const { return hidden / heads; }
    void validate() const;
};

// Benchmark-table presets: bert-base, tinybert4, dino-vits8,
// transformer-base-encoders, transformer-base-decoders,
// shallow-transformer.
ModelConfig model_preset(const std::string& name);
ModelConfig load_model_config(const std::filesystem::path& json_path);

enum class BlockKind : std::uint8_t {
    Mha,
    Ffn,
};

enum class VectorKind : std::uint8_t {
    BiasAdd,
    ResidualAdd,
    Activation,
    LayerNorm,
    Softmax,
};

struct LinearProjectionOp {
    std::uint32_t weight_id = 0;
    std::uint32_t j = 0; // activation rows fed through the projection
    std::uint32_t in_dim = 0;
    std::uint32_t out_dim = 0;
    bool sparse = true;
};

struct AttentionMatMulOp {
    std::uint32_t j = 0, k = 0, l = 0;
    std::uint32_t heads = 1;
    bool causal = false;
};

struct SoftmaxIrOp {
    std::uint32_t vector_len = 0;
    std::uint32_t repeat_count = 0;
    bool causal = false;
};

struct VectorIrOp {
    VectorKind kind = VectorKind::BiasAdd;
    std::uint64_t len = 0;
};

using IrOp = std::variant<LinearProjectionOp, AttentionMatMulOp, SoftmaxIrOp, VectorIrOp>;

struct ResBlockIr {
    BlockKind kind = BlockKind::Mha;
    bool cross = false;  // cross-attention MHA of a decoder
    bool causal = false; // masked self-attention of a decoder
    std::vector<IrOp> ops;
};

// MHA/FFN ResBlock sequence: encoders first, then per decoder a masked
// self-attention MHA, a cross-attention MHA, and an FFN.
std::vector<ResBlockIr> build_ir(const ModelConfig& config);

enum class Region : std::uint8_t {
    Weight,
    Input,
    Intermediate,
};

struct LoadInstr {
    Region region = Region::Weight;
    std::uint64_t bytes = 0;
    std::uint32_t id = 0;

    friend bool operator==(const LoadInstr&, const LoadInstr&) = default;
};

struct StoreInstr {
    Region region = Region::Input;
    std::uint64_t bytes = 0;
    std::uint32_t id = 0;

    friend bool operator==(const StoreInstr&, const StoreInstr&) = default;
};

struct MatMulInstr {
    MatMulMode mode = MatMulMode::SparseDense;
    std::uint32_t j = 0, k = 0, l = 0;
    std::uint32_t heads_parallel = 1;
    std::uint32_t a_id = 0;   // dense activations
    std::uint32_t b_id = 0;   // weights (compressed) or second activations
    std::uint32_t out_id = 0;

    friend bool operator==(const MatMulInstr&, const MatMulInstr&) = default;
};

struct FusedVectorInstr {
    VectorKind kind = VectorKind::BiasAdd;
    std::uint64_t length = 0;   // vector length per application
    std::uint32_t repeat = 1;   // softmax rows; 1 otherwise
    bool causal = false;
    std::uint32_t a_id = 0;
    std::uint32_t b_id = 0;     // bias / residual operand; unused otherwise
    std::uint32_t out_id = 0;

    friend bool operator==(const FusedVectorInstr&, const FusedVectorInstr&) = default;
};

using Instruction = std::variant<LoadInstr, StoreInstr, MatMulInstr, FusedVectorInstr>;

struct TensorInfo {
    std::uint32_t id = 0;
    Region region = Region::Intermediate;
    std::uint64_t bytes = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    bool program_input = false; // resident before the stream runs
    std::string label;
};

struct CompiledModel {
    ModelConfig model;
    NmConfig nm;
    bool force_dense = false;
    std::vector<ResBlockIr> ir;
    std::vector<Instruction> instructions;
    std::vector<TensorInfo> tensors;
    // instruction index -> ResBlock index, for per-block accounting
    std::vector<std::uint32_t> block_of_instruction;
};

// Lowers the IR to the three instruction categories. Weights load before
// their MatMul, temporaries stay in the intermediate region, and every
// block's output is stored back to the input region. force_dense emits
// the baseline stream: dense weight loads and DenseDense MatMuls.
CompiledModel lower(const ModelConfig& config, const NmConfig& nm, bool force_dense = false);

struct MacCounts {
    std::uint64_t dense_macs = 0;  // parameter-free attention products
    std::uint64_t sparse_macs = 0; // weight MatMuls at n/m occupancy
};

// Attention MACs at full J*K*L, weight MACs with the reduction padded to
// whole groups so dense/sparse is exactly m/n.
MacCounts mac_count(const std::vector<ResBlockIr>& ir, const NmConfig& nm);

struct MemoryConfig {
    std::uint64_t weight_bytes = 8ull << 20;
    std::uint64_t input_bytes = 4ull << 20;
    std::uint64_t intermediate_bytes = 8ull << 20;
};

struct Diagnostic {
    std::size_t instruction_index = 0;
    std::string message;
};

// Structural checks: def-before-use of ids, dims consistency along the
// stream, and peak live bytes per region against the configured sizes.
// Returns diagnostics instead of throwing.
std::vector<Diagnostic> validate_program(const CompiledModel& program,
                                         const MemoryConfig& memory = {});

// One JSON object per instruction, for inspection.
void write_jsonl(const CompiledModel& program, std::ostream& out);

// Compact binary form: u8 tag then little-endian u32 fields.
void write_program_binary(const CompiledModel& program, std::ostream& out);
std::vector<Instruction> read_program_binary(std::istream& in);

} // namespace sta
