#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "sta/model_compiler.hpp"

using namespace sta;

namespace {

const NmConfig kNm28{2, 8, 16};

std::vector<const Instruction*> block_stream(const CompiledModel& program,
                                             std::uint32_t block) {
    std::vector<const Instruction*> out;
    for (std::size_t i = 0; i < program.instructions.size(); ++i) {
        if (program.block_of_instruction[i] == block) {
            out.push_back(&program.instructions[i]);
        }
    }
    return out;
}

struct BlockShape {
    int linear = 0;
    int attention = 0;
    int softmax = 0;
    int activation = 0;
    bool ends_with_residual = false;
};

BlockShape shape_of(const ResBlockIr& block) {
    BlockShape shape;
    for (const IrOp& op : block.ops) {
        if (std::holds_alternative<LinearProjectionOp>(op)) {
            ++shape.linear;
        } else if (std::holds_alternative<AttentionMatMulOp>(op)) {
            ++shape.attention;
        } else if (std::holds_alternative<SoftmaxIrOp>(op)) {
            ++shape.softmax;
        } else if (const auto* v = std::get_if<VectorIrOp>(&op)) {
            if (v->kind == VectorKind::Activation) ++shape.activation;
        }
    }
    if (!block.ops.empty()) {
        const auto* v = std::get_if<VectorIrOp>(&block.ops.back());
        shape.ends_with_residual = v != nullptr && v->kind == VectorKind::ResidualAdd;
    }
    return shape;
}

} // namespace

TEST_CASE("shallow transformer builds 2 encoder pairs plus a decoder triple") {
    const std::vector<ResBlockIr> ir = build_ir(model_preset("shallow-transformer"));
    REQUIRE(ir.size() == 7);
    CHECK(ir[0].kind == BlockKind::Mha);
    CHECK(ir[1].kind == BlockKind::Ffn);
    CHECK(ir[2].kind == BlockKind::Mha);
    CHECK(ir[3].kind == BlockKind::Ffn);
    // decoder: masked self-attention, cross-attention, feed-forward
    CHECK(ir[4].kind == BlockKind::Mha);
    CHECK(ir[4].causal);
    CHECK_FALSE(ir[4].cross);
    CHECK(ir[5].kind == BlockKind::Mha);
    CHECK(ir[5].cross);
    CHECK(ir[6].kind == BlockKind::Ffn);
}

TEST_CASE("one encoder yields exactly one MHA and one FFN") {
    ModelConfig cfg = model_preset("shallow-transformer");
    cfg.num_encoders = 1;
    cfg.num_decoders = 0;
    const std::vector<ResBlockIr> ir = build_ir(cfg);
    REQUIRE(ir.size() == 2);
    CHECK(ir[0].kind == BlockKind::Mha);
    CHECK(ir[1].kind == BlockKind::Ffn);
}

TEST_CASE("tinybert4 builds eight res-blocks") {
    CHECK(build_ir(model_preset("tinybert4")).size() == 8);
}

TEST_CASE("block structure invariants hold for every preset") {
    for (const char* preset :
         {"bert-base", "tinybert4", "dino-vits8", "transformer-base-encoders",
          "transformer-base-decoders", "shallow-transformer"}) {
        for (const ResBlockIr& block : build_ir(model_preset(preset))) {
            const BlockShape shape = shape_of(block);
            if (block.kind == BlockKind::Mha) {
                CHECK(shape.linear == 4);
                CHECK(shape.attention == 2);
                CHECK(shape.softmax == 1);
            } else {
                CHECK(shape.linear == 2);
                CHECK(shape.activation == 1);
            }
            CHECK(shape.ends_with_residual);
        }
    }
}

TEST_CASE("attention dims reconstruct hidden = heads x head_dim") {
    for (const char* preset : {"bert-base", "shallow-transformer", "dino-vits8"}) {
        const ModelConfig cfg = model_preset(preset);
        for (const ResBlockIr& block : build_ir(cfg)) {
            for (const IrOp& op : block.ops) {
                if (const auto* attn = std::get_if<AttentionMatMulOp>(&op)) {
                    // one of the two contracted dims is the head slice
                    const bool qk = attn->heads * attn->k == cfg.hidden;
                    const bool sv = attn->heads * attn->l == cfg.hidden;
                    CHECK((qk || sv));
                }
            }
        }
    }
}

TEST_CASE("an FFN block lowers to the canonical nine-instruction stream") {
    ModelConfig cfg = model_preset("shallow-transformer");
    cfg.num_encoders = 1;
    cfg.num_decoders = 0;
    const CompiledModel program = lower(cfg, kNm28);
    const auto ffn = block_stream(program, 1);
    REQUIRE(ffn.size() == 9);

    const auto* load1 = std::get_if<LoadInstr>(ffn[0]);
    REQUIRE(load1 != nullptr);
    CHECK(load1->region == Region::Weight);

    const auto* mm1 = std::get_if<MatMulInstr>(ffn[1]);
    REQUIRE(mm1 != nullptr);
    CHECK(mm1->mode == MatMulMode::SparseDense);
    CHECK(mm1->k == cfg.hidden);
    CHECK(mm1->l == cfg.intermediate);

    const auto* bias1 = std::get_if<FusedVectorInstr>(ffn[2]);
    REQUIRE(bias1 != nullptr);
    CHECK(bias1->kind == VectorKind::BiasAdd);

    const auto* act = std::get_if<FusedVectorInstr>(ffn[3]);
    REQUIRE(act != nullptr);
    CHECK(act->kind == VectorKind::Activation);

    const auto* load2 = std::get_if<LoadInstr>(ffn[4]);
    REQUIRE(load2 != nullptr);

    const auto* mm2 = std::get_if<MatMulInstr>(ffn[5]);
    REQUIRE(mm2 != nullptr);
    CHECK(mm2->mode == MatMulMode::SparseDense);
    CHECK(mm2->k == cfg.intermediate);
    CHECK(mm2->l == cfg.hidden);

    const auto* bias2 = std::get_if<FusedVectorInstr>(ffn[6]);
    REQUIRE(bias2 != nullptr);
    CHECK(bias2->kind == VectorKind::BiasAdd);

    const auto* residual = std::get_if<FusedVectorInstr>(ffn[7]);
    REQUIRE(residual != nullptr);
    CHECK(residual->kind == VectorKind::ResidualAdd);

    const auto* store = std::get_if<StoreInstr>(ffn[8]);
    REQUIRE(store != nullptr);
    CHECK(store->region == Region::Input);
}

TEST_CASE("no store targets the intermediate region; block outputs live in input memory") {
    const CompiledModel program = lower(model_preset("shallow-transformer"), kNm28);
    for (const Instruction& instruction : program.instructions) {
        if (const auto* store = std::get_if<StoreInstr>(&instruction)) {
            CHECK(store->region == Region::Input);
            CHECK(program.tensors[store->id].region == Region::Input);
        }
    }
}

TEST_CASE("every matmul's operands are loaded or produced beforehand") {
    for (const bool force_dense : {false, true}) {
        const CompiledModel program = lower(model_preset("shallow-transformer"), kNm28,
                                            force_dense);
        CHECK(validate_program(program).empty());
    }
    CHECK(validate_program(lower(model_preset("tinybert4"), kNm28)).empty());
    CHECK(validate_program(lower(model_preset("transformer-base-decoders"), kNm28)).empty());
}

TEST_CASE("dropping a weight load surfaces a use-before-definition diagnostic") {
    CompiledModel program = lower(model_preset("shallow-transformer"), kNm28);
    std::size_t load_index = SIZE_MAX;
    for (std::size_t i = 0; i < program.instructions.size(); ++i) {
        if (std::holds_alternative<LoadInstr>(program.instructions[i])) {
            load_index = i;
            break;
        }
    }
    REQUIRE(load_index != SIZE_MAX);
    program.instructions.erase(program.instructions.begin() +
                               static_cast<std::ptrdiff_t>(load_index));
    program.block_of_instruction.erase(program.block_of_instruction.begin() +
                                       static_cast<std::ptrdiff_t>(load_index));
    const std::vector<Diagnostic> diagnostics = validate_program(program);
    REQUIRE(!diagnostics.empty());
    CHECK(diagnostics[0].instruction_index == load_index); // first use site
    CHECK(diagnostics[0].message.find("use before definition") != std::string::npos);
}

TEST_CASE("intermediate footprint of the shallow model fits the default memory") {
    const CompiledModel program = lower(model_preset("shallow-transformer"), kNm28);
    CHECK(validate_program(program, MemoryConfig{}).empty());
    // a tiny budget must trip the capacity check
    MemoryConfig tiny;
    tiny.intermediate_bytes = 1024;
    bool saw_capacity = false;
    for (const Diagnostic& d : validate_program(program, tiny)) {
        if (d.message.find("over budget") != std::string::npos) {
            saw_capacity = true;
        }
    }
    CHECK(saw_capacity);
}

TEST_CASE("single linear layer MAC arithmetic") {
    ResBlockIr block;
    block.kind = BlockKind::Ffn;
    block.ops.push_back(LinearProjectionOp{0, 8, 8, 8, true});
    const MacCounts counts = mac_count({block}, kNm28);
    CHECK(counts.sparse_macs == 128); // 8*8*8 * 2/8
    CHECK(counts.dense_macs == 0);
}

TEST_CASE("degenerate n = m sparsity counts the full dense MACs") {
    const std::vector<ResBlockIr> ir = build_ir(model_preset("shallow-transformer"));
    const MacCounts sparse = mac_count(ir, kNm28);
    const MacCounts dense = mac_count(ir, {8, 8, 16});
    CHECK(dense.sparse_macs == 4 * sparse.sparse_macs); // exact m/n
    CHECK(dense.dense_macs == sparse.dense_macs);       // attention unaffected
}

TEST_CASE("weight MAC ratio is m/n for every preset and pattern") {
    for (const char* preset : {"tinybert4", "shallow-transformer", "dino-vits8"}) {
        const std::vector<ResBlockIr> ir = build_ir(model_preset(preset));
        for (const NmConfig nm : {NmConfig{1, 8, 16}, NmConfig{2, 8, 16}, NmConfig{2, 4, 16}}) {
            const MacCounts at_nm = mac_count(ir, nm);
            const MacCounts at_dense = mac_count(ir, {nm.m, nm.m, 16});
            CHECK(at_dense.sparse_macs * nm.n == at_nm.sparse_macs * nm.m);
        }
    }
}

TEST_CASE("total MAC reduction stays below m/n because attention is dense") {
    const std::vector<ResBlockIr> ir = build_ir(model_preset("shallow-transformer"));
    const MacCounts sparse = mac_count(ir, kNm28);
    const MacCounts dense = mac_count(ir, {8, 8, 16});
    const double total_ratio =
        static_cast<double>(dense.dense_macs + dense.sparse_macs) /
        static_cast<double>(sparse.dense_macs + sparse.sparse_macs);
    CHECK(total_ratio < 4.0);
    CHECK(total_ratio > 1.0);
}

TEST_CASE("lowering is deterministic") {
    std::ostringstream a, b;
    write_jsonl(lower(model_preset("tinybert4"), kNm28), a);
    write_jsonl(lower(model_preset("tinybert4"), kNm28), b);
    CHECK(a.str() == b.str());
    CHECK(!a.str().empty());
}

TEST_CASE("binary program round trip") {
    const CompiledModel program = lower(model_preset("shallow-transformer"), kNm28);
    std::stringstream buffer(std::ios::in | std::ios::out | std::ios::binary);
    write_program_binary(program, buffer);
    const std::vector<Instruction> back = read_program_binary(buffer);
    REQUIRE(back.size() == program.instructions.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i] == program.instructions[i]);
    }
}

TEST_CASE("model config json honors the benchmark field names") {
    const auto path = std::filesystem::temp_directory_path() / "sta_model_cfg.json";
    {
        std::ofstream file(path);
        file << R"({"num_encoders": 2, "num_decoders": 1, "seq_len": 64,
                    "heads": 4, "hidden": 200, "intermediate": 800,
                    "name": "shallow", "activation": "relu"})";
    }
    const ModelConfig cfg = load_model_config(path);
    CHECK(cfg.num_encoders == 2);
    CHECK(cfg.num_decoders == 1);
    CHECK(cfg.seq_len == 64);
    CHECK(cfg.heads == 4);
    CHECK(cfg.hidden == 200);
    CHECK(cfg.intermediate == 800);
    CHECK(cfg.activation == Activation::Relu);
    {
        std::ofstream file(path);
        file << R"({"num_encoders": 2})";
    }
    CHECK_THROWS_AS(load_model_config(path), InvalidConfig);
    std::filesystem::remove(path);
}

TEST_CASE("config invariants") {
    ModelConfig cfg = model_preset("bert-base");
    cfg.hidden = 100; // not divisible by 12 heads
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = model_preset("bert-base");
    cfg.num_encoders = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    CHECK_THROWS_AS(model_preset("unknown"), InvalidConfig);
}
