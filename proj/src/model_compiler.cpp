#include "sta/model_compiler.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>

#include <json.hpp>

namespace sta {
namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

// Builds one block's op list. Weight ids are handed out by the caller.
ResBlockIr make_mha(const ModelConfig& cfg, bool cross, bool causal, std::uint32_t& weight_id) {
    ResBlockIr block;
    block.kind = BlockKind::Mha;
    block.cross = cross;
    block.causal = causal;
    const std::uint64_t tokens = static_cast<std::uint64_t>(cfg.seq_len) * cfg.hidden;
    if (cfg.layer_norm) {
        block.ops.push_back(VectorIrOp{VectorKind::LayerNorm, tokens});
    }
    for (int proj = 0; proj < 3; ++proj) { // Q, K, V
        block.ops.push_back(
            LinearProjectionOp{weight_id++, cfg.seq_len, cfg.hidden, cfg.hidden, true});
        block.ops.push_back(VectorIrOp{VectorKind::BiasAdd, tokens});
    }
    block.ops.push_back(
        AttentionMatMulOp{cfg.seq_len, cfg.head_dim(), cfg.seq_len, cfg.heads, causal});
    block.ops.push_back(SoftmaxIrOp{cfg.seq_len, cfg.heads * cfg.seq_len, causal});
    block.ops.push_back(
        AttentionMatMulOp{cfg.seq_len, cfg.seq_len, cfg.head_dim(), cfg.heads, false});
    block.ops.push_back(
        LinearProjectionOp{weight_id++, cfg.seq_len, cfg.hidden, cfg.hidden, true});
    block.ops.push_back(VectorIrOp{VectorKind::BiasAdd, tokens});
    block.ops.push_back(VectorIrOp{VectorKind::ResidualAdd, tokens});
    return block;
}

ResBlockIr make_ffn(const ModelConfig& cfg, std::uint32_t& weight_id) {
    ResBlockIr block;
    block.kind = BlockKind::Ffn;
    const std::uint64_t tokens = static_cast<std::uint64_t>(cfg.seq_len) * cfg.hidden;
    const std::uint64_t inner = static_cast<std::uint64_t>(cfg.seq_len) * cfg.intermediate;
    if (cfg.layer_norm) {
        block.ops.push_back(VectorIrOp{VectorKind::LayerNorm, tokens});
    }
    block.ops.push_back(
        LinearProjectionOp{weight_id++, cfg.seq_len, cfg.hidden, cfg.intermediate, true});
    block.ops.push_back(VectorIrOp{VectorKind::BiasAdd, inner});
    block.ops.push_back(VectorIrOp{VectorKind::Activation, inner});
    block.ops.push_back(
        LinearProjectionOp{weight_id++, cfg.seq_len, cfg.intermediate, cfg.hidden, true});
    block.ops.push_back(VectorIrOp{VectorKind::BiasAdd, tokens});
    block.ops.push_back(VectorIrOp{VectorKind::ResidualAdd, tokens});
    return block;
}

const char* region_name(Region region) {
    switch (region) {
    case Region::Weight: return "weight";
    case Region::Input: return "input";
    case Region::Intermediate: return "intermediate";
    }
    return "?";
}

const char* kind_name(VectorKind kind) {
    switch (kind) {
    case VectorKind::BiasAdd: return "bias_add";
    case VectorKind::ResidualAdd: return "residual_add";
    case VectorKind::Activation: return "activation";
    case VectorKind::LayerNorm: return "layer_norm";
    case VectorKind::Softmax: return "softmax";
    }
    return "?";
}

// Incremental program builder shared by the block lowering paths.
class ProgramBuilder {
public:
    ProgramBuilder(const ModelConfig& model, const NmConfig& nm, bool force_dense)
        : model_(model), nm_(nm), force_dense_(force_dense) {
        out_.model = model;
        out_.nm = nm;
        out_.force_dense = force_dense;
    }

    std::uint32_t add_tensor(Region region, std::uint64_t bytes, std::uint32_t rows,
                             std::uint32_t cols, bool program_input, std::string label) {
        TensorInfo info;
        info.id = static_cast<std::uint32_t>(out_.tensors.size());
        info.region = region;
        info.bytes = bytes;
        info.rows = rows;
        info.cols = cols;
        info.program_input = program_input;
        info.label = std::move(label);
        out_.tensors.push_back(info);
        return info.id;
    }

    std::uint32_t activation_tensor(std::uint32_t rows, std::uint32_t cols, std::string label) {
        return add_tensor(Region::Intermediate, 2ull * rows * cols, rows, cols, false,
                          std::move(label));
    }

    void emit(Instruction instr) {
        out_.instructions.push_back(std::move(instr));
        out_.block_of_instruction.push_back(block_);
    }

    // Weight + bias bytes for one projection under the current mode.
    std::uint64_t projection_bytes(std::uint32_t in_dim, std::uint32_t out_dim) const {
        const std::uint64_t bias = 2ull * out_dim;
        if (force_dense_) {
            return 2ull * in_dim * out_dim + bias;
        }
        return compressed_payload_bytes(in_dim, out_dim, nm_) + kNmspHeaderBytes + bias;
    }

    std::uint32_t linear(const LinearProjectionOp& op, std::uint32_t input_id,
                         const std::string& label) {
        const std::uint64_t bytes = projection_bytes(op.in_dim, op.out_dim);
        const std::uint32_t weight =
            add_tensor(Region::Weight, bytes, op.in_dim, op.out_dim, false, label + ".w");
        emit(LoadInstr{Region::Weight, bytes, weight});
        const std::uint32_t out = activation_tensor(op.j, op.out_dim, label);
        MatMulInstr mm;
        mm.mode = force_dense_ || !op.sparse ? MatMulMode::DenseDense : MatMulMode::SparseDense;
        mm.j = op.j;
        mm.k = op.in_dim;
        mm.l = op.out_dim;
        mm.heads_parallel = 1;
        mm.a_id = input_id;
        mm.b_id = weight;
        mm.out_id = out;
        emit(mm);
        return vector_op(VectorKind::BiasAdd, static_cast<std::uint64_t>(op.j) * op.out_dim,
                         out, weight, label + ".biased");
    }

    std::uint32_t vector_op(VectorKind kind, std::uint64_t length, std::uint32_t a_id,
                            std::uint32_t b_id, const std::string& label) {
        const TensorInfo& src = out_.tensors[a_id];
        const bool is_output = kind == VectorKind::ResidualAdd;
        // ResBlock outputs are written back to the input region through
        // the reshuffle network; other vector results stay on chip.
        const std::uint32_t out =
            is_output ? add_tensor(Region::Input, src.bytes, src.rows, src.cols, false, label)
                      : add_tensor(Region::Intermediate, src.bytes, src.rows, src.cols, false,
                                   label);
        FusedVectorInstr fv;
        fv.kind = kind;
        fv.length = length;
        fv.repeat = 1;
        fv.a_id = a_id;
        fv.b_id = b_id;
        fv.out_id = out;
        emit(fv);
        return out;
    }

    std::uint32_t lower_mha(const ResBlockIr& block, std::uint32_t x_id,
                            std::uint32_t memory_id) {
        const std::uint32_t seq = model_.seq_len;
        const std::uint32_t hid = model_.hidden;
        std::uint32_t residual_src = x_id;
        std::uint32_t cur = x_id;
        if (model_.layer_norm) {
            cur = vector_op(VectorKind::LayerNorm, static_cast<std::uint64_t>(seq) * hid, cur,
                            cur, "mha.ln");
        }
        const std::uint32_t kv_src = block.cross ? memory_id : cur;

        std::vector<const LinearProjectionOp*> projections;
        for (const IrOp& op : block.ops) {
            if (const auto* lp = std::get_if<LinearProjectionOp>(&op)) {
                projections.push_back(lp);
            }
        }

        const std::uint32_t q = linear(*projections[0], cur, "mha.q");
        const std::uint32_t kk = linear(*projections[1], kv_src, "mha.k");
        const std::uint32_t v = linear(*projections[2], kv_src, "mha.v");

        // scores = Q K^T per head
        const std::uint32_t scores =
            add_tensor(Region::Intermediate, 2ull * seq * model_.heads * seq, seq,
                       model_.heads * seq, false, "mha.scores");
        MatMulInstr qk;
        qk.mode = MatMulMode::DenseDense;
        qk.j = seq;
        qk.k = model_.head_dim();
        qk.l = seq;
        qk.heads_parallel = model_.heads;
        qk.a_id = q;
        qk.b_id = kk;
        qk.out_id = scores;
        emit(qk);

        const std::uint32_t probs =
            add_tensor(Region::Intermediate, 2ull * seq * model_.heads * seq, seq,
                       model_.heads * seq, false, "mha.probs");
        FusedVectorInstr sm;
        sm.kind = VectorKind::Softmax;
        sm.length = seq;
        sm.repeat = model_.heads * seq;
        sm.causal = block.causal;
        sm.a_id = scores;
        sm.b_id = scores;
        sm.out_id = probs;
        emit(sm);

        const std::uint32_t ctx = activation_tensor(seq, hid, "mha.ctx");
        MatMulInstr sv;
        sv.mode = MatMulMode::DenseDense;
        sv.j = seq;
        sv.k = seq;
        sv.l = model_.head_dim();
        sv.heads_parallel = model_.heads;
        sv.a_id = probs;
        sv.b_id = v;
        sv.out_id = ctx;
        emit(sv);

        const std::uint32_t projected = linear(*projections[3], ctx, "mha.out");
        const std::uint32_t res =
            vector_op(VectorKind::ResidualAdd, static_cast<std::uint64_t>(seq) * hid, projected,
                      residual_src, "mha.res");
        emit(StoreInstr{Region::Input, out_.tensors[res].bytes, res});
        return res;
    }

    std::uint32_t lower_ffn(const ResBlockIr& block, std::uint32_t x_id) {
        const std::uint32_t seq = model_.seq_len;
        std::uint32_t cur = x_id;
        if (model_.layer_norm) {
            cur = vector_op(VectorKind::LayerNorm,
                            static_cast<std::uint64_t>(seq) * model_.hidden, cur, cur, "ffn.ln");
        }
        std::vector<const LinearProjectionOp*> projections;
        for (const IrOp& op : block.ops) {
            if (const auto* lp = std::get_if<LinearProjectionOp>(&op)) {
                projections.push_back(lp);
            }
        }
        const std::uint32_t up = linear(*projections[0], cur, "ffn.up");
        const std::uint32_t activated =
            vector_op(VectorKind::Activation,
                      static_cast<std::uint64_t>(seq) * model_.intermediate, up, up, "ffn.act");
        const std::uint32_t down = linear(*projections[1], activated, "ffn.down");
        const std::uint32_t res =
            vector_op(VectorKind::ResidualAdd, static_cast<std::uint64_t>(seq) * model_.hidden,
                      down, x_id, "ffn.res");
        emit(StoreInstr{Region::Input, out_.tensors[res].bytes, res});
        return res;
    }

    CompiledModel build(const std::vector<ResBlockIr>& ir) {
        out_.ir = ir;
        const std::uint64_t token_bytes =
            2ull * model_.seq_len * model_.hidden;

        std::uint32_t encoder_x = UINT32_MAX;
        if (model_.num_encoders > 0) {
            encoder_x = add_tensor(Region::Input, token_bytes, model_.seq_len, model_.hidden,
                                   true, "encoder_input");
        }
        std::uint32_t decoder_x = UINT32_MAX;
        std::uint32_t memory = encoder_x;
        if (model_.num_decoders > 0) {
            decoder_x = add_tensor(Region::Input, token_bytes, model_.seq_len, model_.hidden,
                                   true, "decoder_input");
            if (model_.num_encoders == 0) {
                memory = add_tensor(Region::Input, token_bytes, model_.seq_len, model_.hidden,
                                    true, "decoder_memory");
            }
        }

        std::size_t next_block = 0;
        std::uint32_t cur = encoder_x;
        for (std::uint32_t e = 0; e < model_.num_encoders; ++e) {
            block_ = static_cast<std::uint32_t>(next_block);
            cur = lower_mha(ir[next_block++], cur, UINT32_MAX);
            block_ = static_cast<std::uint32_t>(next_block);
            cur = lower_ffn(ir[next_block++], cur);
        }
        if (model_.num_encoders > 0) {
            memory = cur; // cross-attention reads the final encoder output
        }
        cur = decoder_x;
        for (std::uint32_t d = 0; d < model_.num_decoders; ++d) {
            block_ = static_cast<std::uint32_t>(next_block);
            cur = lower_mha(ir[next_block++], cur, UINT32_MAX);
            block_ = static_cast<std::uint32_t>(next_block);
            cur = lower_mha(ir[next_block++], cur, memory);
            block_ = static_cast<std::uint32_t>(next_block);
            cur = lower_ffn(ir[next_block++], cur);
        }
        return std::move(out_);
    }

private:
    ModelConfig model_;
    NmConfig nm_;
    bool force_dense_;
    CompiledModel out_;
    std::uint32_t block_ = 0;
};

} // namespace

void ModelConfig::validate() const {
    if (num_encoders == 0 && num_decoders == 0) {
        throw InvalidConfig("model needs at least one encoder or decoder");
    }
    if (seq_len < 1 || heads < 1 || hidden < 1 || intermediate < 1) {
        throw InvalidConfig("seq_len, heads, hidden, intermediate must be >= 1");
    }
    if (hidden % heads != 0) {
        throw InvalidConfig("hidden must divide evenly across heads");
    }
}

ModelConfig model_preset(const std::string& name) {
    ModelConfig cfg;
    cfg.name = name;
    if (name == "bert-base") {
        cfg.num_encoders = 12;
        cfg.seq_len = 128;
        cfg.heads = 12;
        cfg.hidden = 768;
        cfg.intermediate = 3072;
    } else if (name == "tinybert4") {
        cfg.num_encoders = 4;
        cfg.seq_len = 128;
        cfg.heads = 12;
        cfg.hidden = 312;
        cfg.intermediate = 1200;
    } else if (name == "dino-vits8") {
        cfg.num_encoders = 12;
        cfg.seq_len = 64;
        cfg.heads = 6;
        cfg.hidden = 384;
        cfg.intermediate = 1536;
    } else if (name == "transformer-base-encoders") {
        cfg.num_encoders = 6;
        cfg.seq_len = 64;
        cfg.heads = 8;
        cfg.hidden = 512;
        cfg.intermediate = 2048;
        cfg.activation = Activation::Relu;
    } else if (name == "transformer-base-decoders") {
        cfg.num_decoders = 6;
        cfg.seq_len = 64;
        cfg.heads = 8;
        cfg.hidden = 512;
        cfg.intermediate = 2048;
        cfg.activation = Activation::Relu;
    } else if (name == "shallow-transformer") {
        cfg.num_encoders = 2;
        cfg.num_decoders = 1;
        cfg.seq_len = 64;
        cfg.heads = 4;
        cfg.hidden = 200;
        cfg.intermediate = 800;
        cfg.activation = Activation::Relu;
    } else {
        throw InvalidConfig("unknown model preset: " + name);
    }
    return cfg;
}

ModelConfig load_model_config(const std::filesystem::path& json_path) {
    std::ifstream file(json_path);
    if (!file) {
        throw Error("cannot open " + json_path.string());
    }
    nlohmann::json doc;
    try {
        file >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig("bad model config json: " + std::string(e.what()));
    }

    ModelConfig cfg;
    for (const char* key :
         {"num_encoders", "num_decoders", "seq_len", "heads", "hidden", "intermediate"}) {
        if (!doc.contains(key)) {
            throw InvalidConfig(std::string("model config missing key: ") + key);
        }
    }
    cfg.num_encoders = doc["num_encoders"].get<std::uint32_t>();
    cfg.num_decoders = doc["num_decoders"].get<std::uint32_t>();
    cfg.seq_len = doc["seq_len"].get<std::uint32_t>();
    cfg.heads = doc["heads"].get<std::uint32_t>();
    cfg.hidden = doc["hidden"].get<std::uint32_t>();
    cfg.intermediate = doc["intermediate"].get<std::uint32_t>();
    if (doc.contains("name")) {
        cfg.name = doc["name"].get<std::string>();
    }
    if (doc.contains("activation")) {
        const std::string act = doc["activation"].get<std::string>();
        if (act == "gelu") {
            cfg.activation = Activation::Gelu;
        } else if (act == "relu") {
            cfg.activation = Activation::Relu;
        } else {
            throw InvalidConfig("unknown activation: " + act);
        }
    }
    if (doc.contains("layer_norm")) {
        cfg.layer_norm = doc["layer_norm"].get<bool>();
    }
    cfg.validate();
    return cfg;
}

std::vector<ResBlockIr> build_ir(const ModelConfig& config) {
    config.validate();
    std::vector<ResBlockIr> ir;
    std::uint32_t weight_id = 0;
    for (std::uint32_t e = 0; e < config.num_encoders; ++e) {
        ir.push_back(make_mha(config, false, false, weight_id));
        ir.push_back(make_ffn(config, weight_id));
    }
    for (std::uint32_t d = 0; d < config.num_decoders; ++d) {
        ir.push_back(make_mha(config, false, true, weight_id)); // masked self-attention
        ir.push_back(make_mha(config, true, false, weight_id)); // cross-attention
        ir.push_back(make_ffn(config, weight_id));
    }
    return ir;
}

CompiledModel lower(const ModelConfig& config, const NmConfig& nm, bool force_dense) {
    config.validate();
    nm.validate();
    ProgramBuilder builder(config, nm, force_dense);
    return builder.build(build_ir(config));
}

MacCounts mac_count(const std::vector<ResBlockIr>& ir, const NmConfig& nm) {
    nm.validate();
    MacCounts counts;
    for (const ResBlockIr& block : ir) {
        for (const IrOp& op : block.ops) {
            if (const auto* attn = std::get_if<AttentionMatMulOp>(&op)) {
                counts.dense_macs += static_cast<std::uint64_t>(attn->heads) * attn->j *
                                     attn->k * attn->l;
            } else if (const auto* lp = std::get_if<LinearProjectionOp>(&op)) {
                // one group of n slots per ceil(k/m) chunk of the reduction
                counts.sparse_macs += static_cast<std::uint64_t>(lp->j) *
                                      ceil_div(lp->in_dim, nm.m) * nm.n * lp->out_dim;
            }
        }
    }
    return counts;
}

std::vector<Diagnostic> validate_program(const CompiledModel& program,
                                         const MemoryConfig& memory) {
    std::vector<Diagnostic> diagnostics;
    const auto report = [&](std::size_t index, std::string message) {
        diagnostics.push_back({index, std::move(message)});
    };

    const auto tensor_ok = [&](std::uint32_t id) { return id < program.tensors.size(); };

    // definition points: program inputs are resident before the stream
    std::vector<bool> defined(program.tensors.size(), false);
    for (const TensorInfo& t : program.tensors) {
        if (t.program_input) {
            defined[t.id] = true;
        }
    }

    std::map<std::uint32_t, std::size_t> last_use;
    for (std::size_t i = 0; i < program.instructions.size(); ++i) {
        std::visit(
            [&](const auto& instr) {
                using T = std::decay_t<decltype(instr)>;
                if constexpr (std::is_same_v<T, MatMulInstr>) {
                    last_use[instr.a_id] = i;
                    last_use[instr.b_id] = i;
                } else if constexpr (std::is_same_v<T, FusedVectorInstr>) {
                    last_use[instr.a_id] = i;
                    last_use[instr.b_id] = i;
                } else if constexpr (std::is_same_v<T, StoreInstr>) {
                    last_use[instr.id] = i;
                }
            },
            program.instructions[i]);
    }

    struct LiveSpan {
        std::size_t begin;
        std::size_t end;
        std::uint64_t bytes;
        Region region;
    };
    std::vector<LiveSpan> spans;
    for (const TensorInfo& t : program.tensors) {
        if (t.program_input) {
            spans.push_back({0, program.instructions.size(), t.bytes, t.region});
        }
    }

    for (std::size_t i = 0; i < program.instructions.size(); ++i) {
        const auto use = [&](std::uint32_t id) {
            if (!tensor_ok(id)) {
                report(i, "reference to unknown tensor id " + std::to_string(id));
                return;
            }
            if (!defined[id]) {
                report(i, "use before definition of tensor " + std::to_string(id) + " (" +
                              program.tensors[id].label + ")");
            }
        };
        const auto define = [&](std::uint32_t id) {
            if (!tensor_ok(id)) {
                report(i, "definition of unknown tensor id " + std::to_string(id));
                return;
            }
            defined[id] = true;
            const auto it = last_use.find(id);
            const std::size_t end = it == last_use.end() ? program.instructions.size() : it->second;
            spans.push_back({i, std::max(end, i), program.tensors[id].bytes,
                             program.tensors[id].region});
        };

        std::visit(
            [&](const auto& instr) {
                using T = std::decay_t<decltype(instr)>;
                if constexpr (std::is_same_v<T, LoadInstr>) {
                    if (!tensor_ok(instr.id)) {
                        report(i, "load of unknown tensor id");
                        return;
                    }
                    if (program.tensors[instr.id].region != instr.region) {
                        report(i, "load region disagrees with tensor home");
                    }
                    define(instr.id);
                } else if constexpr (std::is_same_v<T, StoreInstr>) {
                    use(instr.id);
                } else if constexpr (std::is_same_v<T, MatMulInstr>) {
                    use(instr.a_id);
                    use(instr.b_id);
                    if (tensor_ok(instr.a_id) && tensor_ok(instr.b_id)) {
                        const TensorInfo& a = program.tensors[instr.a_id];
                        const TensorInfo& b = program.tensors[instr.b_id];
                        if (instr.heads_parallel <= 1) {
                            if (a.cols != instr.k || b.rows != instr.k || b.cols != instr.l ||
                                a.rows != instr.j) {
                                report(i, "matmul dims disagree with operand tensors");
                            }
                        } else {
                            // per-head slices of stacked activations
                            const std::uint64_t b_elems =
                                static_cast<std::uint64_t>(b.rows) * b.cols;
                            if (a.rows != instr.j ||
                                a.cols != instr.heads_parallel * instr.k ||
                                b_elems != static_cast<std::uint64_t>(instr.heads_parallel) *
                                               instr.k * instr.l) {
                                report(i, "attention operand dims disagree");
                            }
                        }
                    }
                    define(instr.out_id);
                } else if constexpr (std::is_same_v<T, FusedVectorInstr>) {
                    use(instr.a_id);
                    use(instr.b_id);
                    if (tensor_ok(instr.a_id)) {
                        const TensorInfo& a = program.tensors[instr.a_id];
                        const std::uint64_t elems =
                            static_cast<std::uint64_t>(a.rows) * a.cols;
                        if (instr.length * instr.repeat != elems) {
                            report(i, "vector op length disagrees with operand");
                        }
                    }
                    define(instr.out_id);
                }
            },
            program.instructions[i]);
    }

    // Region capacity: peak of concurrently live bytes per region.
    const auto budget = [&](Region region) {
        switch (region) {
        case Region::Weight: return memory.weight_bytes;
        case Region::Input: return memory.input_bytes;
        case Region::Intermediate: return memory.intermediate_bytes;
        }
        return std::uint64_t{0};
    };
    for (const Region region : {Region::Weight, Region::Input, Region::Intermediate}) {
        for (std::size_t i = 0; i < program.instructions.size(); ++i) {
            std::uint64_t live = 0;
            for (const LiveSpan& span : spans) {
                if (span.region == region && span.begin <= i && i <= span.end) {
                    live += span.bytes;
                }
            }
            if (live > budget(region)) {
                report(i, std::string(region_name(region)) + " region over budget: " +
                              std::to_string(live) + " > " + std::to_string(budget(region)));
                break;
            }
        }
    }

    std::sort(diagnostics.begin(), diagnostics.end(),
              [](const Diagnostic& a, const Diagnostic& b) {
                  return a.instruction_index < b.instruction_index;
              });
    return diagnostics;
}

void write_jsonl(const CompiledModel& program, std::ostream& out) {
    for (std::size_t i = 0; i < program.instructions.size(); ++i) {
        nlohmann::json line;
        std::visit(
            [&](const auto& instr) {
                using T = std::decay_t<decltype(instr)>;
                if constexpr (std::is_same_v<T, LoadInstr>) {
                    line = {{"op", "load"},
                            {"region", region_name(instr.region)},
                            {"bytes", instr.bytes},
                            {"id", instr.id}};
                } else if constexpr (std::is_same_v<T, StoreInstr>) {
                    line = {{"op", "store"},
                            {"region", region_name(instr.region)},
                            {"bytes", instr.bytes},
                            {"id", instr.id}};
                } else if constexpr (std::is_same_v<T, MatMulInstr>) {
                    line = {{"op", "matmul"},
                            {"mode", instr.mode == MatMulMode::SparseDense ? "sparse_dense"
                                                                           : "dense_dense"},
                            {"j", instr.j},
                            {"k", instr.k},
                            {"l", instr.l},
                            {"heads", instr.heads_parallel},
                            {"a", instr.a_id},
                            {"b", instr.b_id},
                            {"out", instr.out_id}};
                } else if constexpr (std::is_same_v<T, FusedVectorInstr>) {
                    line = {{"op", "fused_vector"}, {"kind", kind_name(instr.kind)},
                            {"length", instr.length}, {"repeat", instr.repeat},
                            {"causal", instr.causal}, {"a", instr.a_id},
                            {"b", instr.b_id},        {"out", instr.out_id}};
                }
            },
            program.instructions[i]);
        line["block"] = program.block_of_instruction[i];
        out << line.dump() << '\n';
    }
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (in.gcount() != 4) {
        throw CorruptStream("program binary truncated");
    }
    return static_cast<std::uint32_t>(bytes[0]) | static_cast<std::uint32_t>(bytes[1]) << 8 |
           static_cast<std::uint32_t>(bytes[2]) << 16 |
           static_cast<std::uint32_t>(bytes[3]) << 24;
}

std::uint32_t narrow_u32(std::uint64_t v) {
    if (v > UINT32_MAX) {
        throw InvalidConfig("field exceeds u32 in the binary program format");
    }
    return static_cast<std::uint32_t>(v);
}

} // namespace

void write_program_binary(const CompiledModel& program, std::ostream& out) {
    put_u32(out, narrow_u32(program.instructions.size()));
    for (const Instruction& instruction : program.instructions) {
        std::visit(
            [&](const auto& instr) {
                using T = std::decay_t<decltype(instr)>;
                if constexpr (std::is_same_v<T, LoadInstr>) {
                    out.put(0);
                    put_u32(out, static_cast<std::uint32_t>(instr.region));
                    put_u32(out, narrow_u32(instr.bytes));
                    put_u32(out, instr.id);
                } else if constexpr (std::is_same_v<T, StoreInstr>) {
                    out.put(1);
                    put_u32(out, static_cast<std::uint32_t>(instr.region));
                    put_u32(out, narrow_u32(instr.bytes));
                    put_u32(out, instr.id);
                } else if constexpr (std::is_same_v<T, MatMulInstr>) {
                    out.put(2);
                    put_u32(out, static_cast<std::uint32_t>(instr.mode));
                    put_u32(out, instr.j);
                    put_u32(out, instr.k);
                    put_u32(out, instr.l);
                    put_u32(out, instr.heads_parallel);
                    put_u32(out, instr.a_id);
                    put_u32(out, instr.b_id);
                    put_u32(out, instr.out_id);
                } else if constexpr (std::is_same_v<T, FusedVectorInstr>) {
                    out.put(3);
                    put_u32(out, static_cast<std::uint32_t>(instr.kind));
                    put_u32(out, narrow_u32(instr.length));
                    put_u32(out, instr.repeat);
                    put_u32(out, instr.causal ? 1 : 0);
                    put_u32(out, instr.a_id);
                    put_u32(out, instr.b_id);
                    put_u32(out, instr.out_id);
                }
            },
            instruction);
    }
}

std::vector<Instruction> read_program_binary(std::istream& in) {
    const std::uint32_t count = get_u32(in);
    std::vector<Instruction> instructions;
    instructions.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const int tag = in.get();
        if (tag < 0) {
            throw CorruptStream("program binary truncated");
        }
        switch (tag) {
        case 0:
        case 1: {
            const Region region = static_cast<Region>(get_u32(in));
            const std::uint64_t bytes = get_u32(in);
            const std::uint32_t id = get_u32(in);
            if (tag == 0) {
                instructions.push_back(LoadInstr{region, bytes, id});
            } else {
                instructions.push_back(StoreInstr{region, bytes, id});
            }
            break;
        }
        case 2: {
            MatMulInstr mm;
            mm.mode = static_cast<MatMulMode>(get_u32(in));
            mm.j = get_u32(in);
            mm.k = get_u32(in);
            mm.l = get_u32(in);
            mm.heads_parallel = get_u32(in);
            mm.a_id = get_u32(in);
            mm.b_id = get_u32(in);
            mm.out_id = get_u32(in);
            instructions.push_back(mm);
            break;
        }
        case 3: {
            FusedVectorInstr fv;
            fv.kind = static_cast<VectorKind>(get_u32(in));
            fv.length = get_u32(in);
            fv.repeat = get_u32(in);
            fv.causal = get_u32(in) != 0;
            fv.a_id = get_u32(in);
            fv.b_id = get_u32(in);
            fv.out_id = get_u32(in);
            instructions.push_back(fv);
            break;
        }
        default:
            throw CorruptStream("unknown instruction tag " + std::to_string(tag));
        }
    }
    return instructions;
}

} // namespace sta
