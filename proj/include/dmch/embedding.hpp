#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dmch/binio.hpp"
#include "dmch/checkpoint.hpp"
#include "dmch/encoder.hpp"
#include "dmch/errors.hpp"
#include "dmch/tensor.hpp"

// Binary embedding head: fuse the pooled global feature with the mean
// attended context, relax the sign function with tanh(φz), and binarize at
// inference. φ grows by a fixed factor each time training plateaus so the
// relaxation approaches sgn.

namespace dmch {

/// C bits packed little-endian, 8 per byte, zero-padded tail.
/// Bit 1 ↔ +1, bit 0 ↔ −1.
struct BinaryCode {
    int length = 0; // C
    std::vector<std::uint8_t> bytes;

    static BinaryCode zeros(int length) {
        BinaryCode c;
        c.length = length;
        c.bytes.assign(static_cast<std::size_t>((length + 7) / 8), 0);
        return c;
    }

    bool bit(int i) const {
        return (bytes[static_cast<std::size_t>(i / 8)] >> (i % 8)) & 1u;
    }

    void set_bit(int i, bool v) {
        if (v)
            bytes[static_cast<std::size_t>(i / 8)] |= static_cast<std::uint8_t>(1u << (i % 8));
        else
            bytes[static_cast<std::size_t>(i / 8)] &= static_cast<std::uint8_t>(~(1u << (i % 8)));
    }

    bool operator==(const BinaryCode& other) const {
        return length == other.length && bytes == other.bytes;
    }
};

/// tanh scaling schedule. phi starts at 1 and is multiplied by `growth`
/// each time the trainer declares a stage converged.
struct ContinuationSchedule {
    double phi = 1.0;
    int stage = 0;
    double growth = 10.0;
};

inline ContinuationSchedule advance_schedule(ContinuationSchedule s) {
    s.phi *= s.growth;
    s.stage += 1;
    return s;
}

/// γ = C/16 (e.g. 2 for 32-bit codes).
inline double margin_for(int code_length) {
    if (code_length < 16)
        throw config_error("margin_for: code length " + std::to_string(code_length) + " is below 16");
    return static_cast<double>(code_length) / 16.0;
}

/// Relaxed code e = tanh(φ·W_e·[global; λ·(1/T)Σ c_t]). Differentiable
/// through the contexts, so attention gradients reach the embedding task.
class EmbeddingHead {
public:
    EmbeddingHead() = default;

    EmbeddingHead(int code_length, int feat_dim, Rng& rng) : code_length_(code_length), feat_dim_(feat_dim) {
        w_e_ = Tensor::zeros({code_length, 2 * feat_dim}, true);
        init_uniform_fanin(w_e_, 2 * feat_dim, rng);
    }

    int code_length() const { return code_length_; }
    int feat_dim() const { return feat_dim_; }
    const Tensor& weight() const { return w_e_; }

    Tensor fuse_embed(Tape& tape, const GridTensors& grid, const std::vector<Tensor>& contexts, double lambda,
                      const ContinuationSchedule& schedule) const {
        if (contexts.empty()) throw argument_error("fuse_embed: contexts must be nonempty");
        if (lambda < 0.0) throw argument_error("fuse_embed: lambda must be >= 0");
        if (grid.d() != feat_dim_)
            throw argument_error("fuse_embed: grid D=" + std::to_string(grid.d()) + " does not match head D=" +
                                 std::to_string(feat_dim_));
        Tensor acc = contexts.front();
        for (std::size_t i = 1; i < contexts.size(); ++i) acc = add(tape, acc, contexts[i]);
        Tensor mean_ctx = affine(tape, acc, lambda / static_cast<double>(contexts.size()), 0.0);
        Tensor fused = concat(tape, grid.global, mean_ctx);
        Tensor z = matvec(tape, w_e_, fused);
        return dmch::tanh(tape, affine(tape, z, schedule.phi, 0.0));
    }

    NamedTensors parameters() const { return {{"emb.w_e", w_e_}}; }

private:
    int code_length_ = 0;
    int feat_dim_ = 0;
    Tensor w_e_;
};

/// b_i = 1 iff e_i ≥ 0 (the paper's sgn maps 0 to +1).
inline BinaryCode binarize(const std::vector<double>& relaxed) {
    BinaryCode code = BinaryCode::zeros(static_cast<int>(relaxed.size()));
    for (int i = 0; i < code.length; ++i)
        if (relaxed[static_cast<std::size_t>(i)] >= 0.0) code.set_bit(i, true);
    return code;
}

inline BinaryCode binarize(const Tensor& relaxed) { return binarize(relaxed.values()); }

/// Squared Euclidean distance between relaxed codes.
inline Tensor code_distance(Tape& tape, const Tensor& a, const Tensor& b) {
    Tensor diff = sub(tape, a, b);
    return sum(tape, hadamard(tape, diff, diff));
}

/// Hinge triplet loss max(0, d(a,p) − d(a,n) + γ); zero gradient whenever
/// the margin is satisfied.
inline Tensor triplet_loss(Tape& tape, const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                           double gamma) {
    if (anchor.shape() != positive.shape() || anchor.shape() != negative.shape())
        throw argument_error("triplet_loss: code length mismatch " + shape_str(anchor.shape()) + ", " +
                             shape_str(positive.shape()) + ", " + shape_str(negative.shape()));
    if (!(gamma > 0.0)) throw argument_error("triplet_loss: gamma must be positive");
    Tensor d_ap = code_distance(tape, anchor, positive);
    Tensor d_an = code_distance(tape, anchor, negative);
    return relu(tape, affine(tape, sub(tape, d_ap, d_an), 1.0, gamma));
}

// ---------------------------------------------------------------------------
// Code database file: magic "DMCHCODE", version u16, code_length u32,
// count u64, then per entry: item-id length u16 + UTF-8 id, packed bits
// (ceil(C/8) bytes).
// ---------------------------------------------------------------------------

constexpr const char* kCodeMagic = "DMCHCODE";
constexpr std::uint16_t kCodeVersion = 1;

struct CodeEntry {
    std::string item_id;
    BinaryCode code;
};

inline void save_codes(const std::string& path, int code_length, const std::vector<CodeEntry>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open code database for writing: " + path);
    os.write(kCodeMagic, 8);
    write_le<std::uint16_t>(os, kCodeVersion);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(code_length));
    write_le<std::uint64_t>(os, entries.size());
    const std::size_t nbytes = static_cast<std::size_t>((code_length + 7) / 8);
    for (const auto& e : entries) {
        if (e.code.length != code_length)
            throw argument_error("code database: entry '" + e.item_id + "' has length " +
                                 std::to_string(e.code.length) + ", expected " + std::to_string(code_length));
        write_string(os, e.item_id);
        os.write(reinterpret_cast<const char*>(e.code.bytes.data()), static_cast<std::streamsize>(nbytes));
    }
    if (!os) throw io_error("write failure on code database: " + path);
}

struct CodeFile {
    int code_length = 0;
    std::vector<CodeEntry> entries;
};

inline CodeFile load_codes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open code database: " + path);
    expect_magic(is, kCodeMagic, "code database");
    const auto version = read_le<std::uint16_t>(is, "code db version");
    if (version != kCodeVersion) throw format_error("unsupported code db version " + std::to_string(version));
    CodeFile out;
    out.code_length = static_cast<int>(read_le<std::uint32_t>(is, "code length"));
    if (out.code_length <= 0) throw format_error("code db declares nonpositive code length");
    const auto count = read_le<std::uint64_t>(is, "code count");
    const std::size_t nbytes = static_cast<std::size_t>((out.code_length + 7) / 8);
    out.entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        CodeEntry e;
        e.item_id = read_string(is, "code item id");
        e.code.length = out.code_length;
        e.code.bytes.resize(nbytes);
        is.read(reinterpret_cast<char*>(e.code.bytes.data()), static_cast<std::streamsize>(nbytes));
        if (!is) throw format_error("truncated file while reading code bits");
        out.entries.push_back(std::move(e));
    }
    return out;
}

} // namespace dmch
