#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dmch/checkpoint.hpp"
#include "dmch/decoder.hpp"
#include "dmch/embedding.hpp"
#include "dmch/encoder.hpp"
#include "dmch/errors.hpp"
#include "dmch/image.hpp"
#include "dmch/vocab.hpp"

namespace dmch {

struct ModelConfig {
    int image_size = 64;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int hidden = 256;    // also D, the region feature dimension
    int embed_dim = 256; // word embedding dimension
    int code_bits = 128;
    double lambda = 1.0;
    int max_len = 8;

    int regions() const {
        if (image_size < 16 || image_size % 8 != 0)
            throw config_error("image_size must be a multiple of 8 and >= 16, got " +
                               std::to_string(image_size));
        const int side = image_size / 8;
        return side * side;
    }
};

/// The full DMCH network: conv encoder, attention decoder and embedding
/// head sharing one parameter namespace.
class DmchModel {
public:
    DmchModel() = default;

    DmchModel(const Vocabulary& vocab, const ModelConfig& cfg, std::uint64_t seed)
        : vocab_(vocab), cfg_(cfg) {
        Rng rng(derive_seed(seed, "model_init"));
        EncoderConfig ec;
        ec.conv1_channels = cfg.conv1_channels;
        ec.conv2_channels = cfg.conv2_channels;
        ec.feat_dim = cfg.hidden; // D follows hidden: the adaptive context is summed with h_t
        encoder_ = ConvEncoder(ec, rng);
        DecoderConfig dc;
        dc.hidden = cfg.hidden;
        dc.embed_dim = cfg.embed_dim;
        dc.feat_dim = cfg.hidden;
        dc.regions = cfg.regions();
        dc.vocab_size = vocab.size();
        decoder_ = AttentionDecoder(dc, rng);
        head_ = EmbeddingHead(cfg.code_bits, cfg.hidden, rng);
    }

    const Vocabulary& vocab() const { return vocab_; }
    const ModelConfig& config() const { return cfg_; }
    const ConvEncoder& encoder() const { return encoder_; }
    const AttentionDecoder& decoder() const { return decoder_; }
    const EmbeddingHead& head() const { return head_; }

    NamedTensors parameters() const {
        NamedTensors out = encoder_.parameters();
        for (auto& p : decoder_.parameters()) out.push_back(p);
        for (auto& p : head_.parameters()) out.push_back(p);
        return out;
    }

    struct TeacherForward {
        GridTensors grid;
        Tensor tag_loss;
        std::vector<Tensor> contexts;
    };

    TeacherForward teacher_forward(Tape& tape, const ImageSample& img, const AttributeSequence& seq) const {
        TeacherForward out;
        out.grid = encoder_.encode(tape, img);
        out.tag_loss = decoder_.tag_loss(tape, out.grid, seq, &out.contexts);
        return out;
    }

    /// Relaxed code from teacher-forced contexts; differentiable end to end.
    Tensor relaxed_code(Tape& tape, const GridTensors& grid, const std::vector<Tensor>& contexts,
                        const ContinuationSchedule& schedule) const {
        return head_.fuse_embed(tape, grid, contexts, cfg_.lambda, schedule);
    }

    struct Inference {
        BinaryCode code;
        AttributeSequence sequence;
        std::vector<AttentionRecord> records;
        int grid_h = 0;
        int grid_w = 0;
    };

    /// Online-stage pass: encode, greedy-decode the attributes, fuse the
    /// decoded contexts and binarize. φ does not affect the sign, so the
    /// code is schedule-independent.
    Inference infer(const ImageSample& img, int max_len = 0) const {
        Tape tape;
        Inference out;
        GridTensors grid = encoder_.encode(tape, img);
        auto decoded = decoder_.decode_greedy(tape, grid, max_len > 0 ? max_len : cfg_.max_len);
        ContinuationSchedule inference_phi; // phi = 1
        Tensor e = head_.fuse_embed(tape, grid, decoded.contexts, cfg_.lambda, inference_phi);
        out.code = binarize(e);
        out.sequence = decoded.sequence;
        out.records = std::move(decoded.records);
        out.grid_h = grid.grid_h;
        out.grid_w = grid.grid_w;
        return out;
    }

    // --- persistence ------------------------------------------------------
    // <stem>.ckpt  DMCHCKPT tensor file
    // <stem>.meta  key-value model configuration
    // <stem>.vocab one token per line, id order

    void save(const std::string& stem) const {
        save_checkpoint(stem + ".ckpt", parameters());
        std::ofstream meta(stem + ".meta", std::ios::trunc);
        if (!meta) throw io_error("cannot write model meta: " + stem + ".meta");
        meta << "image_size " << cfg_.image_size << "\n"
             << "conv1_channels " << cfg_.conv1_channels << "\n"
             << "conv2_channels " << cfg_.conv2_channels << "\n"
             << "hidden " << cfg_.hidden << "\n"
             << "embed_dim " << cfg_.embed_dim << "\n"
             << "code_bits " << cfg_.code_bits << "\n"
             << "lambda " << cfg_.lambda << "\n"
             << "max_len " << cfg_.max_len << "\n";
        std::ofstream voc(stem + ".vocab", std::ios::trunc);
        if (!voc) throw io_error("cannot write model vocab: " + stem + ".vocab");
        for (int i = 0; i < vocab_.size(); ++i) voc << vocab_.token_of(i) << "\n";
    }

    static DmchModel load(const std::string& stem) {
        std::ifstream meta(stem + ".meta");
        if (!meta) throw io_error("cannot open model meta: " + stem + ".meta");
        ModelConfig cfg;
        std::string key;
        while (meta >> key) {
            if (key == "image_size") meta >> cfg.image_size;
            else if (key == "conv1_channels") meta >> cfg.conv1_channels;
            else if (key == "conv2_channels") meta >> cfg.conv2_channels;
            else if (key == "hidden") meta >> cfg.hidden;
            else if (key == "embed_dim") meta >> cfg.embed_dim;
            else if (key == "code_bits") meta >> cfg.code_bits;
            else if (key == "lambda") meta >> cfg.lambda;
            else if (key == "max_len") meta >> cfg.max_len;
            else throw format_error("unknown model meta key '" + key + "'");
        }
        std::ifstream voc(stem + ".vocab");
        if (!voc) throw io_error("cannot open model vocab: " + stem + ".vocab");
        Vocabulary vocab;
        std::string token;
        int line = 0;
        while (std::getline(voc, token)) {
            if (token.empty()) continue;
            if (line < 4) {
                // reserved sentinels are constructed by Vocabulary itself
                ++line;
                continue;
            }
            vocab.add(token);
            ++line;
        }
        DmchModel model(vocab, cfg, /*seed=*/0);
        NamedTensors params = model.parameters(); // shared handles onto the model's nodes
        restore_into(load_checkpoint(stem + ".ckpt"), params);
        return model;
    }

private:
    Vocabulary vocab_;
    ModelConfig cfg_;
    ConvEncoder encoder_;
    AttentionDecoder decoder_;
    EmbeddingHead head_;
};

inline std::string checkpoint_stem(const std::string& path) {
    std::string stem = path;
    const std::string ext = ".ckpt";
    if (stem.size() > ext.size() && stem.substr(stem.size() - ext.size()) == ext)
        stem.resize(stem.size() - ext.size());
    return stem;
}

} // namespace dmch
