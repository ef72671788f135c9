#pragma once

#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "dmch/checkpoint.hpp"
#include "dmch/encoder.hpp"
#include "dmch/errors.hpp"
#include "dmch/tensor.hpp"
#include "dmch/vocab.hpp"

// Ordered attribute-sequence decoder: an LSTM step whose context comes from
// spatial attention over the K region features, mixed with a learned visual
// sentinel through an adaptive gate, followed by a softmax over the
// attribute vocabulary.

namespace dmch {

struct DecoderConfig {
    int hidden = 256;
    int embed_dim = 256;
    int feat_dim = 256; // D; must equal hidden (the adaptive context is summed with h_t)
    int regions = 64;   // K
    int vocab_size = 0;
};

struct DecoderState {
    Tensor h;
    Tensor m;
};

/// Per-step attention data extracted for export and invariant checks.
struct AttentionRecord {
    std::vector<double> alpha;            // K weights, sum 1
    double beta = 0.0;                    // sentinel gate in [0,1]
    std::vector<double> context;          // c_t
    std::vector<double> adaptive_context; // ĉ_t
    std::vector<double> sentinel;         // s_t

    void validate() const {
        double s = 0.0;
        for (double a : alpha) {
            if (a < 0.0) throw argument_error("attention record: negative alpha entry");
            s += a;
        }
        if (std::abs(s - 1.0) > 1e-10) throw argument_error("attention record: alpha does not sum to 1");
        if (beta < 0.0 || beta > 1.0) throw argument_error("attention record: beta outside [0,1]");
    }
};

struct SpatialAttention {
    Tensor alpha;   // [K]
    Tensor logits;  // z_t, [K]
    Tensor context; // c_t, [D]
};

struct AdaptiveContext {
    Tensor beta;      // scalar
    Tensor c_hat;     // [D]
    Tensor alpha_hat; // [K+1]
};

/// Mix the sentinel into the spatial context: α̂ = softmax([z; sentinel
/// logit]), β = α̂[K+1], ĉ = β·s + (1−β)·c. Exposed separately so the gate
/// can be driven with an explicit logit (e.g. −inf to mask the sentinel).
inline AdaptiveContext adaptive_mix(Tape& tape, const Tensor& z, const Tensor& sentinel_logit,
                                    const Tensor& s, const Tensor& c) {
    AdaptiveContext out;
    out.alpha_hat = softmax(tape, concat(tape, z, sentinel_logit));
    const int k = z.extent(0);
    out.beta = pick(tape, out.alpha_hat, k);
    Tensor one_minus = affine(tape, out.beta, -1.0, 1.0);
    out.c_hat = add(tape, scale_by(tape, s, out.beta), scale_by(tape, c, one_minus));
    return out;
}

class AttentionDecoder {
public:
    AttentionDecoder() = default;

    AttentionDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.vocab_size < 5) throw config_error("decoder requires a vocabulary (got size " +
                                                   std::to_string(cfg.vocab_size) + ")");
        if (cfg.feat_dim != cfg.hidden)
            throw config_error("decoder requires feat_dim == hidden (adaptive context ĉ_t is summed with "
                               "h_t); got D=" + std::to_string(cfg.feat_dim) + ", hidden=" +
                               std::to_string(cfg.hidden));
        const int h = cfg.hidden, e = cfg.embed_dim, d = cfg.feat_dim, k = cfg.regions, v = cfg.vocab_size;
        const int x = e + d;

        auto param = [&](Shape shape, int fan_in) {
            Tensor t = Tensor::zeros(std::move(shape), true);
            init_uniform_fanin(t, fan_in, rng);
            return t;
        };
        w_emb_ = param({v, e}, e);
        lstm_w_ = param({4 * h, x}, x);
        lstm_u_ = param({4 * h, h}, h);
        lstm_b_ = Tensor::zeros({4 * h}, true);
        attn_wv_ = param({k, d}, d);
        attn_wg_ = param({k, h}, h);
        attn_wh_ = param({k}, k);
        sent_wx_ = param({h, x}, x);
        sent_wh_ = param({h, h}, h);
        sent_ws_ = param({k, h}, h);
        out_wp_ = param({v, h}, h);
    }

    const DecoderConfig& config() const { return cfg_; }

    DecoderState initial_state() const {
        return {Tensor::zeros({cfg_.hidden}), Tensor::zeros({cfg_.hidden})};
    }

    Tensor embed_token(Tape& tape, int token_id) const {
        if (token_id < 0 || token_id >= cfg_.vocab_size)
            throw data_error("token id " + std::to_string(token_id) + " outside vocabulary of size " +
                             std::to_string(cfg_.vocab_size));
        return row_select(tape, w_emb_, token_id);
    }

    /// x_t = [embedding(previous token); global image feature].
    Tensor step_input(Tape& tape, int prev_token, const Tensor& global_feat) const {
        return concat(tape, embed_token(tape, prev_token), global_feat);
    }

    /// Standard LSTM cell: forget/input/output gates plus candidate.
    DecoderState lstm_step(Tape& tape, const DecoderState& prev, const Tensor& x) const {
        if (x.rank() != 1 || x.extent(0) != cfg_.embed_dim + cfg_.feat_dim)
            throw argument_error("lstm_step: input must have dimension embed+feat = " +
                                 std::to_string(cfg_.embed_dim + cfg_.feat_dim) + ", got " +
                                 shape_str(x.shape()));
        const int h = cfg_.hidden;
        Tensor pre = add(tape, add(tape, matvec(tape, lstm_w_, x), matvec(tape, lstm_u_, prev.h)), lstm_b_);
        Tensor gi = sigmoid(tape, slice(tape, pre, 0, h));
        Tensor gf = sigmoid(tape, slice(tape, pre, h, h));
        Tensor go = sigmoid(tape, slice(tape, pre, 2 * h, h));
        Tensor cand = dmch::tanh(tape, slice(tape, pre, 3 * h, h));
        Tensor m = add(tape, hadamard(tape, gf, prev.m), hadamard(tape, gi, cand));
        Tensor hid = hadamard(tape, go, dmch::tanh(tape, m));
        return {hid, m};
    }

    /// Attention logits over the K regions given the current hidden state:
    /// z = w_hᵀ tanh(W_v·Vᵀ·… + (W_g h)·1ᵀ), α = softmax(z), c = Σ α_i v_i.
    SpatialAttention spatial_attention(Tape& tape, const Tensor& regions, const Tensor& h) const {
        Tensor p = matmul(tape, attn_wv_, transpose(tape, regions));
        return spatial_attention_cached(tape, regions, p, h);
    }

    /// Same, with W_v·regionsᵀ precomputed once per image.
    SpatialAttention spatial_attention_cached(Tape& tape, const Tensor& regions, const Tensor& wv_regions,
                                              const Tensor& h) const {
        SpatialAttention out;
        Tensor q = matvec(tape, attn_wg_, h);                          // [K]
        Tensor m = dmch::tanh(tape, add_colvec(tape, wv_regions, q));  // [K,K]
        out.logits = vecmat(tape, attn_wh_, m);                        // [K]
        out.alpha = softmax(tape, out.logits);
        out.context = weighted_sum(tape, regions, out.alpha);
        return out;
    }

    /// s_t = σ(W_x x_t + W_h h_{t−1}) ⊙ tanh(m_t).
    Tensor visual_sentinel(Tape& tape, const Tensor& x, const Tensor& h_prev, const Tensor& m) const {
        Tensor gate = sigmoid(tape, add(tape, matvec(tape, sent_wx_, x), matvec(tape, sent_wh_, h_prev)));
        return hadamard(tape, gate, dmch::tanh(tape, m));
    }

    /// β and ĉ from the K+1-way softmax over [z; w_hᵀ tanh(W_s s + W_g h)].
    AdaptiveContext adaptive_context(Tape& tape, const Tensor& z, const Tensor& s, const Tensor& h,
                                     const Tensor& c) const {
        Tensor u = dmch::tanh(tape, add(tape, matvec(tape, sent_ws_, s), matvec(tape, attn_wg_, h)));
        Tensor logit = dot(tape, attn_wh_, u); // scalar
        return adaptive_mix(tape, z, logit, s, c);
    }

    /// p_t = softmax(W_p (ĉ_t + h_t)).
    Tensor token_distribution(Tape& tape, const Tensor& c_hat, const Tensor& h) const {
        return softmax(tape, matvec(tape, out_wp_, add(tape, c_hat, h)));
    }

    struct StepTrace {
        DecoderState state;
        SpatialAttention attn;
        Tensor sentinel;
        AdaptiveContext adaptive;
        Tensor probs;
    };

    /// One full decoder step from a previous state and input token.
    StepTrace run_step(Tape& tape, const Tensor& regions, const Tensor& wv_regions, const Tensor& global_feat,
                       const DecoderState& prev, int input_token) const {
        StepTrace tr;
        Tensor x = step_input(tape, input_token, global_feat);
        tr.state = lstm_step(tape, prev, x);
        tr.attn = spatial_attention_cached(tape, regions, wv_regions, tr.state.h);
        tr.sentinel = visual_sentinel(tape, x, prev.h, tr.state.m);
        tr.adaptive = adaptive_context(tape, tr.attn.logits, tr.sentinel, tr.state.h, tr.attn.context);
        tr.probs = token_distribution(tape, tr.adaptive.c_hat, tr.state.h);
        return tr;
    }

    /// Teacher-forced sequence loss −Σ_t log p_t(y_t) over the T payload
    /// tokens. Optionally collects the spatial contexts c_t for the
    /// embedding head.
    Tensor tag_loss(Tape& tape, const GridTensors& grid, const AttributeSequence& seq,
                    std::vector<Tensor>* contexts_out = nullptr) const {
        check_grid(grid);
        if (seq.length() < 1) throw data_error("tag_loss: empty attribute sequence");
        for (int id : seq.ids)
            if (id < 0 || id >= cfg_.vocab_size)
                throw data_error("tag_loss: token id " + std::to_string(id) + " outside vocabulary of size " +
                                 std::to_string(cfg_.vocab_size));

        Tensor wv_regions = matmul(tape, attn_wv_, transpose(tape, grid.regions));
        DecoderState state = initial_state();
        Tensor loss;
        const int steps = seq.length();
        for (int t = 0; t < steps; ++t) {
            const int input_token = seq.ids[static_cast<std::size_t>(t)];      // y_{t−1}, <start> first
            const int target = seq.ids[static_cast<std::size_t>(t) + 1];       // y_t
            StepTrace tr = run_step(tape, grid.regions, wv_regions, grid.global, state, input_token);
            state = tr.state;
            if (contexts_out) contexts_out->push_back(tr.attn.context);
            Tensor nll = affine(tape, dmch::log(tape, pick(tape, tr.probs, target)), -1.0, 0.0);
            loss = loss.valid() ? add(tape, loss, nll) : nll;
        }
        return loss;
    }

    struct DecodeResult {
        AttributeSequence sequence;
        std::vector<AttentionRecord> records;
        std::vector<Tensor> contexts; // spatial contexts c_t per emitted step
    };

    /// Greedy argmax decoding; stops at <end> or max_len. Ties break toward
    /// the lowest token id.
    DecodeResult decode_greedy(Tape& tape, const GridTensors& grid, int max_len) const {
        check_grid(grid);
        if (max_len < 1) throw argument_error("decode_greedy: max_len must be >= 1");
        Tensor wv_regions = matmul(tape, attn_wv_, transpose(tape, grid.regions));
        DecoderState state = initial_state();
        DecodeResult out;
        out.sequence.ids.push_back(Vocabulary::kStart);
        int prev = Vocabulary::kStart;
        for (int t = 0; t < max_len; ++t) {
            StepTrace tr = run_step(tape, grid.regions, wv_regions, grid.global, state, prev);
            state = tr.state;
            int best = 0;
            const auto& p = tr.probs.values();
            for (int i = 1; i < static_cast<int>(p.size()); ++i)
                if (p[static_cast<std::size_t>(i)] > p[static_cast<std::size_t>(best)]) best = i;
            AttentionRecord rec;
            rec.alpha = tr.attn.alpha.values();
            rec.beta = tr.adaptive.beta.values()[0];
            rec.context = tr.attn.context.values();
            rec.adaptive_context = tr.adaptive.c_hat.values();
            rec.sentinel = tr.sentinel.values();
            out.records.push_back(std::move(rec));
            out.contexts.push_back(tr.attn.context);
            if (best == Vocabulary::kEnd) break;
            out.sequence.ids.push_back(best);
            prev = best;
        }
        out.sequence.ids.push_back(Vocabulary::kEnd);
        return out;
    }

    NamedTensors parameters() const {
        return {{"dec.w_emb", w_emb_},   {"dec.lstm.w", lstm_w_}, {"dec.lstm.u", lstm_u_},
                {"dec.lstm.b", lstm_b_}, {"dec.attn.wv", attn_wv_}, {"dec.attn.wg", attn_wg_},
                {"dec.attn.wh", attn_wh_}, {"dec.sent.wx", sent_wx_}, {"dec.sent.wh", sent_wh_},
                {"dec.sent.ws", sent_ws_}, {"dec.out.wp", out_wp_}};
    }

private:
    void check_grid(const GridTensors& grid) const {
        if (grid.regions.rank() != 2 || grid.regions.extent(0) != cfg_.regions ||
            grid.regions.extent(1) != cfg_.feat_dim)
            throw argument_error("decoder: grid shape " + shape_str(grid.regions.shape()) +
                                 " does not match configured K=" + std::to_string(cfg_.regions) +
                                 ", D=" + std::to_string(cfg_.feat_dim));
    }

    DecoderConfig cfg_;
    Tensor w_emb_;
    Tensor lstm_w_, lstm_u_, lstm_b_;
    Tensor attn_wv_, attn_wg_, attn_wh_;
    Tensor sent_wx_, sent_wh_, sent_ws_;
    Tensor out_wp_;
};

/// Attention map export: per decode step one `<step>,<beta>` header line,
/// then grid_h lines of grid_w comma-separated α values.
inline void write_attention_csv(const std::string& path, const std::vector<AttentionRecord>& records,
                                int grid_h, int grid_w) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot open attention export for writing: " + path);
    for (std::size_t step = 0; step < records.size(); ++step) {
        const auto& rec = records[step];
        if (static_cast<int>(rec.alpha.size()) != grid_h * grid_w)
            throw argument_error("attention export: alpha length does not match grid layout");
        os << step << ',' << format_double(rec.beta) << '\n';
        for (int y = 0; y < grid_h; ++y) {
            for (int x = 0; x < grid_w; ++x) {
                if (x) os << ',';
                os << format_double(rec.alpha[static_cast<std::size_t>(y) * static_cast<std::size_t>(grid_w) +
                                              static_cast<std::size_t>(x)]);
            }
            os << '\n';
        }
    }
    if (!os) throw io_error("write failure on attention export: " + path);
}

} // namespace dmch
