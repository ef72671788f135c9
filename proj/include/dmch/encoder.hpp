#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dmch/binio.hpp"
#include "dmch/checkpoint.hpp"
#include "dmch/errors.hpp"
#include "dmch/image.hpp"
#include "dmch/tensor.hpp"

namespace dmch {

/// K region feature vectors of dimension D plus a pooled global vector,
/// arranged over a grid_h×grid_w spatial layout.
struct FeatureGrid {
    int k = 0;
    int d = 0;
    int grid_h = 0;
    int grid_w = 0;
    std::vector<double> regions; // K×D row-major
    std::vector<double> global;  // D

    void validate() const {
        if (k != grid_h * grid_w)
            throw argument_error("feature grid: K=" + std::to_string(k) + " does not equal " +
                                 std::to_string(grid_h) + "x" + std::to_string(grid_w));
        if (regions.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(d) ||
            global.size() != static_cast<std::size_t>(d))
            throw argument_error("feature grid: buffer sizes do not match K/D");
    }
};

// Grid file: magic "DMCHGRID", version u16, K u32, D u32, grid_h u16,
// grid_w u16, K×D f64 LE regions row-major, D f64 LE global.
constexpr const char* kGridMagic = "DMCHGRID";
constexpr std::uint16_t kGridVersion = 1;

inline void save_grid(const std::string& path, const FeatureGrid& g) {
    g.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open grid file for writing: " + path);
    os.write(kGridMagic, 8);
    write_le<std::uint16_t>(os, kGridVersion);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.k));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.d));
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(g.grid_h));
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(g.grid_w));
    for (double v : g.regions) write_f64(os, v);
    for (double v : g.global) write_f64(os, v);
    if (!os) throw io_error("write failure on grid file: " + path);
}

inline FeatureGrid load_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open grid file: " + path);
    expect_magic(is, kGridMagic, "feature grid");
    const auto version = read_le<std::uint16_t>(is, "grid version");
    if (version != kGridVersion) throw format_error("unsupported grid version " + std::to_string(version));
    FeatureGrid g;
    g.k = static_cast<int>(read_le<std::uint32_t>(is, "grid K"));
    g.d = static_cast<int>(read_le<std::uint32_t>(is, "grid D"));
    g.grid_h = read_le<std::uint16_t>(is, "grid height");
    g.grid_w = read_le<std::uint16_t>(is, "grid width");
    if (g.k <= 0 || g.d <= 0 || g.k != g.grid_h * g.grid_w)
        throw format_error("grid file declares inconsistent extents (K=" + std::to_string(g.k) + ", layout " +
                           std::to_string(g.grid_h) + "x" + std::to_string(g.grid_w) + ")");
    g.regions.resize(static_cast<std::size_t>(g.k) * static_cast<std::size_t>(g.d));
    for (auto& v : g.regions) v = read_f64(is, "grid regions");
    g.global.resize(static_cast<std::size_t>(g.d));
    for (auto& v : g.global) v = read_f64(is, "grid global");
    return g;
}

/// Tape-resident view of a feature grid: regions as a [K,D] tensor and the
/// pooled global feature as a [D] tensor.
struct GridTensors {
    Tensor regions;
    Tensor global;
    int grid_h = 0;
    int grid_w = 0;

    int k() const { return regions.extent(0); }
    int d() const { return regions.extent(1); }
};

/// Mean over the K region vectors; differentiable (gradient 1/K broadcast).
inline Tensor global_pool(Tape& tape, const Tensor& regions) {
    return mean_axis(tape, regions, 0);
}

inline std::vector<double> global_pool(const FeatureGrid& g) {
    g.validate();
    std::vector<double> out(static_cast<std::size_t>(g.d), 0.0);
    for (int i = 0; i < g.k; ++i)
        for (int j = 0; j < g.d; ++j) out[static_cast<std::size_t>(j)] += g.regions[static_cast<std::size_t>(i) * g.d + j];
    for (double& v : out) v /= g.k;
    return out;
}

/// Lift a loaded grid onto a tape as constants, so precomputed features can
/// feed the decoder without the conv stack.
inline GridTensors grid_to_tensors(const FeatureGrid& g) {
    g.validate();
    GridTensors t;
    t.regions = Tensor::from({g.k, g.d}, g.regions);
    t.global = Tensor::from({g.d}, g.global);
    t.grid_h = g.grid_h;
    t.grid_w = g.grid_w;
    return t;
}

inline FeatureGrid tensors_to_grid(const GridTensors& t) {
    FeatureGrid g;
    g.k = t.k();
    g.d = t.d();
    g.grid_h = t.grid_h;
    g.grid_w = t.grid_w;
    g.regions = t.regions.values();
    g.global = t.global.values();
    return g;
}

struct EncoderConfig {
    int conv1_channels = 8;
    int conv2_channels = 16;
    int feat_dim = 64; // D, the output channel count of the last layer
};

/// Three stride-2 3x3 conv layers with tanh, mapping H×W×3 to
/// (H/8)×(W/8)×D. Desk-scale stand-in for a truncated deep CNN; small
/// enough for finite-difference checks.
class ConvEncoder {
public:
    ConvEncoder() = default;

    ConvEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        auto make_layer = [&](int in_ch, int out_ch, Tensor& w, Tensor& b) {
            w = Tensor::zeros({9 * in_ch, out_ch}, true);
            b = Tensor::zeros({out_ch}, true);
            init_uniform_fanin(w, 9 * in_ch, rng);
        };
        make_layer(3, cfg.conv1_channels, w1_, b1_);
        make_layer(cfg.conv1_channels, cfg.conv2_channels, w2_, b2_);
        make_layer(cfg.conv2_channels, cfg.feat_dim, w3_, b3_);
    }

    const EncoderConfig& config() const { return cfg_; }

    /// Forward pass building the grid on the tape; gradients flow to the
    /// conv parameters. Input extents must be multiples of 8 and ≥ 16.
    GridTensors encode(Tape& tape, const ImageSample& img) const {
        if (img.height < 16 || img.width < 16)
            throw argument_error("encode: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                 " is below the 16x16 minimum");
        if (img.height % 8 != 0 || img.width % 8 != 0)
            throw argument_error("encode: image extents must be multiples of 8 for the stride-8 conv stack");
        for (double v : img.pixels)
            if (v < 0.0 || v > 1.0) throw argument_error("encode: pixel values must lie in [0,1]");

        Tensor x = Tensor::from({img.height * img.width, 3}, img.pixels);
        int h = img.height, w = img.width;
        Tensor a1 = conv_layer(tape, x, h, w, 3, w1_, b1_);
        h /= 2; w /= 2;
        Tensor a2 = conv_layer(tape, a1, h, w, cfg_.conv1_channels, w2_, b2_);
        h /= 2; w /= 2;
        Tensor a3 = conv_layer(tape, a2, h, w, cfg_.conv2_channels, w3_, b3_);
        h /= 2; w /= 2;

        GridTensors out;
        out.regions = a3; // [K, D], rows are regions in raster order
        out.global = global_pool(tape, a3);
        out.grid_h = h;
        out.grid_w = w;
        return out;
    }

    NamedTensors parameters() const {
        return {{"enc.conv1.w", w1_}, {"enc.conv1.b", b1_}, {"enc.conv2.w", w2_}, {"enc.conv2.b", b2_},
                {"enc.conv3.w", w3_}, {"enc.conv3.b", b3_}};
    }

private:
    // 3x3 stride-2 pad-1 convolution via an index gather (im2col) and one
    // matmul, followed by tanh.
    Tensor conv_layer(Tape& tape, const Tensor& input, int in_h, int in_w, int in_ch, const Tensor& w,
                      const Tensor& b) const {
        const int out_h = in_h / 2, out_w = in_w / 2;
        const int patch = 9 * in_ch;
        std::vector<int> idx;
        idx.reserve(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w) * static_cast<std::size_t>(patch));
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const int iy = oy * 2 + ky - 1;
                        const int ix = ox * 2 + kx - 1;
                        const bool pad = iy < 0 || iy >= in_h || ix < 0 || ix >= in_w;
                        for (int c = 0; c < in_ch; ++c)
                            idx.push_back(pad ? -1 : (iy * in_w + ix) * in_ch + c);
                    }
        Tensor cols = gather(tape, input, std::move(idx), {out_h * out_w, patch});
        Tensor pre = add_rowvec(tape, matmul(tape, cols, w), b);
        return dmch::tanh(tape, pre);
    }

    EncoderConfig cfg_;
    Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

} // namespace dmch
