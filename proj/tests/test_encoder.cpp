#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dmch/encoder.hpp"
#include "dmch/tensor.hpp"

using namespace dmch;

namespace {

ImageSample random_image(int h, int w, Rng& rng) {
    ImageSample img = ImageSample::blank(h, w, Domain::shop, "t");
    for (auto& v : img.pixels) v = uniform(rng, 0.0, 1.0);
    return img;
}

FeatureGrid random_grid(int grid_h, int grid_w, int d, Rng& rng) {
    FeatureGrid g;
    g.grid_h = grid_h;
    g.grid_w = grid_w;
    g.k = grid_h * grid_w;
    g.d = d;
    g.regions.resize(static_cast<std::size_t>(g.k) * static_cast<std::size_t>(d));
    g.global.resize(static_cast<std::size_t>(d));
    for (auto& v : g.regions) v = uniform(rng, -2.0, 2.0);
    for (auto& v : g.global) v = uniform(rng, -2.0, 2.0);
    return g;
}

} // namespace

TEST_SUITE("encoder") {

TEST_CASE("all-zero image produces a finite grid") {
    Rng rng(3);
    ConvEncoder enc(EncoderConfig{4, 6, 8}, rng);
    ImageSample img = ImageSample::blank(16, 16, Domain::shop, "zero");
    Tape tape;
    GridTensors g = enc.encode(tape, img);
    CHECK(g.k() == 4);
    CHECK(g.d() == 8);
    for (double v : g.regions.values()) CHECK(std::isfinite(v));
    for (double v : g.global.values()) CHECK(std::isfinite(v));
    // with zero input the first layer is bias-only: tanh(b) identical in
    // every region, so region features can only diverge deeper in the stack
    Tape tape2;
    GridTensors g2 = enc.encode(tape2, img);
    CHECK(g.regions.values() == g2.regions.values());
}

TEST_CASE("identical images produce bitwise identical grids") {
    Rng rng(5);
    ConvEncoder enc(EncoderConfig{4, 6, 8}, rng);
    ImageSample a = random_image(16, 16, rng);
    ImageSample b = a;
    Tape t1, t2;
    GridTensors ga = enc.encode(t1, a);
    GridTensors gb = enc.encode(t2, b);
    CHECK(ga.regions.values() == gb.regions.values());
    CHECK(ga.global.values() == gb.global.values());
}

TEST_CASE("images below the 16x16 minimum are rejected") {
    Rng rng(7);
    ConvEncoder enc(EncoderConfig{2, 3, 4}, rng);
    ImageSample small = ImageSample::blank(8, 8, Domain::shop, "small");
    Tape tape;
    CHECK_THROWS_AS(enc.encode(tape, small), argument_error);
}

TEST_CASE("grad_check through encode on a 16x16 input") {
    Rng rng(11);
    ConvEncoder enc(EncoderConfig{2, 3, 4}, rng);
    ImageSample img = random_image(16, 16, rng);
    NamedTensors params = enc.parameters();
    std::vector<Tensor> tensors;
    for (auto& [n, t] : params) {
        (void)n;
        tensors.push_back(t);
    }
    Rng wrng(13);
    Tensor w; // weight the scalar reduction so every output coordinate matters
    {
        Tape probe;
        GridTensors g = enc.encode(probe, img);
        const int n = static_cast<int>(g.regions.size() + g.global.size());
        w = Tensor::zeros({n});
        for (auto& v : w.values()) v = uniform(wrng, -1.0, 1.0);
    }
    auto err = grad_check_params(
        [&](Tape& t) {
            GridTensors g = enc.encode(t, img);
            Tensor flat = concat(t, reshape(t, g.regions, {static_cast<int>(g.regions.size())}), g.global);
            return dot(t, flat, w);
        },
        tensors);
    CHECK(err < 1e-4);
}

TEST_CASE("global_pool is the region mean with gradient 1/K") {
    Tape tape;
    // K identical vectors pool to the vector itself
    Tensor regions = Tensor::from({3, 2}, {0.5, -1.0, 0.5, -1.0, 0.5, -1.0});
    Tensor pooled = global_pool(tape, regions);
    CHECK(pooled.at(0) == doctest::Approx(0.5));
    CHECK(pooled.at(1) == doctest::Approx(-1.0));

    Tensor two = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor p2 = global_pool(tape, two);
    CHECK(p2.at(0) == doctest::Approx(0.5));
    CHECK(p2.at(1) == doctest::Approx(0.5));

    Rng rng(17);
    Tensor r = Tensor::zeros({4, 3});
    for (auto& v : r.values()) v = uniform(rng, -1, 1);
    Tensor w = Tensor::from({3}, {0.3, -0.7, 1.1});
    auto err = grad_check(
        [&](Tape& t, const Tensor& x) { return dot(t, global_pool(t, x), w); }, r);
    CHECK(err < 1e-6);
}

TEST_CASE("grid file round-trips bit-exactly over 100 random grids") {
    Rng rng(19);
    const std::string path = (std::filesystem::temp_directory_path() / "dmch_grid_test.bin").string();
    for (int trial = 0; trial < 100; ++trial) {
        const int gh = 1 + static_cast<int>(rng() % 4);
        const int gw = 1 + static_cast<int>(rng() % 4);
        const int d = 1 + static_cast<int>(rng() % 8);
        FeatureGrid g = random_grid(gh, gw, d, rng);
        save_grid(path, g);
        FeatureGrid back = load_grid(path);
        CHECK(back.k == g.k);
        CHECK(back.d == g.d);
        CHECK(back.grid_h == g.grid_h);
        CHECK(back.grid_w == g.grid_w);
        CHECK(back.regions == g.regions);
        CHECK(back.global == g.global);
    }
    std::filesystem::remove(path);
}

TEST_CASE("K=49 D=256 grid loads with the declared shape") {
    Rng rng(23);
    FeatureGrid g = random_grid(7, 7, 256, rng);
    const std::string path = (std::filesystem::temp_directory_path() / "dmch_grid_resnet.bin").string();
    save_grid(path, g);
    FeatureGrid back = load_grid(path);
    CHECK(back.k == 49);
    CHECK(back.d == 256);
    CHECK(back.grid_h == 7);
    CHECK(back.grid_w == 7);
    std::filesystem::remove(path);
}

TEST_CASE("truncated grid file raises a format error") {
    Rng rng(29);
    FeatureGrid g = random_grid(2, 2, 4, rng);
    const std::string path = (std::filesystem::temp_directory_path() / "dmch_grid_trunc.bin").string();
    save_grid(path, g);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 13);
    CHECK_THROWS_AS(load_grid(path), format_error);
    std::filesystem::remove(path);
}

TEST_CASE("output shape is input-independent for a fixed configuration") {
    Rng rng(31);
    ConvEncoder enc(EncoderConfig{3, 4, 5}, rng);
    for (int trial = 0; trial < 4; ++trial) {
        ImageSample img = random_image(24, 24, rng);
        Tape tape;
        GridTensors g = enc.encode(tape, img);
        CHECK(g.regions.shape() == Shape{9, 5});
        CHECK(g.grid_h == 3);
        CHECK(g.grid_w == 3);
    }
}

} // TEST_SUITE
