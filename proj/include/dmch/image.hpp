#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dmch/errors.hpp"
#include "dmch/png.hpp"

namespace dmch {

enum class Domain { user, shop };

inline const char* domain_name(Domain d) { return d == Domain::user ? "user" : "shop"; }

inline Domain parse_domain(const std::string& s) {
    if (s == "user") return Domain::user;
    if (s == "shop") return Domain::shop;
    throw data_error("unknown domain tag '" + s + "' (expected user|shop)");
}

/// H×W×3 pixels in [0,1], channel-innermost row-major, plus provenance.
struct ImageSample {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;
    Domain domain = Domain::shop;
    std::string item_id;

    double& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
                      static_cast<std::size_t>(c)];
    }
    double at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
                      static_cast<std::size_t>(c)];
    }

    static ImageSample blank(int height, int width, Domain domain, std::string item_id) {
        ImageSample img;
        img.height = height;
        img.width = width;
        img.pixels.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3, 0.0);
        img.domain = domain;
        img.item_id = std::move(item_id);
        return img;
    }
};

inline png::Rgb8Image to_rgb8(const ImageSample& img) {
    png::Rgb8Image out;
    out.width = img.width;
    out.height = img.height;
    out.pixels.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        double v = std::clamp(img.pixels[i], 0.0, 1.0);
        out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

inline ImageSample from_rgb8(const png::Rgb8Image& src, Domain domain, std::string item_id) {
    ImageSample img = ImageSample::blank(src.height, src.width, domain, std::move(item_id));
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = src.pixels[i] / 255.0;
    return img;
}

inline void save_image(const std::string& path, const ImageSample& img) {
    png::write_file(path, to_rgb8(img));
}

inline ImageSample load_image(const std::string& path, Domain domain, std::string item_id) {
    return from_rgb8(png::read_file(path), domain, std::move(item_id));
}

} // namespace dmch
