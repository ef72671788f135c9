#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "dmch/errors.hpp"
#include "dmch/image.hpp"
#include "dmch/util.hpp"
#include "dmch/vocab.hpp"

// Procedural cross-domain garment dataset. Every visual factor maps
// one-to-one onto an attribute token, and the tokens are emitted in a fixed
// canonical order (style → pattern → color → collar → sleeve), so retrieval
// and sequence learning are both exercised end to end. Shop images are
// rendered clean on white; user images get background texture, jitter,
// color perturbation and occlusion.

namespace dmch::synth {

inline const std::vector<std::string>& silhouettes() {
    static const std::vector<std::string> v = {"dress", "shirt", "skirt"};
    return v;
}
inline const std::vector<std::string>& patterns() {
    static const std::vector<std::string> v = {"solid", "striped", "dotted", "floral"};
    return v;
}
inline const std::vector<std::string>& colors() {
    static const std::vector<std::string> v = {"red", "orange", "yellow", "green",
                                               "teal", "blue", "purple", "pink"};
    return v;
}
inline const std::vector<std::string>& collars() {
    static const std::vector<std::string> v = {"v_neck", "round_neck"};
    return v;
}
inline const std::vector<std::string>& sleeves() {
    static const std::vector<std::string> v = {"long_sleeve", "short_sleeve"};
    return v;
}

struct Rgb {
    double r, g, b;
};

inline Rgb palette(int color_index) {
    static const Rgb table[8] = {{0.85, 0.10, 0.10}, {0.95, 0.55, 0.05}, {0.95, 0.90, 0.10},
                                 {0.10, 0.65, 0.15}, {0.05, 0.65, 0.65}, {0.10, 0.25, 0.85},
                                 {0.55, 0.10, 0.75}, {0.95, 0.45, 0.70}};
    return table[color_index];
}

/// One product: a factor assignment plus its canonical attribute sequence.
struct GarmentSpec {
    std::string product_id;
    int silhouette = 0;
    int pattern = 0;
    int color = 0;
    int collar = 0;
    int sleeve = 0;

    std::vector<std::string> tokens() const {
        return {silhouettes()[static_cast<std::size_t>(silhouette)], patterns()[static_cast<std::size_t>(pattern)],
                colors()[static_cast<std::size_t>(color)], collars()[static_cast<std::size_t>(collar)],
                sleeves()[static_cast<std::size_t>(sleeve)]};
    }

    /// Inverse of tokens(); validates the canonical factor order.
    static GarmentSpec from_tokens(const std::vector<std::string>& toks, std::string product_id = "") {
        if (toks.size() != 5) throw data_error("garment attribute sequence must have 5 tokens");
        auto index_of = [](const std::vector<std::string>& set, const std::string& t, const char* what) {
            auto it = std::find(set.begin(), set.end(), t);
            if (it == set.end())
                throw data_error("token '" + t + "' is not a valid " + what + " (canonical order violated?)");
            return static_cast<int>(it - set.begin());
        };
        GarmentSpec s;
        s.product_id = std::move(product_id);
        s.silhouette = index_of(silhouettes(), toks[0], "silhouette");
        s.pattern = index_of(patterns(), toks[1], "pattern");
        s.color = index_of(colors(), toks[2], "color");
        s.collar = index_of(collars(), toks[3], "collar");
        s.sleeve = index_of(sleeves(), toks[4], "sleeve");
        return s;
    }

    int factor_diff(const GarmentSpec& other) const {
        return (silhouette != other.silhouette) + (pattern != other.pattern) + (color != other.color) +
               (collar != other.collar) + (sleeve != other.sleeve);
    }
};

/// Vocabulary covering the whole factor space plus sentinels (~23 ids).
inline Vocabulary make_vocabulary() {
    Vocabulary v;
    for (const auto& set : {silhouettes(), patterns(), colors(), collars(), sleeves()})
        for (const auto& t : set) v.add(t);
    return v;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace detail {

// Garment evaluated in normalized [0,1]² coordinates; returns false when the
// point is background.
inline bool garment_at(const GarmentSpec& g, double u, double v, Rgb& out) {
    const double cu = std::abs(u - 0.5);

    bool inside = false;
    bool waistband = false;
    // bodice common to all silhouettes so collar and sleeves stay visible
    if (g.silhouette == 0) { // dress: bodice + flared skirt
        if (v >= 0.20 && v <= 0.42 && cu <= 0.18) inside = true;
        if (v > 0.42 && v <= 0.88) {
            const double half = 0.18 + (v - 0.42) / 0.46 * 0.14;
            if (cu <= half) inside = true;
        }
    } else if (g.silhouette == 1) { // shirt: straight torso
        if (v >= 0.20 && v <= 0.74 && cu <= 0.18) inside = true;
    } else { // skirt outfit: narrow top, dark waistband, straight skirt
        if (v >= 0.20 && v <= 0.44 && cu <= 0.13) inside = true;
        if (v > 0.44 && v <= 0.48 && cu <= 0.24) {
            inside = true;
            waistband = true;
        }
        if (v > 0.48 && v <= 0.80 && cu <= 0.24) inside = true;
    }

    // sleeves hang from the shoulder line
    const double sleeve_end = g.sleeve == 0 ? 0.70 : 0.38;
    if (v >= 0.20 && v <= sleeve_end && cu >= 0.19 && cu <= 0.33) inside = true;

    if (!inside) return false;

    // collar notch cut out of the top center
    if (g.collar == 0) { // v-neck
        if (v >= 0.20 && v <= 0.38 && cu <= 0.10 * (0.38 - v) / 0.18) return false;
    } else { // round
        const double dv = v - 0.20;
        if (dv >= 0.0 && cu * cu + dv * dv <= 0.11 * 0.11) return false;
        if (v < 0.20) return false;
    }

    if (waistband) {
        out = {0.15, 0.15, 0.15};
        return true;
    }

    // pattern elements are deliberately coarse so they stay legible at the
    // 32px desk-scale rendering under scale jitter
    Rgb base = palette(g.color);
    out = base;
    if (g.pattern == 1) { // striped
        if (std::fmod(v, 0.20) < 0.09) out = {base.r * 0.35, base.g * 0.35, base.b * 0.35};
    } else if (g.pattern == 2) { // dotted
        const double gu = std::fmod(u + 0.10, 0.20) - 0.10;
        const double gv = std::fmod(v + 0.10, 0.20) - 0.10;
        if (gu * gu + gv * gv <= 0.055 * 0.055) out = {base.r * 0.30, base.g * 0.30, base.b * 0.30};
    } else if (g.pattern == 3) { // floral: light crosses
        const double gu = std::fmod(u + 0.11, 0.22) - 0.11;
        const double gv = std::fmod(v + 0.11, 0.22) - 0.11;
        const bool cross = (std::abs(gu) < 0.030 && std::abs(gv) < 0.075) ||
                           (std::abs(gv) < 0.030 && std::abs(gu) < 0.075);
        if (cross) out = {0.97, 0.97, 0.90};
    }
    return true;
}

} // namespace detail

struct RenderOptions {
    double scale = 1.0;
    double dx = 0.0;  // translation in normalized units
    double dy = 0.0;
    Rgb tint{1.0, 1.0, 1.0}; // per-channel multiplier on garment color
    // low-frequency background texture: base + amp·(sin + sin); smooth, so
    // it shifts the domain without imitating the garment patterns
    bool textured_background = false;
    Rgb background{0.97, 0.97, 0.97};
    double bg_amp = 0.0;
    double bg_fx = 2.0, bg_fy = 2.0;
    double bg_phase_x = 0.0, bg_phase_y = 0.0;
    bool occlude = false;
    double occ_x = 0.0, occ_y = 0.0, occ_w = 0.0, occ_h = 0.0;
    Rgb occ_color{0.5, 0.5, 0.5};
};

inline ImageSample render(const GarmentSpec& g, int size, Domain domain, const std::string& item_id,
                          const RenderOptions& opt) {
    constexpr double tau = 6.283185307179586;
    ImageSample img = ImageSample::blank(size, size, domain, item_id);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double px = (x + 0.5) / size;
            const double py = (y + 0.5) / size;
            Rgb c = opt.background;
            if (opt.textured_background) {
                const double n = 0.5 * opt.bg_amp * (std::sin(tau * (opt.bg_fx * px + opt.bg_phase_x)) +
                                                     std::sin(tau * (opt.bg_fy * py + opt.bg_phase_y)));
                c = {std::clamp(c.r + n, 0.0, 1.0), std::clamp(c.g + n, 0.0, 1.0), std::clamp(c.b + n, 0.0, 1.0)};
            }
            // inverse garment transform
            const double u = (px - 0.5 - opt.dx) / opt.scale + 0.5;
            const double v = (py - 0.5 - opt.dy) / opt.scale + 0.5;
            Rgb gc;
            if (u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0 && detail::garment_at(g, u, v, gc)) {
                c = {std::clamp(gc.r * opt.tint.r, 0.0, 1.0), std::clamp(gc.g * opt.tint.g, 0.0, 1.0),
                     std::clamp(gc.b * opt.tint.b, 0.0, 1.0)};
            }
            if (opt.occlude && px >= opt.occ_x && px <= opt.occ_x + opt.occ_w && py >= opt.occ_y &&
                py <= opt.occ_y + opt.occ_h) {
                c = opt.occ_color;
            }
            img.at(y, x, 0) = c.r;
            img.at(y, x, 1) = c.g;
            img.at(y, x, 2) = c.b;
        }
    }
    return img;
}

/// Clean catalog rendering; deterministic, slight per-index scale variation
/// so multiple shop images of one product differ.
inline ImageSample render_shop(const GarmentSpec& g, int size, const std::string& item_id, int index) {
    RenderOptions opt;
    opt.scale = 1.0 - 0.05 * (index % 3);
    opt.dx = 0.01 * (index % 2);
    return render(g, size, Domain::shop, item_id, opt);
}

/// Street-style rendering with the domain shifts, seeded per item id.
inline ImageSample render_user(const GarmentSpec& g, int size, const std::string& item_id,
                               std::uint64_t item_seed) {
    Rng rng(item_seed);
    RenderOptions opt;
    opt.textured_background = true;
    opt.background = {uniform(rng, 0.25, 0.85), uniform(rng, 0.25, 0.85), uniform(rng, 0.25, 0.85)};
    opt.bg_amp = uniform(rng, 0.05, 0.10);
    opt.bg_fx = uniform(rng, 1.0, 3.0);
    opt.bg_fy = uniform(rng, 1.0, 3.0);
    opt.bg_phase_x = uniform(rng, 0.0, 1.0);
    opt.bg_phase_y = uniform(rng, 0.0, 1.0);
    opt.scale = uniform(rng, 0.88, 1.05);
    opt.dx = uniform(rng, -0.06, 0.06);
    opt.dy = uniform(rng, -0.06, 0.06);
    // lighting: a shared brightness factor plus a small per-channel cast
    const double brightness = uniform(rng, 0.92, 1.08);
    opt.tint = {brightness * uniform(rng, 0.97, 1.03), brightness * uniform(rng, 0.97, 1.03),
                brightness * uniform(rng, 0.97, 1.03)};
    opt.occlude = true;
    opt.occ_w = uniform(rng, 0.05, 0.12);
    opt.occ_h = uniform(rng, 0.05, 0.12);
    opt.occ_x = uniform(rng, 0.0, 1.0 - opt.occ_w);
    opt.occ_y = uniform(rng, 0.0, 1.0 - opt.occ_h);
    const double gray = uniform(rng, 0.1, 0.9);
    opt.occ_color = {gray, gray, gray};
    return render(g, size, Domain::user, item_id, opt);
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::string path; // relative to the manifest directory
    Domain domain = Domain::shop;
    std::string product_id;
    std::vector<std::string> attributes;
    std::string split; // train | test
};

struct DatasetManifest {
    std::string base_dir;
    std::vector<ManifestRecord> records;

    std::string resolve(const ManifestRecord& r) const {
        return base_dir.empty() ? r.path : base_dir + "/" + r.path;
    }
};

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw io_error("cannot open manifest for writing: " + tmp);
        for (const auto& r : m.records)
            os << r.path << '\t' << domain_name(r.domain) << '\t' << r.product_id << '\t'
               << join(r.attributes, " ") << '\t' << r.split << '\n';
        if (!os) throw io_error("write failure on manifest: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open manifest: " + path);
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split(line, '\t');
        if (fields.size() != 5)
            throw format_error("manifest line " + std::to_string(lineno) + ": expected 5 tab-separated fields");
        ManifestRecord r;
        r.path = fields[0];
        r.domain = parse_domain(fields[1]);
        r.product_id = fields[2];
        for (const auto& t : split(fields[3], ' '))
            if (!t.empty()) r.attributes.push_back(t);
        r.split = fields[4];
        if (r.split != "train" && r.split != "test")
            throw format_error("manifest line " + std::to_string(lineno) + ": unknown split '" + r.split + "'");
        m.records.push_back(std::move(r));
    }
    return m;
}

/// Every path exists, every user image's product has a shop image, and every
/// attribute list parses in canonical factor order.
inline void check_integrity(const DatasetManifest& m) {
    std::set<std::string> shop_products;
    for (const auto& r : m.records)
        if (r.domain == Domain::shop) shop_products.insert(r.product_id);
    for (const auto& r : m.records) {
        if (!std::filesystem::exists(m.resolve(r)))
            throw data_error("manifest references missing file: " + m.resolve(r));
        if (r.domain == Domain::user && shop_products.count(r.product_id) == 0)
            throw data_error("user image of product '" + r.product_id + "' has no shop image");
        GarmentSpec::from_tokens(r.attributes, r.product_id);
    }
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

struct GenerateOptions {
    int n_products = 10;
    int images_per_product = 1; // per domain
    std::uint64_t seed = 1;
    int image_size = 64;
};

inline std::vector<GarmentSpec> sample_products(int n, std::uint64_t seed, const std::string& id_prefix = "p") {
    const int total = 3 * 4 * 8 * 2 * 2;
    if (n > total) throw data_error("cannot generate more than " + std::to_string(total) + " distinct products");
    std::vector<int> combos(static_cast<std::size_t>(total));
    std::iota(combos.begin(), combos.end(), 0);
    Rng rng(derive_seed(seed, "products"));
    std::shuffle(combos.begin(), combos.end(), rng);
    std::vector<GarmentSpec> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int c = combos[static_cast<std::size_t>(i)];
        GarmentSpec g;
        g.silhouette = c % 3; c /= 3;
        g.pattern = c % 4; c /= 4;
        g.color = c % 8; c /= 8;
        g.collar = c % 2; c /= 2;
        g.sleeve = c % 2;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s%03d", id_prefix.c_str(), i);
        g.product_id = buf;
        out.push_back(g);
    }
    return out;
}

inline void render_product_images(const std::vector<GarmentSpec>& specs, const GenerateOptions& opt,
                                  const std::string& out_dir, DatasetManifest& manifest) {
    struct Job {
        GarmentSpec spec;
        std::string file;
        Domain domain;
        int index;
    };
    std::vector<Job> jobs;
    for (const auto& g : specs) {
        for (int i = 0; i < opt.images_per_product; ++i) {
            char shop_name[64], user_name[64];
            std::snprintf(shop_name, sizeof(shop_name), "shop_%s_%02d.png", g.product_id.c_str(), i);
            std::snprintf(user_name, sizeof(user_name), "user_%s_%02d.png", g.product_id.c_str(), i);
            jobs.push_back({g, shop_name, Domain::shop, i});
            jobs.push_back({g, user_name, Domain::user, i});

            ManifestRecord rs{shop_name, Domain::shop, g.product_id, g.tokens(), "train"};
            const bool test_user = opt.images_per_product >= 2 && i == opt.images_per_product - 1;
            ManifestRecord ru{user_name, Domain::user, g.product_id, g.tokens(), test_user ? "test" : "train"};
            manifest.records.push_back(std::move(rs));
            manifest.records.push_back(std::move(ru));
        }
    }
    parallel_for(jobs.size(), [&](std::size_t j) {
        const Job& job = jobs[j];
        ImageSample img = job.domain == Domain::shop
                              ? render_shop(job.spec, opt.image_size, job.file, job.index)
                              : render_user(job.spec, opt.image_size, job.file,
                                            derive_seed(opt.seed, job.file));
        save_image(out_dir + "/" + job.file, img);
    });
}

/// Renders the full paired dataset and writes the manifest atomically.
inline DatasetManifest generate(const GenerateOptions& opt, const std::string& out_dir) {
    if (opt.n_products < 2) throw argument_error("generate: need at least 2 products");
    if (opt.images_per_product < 1) throw argument_error("generate: images_per_product must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw io_error("cannot create output directory: " + out_dir);
    {
        std::ofstream probe(out_dir + "/.dmch_write_probe", std::ios::trunc);
        if (!probe) throw io_error("output directory is not writable: " + out_dir);
    }
    std::filesystem::remove(out_dir + "/.dmch_write_probe", ec);

    auto specs = sample_products(opt.n_products, opt.seed);
    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    render_product_images(specs, opt, out_dir, manifest);
    save_manifest(out_dir + "/manifest.tsv", manifest);
    return manifest;
}

/// For a fraction of products, injects a twin product differing in exactly
/// one factor, rendering its images and appending records. The twin factor
/// is chosen so the new combination is not already present.
inline DatasetManifest make_hard_pairs(const DatasetManifest& manifest, double fraction,
                                       const GenerateOptions& opt, const std::string& out_dir) {
    if (fraction < 0.0 || fraction > 1.0) throw argument_error("make_hard_pairs: fraction must be in [0,1]");
    DatasetManifest out = manifest;
    if (fraction == 0.0) return out;

    // reconstruct unique products from the manifest
    std::vector<GarmentSpec> specs;
    std::set<std::string> seen_products;
    std::set<std::vector<std::string>> seen_combos;
    for (const auto& r : manifest.records) {
        if (!seen_products.insert(r.product_id).second) continue;
        specs.push_back(GarmentSpec::from_tokens(r.attributes, r.product_id));
        seen_combos.insert(r.attributes);
    }

    const int n_twins = static_cast<int>(std::ceil(fraction * static_cast<double>(specs.size())));
    Rng rng(derive_seed(opt.seed, "hard_pairs"));
    std::vector<std::size_t> order(specs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<GarmentSpec> twins;
    for (int i = 0; i < n_twins && i < static_cast<int>(specs.size()); ++i) {
        const GarmentSpec& base = specs[order[static_cast<std::size_t>(i)]];
        std::vector<int> factors = {0, 1, 2, 3, 4};
        std::shuffle(factors.begin(), factors.end(), rng);
        for (int f : factors) {
            GarmentSpec twin = base;
            const int counts[5] = {3, 4, 8, 2, 2};
            int* fields[5] = {&twin.silhouette, &twin.pattern, &twin.color, &twin.collar, &twin.sleeve};
            bool placed = false;
            for (int shift = 1; shift < counts[f]; ++shift) {
                *fields[f] = (*fields[f] + 1) % counts[f];
                if (seen_combos.insert(twin.tokens()).second) {
                    placed = true;
                    break;
                }
            }
            if (placed) {
                twin.product_id = base.product_id + "h";
                twins.push_back(twin);
                break;
            }
        }
    }

    render_product_images(twins, opt, out_dir, out);
    save_manifest(out_dir + "/manifest.tsv", out);
    return out;
}

} // namespace dmch::synth
