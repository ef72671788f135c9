#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dmch/binio.hpp"
#include "dmch/errors.hpp"
#include "dmch/tensor.hpp"

// Parameter checkpoint file:
//   magic "DMCHCKPT", version u16, tensor count u32, then per tensor:
//   name (u16 length + UTF-8), rank u32, extents u32 LE each, values f64 LE.

namespace dmch {

constexpr const char* kCheckpointMagic = "DMCHCKPT";
constexpr std::uint16_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    write_le<std::uint16_t>(os, kCheckpointVersion);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_string(os, name);
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (int e : t.shape()) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
        for (double v : t.values()) write_f64(os, v);
    }
    if (!os) throw io_error("write failure on checkpoint: " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint: " + path);
    expect_magic(is, kCheckpointMagic, "checkpoint");
    const auto version = read_le<std::uint16_t>(is, "checkpoint version");
    if (version != kCheckpointVersion)
        throw format_error("unsupported checkpoint version " + std::to_string(version));
    const auto count = read_le<std::uint32_t>(is, "checkpoint tensor count");
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = read_string(is, "tensor name");
        const auto rank = read_le<std::uint32_t>(is, "tensor rank");
        if (rank > 8) throw format_error("implausible tensor rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<int>(read_le<std::uint32_t>(is, "tensor extent"));
        std::vector<double> values(numel(shape));
        for (auto& v : values) v = read_f64(is, "tensor values");
        out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    return out;
}

/// Copy checkpoint contents into an existing parameter set; every name must
/// resolve and every shape must match.
inline void restore_into(const NamedTensors& loaded, NamedTensors& params) {
    for (auto& [name, dst] : params) {
        bool found = false;
        for (const auto& [lname, src] : loaded) {
            if (lname != name) continue;
            if (src.shape() != dst.shape())
                throw config_error("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                                   " but the configured model expects " + shape_str(dst.shape()));
            dst.values() = src.values();
            found = true;
            break;
        }
        if (!found) throw config_error("checkpoint is missing tensor '" + name + "'");
    }
}

} // namespace dmch
