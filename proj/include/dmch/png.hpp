#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dmch/errors.hpp"

// Self-contained PNG codec for the synthetic datasetImages. The writer emits
// 8-bit RGB with stored (uncompressed) deflate blocks; the reader implements
// full inflate (stored, fixed and dynamic Huffman) and all five scanline
// filters, so externally produced non-interlaced 8-bit RGB/RGBA files load
// too.

namespace dmch::png {

struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // row-major, 3 bytes per pixel
};

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0xFFFFFFFFu) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
    put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    std::uint32_t crc = crc32(out.data() + crc_start, out.size() - crc_start) ^ 0xFFFFFFFFu;
    put_u32_be(out, crc);
}

// --- inflate ---------------------------------------------------------------

class BitReader {
public:
    BitReader(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {}

    std::uint32_t bits(int n) {
        std::uint32_t v = 0;
        for (int i = 0; i < n; ++i) {
            if (pos_ >= len_) throw format_error("png: deflate stream truncated");
            v |= static_cast<std::uint32_t>((data_[pos_] >> bit_) & 1u) << i;
            if (++bit_ == 8) {
                bit_ = 0;
                ++pos_;
            }
        }
        return v;
    }

    void align_byte() {
        if (bit_ != 0) {
            bit_ = 0;
            ++pos_;
        }
    }

    const std::uint8_t* byte_ptr() const { return data_ + pos_; }
    std::size_t remaining() const { return len_ - pos_; }
    void skip_bytes(std::size_t n) { pos_ += n; }

private:
    const std::uint8_t* data_;
    std::size_t len_;
    std::size_t pos_ = 0;
    int bit_ = 0;
};

// Canonical Huffman decoder built from code lengths.
struct Huffman {
    std::array<int, 16> count{};          // codes per bit length
    std::vector<int> symbols;             // symbols sorted by (length, symbol)

    void build(const std::vector<int>& lengths) {
        count.fill(0);
        for (int l : lengths)
            if (l > 0) ++count[static_cast<std::size_t>(l)];
        symbols.assign(lengths.size(), 0);
        std::array<int, 16> offs{};
        for (int l = 1; l < 16; ++l) offs[static_cast<std::size_t>(l)] = offs[static_cast<std::size_t>(l - 1)] + count[static_cast<std::size_t>(l - 1)];
        for (std::size_t s = 0; s < lengths.size(); ++s)
            if (lengths[s] > 0) symbols[static_cast<std::size_t>(offs[static_cast<std::size_t>(lengths[s])]++)] = static_cast<int>(s);
    }

    int decode(BitReader& br) const {
        int code = 0, first = 0, index = 0;
        for (int len = 1; len < 16; ++len) {
            code |= static_cast<int>(br.bits(1));
            const int n = count[static_cast<std::size_t>(len)];
            if (code - first < n) return symbols[static_cast<std::size_t>(index + (code - first))];
            index += n;
            first = (first + n) << 1;
            code <<= 1;
        }
        throw format_error("png: invalid huffman code in deflate stream");
    }
};

inline std::vector<std::uint8_t> inflate(const std::uint8_t* data, std::size_t len) {
    static constexpr int kLenBase[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19,  23, 27,
                                         31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
    static constexpr int kLenExtra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                          2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
    static constexpr int kDistBase[30] = {1,    2,    3,    4,    5,    7,     9,     13,    17,   25,
                                          33,   49,   65,   97,   129,  193,   257,   385,   513,  769,
                                          1025, 1537, 2049, 3073, 4097, 6145,  8193,  12289, 16385, 24577};
    static constexpr int kDistExtra[30] = {0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4,  5,  5,  6,
                                           6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};
    static constexpr int kClOrder[19] = {16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15};

    BitReader br(data, len);
    std::vector<std::uint8_t> out;
    bool final_block = false;
    while (!final_block) {
        final_block = br.bits(1) != 0;
        const std::uint32_t btype = br.bits(2);
        if (btype == 0) { // stored
            br.align_byte();
            if (br.remaining() < 4) throw format_error("png: truncated stored block header");
            const std::uint8_t* p = br.byte_ptr();
            const std::uint32_t blen = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8);
            const std::uint32_t nlen = static_cast<std::uint32_t>(p[2]) | (static_cast<std::uint32_t>(p[3]) << 8);
            if ((blen ^ 0xFFFFu) != nlen) throw format_error("png: stored block length check failed");
            br.skip_bytes(4);
            if (br.remaining() < blen) throw format_error("png: truncated stored block");
            out.insert(out.end(), br.byte_ptr(), br.byte_ptr() + blen);
            br.skip_bytes(blen);
            continue;
        }
        if (btype == 3) throw format_error("png: reserved deflate block type");

        Huffman litlen, dist;
        if (btype == 1) { // fixed codes
            std::vector<int> ll(288);
            for (int i = 0; i < 144; ++i) ll[static_cast<std::size_t>(i)] = 8;
            for (int i = 144; i < 256; ++i) ll[static_cast<std::size_t>(i)] = 9;
            for (int i = 256; i < 280; ++i) ll[static_cast<std::size_t>(i)] = 7;
            for (int i = 280; i < 288; ++i) ll[static_cast<std::size_t>(i)] = 8;
            litlen.build(ll);
            dist.build(std::vector<int>(30, 5));
        } else { // dynamic codes
            const int hlit = static_cast<int>(br.bits(5)) + 257;
            const int hdist = static_cast<int>(br.bits(5)) + 1;
            const int hclen = static_cast<int>(br.bits(4)) + 4;
            std::vector<int> cl(19, 0);
            for (int i = 0; i < hclen; ++i) cl[static_cast<std::size_t>(kClOrder[i])] = static_cast<int>(br.bits(3));
            Huffman clh;
            clh.build(cl);
            std::vector<int> lengths;
            lengths.reserve(static_cast<std::size_t>(hlit + hdist));
            while (static_cast<int>(lengths.size()) < hlit + hdist) {
                const int sym = clh.decode(br);
                if (sym < 16) {
                    lengths.push_back(sym);
                } else if (sym == 16) {
                    if (lengths.empty()) throw format_error("png: repeat with no previous length");
                    const int n = 3 + static_cast<int>(br.bits(2));
                    lengths.insert(lengths.end(), static_cast<std::size_t>(n), lengths.back());
                } else if (sym == 17) {
                    lengths.insert(lengths.end(), static_cast<std::size_t>(3 + br.bits(3)), 0);
                } else {
                    lengths.insert(lengths.end(), static_cast<std::size_t>(11 + br.bits(7)), 0);
                }
            }
            if (static_cast<int>(lengths.size()) != hlit + hdist)
                throw format_error("png: code length overrun in dynamic block");
            litlen.build(std::vector<int>(lengths.begin(), lengths.begin() + hlit));
            dist.build(std::vector<int>(lengths.begin() + hlit, lengths.end()));
        }

        for (;;) {
            const int sym = litlen.decode(br);
            if (sym < 256) {
                out.push_back(static_cast<std::uint8_t>(sym));
            } else if (sym == 256) {
                break;
            } else {
                if (sym > 285) throw format_error("png: invalid length symbol");
                const int li = sym - 257;
                const int length = kLenBase[li] + static_cast<int>(br.bits(kLenExtra[li]));
                const int ds = dist.decode(br);
                if (ds > 29) throw format_error("png: invalid distance symbol");
                const int distance = kDistBase[ds] + static_cast<int>(br.bits(kDistExtra[ds]));
                if (distance > static_cast<int>(out.size())) throw format_error("png: distance beyond output");
                std::size_t from = out.size() - static_cast<std::size_t>(distance);
                for (int i = 0; i < length; ++i) out.push_back(out[from + static_cast<std::size_t>(i)]);
            }
        }
    }
    return out;
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace detail

inline std::vector<std::uint8_t> encode(const Rgb8Image& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3)
        throw argument_error("png encode: pixel buffer does not match dimensions");

    // raw scanlines, filter byte 0 per row
    const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(y) * stride;
        raw.insert(raw.end(), row, row + stride);
    }

    // zlib stream with stored deflate blocks
    std::vector<std::uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    std::size_t off = 0;
    while (off < raw.size()) {
        const std::size_t n = std::min<std::size_t>(65535, raw.size() - off);
        const bool last = off + n == raw.size();
        z.push_back(last ? 1 : 0);
        z.push_back(static_cast<std::uint8_t>(n & 0xFF));
        z.push_back(static_cast<std::uint8_t>(n >> 8));
        z.push_back(static_cast<std::uint8_t>(~n & 0xFF));
        z.push_back(static_cast<std::uint8_t>((~n >> 8) & 0xFF));
        z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(off), raw.begin() + static_cast<std::ptrdiff_t>(off + n));
        off += n;
    }
    detail::put_u32_be(z, detail::adler32(raw.data(), raw.size()));

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", z);
    detail::put_chunk(out, "IEND", {});
    return out;
}

inline Rgb8Image decode(const std::uint8_t* data, std::size_t len) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (len < 8 || std::memcmp(data, sig, 8) != 0) throw format_error("png: bad signature");

    std::size_t pos = 8;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    auto u32be = [&](std::size_t at) {
        return (static_cast<std::uint32_t>(data[at]) << 24) | (static_cast<std::uint32_t>(data[at + 1]) << 16) |
               (static_cast<std::uint32_t>(data[at + 2]) << 8) | static_cast<std::uint32_t>(data[at + 3]);
    };
    while (!saw_iend) {
        if (pos + 8 > len) throw format_error("png: truncated chunk header");
        const std::uint32_t clen = u32be(pos);
        if (pos + 12 + clen > len) throw format_error("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(data + pos + 4);
        const std::uint8_t* payload = data + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (clen != 13) throw format_error("png: bad IHDR length");
            width = static_cast<int>(u32be(pos + 8));
            height = static_cast<int>(u32be(pos + 12));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw format_error("png: interlaced images are not supported");
            if (bit_depth != 8 || (color_type != 2 && color_type != 6))
                throw format_error("png: only 8-bit RGB/RGBA supported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + clen);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + clen;
    }
    if (!saw_ihdr || idat.size() < 2) throw format_error("png: missing IHDR or IDAT");
    if ((idat[0] & 0x0F) != 8) throw format_error("png: unsupported zlib compression method");

    std::vector<std::uint8_t> raw = detail::inflate(idat.data() + 2, idat.size() - 2);
    const int bpp = color_type == 6 ? 4 : 3;
    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(bpp);
    if (raw.size() < (stride + 1) * static_cast<std::size_t>(height))
        throw format_error("png: decompressed data shorter than image");

    // undo scanline filters in place
    std::vector<std::uint8_t> prev(stride, 0);
    Rgb8Image img;
    img.width = width;
    img.height = height;
    img.pixels.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    std::vector<std::uint8_t> cur(stride);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* line = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        const int filter = line[0];
        for (std::size_t i = 0; i < stride; ++i) {
            const int x = line[1 + i];
            const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - static_cast<std::size_t>(bpp)] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - static_cast<std::size_t>(bpp)] : 0;
            int v;
            switch (filter) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + detail::paeth(a, b, c); break;
                default: throw format_error("png: unknown filter type " + std::to_string(filter));
            }
            cur[i] = static_cast<std::uint8_t>(v & 0xFF);
        }
        for (int px = 0; px < width; ++px)
            for (int ch = 0; ch < 3; ++ch)
                img.pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(px)) * 3 +
                           static_cast<std::size_t>(ch)] = cur[static_cast<std::size_t>(px) * static_cast<std::size_t>(bpp) + static_cast<std::size_t>(ch)];
        std::swap(prev, cur);
    }
    return img;
}

inline void write_file(const std::string& path, const Rgb8Image& img) {
    auto bytes = encode(img);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw io_error("write failure: " + path);
}

inline Rgb8Image read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode(bytes.data(), bytes.size());
}

} // namespace dmch::png
