#include "synb/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace synb {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

std::vector<std::uint8_t> png_encode(const Image8& img) {
    if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3))
        throw std::runtime_error("png_encode: need positive size and 1 or 3 channels");
    if (img.pixels.size() !=
        static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw std::runtime_error("png_encode: pixel buffer size mismatch");

    // raw scanlines, each prefixed with filter byte 0
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.pixels.begin() + y * stride, img.pixels.begin() + (y + 1) * stride);
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_cap);
    if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png_encode: zlib compression failed");
    comp.resize(comp_cap);

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                  // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 0);          // color type
    ihdr.push_back(0);                                  // compression
    ihdr.push_back(0);                                  // filter
    ihdr.push_back(0);                                  // interlace

    std::vector<std::uint8_t> out(kSignature, kSignature + 8);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});
    return out;
}

void png_write(const std::string& path, const Image8& img) {
    auto bytes = png_encode(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png_write: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("png_write: write failed for " + path);
}

Image8 png_decode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw std::runtime_error("png_decode: bad signature");

    int width = 0, height = 0, src_channels = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= bytes.size() && !saw_iend) {
        const std::uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png_decode: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("png_decode: bad IHDR");
            width = static_cast<int>(get_u32(data));
            height = static_cast<int>(get_u32(data + 4));
            const int depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8) throw std::runtime_error("png_decode: only 8-bit depth supported");
            if (interlace != 0) throw std::runtime_error("png_decode: interlaced PNG unsupported");
            switch (color) {
                case 0: src_channels = 1; break;
                case 2: src_channels = 3; break;
                case 6: src_channels = 4; break;
                default: throw std::runtime_error("png_decode: unsupported color type");
            }
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || width <= 0 || height <= 0)
        throw std::runtime_error("png_decode: missing IHDR/IEND");

    const std::size_t stride = static_cast<std::size_t>(width) * src_channels;
    uLongf raw_len = static_cast<uLongf>((stride + 1) * height);
    std::vector<std::uint8_t> raw(raw_len);
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != (stride + 1) * static_cast<std::size_t>(height))
        throw std::runtime_error("png_decode: zlib inflate failed");

    // undo scanline filters in place into `pix`
    std::vector<std::uint8_t> pix(stride * height);
    const int bpp = src_channels;
    for (int y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
        std::uint8_t* cur = pix.data() + y * stride;
        const std::uint8_t* up = y > 0 ? pix.data() + (y - 1) * stride : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<std::size_t>(bpp) ? cur[x - bpp] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= static_cast<std::size_t>(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw std::runtime_error("png_decode: bad filter byte");
            }
            cur[x] = static_cast<std::uint8_t>(v & 0xff);
        }
    }

    Image8 out;
    out.width = width;
    out.height = height;
    out.channels = src_channels == 1 ? 1 : 3;
    if (src_channels == 4) {
        out.pixels.resize(static_cast<std::size_t>(width) * height * 3);
        for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i)
            for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = pix[i * 4 + c];
    } else {
        out.pixels = std::move(pix);
    }
    return out;
}

Image8 png_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png_read: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return png_decode(bytes);
}

}  // namespace synb
