#pragma once

// Raster file I/O: 8-bit PNG (RGB / grey), binary PPM (P6), 16-bit grey PNG for
// label maps, and a raw little-endian float map format.

#include "salient/imgcore.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace salient {

namespace io_detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

struct FileCloser {
    void operator()(std::FILE* f) const noexcept
    {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode)
{
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f)
        throw IoError("cannot open '" + path.string() + "': " + std::strerror(errno));
    return f;
}

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const void* data, std::size_t n)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write '" + path.string() + "'");
    out.write(static_cast<const char*>(data), std::streamsize(n));
    if (!out)
        throw IoError("write failed for '" + path.string() + "'");
}

/// Decoded raster: 8- or 16-bit samples, 1 or 3 channels.
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;
};

inline void png_error_fn(png_structp png, png_const_charp msg)
{
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    *err = msg;
    png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

inline Raster decode_png(const std::filesystem::path& path, bool allow16)
{
    auto file = open_file(path, "rb");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    Raster r;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("PNG decode error in '" + path.string() + "': " + err);
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int type = png_get_color_type(png, info);
    if (depth == 16 && !allow16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("'" + path.string() + "': 16-bit PNG not supported (8-bit only)");
    }
    if (type == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (type == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    if (type & PNG_COLOR_MASK_ALPHA)
        png_set_strip_alpha(png);
    if (depth == 16)
        png_set_swap(png);
    png_read_update_info(png, info);
    r.width = int(png_get_image_width(png, info));
    r.height = int(png_get_image_height(png, info));
    r.channels = int(png_get_channels(png, info));
    r.bit_depth = depth == 16 ? 16 : 8;
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * r.height);
    rows.resize(r.height);
    for (int y = 0; y < r.height; ++y)
        rows[y] = buffer.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (r.channels != 1 && r.channels != 3)
        throw FormatError("'" + path.string() + "': unsupported PNG channel layout");
    r.samples.resize(std::size_t(r.width) * r.height * r.channels);
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        if (r.bit_depth == 16) {
            std::uint16_t v;
            std::memcpy(&v, buffer.data() + 2 * i, 2);
            r.samples[i] = v;
        } else {
            r.samples[i] = buffer[i];
        }
    }
    return r;
}

inline void encode_png(const std::filesystem::path& path, int width, int height, int channels, int depth,
                       const std::vector<std::uint8_t>& bytes)
{
    auto file = open_file(path, "wb");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode error for '" + path.string() + "': " + err);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), depth,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (depth == 16)
        png_set_swap(png);
    const std::size_t rowbytes = std::size_t(width) * channels * (depth / 8);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + rowbytes * y));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Raster decode_ppm(const std::filesystem::path& path)
{
    auto bytes = read_all(path);
    std::size_t pos = 2;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n')
                    ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&] {
        skip_ws();
        long v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            any = true;
            if (v > 1 << 20)
                break;
        }
        if (!any)
            throw FormatError("'" + path.string() + "': malformed PPM header");
        return int(v);
    };
    Raster r;
    r.width = read_int();
    r.height = read_int();
    int maxval = read_int();
    if (maxval != 255)
        throw FormatError("'" + path.string() + "': only 8-bit PPM (maxval 255) supported");
    ++pos; // single whitespace after maxval
    r.channels = 3;
    const std::size_t n = std::size_t(r.width) * r.height * 3;
    if (r.width < 1 || r.height < 1 || bytes.size() < pos + n)
        throw FormatError("'" + path.string() + "': truncated PPM data");
    r.samples.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + n));
    return r;
}

enum class RasterKind { Png, Ppm, Unknown };

inline RasterKind sniff(const std::filesystem::path& path)
{
    auto file = open_file(path, "rb");
    unsigned char head[8] = {};
    std::size_t n = std::fread(head, 1, 8, file.get());
    if (n == 8 && png_sig_cmp(head, 0, 8) == 0)
        return RasterKind::Png;
    if (n >= 2 && head[0] == 'P' && head[1] == '6')
        return RasterKind::Ppm;
    return RasterKind::Unknown;
}

inline Raster decode(const std::filesystem::path& path)
{
    switch (sniff(path)) {
    case RasterKind::Png:
        return decode_png(path, false);
    case RasterKind::Ppm:
        return decode_ppm(path);
    default:
        throw FormatError("'" + path.string() + "': unsupported raster format (PNG or P6 PPM expected)");
    }
}

inline std::uint8_t to_byte(float v) noexcept
{
    return std::uint8_t(std::floor(std::clamp(double(v), 0.0, 1.0) * 255.0 + 0.5));
}

} // namespace io_detail

inline ImageRGB load_image(const std::filesystem::path& path)
{
    auto r = io_detail::decode(path);
    ImageRGB img(r.width, r.height);
    for (std::size_t i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c)
            img.data[3 * i + c] = float(r.samples[r.channels == 3 ? 3 * i + c : i] / 255.0);
    return img;
}

/// Writes PNG, or P6 PPM when the extension is .ppm.
inline void save_image(const ImageRGB& image, const std::filesystem::path& path)
{
    std::vector<std::uint8_t> bytes(image.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = io_detail::to_byte(image.data[i]);
    if (path.extension() == ".ppm") {
        std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
        std::vector<std::uint8_t> all(header.begin(), header.end());
        all.insert(all.end(), bytes.begin(), bytes.end());
        io_detail::write_all(path, all.data(), all.size());
        return;
    }
    io_detail::encode_png(path, image.width, image.height, 3, 8, bytes);
}

/// Masks are 0/255 grey; thresholded at 128 (colour inputs use the first channel).
inline LabelMask load_mask(const std::filesystem::path& path)
{
    auto r = io_detail::decode(path);
    LabelMask m(r.width, r.height);
    for (std::size_t i = 0; i < m.pixel_count(); ++i)
        m.bits[i] = r.samples[i * r.channels] >= 128 ? 1 : 0;
    return m;
}

inline void save_mask(const LabelMask& mask, const std::filesystem::path& path)
{
    std::vector<std::uint8_t> bytes(mask.bits.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = mask.bits[i] ? 255 : 0;
    io_detail::encode_png(path, mask.width, mask.height, 1, 8, bytes);
}

/// 8-bit grey PNG, value = round-half-up(255 v).
inline void save_map(const SaliencyMap& map, const std::filesystem::path& path)
{
    std::vector<std::uint8_t> bytes(map.values.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = io_detail::to_byte(map.values[i]);
    io_detail::encode_png(path, map.width, map.height, 1, 8, bytes);
}

inline SaliencyMap load_map(const std::filesystem::path& path)
{
    auto r = io_detail::decode(path);
    SaliencyMap m(r.width, r.height);
    for (std::size_t i = 0; i < m.pixel_count(); ++i)
        m.values[i] = float(r.samples[i * r.channels] / 255.0);
    return m;
}

/// 16-bit grey PNG of integer labels (superpixel ids).
inline void save_labels16(const std::vector<std::int32_t>& labels, int width, int height,
                          const std::filesystem::path& path)
{
    std::vector<std::uint8_t> bytes(labels.size() * 2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] > 65535)
            throw ContractError("save_labels16: label out of 16-bit range");
        auto v = std::uint16_t(labels[i]);
        std::memcpy(bytes.data() + 2 * i, &v, 2);
    }
    io_detail::encode_png(path, width, height, 1, 16, bytes);
}

inline std::vector<std::int32_t> load_labels16(const std::filesystem::path& path, int& width, int& height)
{
    if (io_detail::sniff(path) != io_detail::RasterKind::Png)
        throw FormatError("'" + path.string() + "': label map must be PNG");
    auto r = io_detail::decode_png(path, true);
    if (r.channels != 1)
        throw FormatError("'" + path.string() + "': label map must be single-channel");
    width = r.width;
    height = r.height;
    return {r.samples.begin(), r.samples.end()};
}

// ---------------------------------------------------------------------------
// Raw float map: "SMAP" | u32 width | u32 height | width*height f32, little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kRawMapMagic[4] = {'S', 'M', 'A', 'P'};

inline void save_raw_map(const SaliencyMap& map, const std::filesystem::path& path)
{
    std::vector<std::uint8_t> bytes(12 + map.values.size() * 4);
    std::memcpy(bytes.data(), kRawMapMagic, 4);
    auto w = std::uint32_t(map.width), h = std::uint32_t(map.height);
    std::memcpy(bytes.data() + 4, &w, 4);
    std::memcpy(bytes.data() + 8, &h, 4);
    std::memcpy(bytes.data() + 12, map.values.data(), map.values.size() * 4);
    io_detail::write_all(path, bytes.data(), bytes.size());
}

inline SaliencyMap load_raw_map(const std::filesystem::path& path)
{
    auto bytes = io_detail::read_all(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kRawMapMagic, 4) != 0)
        throw FormatError("'" + path.string() + "': not a raw float map (bad magic)");
    std::uint32_t w, h;
    std::memcpy(&w, bytes.data() + 4, 4);
    std::memcpy(&h, bytes.data() + 8, 4);
    if (w == 0 || h == 0 || bytes.size() != 12 + std::size_t(w) * h * 4)
        throw FormatError("'" + path.string() + "': raw float map size does not match header");
    SaliencyMap m(static_cast<int>(w), static_cast<int>(h));
    std::memcpy(m.values.data(), bytes.data() + 12, m.values.size() * 4);
    return m;
}

/// Loads either format, by magic.
inline SaliencyMap load_any_map(const std::filesystem::path& path)
{
    {
        auto f = io_detail::open_file(path, "rb");
        char head[4] = {};
        if (std::fread(head, 1, 4, f.get()) == 4 && std::memcmp(head, kRawMapMagic, 4) == 0)
            return load_raw_map(path);
    }
    return load_map(path);
}

} // namespace salient
