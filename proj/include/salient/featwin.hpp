#pragma once

// Nested feature windows (region box A, neighbourhood box B, full image C), masking,
// warping, the feature extractor interface and the S3FV feature file format.

#include "salient/segment.hpp"

#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace salient {

/// Inclusive integer pixel rectangle.
struct Rect {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

    int width() const noexcept { return x1 - x0 + 1; }
    int height() const noexcept { return y1 - y0 + 1; }
    long area() const noexcept { return long(width()) * height(); }
    bool contains(const Rect& o) const noexcept { return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1; }
    friend bool operator==(const Rect&, const Rect&) = default;
};

struct WindowTriplet {
    Rect rect_a;                       ///< tight box of the region
    Rect rect_b;                       ///< tight box of the region and its level neighbours
    Rect rect_c;                       ///< whole image
    std::vector<std::uint8_t> mask_a;  ///< in-region flags over rect_a, row-major
    std::vector<std::uint8_t> mask_c;  ///< in-region flags over the image
};

using Pixel = std::array<float, 3>;

inline WindowTriplet windows_for_region(const SegmentationHierarchy& hier, const LevelIndex& index, int region)
{
    if (region < 0 || region >= index.region_count)
        throw ContractError("windows_for_region: region " + std::to_string(region) + " out of range");
    const auto& px = index.pixels[region];
    if (px.empty())
        throw ContractError("windows_for_region: region " + std::to_string(region) + " is empty");
    const int w = hier.base.width, h = hier.base.height;
    WindowTriplet t;
    const auto& ba = index.bbox[region];
    t.rect_a = {ba[0], ba[1], ba[2], ba[3]};
    t.rect_b = t.rect_a;
    for (int nb : index.neighbours[region]) {
        const auto& bb = index.bbox[nb];
        t.rect_b = {std::min(t.rect_b.x0, bb[0]), std::min(t.rect_b.y0, bb[1]), std::max(t.rect_b.x1, bb[2]),
                    std::max(t.rect_b.y1, bb[3])};
    }
    t.rect_b = {std::max(0, t.rect_b.x0), std::max(0, t.rect_b.y0), std::min(w - 1, t.rect_b.x1),
                std::min(h - 1, t.rect_b.y1)};
    t.rect_c = {0, 0, w - 1, h - 1};
    t.mask_a.assign(std::size_t(t.rect_a.area()), 0);
    t.mask_c.assign(std::size_t(w) * h, 0);
    for (int p : px) {
        int x = p % w, y = p / w;
        t.mask_c[p] = 1;
        t.mask_a[std::size_t(y - t.rect_a.y0) * t.rect_a.width() + (x - t.rect_a.x0)] = 1;
    }
    return t;
}

inline WindowTriplet windows_for_region(const SegmentationHierarchy& hier, int level, int region)
{
    return windows_for_region(hier, index_level(hier, level), region);
}

inline ImageRGB crop(const ImageRGB& image, const Rect& r)
{
    ImageRGB out(r.width(), r.height());
    for (int y = 0; y < r.height(); ++y)
        std::memcpy(&out.at(0, y, 0), image.data.data() + (std::size_t(r.y0 + y) * image.width + r.x0) * 3,
                    sizeof(float) * 3 * std::size_t(r.width()));
    return out;
}

/// Crop of rect_a with out-of-region pixels replaced by mean_pixel.
inline ImageRGB render_window_a(const ImageRGB& image, const WindowTriplet& t, const Pixel& mean_pixel)
{
    ImageRGB out = crop(image, t.rect_a);
    for (std::size_t i = 0; i < out.pixel_count(); ++i)
        if (!t.mask_a[i])
            for (int c = 0; c < 3; ++c)
                out.data[3 * i + c] = mean_pixel[c];
    return out;
}

inline ImageRGB render_window_b(const ImageRGB& image, const WindowTriplet& t)
{
    return crop(image, t.rect_b);
}

/// Whole image with the region's own pixels replaced by mean_pixel.
inline ImageRGB render_window_c(const ImageRGB& image, const WindowTriplet& t, const Pixel& mean_pixel)
{
    ImageRGB out = image;
    for (std::size_t i = 0; i < out.pixel_count(); ++i)
        if (t.mask_c[i])
            for (int c = 0; c < 3; ++c)
                out.data[3 * i + c] = mean_pixel[c];
    return out;
}

/// Bilinear resample to side x side (pixel-centre aligned; aspect ratio not kept).
inline ImageRGB warp(const ImageRGB& patch, int side)
{
    if (side < 8)
        throw ParameterError("warp: side must be >= 8");
    ImageRGB out(side, side);
    const double sx = double(patch.width) / side, sy = double(patch.height) / side;
    std::vector<int> x0(side), x1(side);
    std::vector<double> fx(side);
    for (int x = 0; x < side; ++x) {
        double s = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(patch.width - 1));
        x0[x] = int(s);
        x1[x] = std::min(x0[x] + 1, patch.width - 1);
        fx[x] = s - x0[x];
    }
    for (int y = 0; y < side; ++y) {
        double s = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(patch.height - 1));
        int y0 = int(s), y1 = std::min(y0 + 1, patch.height - 1);
        double fy = s - y0;
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c) {
                double top = patch.at(x0[x], y0, c) * (1.0 - fx[x]) + patch.at(x1[x], y0, c) * fx[x];
                double bot = patch.at(x0[x], y1, c) * (1.0 - fx[x]) + patch.at(x1[x], y1, c) * fx[x];
                out.at(x, y, c) = float(top * (1.0 - fy) + bot * fy);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extractors
// ---------------------------------------------------------------------------

/// Maps a warped square RGB patch to a fixed-length descriptor. Implementations must be
/// stateless: extract() is called concurrently.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual int dimension() const = 0;
    virtual int side() const = 0;
    virtual std::vector<float> extract(const ImageRGB& patch) const = 0;
};

/// Per-channel mean colour (D = 3); a minimal extractor for tests and debugging.
class MeanColorExtractor final : public FeatureExtractor {
public:
    explicit MeanColorExtractor(int side = 8) : side_(side) {}
    std::string name() const override { return "meancolor/1"; }
    int dimension() const override { return 3; }
    int side() const override { return side_; }
    std::vector<float> extract(const ImageRGB& patch) const override
    {
        std::array<double, 3> sum{};
        for (std::size_t i = 0; i < patch.pixel_count(); ++i)
            for (int c = 0; c < 3; ++c)
                sum[c] += patch.data[3 * i + c];
        std::vector<float> out(3);
        for (int c = 0; c < 3; ++c)
            out[c] = float(sum[c] / double(patch.pixel_count()));
        return out;
    }

private:
    int side_;
};

namespace descriptor_detail {
constexpr int kGrid = 3;
constexpr int kColorBins = 8;
constexpr int kOrientationBins = 16;
constexpr int kDimension = kGrid * kGrid * 3 + kColorBins * kColorBins * kColorBins + kOrientationBins;

/// Cell boundaries round(i * n / 3); symmetric under reversal so rotations permute cells.
inline std::array<int, kGrid + 1> cell_edges(int n)
{
    std::array<int, kGrid + 1> e{};
    for (int i = 0; i <= kGrid; ++i)
        e[i] = int(std::lround(double(i) * n / kGrid));
    return e;
}
} // namespace descriptor_detail

/// Handcrafted stand-in for deep features, D = 555:
///   [0, 27)    3x3 grid of mean Lab, row-major cells, (L, a, b) per cell
///   [27, 539)  8x8x8 joint RGB histogram, L1-normalised, index (r*8 + g)*8 + b
///   [539, 555) 16-bin gradient orientation histogram of luma, magnitude-weighted, L1-normalised
inline std::vector<float> builtin_descriptor(const ImageRGB& patch)
{
    using namespace descriptor_detail;
    if (patch.width != patch.height || patch.width < 1)
        throw ContractError("builtin_descriptor: square patch required");
    const int n = patch.width;
    std::vector<float> out(kDimension, 0.0f);

    const auto edges = cell_edges(n);
    std::vector<int> cell_index(n);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < kGrid; ++c)
            if (i >= edges[c] && i < edges[c + 1])
                cell_index[i] = c;

    std::array<double, kGrid * kGrid * 3> grid{};
    std::array<int, kGrid * kGrid> grid_count{};
    std::vector<double> hist(kColorBins * kColorBins * kColorBins, 0.0);
    std::vector<double> luma(std::size_t(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double r = patch.at(x, y, 0), g = patch.at(x, y, 1), b = patch.at(x, y, 2);
            Lab lab = rgb_to_lab_fast(r, g, b);
            int cell = cell_index[y] * kGrid + cell_index[x];
            for (int c = 0; c < 3; ++c)
                grid[cell * 3 + c] += lab[c];
            ++grid_count[cell];
            auto bin = [](double v) { return std::clamp(int(v * kColorBins), 0, kColorBins - 1); };
            hist[(bin(r) * kColorBins + bin(g)) * kColorBins + bin(b)] += 1.0;
            luma[std::size_t(y) * n + x] = 0.299 * r + 0.587 * g + 0.114 * b;
        }
    for (int cell = 0; cell < kGrid * kGrid; ++cell)
        for (int c = 0; c < 3; ++c)
            out[cell * 3 + c] = grid_count[cell] ? float(grid[cell * 3 + c] / grid_count[cell]) : 0.0f;
    const double total = double(n) * n;
    for (std::size_t b = 0; b < hist.size(); ++b)
        out[27 + b] = float(hist[b] / total);

    std::array<double, kOrientationBins> orient{};
    auto L = [&](int x, int y) { return luma[std::size_t(std::clamp(y, 0, n - 1)) * n + std::clamp(x, 0, n - 1)]; };
    double mass = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double gx = 0.5 * (L(x + 1, y) - L(x - 1, y));
            double gy = 0.5 * (L(x, y + 1) - L(x, y - 1));
            double m = std::hypot(gx, gy);
            if (m <= 1e-12)
                continue;
            double angle = std::atan2(gy, gx);
            if (angle < 0)
                angle += 2.0 * M_PI;
            int bin = std::min(kOrientationBins - 1, int(angle / (2.0 * M_PI) * kOrientationBins));
            orient[bin] += m;
            mass += m;
        }
    if (mass > 0.0)
        for (int b = 0; b < kOrientationBins; ++b)
            out[27 + 512 + b] = float(orient[b] / mass);
    return out;
}

class BuiltinExtractor final : public FeatureExtractor {
public:
    explicit BuiltinExtractor(int side = 64) : side_(side) {}
    std::string name() const override { return "builtin/1"; }
    int dimension() const override { return descriptor_detail::kDimension; }
    int side() const override { return side_; }
    std::vector<float> extract(const ImageRGB& patch) const override { return builtin_descriptor(patch); }

private:
    int side_;
};

// ---------------------------------------------------------------------------
// Feature records
// ---------------------------------------------------------------------------

struct FeatureRecord {
    int level = 0;
    int region = 0;
    std::vector<float> vec;   ///< blocks A, B, C in order, each of length D
    std::string extractor;

    friend bool operator==(const FeatureRecord& l, const FeatureRecord& r)
    {
        return l.level == r.level && l.region == r.region && l.vec == r.vec;
    }
};

/// Which window blocks of an S-3 vector to keep (for component-wise comparisons).
enum class BlockSet { ABC, A, B, C, AB, AC };

inline BlockSet parse_block_set(const std::string& s)
{
    if (s == "ABC") return BlockSet::ABC;
    if (s == "A") return BlockSet::A;
    if (s == "B") return BlockSet::B;
    if (s == "C") return BlockSet::C;
    if (s == "AB") return BlockSet::AB;
    if (s == "AC") return BlockSet::AC;
    throw ParameterError("unknown feature block set '" + s + "' (ABC, A, B, C, AB, AC)");
}

inline std::string to_string(BlockSet b)
{
    switch (b) {
    case BlockSet::ABC: return "ABC";
    case BlockSet::A: return "A";
    case BlockSet::B: return "B";
    case BlockSet::C: return "C";
    case BlockSet::AB: return "AB";
    default: return "AC";
    }
}

inline std::vector<float> select_blocks(const std::vector<float>& vec, BlockSet blocks)
{
    if (blocks == BlockSet::ABC)
        return vec;
    if (vec.size() % 3 != 0)
        throw ContractError("select_blocks: vector length not divisible by 3");
    const std::size_t d = vec.size() / 3;
    auto block = [&](int i) { return std::vector<float>(vec.begin() + std::ptrdiff_t(i * d), vec.begin() + std::ptrdiff_t((i + 1) * d)); };
    std::vector<int> keep;
    switch (blocks) {
    case BlockSet::A: keep = {0}; break;
    case BlockSet::B: keep = {1}; break;
    case BlockSet::C: keep = {2}; break;
    case BlockSet::AB: keep = {0, 1}; break;
    default: keep = {0, 2}; break;
    }
    std::vector<float> out;
    for (int i : keep) {
        auto b = block(i);
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

/// concat(extractor(warp(A)), extractor(warp(B)), extractor(warp(C))).
inline FeatureRecord extract_s3(const ImageRGB& image, const SegmentationHierarchy& hier, const LevelIndex& index,
                                int region, const FeatureExtractor& extractor, const Pixel& mean_pixel)
{
    const auto t = windows_for_region(hier, index, region);
    const int side = extractor.side();
    const std::size_t d = std::size_t(extractor.dimension());
    FeatureRecord rec{index.level, region, {}, extractor.name()};
    rec.vec.reserve(3 * d);
    for (const ImageRGB& patch : {render_window_a(image, t, mean_pixel), render_window_b(image, t),
                                  render_window_c(image, t, mean_pixel)}) {
        auto v = extractor.extract(warp(patch, side));
        if (v.size() != d)
            throw ContractError("extract_s3: extractor '" + extractor.name() + "' returned " +
                                std::to_string(v.size()) + " values, declared " + std::to_string(d));
        rec.vec.insert(rec.vec.end(), v.begin(), v.end());
    }
    return rec;
}

inline FeatureRecord extract_s3(const ImageRGB& image, const SegmentationHierarchy& hier, int level, int region,
                                const FeatureExtractor& extractor, const Pixel& mean_pixel)
{
    return extract_s3(image, hier, index_level(hier, level), region, extractor, mean_pixel);
}

/// Every region at every level, level-major then region order.
inline std::vector<FeatureRecord> extract_all(const ImageRGB& image, const SegmentationHierarchy& hier,
                                              const FeatureExtractor& extractor, const Pixel& mean_pixel)
{
    require_same_size(image, hier.base, "extract_all");
    std::vector<FeatureRecord> out;
    for (int l = 0; l < hier.level_count(); ++l) {
        auto idx = index_level(hier, l);
        for (int r = 0; r < idx.region_count; ++r)
            out.push_back(extract_s3(image, hier, idx, r, extractor, mean_pixel));
    }
    return out;
}

// ---------------------------------------------------------------------------
// S3FV: "S3FV" | u32 D | u32 count | count x (u16 level | u32 region | 3D f32), little-endian
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[4] = {'S', '3', 'F', 'V'};

inline void save_features(const std::filesystem::path& path, int dimension, const std::vector<FeatureRecord>& records)
{
    std::vector<std::uint8_t> bytes(12);
    std::memcpy(bytes.data(), kFeatureMagic, 4);
    auto d = std::uint32_t(dimension), n = std::uint32_t(records.size());
    std::memcpy(bytes.data() + 4, &d, 4);
    std::memcpy(bytes.data() + 8, &n, 4);
    for (const auto& r : records) {
        if (r.vec.size() != 3 * std::size_t(dimension))
            throw ContractError("save_features: record length does not match 3*D");
        if (r.level < 0 || r.level > 65535)
            throw ContractError("save_features: level out of u16 range");
        std::size_t at = bytes.size();
        bytes.resize(at + 6 + r.vec.size() * 4);
        auto lv = std::uint16_t(r.level);
        auto rg = std::uint32_t(r.region);
        std::memcpy(bytes.data() + at, &lv, 2);
        std::memcpy(bytes.data() + at + 2, &rg, 4);
        std::memcpy(bytes.data() + at + 6, r.vec.data(), r.vec.size() * 4);
    }
    io_detail::write_all(path, bytes.data(), bytes.size());
}

/// Streaming reader; validates header eagerly and each record as it is read.
class FeatureReader {
public:
    explicit FeatureReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary)
    {
        if (!in_)
            throw IoError("cannot open '" + path.string() + "'");
        char magic[4];
        std::uint32_t d = 0, n = 0;
        read(magic, 4, "magic");
        if (std::memcmp(magic, kFeatureMagic, 4) != 0)
            throw FormatError(where(0) + "bad magic (expected S3FV)");
        read(&d, 4, "dimension");
        read(&n, 4, "record count");
        if (d == 0)
            throw FormatError(where(4) + "zero feature dimension");
        dimension_ = int(d);
        count_ = n;
    }

    int dimension() const noexcept { return dimension_; }
    std::uint32_t count() const noexcept { return count_; }

    std::optional<FeatureRecord> next()
    {
        if (read_ == count_)
            return std::nullopt;
        FeatureRecord rec;
        std::uint16_t lv;
        std::uint32_t rg;
        read(&lv, 2, "record level");
        read(&rg, 4, "record region");
        rec.level = lv;
        rec.region = int(rg);
        rec.vec.resize(3 * std::size_t(dimension_));
        read(rec.vec.data(), rec.vec.size() * 4, "record vector");
        for (std::size_t i = 0; i < rec.vec.size(); ++i)
            if (!std::isfinite(rec.vec[i]))
                throw DataError("'" + path_.string() + "': record " + std::to_string(read_) + " (level " +
                                std::to_string(lv) + ", region " + std::to_string(rg) +
                                ") has a non-finite entry at index " + std::to_string(i));
        ++read_;
        return rec;
    }

private:
    std::string where(std::uint64_t offset) const
    {
        return "'" + path_.string() + "' at byte offset " + std::to_string(offset) + ": ";
    }
    void read(void* dst, std::size_t n, const char* what)
    {
        const std::uint64_t offset = offset_;
        in_.read(static_cast<char*>(dst), std::streamsize(n));
        if (std::size_t(in_.gcount()) != n)
            throw FormatError(where(offset) + "truncated while reading " + what);
        offset_ += n;
    }

    std::filesystem::path path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
    int dimension_ = 0;
    std::uint32_t count_ = 0;
    std::uint32_t read_ = 0;
};

inline std::vector<FeatureRecord> load_features(const std::filesystem::path& path, int* dimension = nullptr)
{
    FeatureReader reader(path);
    if (dimension)
        *dimension = reader.dimension();
    std::vector<FeatureRecord> out;
    while (auto rec = reader.next())
        out.push_back(std::move(*rec));
    return out;
}

/// (level, region) -> record lookup.
class FeatureTable {
public:
    explicit FeatureTable(const std::vector<FeatureRecord>& records)
    {
        for (const auto& r : records)
            table_[{r.level, r.region}] = &r;
    }
    const FeatureRecord* find(int level, int region) const
    {
        auto it = table_.find({level, region});
        return it == table_.end() ? nullptr : it->second;
    }
    const FeatureRecord& at(int level, int region) const
    {
        if (auto* r = find(level, region))
            return *r;
        throw DataError("missing feature record for level " + std::to_string(level) + ", region " +
                        std::to_string(region));
    }

private:
    std::map<std::pair<int, int>, const FeatureRecord*> table_;
};

} // namespace salient
