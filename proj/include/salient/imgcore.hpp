#pragma once

#include "salient/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace salient {

/// Row-major RGB raster, channels in [0,1]. Also used for warped patches.
struct ImageRGB {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    ImageRGB() = default;
    ImageRGB(int w, int h, float fill = 0.0f) : width(w), height(h), data(std::size_t(w) * h * 3, fill) {}

    std::size_t pixel_count() const noexcept { return std::size_t(width) * height; }
    float& at(int x, int y, int c) noexcept { return data[(std::size_t(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const noexcept { return data[(std::size_t(y) * width + x) * 3 + c]; }

    friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

/// Binary per-pixel annotation.
struct LabelMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    LabelMask() = default;
    LabelMask(int w, int h, std::uint8_t fill = 0) : width(w), height(h), bits(std::size_t(w) * h, fill) {}

    std::size_t pixel_count() const noexcept { return std::size_t(width) * height; }
    std::uint8_t& at(int x, int y) noexcept { return bits[std::size_t(y) * width + x]; }
    std::uint8_t at(int x, int y) const noexcept { return bits[std::size_t(y) * width + x]; }
    std::size_t count() const noexcept { return std::size_t(std::count(bits.begin(), bits.end(), std::uint8_t(1))); }

    friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// Per-pixel real scores; values in [0,1] once normalized.
struct SaliencyMap {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    SaliencyMap() = default;
    SaliencyMap(int w, int h, float fill = 0.0f) : width(w), height(h), values(std::size_t(w) * h, fill) {}

    std::size_t pixel_count() const noexcept { return std::size_t(width) * height; }
    float& at(int x, int y) noexcept { return values[std::size_t(y) * width + x]; }
    float at(int x, int y) const noexcept { return values[std::size_t(y) * width + x]; }

    friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;
};

using Lab = std::array<double, 3>;

/// CIELAB raster (D65 white), row-major triples.
struct LabImage {
    int width = 0;
    int height = 0;
    std::vector<Lab> data;

    const Lab& at(int x, int y) const noexcept { return data[std::size_t(y) * width + x]; }
};

template <class A, class B>
void require_same_size(const A& a, const B& b, const char* what)
{
    if (a.width != b.width || a.height != b.height)
        throw ContractError(std::string(what) + ": dimension mismatch (" + std::to_string(a.width) + "x" +
                            std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                            std::to_string(b.height) + ")");
}

// ---------------------------------------------------------------------------
// Color conversion (sRGB, D65)
// ---------------------------------------------------------------------------

namespace color_detail {
constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;
constexpr double kEpsilon = 216.0 / 24389.0;
constexpr double kKappa = 24389.0 / 27.0;

inline double srgb_to_linear(double v)
{
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double v)
{
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}
inline double lab_f(double t)
{
    return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}
inline double lab_f_inv(double f)
{
    double f3 = f * f * f;
    return f3 > kEpsilon ? f3 : (116.0 * f - 16.0) / kKappa;
}
} // namespace color_detail

inline Lab rgb_to_lab(double r, double g, double b)
{
    using namespace color_detail;
    double rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
    double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    double fx = lab_f(x / kXn), fy = lab_f(y / kYn), fz = lab_f(z / kZn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline std::array<double, 3> lab_to_rgb(const Lab& lab)
{
    using namespace color_detail;
    double fy = (lab[0] + 16.0) / 116.0;
    double fx = fy + lab[1] / 500.0;
    double fz = fy - lab[2] / 200.0;
    double x = kXn * lab_f_inv(fx), y = kYn * lab_f_inv(fy), z = kZn * lab_f_inv(fz);
    double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    return {linear_to_srgb(rl), linear_to_srgb(gl), linear_to_srgb(bl)};
}

namespace color_detail {
/// sRGB decoding by table lookup with linear interpolation (abs. error < 1e-7 on [0,1]).
inline double srgb_to_linear_table(double v)
{
    constexpr int kSize = 4096;
    static const std::array<double, kSize + 1> table = [] {
        std::array<double, kSize + 1> t{};
        for (int i = 0; i <= kSize; ++i)
            t[i] = srgb_to_linear(double(i) / kSize);
        return t;
    }();
    double s = std::clamp(v, 0.0, 1.0) * kSize;
    int i = std::min(int(s), kSize - 1);
    double f = s - i;
    return table[i] + f * (table[i + 1] - table[i]);
}
} // namespace color_detail

/// Table-driven variant of rgb_to_lab for bulk descriptor work; inputs clamped to [0,1].
inline Lab rgb_to_lab_fast(double r, double g, double b)
{
    using namespace color_detail;
    double rl = srgb_to_linear_table(r), gl = srgb_to_linear_table(g), bl = srgb_to_linear_table(b);
    double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    double fx = lab_f(x / kXn), fy = lab_f(y / kYn), fz = lab_f(z / kZn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline LabImage rgb_to_lab(const ImageRGB& image)
{
    LabImage out{image.width, image.height, {}};
    out.data.resize(image.pixel_count());
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = rgb_to_lab(image.data[3 * i], image.data[3 * i + 1], image.data[3 * i + 2]);
    return out;
}

// ---------------------------------------------------------------------------
// Deterministic random numbers
// ---------------------------------------------------------------------------

/// splitmix64-seeded xoshiro256**. Distribution helpers are defined here rather
/// than through <random> so that sequences are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed)
    {
        for (auto& s : state_) {
            seed += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = seed;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    std::uint64_t next() noexcept
    {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0,1).
    double uniform() noexcept { return double(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next() % n; }

    template <class T>
    void shuffle(std::vector<T>& v) noexcept
    {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[below(i)]);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> state_{};
};

// ---------------------------------------------------------------------------
// Synthetic shape corpus
// ---------------------------------------------------------------------------

enum class ShapeKind { Mixed, Square, Disk, Ellipse, Rectangle };

struct SyntheticSpec {
    int width = 96;
    int height = 72;
    int shapes = 1;                   ///< 1..3 disjoint objects
    ShapeKind kind = ShapeKind::Mixed;
    bool centered = false;            ///< first shape centred in the frame
    bool touch_border = false;        ///< first shape pinned to a random image edge
    double contrast = 1.0;            ///< 0 = object colour equals background, 1 = fully saturated object
    double texture = 0.03;            ///< amplitude of per-pixel and periodic background texture
    double min_extent = 0.25;         ///< shape extent as a fraction of min(width, height)
    double max_extent = 0.45;
    int distractors = 0;              ///< dull non-salient background blobs (not in the mask)
};

struct SyntheticSample {
    ImageRGB image;
    LabelMask mask;
};

namespace synth_detail {

struct Shape {
    ShapeKind kind;
    double cx, cy, rx, ry;
    std::array<double, 3> color;

    bool contains(double px, double py) const noexcept
    {
        double dx = (px - cx) / rx, dy = (py - cy) / ry;
        if (kind == ShapeKind::Disk || kind == ShapeKind::Ellipse)
            return dx * dx + dy * dy <= 1.0;
        return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
    }
};

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v)
{
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    std::array<double, 3> rgb{};
    int sector = std::min(5, int(hp));
    switch (sector) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
    }
    double m = v - c;
    for (auto& ch : rgb)
        ch += m;
    return rgb;
}

inline float quantize8(double v)
{
    double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    return float(q / 255.0);
}

} // namespace synth_detail

/// Renders 1-3 disjoint shapes over a low-saturation textured background.
/// Pure function of (seed, spec); channel values are exact multiples of 1/255.
inline SyntheticSample gen_synthetic(std::uint64_t seed, const SyntheticSpec& spec)
{
    using namespace synth_detail;
    if (spec.width < 8 || spec.height < 8)
        throw ParameterError("gen_synthetic: image must be at least 8x8");
    if (spec.shapes < 1 || spec.shapes > 3)
        throw ParameterError("gen_synthetic: shape count must be 1..3");
    if (!(spec.min_extent > 0.0) || spec.min_extent > spec.max_extent)
        throw ParameterError("gen_synthetic: invalid extent range");
    if (spec.max_extent > 1.0)
        throw ParameterError("gen_synthetic: shape larger than image");
    if (spec.contrast < 0.0 || spec.contrast > 1.0 || spec.texture < 0.0)
        throw ParameterError("gen_synthetic: contrast must be in [0,1] and texture >= 0");
    if (spec.distractors < 0)
        throw ParameterError("gen_synthetic: distractors must be >= 0");

    Rng rng(seed);
    const double side = std::min(spec.width, spec.height);
    const int gap = 3;

    // Background: tinted grey with a linear ramp.
    const double grey = rng.uniform(0.3, 0.7);
    std::array<double, 3> bg{};
    for (auto& c : bg)
        c = grey + rng.uniform(-0.06, 0.06);
    const double ramp_angle = rng.uniform(0.0, 2.0 * M_PI);
    const double ramp = rng.uniform(0.0, 0.1);
    const double wave_fx = rng.uniform(0.15, 0.5), wave_fy = rng.uniform(0.15, 0.5);
    const double wave_phase = rng.uniform(0.0, 2.0 * M_PI);

    std::vector<Shape> shapes;
    int attempts = 0;
    while (int(shapes.size()) < spec.shapes) {
        if (++attempts > 500)
            throw ParameterError("gen_synthetic: cannot place " + std::to_string(spec.shapes) +
                                 " disjoint shapes of the requested size");
        Shape s{};
        s.kind = spec.kind;
        if (s.kind == ShapeKind::Mixed)
            s.kind = ShapeKind(1 + rng.below(4));
        double extent = rng.uniform(spec.min_extent, spec.max_extent) * side;
        s.rx = s.ry = 0.5 * extent;
        if (s.kind == ShapeKind::Ellipse || s.kind == ShapeKind::Rectangle) {
            double aspect = rng.uniform(0.55, 0.9);
            if (rng.below(2))
                s.rx *= aspect;
            else
                s.ry *= aspect;
        }
        if (2.0 * s.rx + 2 > spec.width || 2.0 * s.ry + 2 > spec.height)
            throw ParameterError("gen_synthetic: shape larger than image");
        const bool first = shapes.empty();
        if (first && spec.centered) {
            s.cx = 0.5 * spec.width - 0.5;
            s.cy = 0.5 * spec.height - 0.5;
        } else {
            s.cx = rng.uniform(s.rx + 1, spec.width - 2 - s.rx);
            s.cy = rng.uniform(s.ry + 1, spec.height - 2 - s.ry);
        }
        if (first && spec.touch_border) {
            switch (rng.below(4)) {
            case 0: s.cx = s.rx * 0.6; break;
            case 1: s.cx = spec.width - 1 - s.rx * 0.6; break;
            case 2: s.cy = s.ry * 0.6; break;
            default: s.cy = spec.height - 1 - s.ry * 0.6; break;
            }
        }
        bool clear = true;
        for (const auto& o : shapes) {
            bool sep_x = s.cx + s.rx + gap < o.cx - o.rx || o.cx + o.rx + gap < s.cx - s.rx;
            bool sep_y = s.cy + s.ry + gap < o.cy - o.ry || o.cy + o.ry + gap < s.cy - s.ry;
            if (!sep_x && !sep_y) {
                clear = false;
                break;
            }
        }
        if (!clear)
            continue;
        auto vivid = hsv_to_rgb(rng.uniform(), rng.uniform(0.75, 1.0), rng.uniform(0.75, 1.0));
        for (int c = 0; c < 3; ++c)
            s.color[c] = bg[c] + spec.contrast * (vivid[c] - bg[c]);
        shapes.push_back(s);
    }

    // Clutter: low-saturation blobs near the background tone, kept clear of the objects.
    std::vector<Shape> clutter;
    attempts = 0;
    while (int(clutter.size()) < spec.distractors && ++attempts <= 500) {
        Shape d{};
        d.kind = rng.below(2) ? ShapeKind::Ellipse : ShapeKind::Rectangle;
        d.rx = 0.5 * rng.uniform(0.1, 0.3) * side;
        d.ry = d.rx * rng.uniform(0.5, 1.0);
        if (rng.below(2))
            std::swap(d.rx, d.ry);
        d.cx = rng.uniform(0.0, spec.width - 1.0);
        d.cy = rng.uniform(0.0, spec.height - 1.0);
        bool clear = true;
        for (const auto& o : shapes)
            if (!(d.cx + d.rx + gap < o.cx - o.rx || o.cx + o.rx + gap < d.cx - d.rx ||
                  d.cy + d.ry + gap < o.cy - o.ry || o.cy + o.ry + gap < d.cy - d.ry)) {
                clear = false;
                break;
            }
        if (!clear)
            continue;
        const double shift = rng.uniform(0.08, 0.2) * (rng.below(2) ? 1.0 : -1.0);
        for (int c = 0; c < 3; ++c)
            d.color[c] = bg[c] + shift + rng.uniform(-0.04, 0.04);
        clutter.push_back(d);
    }

    SyntheticSample out{ImageRGB(spec.width, spec.height), LabelMask(spec.width, spec.height)};
    const double ca = std::cos(ramp_angle), sa = std::sin(ramp_angle);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            std::array<double, 3> px = bg;
            const Shape* hit = nullptr;
            for (const auto& s : shapes)
                if (s.contains(x, y)) {
                    hit = &s;
                    break;
                }
            double wave = spec.texture * std::sin(wave_fx * x + wave_fy * y + wave_phase);
            if (hit) {
                px = hit->color;
                out.mask.at(x, y) = 1;
            } else {
                for (const auto& d : clutter)
                    if (d.contains(x, y)) {
                        px = d.color;
                        break;
                    }
                double t = (ca * (x - 0.5 * spec.width) + sa * (y - 0.5 * spec.height)) / side;
                for (auto& c : px)
                    c += ramp * t + wave;
            }
            for (int c = 0; c < 3; ++c) {
                double noise = spec.texture > 0.0 ? rng.uniform(-spec.texture, spec.texture) : 0.0;
                out.image.at(x, y, c) = quantize8(px[c] + noise);
            }
        }
    }
    return out;
}

} // namespace salient
