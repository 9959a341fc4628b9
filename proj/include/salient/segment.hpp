#pragma once

// Superpixels, edge strength and the multi-level region hierarchy.

#include "salient/image_io.hpp"
#include "salient/imgcore.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

namespace salient {

struct SuperpixelPartition {
    int width = 0;
    int height = 0;
    int count = 0;
    std::vector<std::int32_t> label_map;           ///< per-pixel id in [0, count)
    std::vector<std::pair<int, int>> adjacency;    ///< (i, j) with i < j, sorted
    std::vector<std::vector<int>> pixels;          ///< pixel indices per superpixel, ascending
    std::vector<Lab> mean_lab;                     ///< empty when built without an image
};

struct EdgeStrengthMap {
    int width = 0;
    int height = 0;
    std::vector<float> es;

    float at(int x, int y) const noexcept { return es[std::size_t(y) * width + x]; }
};

struct HierarchyLevel {
    int region_count = 0;
    std::vector<int> region_of;   ///< superpixel id -> region id
};

struct SegmentationHierarchy {
    SuperpixelPartition base;
    EdgeStrengthMap edges;
    std::vector<HierarchyLevel> levels;   ///< finest first
    std::vector<double> thresholds;       ///< implied edge-strength threshold per level
    bool under_target = false;            ///< base had fewer superpixels than the finest target

    int level_count() const noexcept { return int(levels.size()); }
    int region_at_pixel(int level, std::size_t pixel) const
    {
        return levels[level].region_of[base.label_map[pixel]];
    }
};

// ---------------------------------------------------------------------------
// Shared boundary sets
// ---------------------------------------------------------------------------

using LabelPair = std::pair<int, int>;

/// For every pair of 4-adjacent labels (a < b): pixels of a with a 4-neighbour in b,
/// union pixels of b with a 4-neighbour in a. Pixel indices ascending, no duplicates.
inline std::map<LabelPair, std::vector<int>> boundary_pixel_sets(const std::vector<std::int32_t>& labels, int width,
                                                                 int height)
{
    std::map<LabelPair, std::vector<int>> sets;
    auto visit = [&](int p, int q) {
        int lp = labels[p], lq = labels[q];
        if (lp == lq)
            return;
        auto key = lp < lq ? LabelPair{lp, lq} : LabelPair{lq, lp};
        auto& v = sets[key];
        v.push_back(p);
        v.push_back(q);
    };
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            int p = y * width + x;
            if (x + 1 < width)
                visit(p, p + 1);
            if (y + 1 < height)
                visit(p, p + width);
        }
    for (auto& [key, v] : sets) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return sets;
}

inline double mean_strength(const EdgeStrengthMap& edges, const std::vector<int>& pixels)
{
    double sum = 0.0;
    for (int p : pixels)
        sum += edges.es[p];
    return pixels.empty() ? 0.0 : sum / double(pixels.size());
}

// ---------------------------------------------------------------------------
// Superpixels (graph-based merge on 4-neighbour Lab distances)
// ---------------------------------------------------------------------------

namespace segment_detail {

class DisjointSets {
public:
    explicit DisjointSets(int n) : parent_(n), size_(n, 1), internal_(n, 0.0)
    {
        std::iota(parent_.begin(), parent_.end(), 0);
    }
    int find(int x) noexcept
    {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    /// Joins two roots; the root with the smaller index survives.
    int join(int a, int b, double weight) noexcept
    {
        if (a > b)
            std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
        internal_[a] = std::max({internal_[a], internal_[b], weight});
        return a;
    }
    int size(int root) const noexcept { return size_[root]; }
    double internal(int root) const noexcept { return internal_[root]; }

private:
    std::vector<int> parent_;
    std::vector<int> size_;
    std::vector<double> internal_;
};

inline double lab_distance(const Lab& a, const Lab& b) noexcept
{
    double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
    return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
}

} // namespace segment_detail

/// Fills adjacency, pixel lists and (when lab is non-null) mean colours from label_map.
inline void finalize_partition(SuperpixelPartition& part, const LabImage* lab)
{
    part.pixels.assign(part.count, {});
    for (std::size_t p = 0; p < part.label_map.size(); ++p)
        part.pixels[part.label_map[p]].push_back(int(p));
    std::set<LabelPair> adj;
    for (int y = 0; y < part.height; ++y)
        for (int x = 0; x < part.width; ++x) {
            int p = y * part.width + x;
            int l = part.label_map[p];
            if (x + 1 < part.width && part.label_map[p + 1] != l)
                adj.insert(std::minmax(l, part.label_map[p + 1]));
            if (y + 1 < part.height && part.label_map[p + part.width] != l)
                adj.insert(std::minmax(l, part.label_map[p + part.width]));
        }
    part.adjacency.assign(adj.begin(), adj.end());
    part.mean_lab.clear();
    if (lab) {
        part.mean_lab.assign(part.count, Lab{0, 0, 0});
        for (int s = 0; s < part.count; ++s) {
            for (int p : part.pixels[s])
                for (int c = 0; c < 3; ++c)
                    part.mean_lab[s][c] += lab->data[p][c];
            for (int c = 0; c < 3; ++c)
                part.mean_lab[s][c] /= double(part.pixels[s].size());
        }
    }
}

/// Relabels arbitrary component ids to 0..count-1 in raster order of first pixel.
inline int relabel_raster_order(std::vector<std::int32_t>& labels)
{
    std::map<std::int32_t, std::int32_t> remap;
    for (auto& l : labels) {
        auto [it, inserted] = remap.try_emplace(l, std::int32_t(remap.size()));
        l = it->second;
    }
    return int(remap.size());
}

/// Graph-based segmentation: edges between 4-neighbours weighted by Lab distance, merged
/// when weight <= min over both components of (internal difference + k / size); components
/// smaller than min_size are absorbed afterwards in edge order.
inline SuperpixelPartition superpixels(const ImageRGB& image, double scale_k, int min_size)
{
    if (!(scale_k > 0.0) || min_size < 1)
        throw ParameterError("superpixels: scale_k must be > 0 and min_size >= 1");
    using namespace segment_detail;
    const int w = image.width, h = image.height;
    const LabImage lab = rgb_to_lab(image);

    struct Edge {
        double weight;
        int a, b;
    };
    std::vector<Edge> edges;
    edges.reserve(std::size_t(w) * h * 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int p = y * w + x;
            if (x + 1 < w)
                edges.push_back({lab_distance(lab.data[p], lab.data[p + 1]), p, p + 1});
            if (y + 1 < h)
                edges.push_back({lab_distance(lab.data[p], lab.data[p + w]), p, p + w});
        }
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.weight < r.weight; });

    DisjointSets sets(w * h);
    for (const auto& e : edges) {
        int a = sets.find(e.a), b = sets.find(e.b);
        if (a == b)
            continue;
        double ta = sets.internal(a) + scale_k / sets.size(a);
        double tb = sets.internal(b) + scale_k / sets.size(b);
        if (e.weight <= std::min(ta, tb))
            sets.join(a, b, e.weight);
    }
    for (const auto& e : edges) {
        int a = sets.find(e.a), b = sets.find(e.b);
        if (a != b && (sets.size(a) < min_size || sets.size(b) < min_size))
            sets.join(a, b, e.weight);
    }

    SuperpixelPartition part;
    part.width = w;
    part.height = h;
    part.label_map.resize(std::size_t(w) * h);
    for (int p = 0; p < w * h; ++p)
        part.label_map[p] = sets.find(p);
    part.count = relabel_raster_order(part.label_map);
    finalize_partition(part, &lab);
    return part;
}

// ---------------------------------------------------------------------------
// Edge strength: smoothed multi-channel Sobel magnitude on Lab
// ---------------------------------------------------------------------------

namespace segment_detail {

inline std::vector<double> gaussian_kernel(double sigma)
{
    int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i)
        sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k)
        v /= sum;
    return k;
}

/// Separable convolution with replicated borders, single channel.
inline std::vector<double> blur(const std::vector<double>& src, int w, int h, const std::vector<double>& k)
{
    const int r = int(k.size() / 2);
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i)
                s += k[i + r] * src[std::size_t(y) * w + std::clamp(x + i, 0, w - 1)];
            tmp[std::size_t(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i)
                s += k[i + r] * tmp[std::size_t(std::clamp(y + i, 0, h - 1)) * w + x];
            out[std::size_t(y) * w + x] = s;
        }
    return out;
}

} // namespace segment_detail

/// Per-pixel boundary strength in [0,1]: Lab image blurred with sigma_blur, L2 norm of the
/// per-channel Sobel gradients, divided by the 99th-percentile value and clamped.
inline EdgeStrengthMap edge_strength(const ImageRGB& image, double sigma_blur = 1.0)
{
    using namespace segment_detail;
    const int w = image.width, h = image.height;
    const std::size_t n = image.pixel_count();
    const LabImage lab = rgb_to_lab(image);
    const auto kernel = gaussian_kernel(sigma_blur);

    std::vector<double> mag2(n, 0.0);
    std::vector<double> channel(n);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < n; ++p)
            channel[p] = lab.data[p][c];
        auto sm = sigma_blur > 0.0 ? blur(channel, w, h, kernel) : channel;
        auto at = [&](int x, int y) { return sm[std::size_t(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)]; };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                            (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
                double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                            (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
                mag2[std::size_t(y) * w + x] += gx * gx + gy * gy;
            }
    }
    std::vector<double> mag(n);
    for (std::size_t p = 0; p < n; ++p)
        mag[p] = std::sqrt(mag2[p]);

    auto sorted = mag;
    std::size_t rank = std::size_t(std::floor(0.99 * double(n - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + std::ptrdiff_t(rank), sorted.end());
    double scale = sorted[rank];
    if (scale <= 0.0)
        scale = *std::max_element(mag.begin(), mag.end());

    EdgeStrengthMap out{w, h, std::vector<float>(n, 0.0f)};
    if (scale > 0.0)
        for (std::size_t p = 0; p < n; ++p)
            out.es[p] = float(std::clamp(mag[p] / scale, 0.0, 1.0));
    return out;
}

inline void save_edges(const EdgeStrengthMap& edges, const std::filesystem::path& path)
{
    SaliencyMap m(edges.width, edges.height);
    m.values = edges.es;
    save_raw_map(m, path);
}

inline EdgeStrengthMap load_edges(const std::filesystem::path& path)
{
    auto m = load_raw_map(path);
    for (float v : m.values)
        if (!(v >= 0.0f && v <= 1.0f))
            throw FormatError("'" + path.string() + "': edge strengths must lie in [0,1]");
    return {m.width, m.height, std::move(m.values)};
}

// ---------------------------------------------------------------------------
// Hierarchy
// ---------------------------------------------------------------------------

/// Geometric series of region counts from n_fine down to n_coarse.
inline std::vector<int> level_targets(int levels, int n_fine, int n_coarse)
{
    if (levels < 2 || n_coarse < 1 || n_fine < n_coarse)
        throw ParameterError("level_targets: need levels >= 2 and n_fine >= n_coarse >= 1");
    const double ratio = std::pow(double(n_coarse) / double(n_fine), 1.0 / double(levels - 1));
    std::vector<int> out(levels);
    for (int i = 0; i < levels; ++i)
        out[i] = int(std::lround(double(n_fine) * std::pow(ratio, i)));
    out.front() = n_fine;
    out.back() = n_coarse;
    for (int i = 1; i < levels; ++i)
        out[i] = std::clamp(out[i], n_coarse, out[i - 1]);
    return out;
}

struct MergeStep {
    int a, b;          ///< surviving (smaller) and absorbed region ids, in superpixel-id space
    double priority;
};

/// Greedy agglomeration of the superpixel graph: repeatedly merge the adjacent pair with the
/// lowest mean edge strength over their shared boundary set (ties: lowest (min id, max id)),
/// snapshotting a level each time the region count first reaches a target.
inline SegmentationHierarchy build_hierarchy(const SuperpixelPartition& partition, const EdgeStrengthMap& edges,
                                             const std::vector<int>& targets,
                                             std::vector<MergeStep>* merge_log = nullptr)
{
    require_same_size(partition, edges, "build_hierarchy");
    if (targets.empty())
        throw ParameterError("build_hierarchy: no level targets");
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (targets[i] < 1 || (i > 0 && targets[i] > targets[i - 1]))
            throw ParameterError("build_hierarchy: targets must be positive and nonincreasing");

    SegmentationHierarchy hier;
    hier.base = partition;
    hier.edges = edges;
    hier.under_target = partition.count < targets.front();

    auto pair_pixels = boundary_pixel_sets(partition.label_map, partition.width, partition.height);
    std::map<int, std::set<int>> neighbours;
    using Entry = std::tuple<double, int, int>;
    std::set<Entry> queue;
    std::map<LabelPair, double> priority;
    for (const auto& [key, pixels] : pair_pixels) {
        double pr = mean_strength(edges, pixels);
        priority[key] = pr;
        queue.emplace(pr, key.first, key.second);
        neighbours[key.first].insert(key.second);
        neighbours[key.second].insert(key.first);
    }

    std::vector<int> parent(partition.count);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x)
            x = parent[x] = parent[parent[x]];
        return x;
    };

    int regions = partition.count;
    double threshold = 0.0;
    auto snapshot = [&] {
        HierarchyLevel level;
        level.region_of.resize(partition.count);
        std::map<int, int> ids;
        for (int s = 0; s < partition.count; ++s) {
            auto [it, inserted] = ids.try_emplace(find(s), int(ids.size()));
            level.region_of[s] = it->second;
        }
        level.region_count = int(ids.size());
        hier.levels.push_back(std::move(level));
        hier.thresholds.push_back(threshold);
    };

    for (int target : targets) {
        while (regions > target && !queue.empty()) {
            auto [pr, a, b] = *queue.begin();
            queue.erase(queue.begin());
            priority.erase({a, b});
            if (merge_log)
                merge_log->push_back({a, b, pr});
            threshold = std::max(threshold, pr);
            parent[b] = a;
            --regions;

            auto& nb_b = neighbours[b];
            auto& nb_a = neighbours[a];
            nb_a.erase(b);
            for (int c : nb_b) {
                if (c == a)
                    continue;
                LabelPair bc = std::minmax(b, c);
                LabelPair ac = std::minmax(a, c);
                queue.erase({priority[bc], bc.first, bc.second});
                priority.erase(bc);
                auto moved = std::move(pair_pixels[bc]);
                pair_pixels.erase(bc);
                auto& target_set = pair_pixels[ac];
                if (auto it = priority.find(ac); it != priority.end())
                    queue.erase({it->second, ac.first, ac.second});
                std::vector<int> merged;
                merged.reserve(target_set.size() + moved.size());
                std::set_union(target_set.begin(), target_set.end(), moved.begin(), moved.end(),
                               std::back_inserter(merged));
                target_set = std::move(merged);
                double npr = mean_strength(edges, target_set);
                priority[ac] = npr;
                queue.emplace(npr, ac.first, ac.second);
                neighbours[c].erase(b);
                neighbours[c].insert(a);
                nb_a.insert(c);
            }
            pair_pixels.erase(std::minmax(a, b));
            neighbours.erase(b);
        }
        snapshot();
    }
    return hier;
}

/// Per-level region geometry used by the window and scoring stages.
struct LevelIndex {
    int level = 0;
    int region_count = 0;
    std::vector<std::vector<int>> pixels;               ///< ascending pixel indices per region
    std::vector<std::array<int, 4>> bbox;               ///< x0, y0, x1, y1 inclusive
    std::vector<std::vector<int>> neighbours;           ///< ascending region ids
};

inline LevelIndex index_level(const SegmentationHierarchy& hier, int level)
{
    if (level < 0 || level >= hier.level_count())
        throw ContractError("index_level: level " + std::to_string(level) + " out of range");
    const auto& lv = hier.levels[level];
    const auto& base = hier.base;
    LevelIndex idx;
    idx.level = level;
    idx.region_count = lv.region_count;
    idx.pixels.assign(lv.region_count, {});
    idx.bbox.assign(lv.region_count, {base.width, base.height, -1, -1});
    for (std::size_t p = 0; p < base.label_map.size(); ++p) {
        int r = lv.region_of[base.label_map[p]];
        idx.pixels[r].push_back(int(p));
        int x = int(p % base.width), y = int(p / base.width);
        auto& b = idx.bbox[r];
        b = {std::min(b[0], x), std::min(b[1], y), std::max(b[2], x), std::max(b[3], y)};
    }
    std::vector<std::set<int>> nb(lv.region_count);
    for (auto [i, j] : base.adjacency) {
        int ri = lv.region_of[i], rj = lv.region_of[j];
        if (ri != rj) {
            nb[ri].insert(rj);
            nb[rj].insert(ri);
        }
    }
    idx.neighbours.resize(lv.region_count);
    for (int r = 0; r < lv.region_count; ++r)
        idx.neighbours[r].assign(nb[r].begin(), nb[r].end());
    return idx;
}

// ---------------------------------------------------------------------------
// Serialization: DIR/hierarchy.json, DIR/labels.png (16-bit), DIR/edges.raw
// ---------------------------------------------------------------------------

inline void save_hierarchy(const SegmentationHierarchy& hier, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["width"] = hier.base.width;
    j["height"] = hier.base.height;
    j["superpixels"] = hier.base.count;
    j["under_target"] = hier.under_target;
    j["levels"] = nlohmann::json::array();
    for (std::size_t i = 0; i < hier.levels.size(); ++i)
        j["levels"].push_back({{"regions", hier.levels[i].region_count},
                               {"threshold", hier.thresholds[i]},
                               {"assignment", hier.levels[i].region_of}});
    std::ofstream(dir / "hierarchy.json") << j.dump(1) << "\n";
    save_labels16(hier.base.label_map, hier.base.width, hier.base.height, dir / "labels.png");
    save_edges(hier.edges, dir / "edges.raw");
}

/// Loads a partition from a 16-bit label PNG. mean_lab is filled only when an image is given.
inline SuperpixelPartition load_partition(const std::filesystem::path& dir, const ImageRGB* image = nullptr)
{
    SuperpixelPartition part;
    part.label_map = load_labels16(dir / "labels.png", part.width, part.height);
    int max_label = -1;
    for (auto l : part.label_map)
        max_label = std::max(max_label, int(l));
    part.count = max_label + 1;
    std::vector<char> seen(part.count, 0);
    for (auto l : part.label_map)
        seen[l] = 1;
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
        throw FormatError("'" + dir.string() + "': superpixel ids have gaps");
    if (image) {
        require_same_size(part, *image, "load_partition");
        auto lab = rgb_to_lab(*image);
        finalize_partition(part, &lab);
    } else {
        finalize_partition(part, nullptr);
    }
    return part;
}

inline SegmentationHierarchy load_hierarchy(const std::filesystem::path& dir, const ImageRGB* image = nullptr)
{
    std::ifstream in(dir / "hierarchy.json");
    if (!in)
        throw IoError("cannot read '" + (dir / "hierarchy.json").string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + (dir / "hierarchy.json").string() + "': " + e.what());
    }
    SegmentationHierarchy hier;
    hier.base = load_partition(dir, image);
    hier.edges = load_edges(dir / "edges.raw");
    require_same_size(hier.base, hier.edges, "load_hierarchy");
    try {
        hier.under_target = j.at("under_target").get<bool>();
        for (const auto& lv : j.at("levels")) {
            HierarchyLevel level;
            level.region_count = lv.at("regions").get<int>();
            level.region_of = lv.at("assignment").get<std::vector<int>>();
            if (int(level.region_of.size()) != hier.base.count)
                throw FormatError("'" + dir.string() + "': level assignment size mismatch");
            for (int r : level.region_of)
                if (r < 0 || r >= level.region_count)
                    throw FormatError("'" + dir.string() + "': region id out of range");
            hier.levels.push_back(std::move(level));
            hier.thresholds.push_back(lv.at("threshold").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + (dir / "hierarchy.json").string() + "': " + e.what());
    }
    return hier;
}

} // namespace salient
