#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

using namespace salient;
using testing_support::TempDir;

namespace {

ImageRGB two_halves(int w, int h, std::array<float, 3> left, std::array<float, 3> right)
{
    ImageRGB img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = x < w / 2 ? left[c] : right[c];
    return img;
}

SuperpixelPartition block_partition(int w, int h, int bw, int bh)
{
    SuperpixelPartition part;
    part.width = w;
    part.height = h;
    part.label_map.resize(std::size_t(w) * h);
    const int cols = (w + bw - 1) / bw;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            part.label_map[std::size_t(y) * w + x] = (y / bh) * cols + x / bw;
    part.count = cols * ((h + bh - 1) / bh);
    finalize_partition(part, nullptr);
    return part;
}

bool four_connected(const std::vector<int>& pixels, int w)
{
    std::set<int> in(pixels.begin(), pixels.end()), seen{pixels.front()};
    std::vector<int> stack{pixels.front()};
    while (!stack.empty()) {
        int p = stack.back();
        stack.pop_back();
        for (int q : {p - 1, p + 1, p - w, p + w}) {
            if ((q == p - 1 && p % w == 0) || (q == p + 1 && q % w == 0))
                continue;
            if (in.count(q) && seen.insert(q).second)
                stack.push_back(q);
        }
    }
    return seen.size() == in.size();
}

// Recomputes every boundary from scratch at each step; regions are named by their smallest superpixel.
std::vector<std::vector<int>> naive_hierarchy(const SuperpixelPartition& part, const EdgeStrengthMap& es,
                                              const std::vector<int>& targets)
{
    const int w = part.width, h = part.height;
    std::vector<int> owner(part.count);
    for (int s = 0; s < part.count; ++s)
        owner[s] = s;
    std::vector<std::vector<int>> levels;
    auto region = [&](int p) { return owner[part.label_map[p]]; };
    int regions = part.count;
    for (int target : targets) {
        while (regions > target) {
            std::map<std::pair<int, int>, std::set<int>> sets;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    int p = y * w + x;
                    for (int q : {x + 1 < w ? p + 1 : -1, y + 1 < h ? p + w : -1}) {
                        if (q < 0 || region(p) == region(q))
                            continue;
                        const int rp = region(p), rq = region(q);
                        std::pair<int, int> key = std::minmax(rp, rq);
                        sets[key].insert(p);
                        sets[key].insert(q);
                    }
                }
            if (sets.empty())
                break;
            double best = 1e300;
            std::pair<int, int> pick;
            for (auto& [key, px] : sets) {
                double s = 0;
                for (int p : px)
                    s += es.es[p];
                s /= double(px.size());
                if (s < best) {
                    best = s;
                    pick = key;
                }
            }
            for (auto& o : owner)
                if (o == pick.second)
                    o = pick.first;
            --regions;
        }
        levels.push_back(owner);
    }
    return levels;
}

// Same partition up to renaming.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b)
{
    if (a.size() != b.size())
        return false;
    std::map<int, int> ab, ba;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto [i1, n1] = ab.try_emplace(a[i], b[i]);
        auto [i2, n2] = ba.try_emplace(b[i], a[i]);
        if (i1->second != b[i] || i2->second != a[i])
            return false;
    }
    return true;
}

void check_partition_invariants(const SuperpixelPartition& part)
{
    ASSERT_EQ(part.label_map.size(), std::size_t(part.width) * part.height);
    ASSERT_EQ(int(part.pixels.size()), part.count);
    std::size_t total = 0;
    for (int s = 0; s < part.count; ++s) {
        ASSERT_FALSE(part.pixels[s].empty());
        total += part.pixels[s].size();
        for (int p : part.pixels[s])
            ASSERT_EQ(part.label_map[p], s);
        EXPECT_TRUE(four_connected(part.pixels[s], part.width)) << "superpixel " << s;
    }
    EXPECT_EQ(total, part.label_map.size());
}

} // namespace

TEST(Superpixels, TwoHalvesFollowTheMergeCriterion)
{
    const int w = 16, h = 8;
    auto img = two_halves(w, h, {0.1f, 0.2f, 0.8f}, {0.9f, 0.7f, 0.1f});
    auto l = rgb_to_lab(0.1f, 0.2f, 0.8f), r = rgb_to_lab(0.9f, 0.7f, 0.1f);
    const double gap = std::sqrt((l[0] - r[0]) * (l[0] - r[0]) + (l[1] - r[1]) * (l[1] - r[1]) +
                                 (l[2] - r[2]) * (l[2] - r[2]));
    const double half = w * h / 2.0;
    // flat halves have zero internal difference, so the boundary joins iff gap <= k / |half|
    auto below = superpixels(img, 0.5 * gap * half, 2);
    ASSERT_EQ(below.count, 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            EXPECT_EQ(below.label_map[std::size_t(y) * w + x], x < w / 2 ? 0 : 1);
    EXPECT_EQ(below.adjacency, (std::vector<std::pair<int, int>>{{0, 1}}));
    EXPECT_EQ(superpixels(img, 2.0 * gap * half, 2).count, 1);
}

TEST(Superpixels, PartitionInvariantsOnSyntheticImages)
{
    for (int seed = 1; seed <= 5; ++seed) {
        auto s = gen_synthetic(seed, corpus_spec(2, seed, 96, 72));
        auto part = superpixels(s.image, 20, 6);
        check_partition_invariants(part);
        for (int sp = 0; sp < part.count; ++sp)
            EXPECT_GE(part.pixels[sp].size(), 6u);
        ASSERT_EQ(int(part.mean_lab.size()), part.count);
    }
}

TEST(Superpixels, Deterministic)
{
    auto s = gen_synthetic(4, corpus_spec(1, 4, 96, 72));
    auto a = superpixels(s.image, 20, 6), b = superpixels(s.image, 20, 6);
    EXPECT_EQ(a.label_map, b.label_map);
}

TEST(Superpixels, RejectsBadParameters)
{
    ImageRGB img(4, 4);
    EXPECT_THROW(superpixels(img, 0.0, 1), ParameterError);
    EXPECT_THROW(superpixels(img, 10.0, 0), ParameterError);
}

TEST(EdgeStrength, VerticalStepWithoutBlur)
{
    const int w = 16, h = 8;
    auto img = two_halves(w, h, {0.2f, 0.2f, 0.2f}, {0.8f, 0.8f, 0.8f});
    auto es = edge_strength(img, 0.0);
    // Sobel x-response is 4 * step in the two columns straddling the step, zero elsewhere;
    // both columns share the maximum so they normalise to 1.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float expect = (x == w / 2 - 1 || x == w / 2) ? 1.0f : 0.0f;
            EXPECT_NEAR(es.at(x, y), expect, 1e-6) << x << "," << y;
        }
}

TEST(EdgeStrength, BlurredStepConcentratesNearTheEdge)
{
    const int w = 32, h = 8;
    auto img = two_halves(w, h, {0.1f, 0.5f, 0.2f}, {0.7f, 0.3f, 0.9f});
    auto es = edge_strength(img, 1.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            EXPECT_GE(es.at(x, y), 0.0f);
            EXPECT_LE(es.at(x, y), 1.0f);
            if (std::abs(x - (w / 2 - 0.5)) > 5) {
                EXPECT_LT(es.at(x, y), 1e-3) << x;
            }
        }
        EXPECT_GT(es.at(w / 2, y), 0.5f);
        EXPECT_GT(es.at(w / 2 - 1, y), 0.5f);
    }
}

TEST(EdgeStrength, FlatImageIsZero)
{
    auto es = edge_strength(ImageRGB(8, 8, 0.4f));
    for (float v : es.es)
        EXPECT_EQ(v, 0.0f);
}

TEST(LevelTargets, PaperEndpointsAndGeometricStep)
{
    auto t = level_targets(15, 300, 20);
    ASSERT_EQ(t.size(), 15u);
    EXPECT_EQ(t.front(), 300);
    EXPECT_EQ(t.back(), 20);
    EXPECT_EQ(t[1], int(std::lround(300 * std::pow(20.0 / 300.0, 1.0 / 14.0))));
    EXPECT_EQ(t[1], 247);
    for (std::size_t i = 1; i < t.size(); ++i)
        EXPECT_LE(t[i], t[i - 1]);
    EXPECT_EQ(level_targets(2, 5, 5), (std::vector<int>{5, 5}));
    EXPECT_THROW(level_targets(1, 300, 20), ParameterError);
    EXPECT_THROW(level_targets(15, 10, 20), ParameterError);
    EXPECT_THROW(level_targets(15, 300, 0), ParameterError);
}

TEST(Hierarchy, FourInARow)
{
    // superpixels are 2-column strips; each boundary set covers the two columns touching it
    const int w = 8, h = 2;
    auto part = block_partition(w, h, 2, h);
    ASSERT_EQ(part.count, 4);
    EdgeStrengthMap es{w, h, std::vector<float>(w * h, 0.0f)};
    const float col_strength[w] = {0.0f, 0.1f, 0.1f, 0.9f, 0.9f, 0.2f, 0.2f, 0.0f};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            es.es[y * w + x] = col_strength[x];
    std::vector<MergeStep> log;
    auto hier = build_hierarchy(part, es, {3, 2}, &log);
    ASSERT_EQ(hier.level_count(), 2);
    EXPECT_EQ(hier.levels[0].region_count, 3);
    EXPECT_EQ(hier.levels[0].region_of, (std::vector<int>{0, 0, 1, 2}));
    EXPECT_EQ(hier.levels[1].region_count, 2);
    EXPECT_EQ(hier.levels[1].region_of, (std::vector<int>{0, 0, 1, 1}));
    ASSERT_EQ(log.size(), 2u);
    EXPECT_NEAR(log[0].priority, 0.1, 1e-7);
    EXPECT_NEAR(log[1].priority, 0.2, 1e-7);
    EXPECT_NEAR(hier.thresholds[1], 0.2, 1e-7);
}

TEST(Hierarchy, MatchesNaiveGreedyOnBlockGrids)
{
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const int w = 15, h = 12;
        auto part = block_partition(w, h, 3, 3);
        EdgeStrengthMap es{w, h, std::vector<float>(w * h)};
        for (auto& v : es.es)
            v = float(rng.uniform());
        std::vector<int> targets{18, 12, 7, 3, 1};
        auto hier = build_hierarchy(part, es, targets);
        auto naive = naive_hierarchy(part, es, targets);
        ASSERT_EQ(hier.level_count(), int(naive.size()));
        for (int l = 0; l < hier.level_count(); ++l) {
            EXPECT_EQ(hier.levels[l].region_count, targets[l]);
            EXPECT_TRUE(same_partition(hier.levels[l].region_of, naive[l])) << "trial " << trial << " level " << l;
        }
    }
}

TEST(Hierarchy, MatchesNaiveGreedyOnSuperpixels)
{
    auto s = gen_synthetic(8, corpus_spec(1, 8, 48, 36));
    auto part = superpixels(s.image, 20, 4);
    auto es = edge_strength(s.image);
    ASSERT_GT(part.count, 12);
    std::vector<int> targets{part.count - 1, part.count / 2, 6, 2};
    auto hier = build_hierarchy(part, es, targets);
    auto naive = naive_hierarchy(part, es, targets);
    for (int l = 0; l < hier.level_count(); ++l)
        EXPECT_TRUE(same_partition(hier.levels[l].region_of, naive[l])) << "level " << l;
}

TEST(Hierarchy, NestedAndHitsTargets)
{
    auto s = gen_synthetic(5, corpus_spec(1, 5, 96, 72));
    auto part = superpixels(s.image, 20, 6);
    auto targets = level_targets(6, std::min(part.count, 40), 4);
    auto hier = build_hierarchy(part, edge_strength(s.image), targets);
    for (int l = 0; l < hier.level_count(); ++l) {
        EXPECT_EQ(hier.levels[l].region_count, targets[l]);
        if (l == 0)
            continue;
        std::map<int, int> parent;
        for (int sp = 0; sp < part.count; ++sp) {
            auto [it, fresh] = parent.try_emplace(hier.levels[l - 1].region_of[sp], hier.levels[l].region_of[sp]);
            EXPECT_EQ(it->second, hier.levels[l].region_of[sp]);
        }
    }
}

TEST(Hierarchy, UnderTargetKeepsBase)
{
    auto part = block_partition(4, 4, 2, 2);
    EdgeStrengthMap es{4, 4, std::vector<float>(16, 0.5f)};
    auto hier = build_hierarchy(part, es, {10, 4, 2});
    EXPECT_TRUE(hier.under_target);
    EXPECT_EQ(hier.levels[0].region_count, 4);
    EXPECT_EQ(hier.levels[1].region_count, 4);
    EXPECT_EQ(hier.levels[2].region_count, 2);
    EXPECT_THROW(build_hierarchy(part, es, {2, 3}), ParameterError);
}

TEST(Hierarchy, IndexLevelGeometry)
{
    auto part = block_partition(8, 2, 2, 2);
    EdgeStrengthMap es{8, 2, std::vector<float>(16, 0.0f)};
    auto hier = build_hierarchy(part, es, {4});
    auto idx = index_level(hier, 0);
    ASSERT_EQ(idx.region_count, 4);
    EXPECT_EQ(idx.bbox[1], (std::array<int, 4>{2, 0, 3, 1}));
    EXPECT_EQ(idx.neighbours[1], (std::vector<int>{0, 2}));
    EXPECT_EQ(idx.neighbours[3], (std::vector<int>{2}));
    EXPECT_EQ(idx.pixels[0], (std::vector<int>{0, 1, 8, 9}));
    EXPECT_THROW(index_level(hier, 1), ContractError);
}

TEST(Hierarchy, SaveLoadRoundTrip)
{
    TempDir dir;
    auto s = gen_synthetic(6, corpus_spec(1, 6, 96, 72));
    auto part = superpixels(s.image, 20, 6);
    auto hier = build_hierarchy(part, edge_strength(s.image), level_targets(5, std::min(40, part.count), 5));
    save_hierarchy(hier, dir.path());
    auto back = load_hierarchy(dir.path(), &s.image);
    EXPECT_EQ(back.base.label_map, hier.base.label_map);
    EXPECT_EQ(back.base.adjacency, hier.base.adjacency);
    EXPECT_EQ(back.edges.es, hier.edges.es);
    ASSERT_EQ(back.level_count(), hier.level_count());
    for (int l = 0; l < hier.level_count(); ++l)
        EXPECT_EQ(back.levels[l].region_of, hier.levels[l].region_of);
    EXPECT_THROW(load_hierarchy(dir / "missing"), IoError);
}
