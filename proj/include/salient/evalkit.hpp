#pragma once

// Benchmark metrics (PR curve, adaptive-threshold F-measure, MAE) and annotation tooling
// (label consistency, majority ground truth, selection criteria).

#include "salient/imgcore.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace salient {

inline constexpr int kThresholdCount = 256;

/// Thresholds t_k = k / 255, k = 0..255.
inline double pr_threshold(int k) noexcept
{
    return double(k) / 255.0;
}

struct PRCurve {
    std::array<double, kThresholdCount> precision{};
    std::array<double, kThresholdCount> recall{};
};

struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
};

/// precision = 1 when nothing is predicted; recall = 1 when the ground truth is empty.
inline double precision_of(const Counts& c) noexcept
{
    return c.tp + c.fp == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fp);
}
inline double recall_of(const Counts& c) noexcept
{
    return c.tp + c.fn == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fn);
}

/// Pixel x is predicted salient iff S(x) >= threshold.
inline Counts binarized_counts(const SaliencyMap& map, const LabelMask& gt, double threshold)
{
    require_same_size(map, gt, "binarized_counts");
    Counts c;
    for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
        bool pred = double(map.values[p]) >= threshold;
        bool truth = gt.bits[p] != 0;
        c.tp += pred && truth;
        c.fp += pred && !truth;
        c.fn += !pred && truth;
    }
    return c;
}

/// One pass: each pixel is binned at the largest k with k/255 <= S, then counts are
/// accumulated from the top threshold down.
inline PRCurve pr_curve(const SaliencyMap& map, const LabelMask& gt)
{
    require_same_size(map, gt, "pr_curve");
    std::array<std::size_t, kThresholdCount> pos{}, neg{};
    std::size_t positives = 0;
    for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
        const double s = map.values[p];
        int k = int(std::floor(std::clamp(s, 0.0, 1.0) * 255.0));
        while (k + 1 < kThresholdCount && pr_threshold(k + 1) <= s)
            ++k;
        while (k >= 0 && pr_threshold(k) > s)
            --k;
        positives += gt.bits[p];
        if (k < 0)
            continue;
        (gt.bits[p] ? pos : neg)[k]++;
    }
    PRCurve curve;
    Counts c;
    for (int k = kThresholdCount - 1; k >= 0; --k) {
        c.tp += pos[k];
        c.fp += neg[k];
        c.fn = positives - c.tp;
        curve.precision[k] = precision_of(c);
        curve.recall[k] = recall_of(c);
    }
    return curve;
}

/// Twice the mean saliency, capped at 1.
inline double adaptive_threshold(const SaliencyMap& map)
{
    double sum = 0.0;
    for (float v : map.values)
        sum += v;
    return std::min(1.0, 2.0 * sum / double(map.pixel_count()));
}

inline double f_measure(double precision, double recall, double beta2 = 0.3)
{
    const double denom = beta2 * precision + recall;
    return denom > 0.0 ? (1.0 + beta2) * precision * recall / denom : 0.0;
}

inline double mae(const SaliencyMap& map, const LabelMask& gt)
{
    require_same_size(map, gt, "mae");
    double sum = 0.0;
    for (std::size_t p = 0; p < gt.pixel_count(); ++p)
        sum += std::abs(double(map.values[p]) - gt.bits[p]);
    return sum / double(gt.pixel_count());
}

// ---------------------------------------------------------------------------
// Per-image and corpus evaluation
// ---------------------------------------------------------------------------

struct ImageEval {
    std::string name;
    PRCurve curve;
    double threshold = 0.0;   ///< adaptive threshold T_a
    double precision = 0.0, recall = 0.0, f = 0.0;
    double mae = 0.0;
};

struct EvalReport {
    double beta2 = 0.3;
    std::vector<ImageEval> images;
    PRCurve mean_curve;
    double mean_threshold = 0.0;
    double mean_precision = 0.0, mean_recall = 0.0, mean_f = 0.0, mean_mae = 0.0;
};

inline ImageEval evaluate_image(const SaliencyMap& map, const LabelMask& gt, double beta2 = 0.3, std::string name = {})
{
    ImageEval e;
    e.name = std::move(name);
    e.curve = pr_curve(map, gt);
    e.threshold = adaptive_threshold(map);
    const auto c = binarized_counts(map, gt, e.threshold);
    e.precision = precision_of(c);
    e.recall = recall_of(c);
    e.f = f_measure(e.precision, e.recall, beta2);
    e.mae = mae(map, gt);
    return e;
}

/// Arithmetic means over images, in input order.
inline EvalReport summarize(std::vector<ImageEval> images, double beta2 = 0.3)
{
    EvalReport r;
    r.beta2 = beta2;
    r.images = std::move(images);
    if (r.images.empty())
        return r;
    const double n = double(r.images.size());
    for (const auto& e : r.images) {
        for (int k = 0; k < kThresholdCount; ++k) {
            r.mean_curve.precision[k] += e.curve.precision[k] / n;
            r.mean_curve.recall[k] += e.curve.recall[k] / n;
        }
        r.mean_threshold += e.threshold / n;
        r.mean_precision += e.precision / n;
        r.mean_recall += e.recall / n;
        r.mean_f += e.f / n;
        r.mean_mae += e.mae / n;
    }
    return r;
}

inline nlohmann::json report_to_json(const EvalReport& r)
{
    auto curve_json = [](const PRCurve& c) {
        return nlohmann::json{{"precision", c.precision}, {"recall", c.recall}};
    };
    nlohmann::json j;
    j["beta2"] = r.beta2;
    j["conventions"] = {{"binarization", "salient iff S >= t"},
                        {"thresholds", "k/255, k = 0..255"},
                        {"empty_prediction_precision", 1.0},
                        {"empty_ground_truth_recall", 1.0},
                        {"adaptive_threshold", "min(1, 2 * mean(S))"}};
    j["images"] = nlohmann::json::array();
    for (const auto& e : r.images)
        j["images"].push_back({{"name", e.name},
                               {"adaptive_threshold", e.threshold},
                               {"precision", e.precision},
                               {"recall", e.recall},
                               {"f_measure", e.f},
                               {"mae", e.mae},
                               {"pr_curve", curve_json(e.curve)}});
    j["summary"] = {{"images", r.images.size()},
                    {"adaptive_threshold", r.mean_threshold},
                    {"precision", r.mean_precision},
                    {"recall", r.mean_recall},
                    {"f_measure", r.mean_f},
                    {"mae", r.mean_mae},
                    {"pr_curve", curve_json(r.mean_curve)}};
    return j;
}

/// CSV: threshold, mean precision, mean recall.
inline void write_pr_csv(const EvalReport& r, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write '" + path.string() + "'");
    out << "threshold,precision,recall\n";
    out.precision(10);
    for (int k = 0; k < kThresholdCount; ++k)
        out << pr_threshold(k) << "," << r.mean_curve.precision[k] << "," << r.mean_curve.recall[k] << "\n";
}

// ---------------------------------------------------------------------------
// Annotation tooling
// ---------------------------------------------------------------------------

struct AnnotationSet {
    std::array<LabelMask, 3> masks;

    void validate() const
    {
        require_same_size(masks[0], masks[1], "annotation set");
        require_same_size(masks[0], masks[2], "annotation set");
    }
};

/// |pixels salient for all three| / |pixels salient for anyone|; 1 when nobody labelled anything.
inline double label_consistency(const AnnotationSet& ann)
{
    ann.validate();
    std::size_t all = 0, any = 0;
    for (std::size_t p = 0; p < ann.masks[0].pixel_count(); ++p) {
        int votes = ann.masks[0].bits[p] + ann.masks[1].bits[p] + ann.masks[2].bits[p];
        all += votes == 3;
        any += votes != 0;
    }
    return any == 0 ? 1.0 : double(all) / double(any);
}

/// g_x = 1 iff at least two of the three annotators marked x.
inline LabelMask majority_gt(const AnnotationSet& ann)
{
    ann.validate();
    LabelMask out(ann.masks[0].width, ann.masks[0].height);
    for (std::size_t p = 0; p < out.pixel_count(); ++p)
        out.bits[p] = ann.masks[0].bits[p] + ann.masks[1].bits[p] + ann.masks[2].bits[p] >= 2 ? 1 : 0;
    return out;
}

/// 8-connected components of the set pixels; returns per-pixel component id (-1 outside) and count.
inline int connected_components(const LabelMask& mask, std::vector<int>& component)
{
    const int w = mask.width, h = mask.height;
    component.assign(mask.pixel_count(), -1);
    int count = 0;
    std::vector<int> stack;
    for (int start = 0; start < w * h; ++start) {
        if (!mask.bits[start] || component[start] >= 0)
            continue;
        component[start] = count;
        stack.push_back(start);
        while (!stack.empty()) {
            int p = stack.back();
            stack.pop_back();
            int x = p % w, y = p / w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h)
                        continue;
                    int q = ny * w + nx;
                    if (mask.bits[q] && component[q] < 0) {
                        component[q] = count;
                        stack.push_back(q);
                    }
                }
        }
        ++count;
    }
    return count;
}

inline std::vector<double> rgb_histogram(const ImageRGB& image, const std::vector<int>& pixels)
{
    std::vector<double> h(512, 0.0);
    auto bin = [](float v) { return std::clamp(int(v * 8.0f), 0, 7); };
    for (int p : pixels)
        h[(bin(image.data[3 * p]) * 8 + bin(image.data[3 * p + 1])) * 8 + bin(image.data[3 * p + 2])] += 1.0;
    for (auto& v : h)
        v /= double(pixels.size());
    return h;
}

/// Halved chi-square distance, bounded in [0,1] for L1-normalised histograms; 0/0 bins skipped.
inline double chi_square(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double sum = a[i] + b[i];
        if (sum > 0.0)
            s += (a[i] - b[i]) * (a[i] - b[i]) / sum;
    }
    return 0.5 * s;
}

struct ContrastOptions {
    int band_radius = 15;   ///< surrounding region = Euclidean dilation by this radius minus the object
};

/// Minimum over salient objects (8-connected components of gt) of the chi-square distance
/// between the object's 8x8x8 RGB histogram and that of its surrounding band. Objects with an
/// empty band (covering the whole image) are skipped; if every object is skipped the result is 1.
inline double color_contrast(const ImageRGB& image, const LabelMask& gt, const ContrastOptions& opt = {})
{
    require_same_size(image, gt, "color_contrast");
    std::vector<int> comp;
    const int n = connected_components(gt, comp);
    if (n == 0)
        throw DataError("color_contrast: ground truth has no salient pixels");
    const int w = gt.width, h = gt.height, r = opt.band_radius;
    double best = 1.0;
    bool any = false;
    for (int c = 0; c < n; ++c) {
        std::vector<int> object;
        std::vector<std::uint8_t> band(gt.pixel_count(), 0);
        for (int p = 0; p < w * h; ++p) {
            if (comp[p] != c)
                continue;
            object.push_back(p);
            int x = p % w, y = p / w;
            bool interior = x > 0 && y > 0 && x + 1 < w && y + 1 < h && comp[p - 1] == c && comp[p + 1] == c &&
                            comp[p - w] == c && comp[p + w] == c;
            if (interior)
                continue; // the dilation of a set equals the dilation of its border pixels
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    if (dx * dx + dy * dy > r * r)
                        continue;
                    int nx = x + dx, ny = y + dy;
                    if (nx >= 0 && ny >= 0 && nx < w && ny < h)
                        band[std::size_t(ny) * w + nx] = 1;
                }
        }
        std::vector<int> surround;
        for (int p = 0; p < w * h; ++p)
            if (band[p] && comp[p] != c)
                surround.push_back(p);
        if (surround.empty())
            continue;
        best = any ? std::min(best, chi_square(rgb_histogram(image, object), rgb_histogram(image, surround)))
                   : chi_square(rgb_histogram(image, object), rgb_histogram(image, surround));
        any = true;
    }
    return any ? best : 1.0;
}

struct CriteriaConfig {
    double min_consistency = 0.9;
    double max_contrast = 0.7;
    ContrastOptions contrast;
};

struct FilterDecision {
    double consistency = 0.0;
    int components = 0;
    bool touches_border = false;
    double contrast = 1.0;            ///< NaN-free; 1 when the majority mask is empty
    bool multiple_objects = false;
    bool boundary_object = false;
    bool low_contrast = false;
    bool accept = false;
};

/// Accept iff consistency >= min_consistency and at least one selection criterion holds on the
/// majority ground truth.
inline FilterDecision dataset_filter(const AnnotationSet& ann, const ImageRGB& image, const CriteriaConfig& cfg = {})
{
    FilterDecision d;
    d.consistency = label_consistency(ann);
    const LabelMask gt = majority_gt(ann);
    require_same_size(image, gt, "dataset_filter");
    std::vector<int> comp;
    d.components = connected_components(gt, comp);
    for (int x = 0; x < gt.width && !d.touches_border; ++x)
        d.touches_border = gt.at(x, 0) || gt.at(x, gt.height - 1);
    for (int y = 0; y < gt.height && !d.touches_border; ++y)
        d.touches_border = gt.at(0, y) || gt.at(gt.width - 1, y);
    if (d.components > 0)
        d.contrast = color_contrast(image, gt, cfg.contrast);
    d.multiple_objects = d.components > 1;
    d.boundary_object = d.touches_border;
    d.low_contrast = d.components > 0 && d.contrast < cfg.max_contrast;
    d.accept = d.consistency >= cfg.min_consistency && (d.multiple_objects || d.boundary_object || d.low_contrast);
    return d;
}

inline nlohmann::json decision_to_json(const FilterDecision& d)
{
    return {{"consistency", d.consistency},
            {"components", d.components},
            {"touches_border", d.touches_border},
            {"color_contrast", d.contrast},
            {"criterion_multiple_objects", d.multiple_objects},
            {"criterion_boundary_object", d.boundary_object},
            {"criterion_low_contrast", d.low_contrast},
            {"accept", d.accept}};
}

} // namespace salient
