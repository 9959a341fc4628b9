#pragma once

// Linear fusion of per-level saliency maps with weights fitted by least squares over a
// validation set.

#include "salient/imgcore.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace salient {

struct FusionWeights {
    std::vector<double> alphas;
    double residual = 0.0;        ///< sum of squared pixel errors on the fitting set
    bool regularized = false;
    std::string corpus_id;

    int levels() const noexcept { return int(alphas.size()); }
};

/// Normal equations of min_alpha sum_i || G_i - sum_k alpha_k A_i^(k) ||_F^2, accumulated in
/// image order. A rank-deficient Gram matrix gets a ridge of 1e-8 * trace / M.
inline FusionWeights fit_weights(const std::vector<std::vector<SaliencyMap>>& level_maps,
                                 const std::vector<LabelMask>& gts, std::string corpus_id = {})
{
    if (level_maps.empty() || level_maps.size() != gts.size())
        throw DataError("fit_weights: need one ground truth per image and at least one image");
    const std::size_t m = level_maps.front().size();
    if (m == 0)
        throw DataError("fit_weights: no level maps");
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(Eigen::Index(m), Eigen::Index(m));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(Eigen::Index(m));
    double gg = 0.0;
    for (std::size_t i = 0; i < level_maps.size(); ++i) {
        const auto& maps = level_maps[i];
        if (maps.size() != m)
            throw DataError("fit_weights: image " + std::to_string(i) + " has " + std::to_string(maps.size()) +
                            " level maps, expected " + std::to_string(m));
        for (const auto& map : maps)
            if (map.width != gts[i].width || map.height != gts[i].height)
                throw DataError("fit_weights: image " + std::to_string(i) + " map/ground-truth dimension mismatch");
        Eigen::MatrixXd a(Eigen::Index(gts[i].pixel_count()), Eigen::Index(m));
        Eigen::VectorXd g(Eigen::Index(gts[i].pixel_count()));
        for (std::size_t k = 0; k < m; ++k)
            for (std::size_t p = 0; p < gts[i].pixel_count(); ++p)
                a(Eigen::Index(p), Eigen::Index(k)) = maps[k].values[p];
        for (std::size_t p = 0; p < gts[i].pixel_count(); ++p)
            g(Eigen::Index(p)) = gts[i].bits[p];
        gram.noalias() += a.transpose() * a;
        rhs.noalias() += a.transpose() * g;
        gg += g.squaredNorm();
    }
    const double trace = gram.trace();
    if (!(trace > 0.0))
        throw DataError("fit_weights: all level maps are zero everywhere");

    FusionWeights out;
    out.corpus_id = std::move(corpus_id);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
    Eigen::MatrixXd sys = gram;
    if (lo <= 1e-12 * hi) {
        sys.diagonal().array() += 1e-8 * trace / double(m);
        out.regularized = true;
    }
    const Eigen::VectorXd alpha = sys.ldlt().solve(rhs);
    out.alphas.assign(alpha.data(), alpha.data() + m);
    out.residual = std::max(0.0, gg - 2.0 * alpha.dot(rhs) + alpha.dot(gram * alpha));
    return out;
}

/// Pixelwise sum_k alpha_k A^(k), clamped to [0,1] unless clamp is false.
inline SaliencyMap fuse(const std::vector<SaliencyMap>& level_maps, const FusionWeights& weights, bool clamp = true)
{
    if (level_maps.size() != weights.alphas.size())
        throw ContractError("fuse: " + std::to_string(level_maps.size()) + " maps for " +
                            std::to_string(weights.alphas.size()) + " weights");
    if (level_maps.empty())
        throw ContractError("fuse: no maps");
    SaliencyMap out(level_maps.front().width, level_maps.front().height);
    for (const auto& m : level_maps)
        require_same_size(m, out, "fuse");
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
        double v = 0.0;
        for (std::size_t k = 0; k < level_maps.size(); ++k)
            v += weights.alphas[k] * level_maps[k].values[p];
        out.values[p] = float(clamp ? std::clamp(v, 0.0, 1.0) : v);
    }
    return out;
}

/// Sum of squared pixel errors of a map against ground truth.
inline double squared_error(const SaliencyMap& map, const LabelMask& gt)
{
    require_same_size(map, gt, "squared_error");
    double s = 0.0;
    for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
        double d = double(map.values[p]) - gt.bits[p];
        s += d * d;
    }
    return s;
}

inline nlohmann::json weights_to_json(const FusionWeights& w)
{
    return {{"M", w.levels()}, {"alphas", w.alphas}, {"residual", w.residual}, {"regularized", w.regularized},
            {"corpus_id", w.corpus_id}};
}

inline FusionWeights weights_from_json(const nlohmann::json& j)
{
    FusionWeights w;
    try {
        w.alphas = j.at("alphas").get<std::vector<double>>();
        w.residual = j.at("residual").get<double>();
        w.regularized = j.value("regularized", false);
        w.corpus_id = j.value("corpus_id", std::string{});
        if (j.at("M").get<int>() != w.levels())
            throw FormatError("fusion weights: M does not match the number of alphas");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("fusion weights: ") + e.what());
    }
    for (double a : w.alphas)
        if (!std::isfinite(a))
            throw FormatError("fusion weights: non-finite alpha");
    return w;
}

inline void save_weights(const FusionWeights& w, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write '" + path.string() + "'");
    out << weights_to_json(w).dump(2) << "\n";
}

inline FusionWeights load_weights(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
    return weights_from_json(j);
}

} // namespace salient
