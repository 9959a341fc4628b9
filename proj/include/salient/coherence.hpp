#pragma once

// Spatial-coherence refinement over the superpixel graph.
//
// Scores a^I per superpixel are smoothed by minimising
//     sum_i (r_i - a_i)^2 + sum_{i,j} w_ij (r_i - r_j)^2        (sum over ordered pairs)
// whose stationarity condition is the SPD system (I + 2(D - W)) r = a, D = diag(W 1).

#include "salient/segment.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <limits>
#include <queue>

namespace salient {

struct GraphEdge {
    int i, j;       ///< i < j
    double distance;
};

struct SuperpixelGraph {
    int n = 0;
    std::vector<GraphEdge> edges;     ///< adjacent pairs with their boundary distance
    Eigen::MatrixXd distance;         ///< all-pairs shortest-path distance
    Eigen::MatrixXd weights;          ///< Gaussian coherence weights, zero diagonal
    double sigma = 0.0;
};

struct CoherenceOptions {
    double weight_floor = 1e-8;       ///< weights below this are dropped
    double sigma_epsilon = 1e-6;      ///< lower bound for the degenerate-sigma fallback
};

/// Shortest-path closure of a sparse non-negative edge list (Dijkstra from every node).
inline Eigen::MatrixXd all_pairs_shortest_paths(int n, const std::vector<GraphEdge>& edges)
{
    std::vector<std::vector<std::pair<int, double>>> adj(n);
    for (const auto& e : edges) {
        adj[e.i].push_back({e.j, e.distance});
        adj[e.j].push_back({e.i, e.distance});
    }
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd dist = Eigen::MatrixXd::Constant(n, n, inf);
    using Item = std::pair<double, int>;
    for (int s = 0; s < n; ++s) {
        auto row = dist.row(s);
        row(s) = 0.0;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
        heap.push({0.0, s});
        while (!heap.empty()) {
            auto [d, u] = heap.top();
            heap.pop();
            if (d > row(u))
                continue;
            for (auto [v, w] : adj[u])
                if (d + w < row(v)) {
                    row(v) = d + w;
                    heap.push({row(v), v});
                }
        }
    }
    // Rounding can differ between the two traversal directions; keep the upper triangle.
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            dist(j, i) = dist(i, j);
    return dist;
}

/// Weights from a distance matrix: sigma = population std of the n(n-1)/2 pairwise distances
/// (fallback max(mean, eps) when zero); w = exp(-d^2 / 2 sigma^2), floored, zero diagonal.
inline void assign_weights(SuperpixelGraph& g, const CoherenceOptions& opt = {})
{
    const int n = g.n;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            sum += g.distance(i, j);
            ++pairs;
        }
    const double mean = pairs ? sum / double(pairs) : 0.0;
    double var = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double d = g.distance(i, j) - mean;
            var += d * d;
        }
    g.sigma = pairs ? std::sqrt(var / double(pairs)) : 0.0;
    if (!(g.sigma > 0.0))
        g.sigma = std::max(mean, opt.sigma_epsilon);
    g.weights = Eigen::MatrixXd::Zero(n, n);
    const double denom = 2.0 * g.sigma * g.sigma;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double d = g.distance(i, j);
            double w = std::exp(-d * d / denom);
            if (w < opt.weight_floor)
                w = 0.0;
            g.weights(i, j) = g.weights(j, i) = w;
        }
}

/// Adjacent-pair distance is the mean edge strength over the shared boundary set
/// (outer boundary of i inside j, union outer boundary of j inside i).
inline SuperpixelGraph build_graph(const SuperpixelPartition& partition, const EdgeStrengthMap& edges,
                                   const CoherenceOptions& opt = {})
{
    require_same_size(partition, edges, "build_graph");
    SuperpixelGraph g;
    g.n = partition.count;
    for (const auto& [key, pixels] : boundary_pixel_sets(partition.label_map, partition.width, partition.height))
        g.edges.push_back({key.first, key.second, mean_strength(edges, pixels)});
    g.distance = all_pairs_shortest_paths(g.n, g.edges);
    if (!g.distance.allFinite())
        throw ContractError("build_graph: superpixel adjacency graph is disconnected");
    assign_weights(g, opt);
    return g;
}

struct RefinementProblem {
    std::vector<double> initial;   ///< a^I per superpixel
    Eigen::MatrixXd weights;
};

enum class SolveMethod { ConjugateGradient, Dense };

inline Eigen::MatrixXd coherence_system(const Eigen::MatrixXd& weights)
{
    const Eigen::Index n = weights.rows();
    Eigen::MatrixXd a = -2.0 * weights;
    for (Eigen::Index i = 0; i < n; ++i)
        a(i, i) = 1.0 + 2.0 * (weights.row(i).sum() - weights(i, i));
    return a;
}

/// Plain CG on an SPD matrix; stops at ||r|| <= tol * ||b||.
inline Eigen::VectorXd conjugate_gradient(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double tol = 1e-10,
                                          int* iterations = nullptr)
{
    Eigen::VectorXd x = b;
    Eigen::VectorXd r = b - a * x;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    const double stop = tol * tol * std::max(b.squaredNorm(), std::numeric_limits<double>::min());
    const int max_iter = 10 * int(b.size()) + 100;
    int it = 0;
    for (; it < max_iter && rr > stop; ++it) {
        Eigen::VectorXd ap = a * p;
        double alpha = rr / p.dot(ap);
        x += alpha * p;
        r -= alpha * ap;
        double rr_next = r.squaredNorm();
        p = r + (rr_next / rr) * p;
        rr = rr_next;
    }
    if (iterations)
        *iterations = it;
    return x;
}

/// Unclamped minimiser of the coherence objective.
inline std::vector<double> solve_coherence(const RefinementProblem& problem,
                                           SolveMethod method = SolveMethod::ConjugateGradient)
{
    const auto n = Eigen::Index(problem.initial.size());
    const auto& w = problem.weights;
    if (w.rows() != n || w.cols() != n)
        throw ContractError("refine: weight matrix must be " + std::to_string(n) + "x" + std::to_string(n));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (w(i, j) != w(j, i))
                throw ContractError("refine: weight matrix is not symmetric");
    if (n == 0)
        return {};
    const Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(problem.initial.data(), n);
    const Eigen::MatrixXd sys = coherence_system(w);
    Eigen::VectorXd x = method == SolveMethod::Dense ? Eigen::VectorXd(sys.llt().solve(a)) : conjugate_gradient(sys, a);
    return {x.data(), x.data() + n};
}

/// Refined scores clamped to [0,1].
inline std::vector<double> refine(const RefinementProblem& problem, SolveMethod method = SolveMethod::ConjugateGradient)
{
    auto x = solve_coherence(problem, method);
    for (auto& v : x)
        v = std::clamp(v, 0.0, 1.0);
    return x;
}

/// Per-superpixel mean of a pixel map.
inline std::vector<double> pool_superpixels(const SaliencyMap& map, const SuperpixelPartition& partition)
{
    require_same_size(map, partition, "pool_superpixels");
    std::vector<double> out(partition.count, 0.0);
    for (int s = 0; s < partition.count; ++s) {
        double sum = 0.0;
        for (int p : partition.pixels[s])
            sum += map.values[p];
        out[s] = sum / double(partition.pixels[s].size());
    }
    return out;
}

inline SaliencyMap broadcast_superpixels(const std::vector<double>& scores, const SuperpixelPartition& partition)
{
    SaliencyMap out(partition.width, partition.height);
    for (int s = 0; s < partition.count; ++s)
        for (int p : partition.pixels[s])
            out.values[p] = float(scores[s]);
    return out;
}

inline SaliencyMap refine_map(const SaliencyMap& map, const SuperpixelPartition& partition,
                              const SuperpixelGraph& graph, SolveMethod method = SolveMethod::ConjugateGradient)
{
    if (graph.n != partition.count)
        throw ContractError("refine_map: graph and partition disagree on superpixel count");
    RefinementProblem problem{pool_superpixels(map, partition), graph.weights};
    return broadcast_superpixels(refine(problem, method), partition);
}

inline nlohmann::json graph_to_json(const SuperpixelGraph& g)
{
    nlohmann::json j;
    j["n"] = g.n;
    j["sigma"] = g.sigma;
    j["edges"] = nlohmann::json::array();
    for (const auto& e : g.edges)
        j["edges"].push_back({{"i", e.i}, {"j", e.j}, {"distance", e.distance}});
    std::size_t nonzero = 0;
    for (Eigen::Index i = 0; i < g.weights.rows(); ++i)
        for (Eigen::Index k = i + 1; k < g.weights.cols(); ++k)
            nonzero += g.weights(i, k) > 0.0;
    j["nonzero_weight_pairs"] = nonzero;
    return j;
}

} // namespace salient
