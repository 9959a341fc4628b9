#pragma once

#include <salient/salient.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <set>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace testing_support {

// Removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t")
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("salient-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline salient::SaliencyMap random_map(salient::Rng& rng, int w, int h, bool quantized = false)
{
    salient::SaliencyMap m(w, h);
    for (auto& v : m.values)
        v = quantized ? float(double(rng.below(256)) / 255.0) : float(rng.uniform());
    return m;
}

inline salient::LabelMask random_mask(salient::Rng& rng, int w, int h, double p = 0.5)
{
    salient::LabelMask m(w, h);
    for (auto& b : m.bits)
        b = rng.uniform() < p ? 1 : 0;
    return m;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p)
{
    return salient::io_detail::read_all(p);
}

// Two Gaussian blobs 6 standard deviations apart along the diagonal.
inline std::vector<salient::TrainingSample> separable_samples(std::uint64_t seed, int n)
{
    salient::Rng rng(seed);
    auto normal = [&] {
        double u1 = std::max(rng.uniform(), 1e-300), u2 = rng.uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    };
    std::vector<salient::TrainingSample> out;
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        double c = label ? 1.5 : -1.5;
        out.push_back({{float(c + 0.5 * normal()), float(c + 0.5 * normal())}, label});
    }
    return out;
}

inline double training_accuracy(const salient::RegressorModel& model, const std::vector<salient::TrainingSample>& s)
{
    int right = 0;
    for (const auto& x : s)
        right += (salient::predict(model, x.vec) >= 0.5) == (x.label == 1);
    return double(right) / double(s.size());
}

// Largest relative error between analytic and central-difference gradients over all parameters.
inline double gradient_check(std::uint64_t seed, salient::LossKind loss, salient::Activation act)
{
    using Net = salient::Mlp<double>;
    salient::Rng rng(seed);
    Net net(3, 4, 4, act);
    net.initialize(rng);
    for (auto* b : {&net.b1, &net.b2, &net.b3})
        for (Eigen::Index i = 0; i < b->size(); ++i)
            (*b)(i) = rng.uniform(-0.5, 0.5);
    const int batch = 5;
    Net::Matrix x(3, batch);
    std::vector<int> labels(batch);
    for (int j = 0; j < batch; ++j) {
        for (int i = 0; i < 3; ++i)
            x(i, j) = rng.uniform(-2, 2);
        labels[j] = int(rng.below(2));
    }
    Net grad;
    salient::loss_and_gradient(net, x, labels, loss, grad);
    auto eval = [&] { return salient::batch_loss<double>(salient::forward(net, x).prob, labels, loss); };
    double worst = 0.0;
    auto check = [&](auto& param, const auto& g) {
        for (Eigen::Index i = 0; i < param.size(); ++i) {
            // fourth-order central stencil
            const double keep = param.data()[i], h = 1e-4;
            auto at = [&](double d) {
                param.data()[i] = keep + d;
                return eval();
            };
            const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
            param.data()[i] = keep;
            const double analytic = g.data()[i];
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
            worst = std::max(worst, std::abs(numeric - analytic) / scale);
        }
    };
    check(net.w1, grad.w1);
    check(net.b1, grad.b1);
    check(net.w2, grad.w2);
    check(net.b2, grad.b2);
    check(net.w3, grad.w3);
    check(net.b3, grad.b3);
    return worst;
}

// Coherence objective over ordered pairs, evaluated directly.
inline double coherence_energy(const std::vector<double>& a, const std::vector<double>& initial,
                               const Eigen::MatrixXd& w)
{
    double e = 0.0;
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i)
        e += (a[i] - initial[i]) * (a[i] - initial[i]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j)
                e += w(Eigen::Index(i), Eigen::Index(j)) * (a[i] - a[j]) * (a[i] - a[j]);
    return e;
}

// Minimises the objective knowing only that it is quadratic: probes it to recover the Hessian
// and gradient at zero, then solves by Gaussian elimination with partial pivoting.
inline std::vector<double> brute_force_minimum(const std::vector<double>& initial, const Eigen::MatrixXd& w)
{
    const std::size_t n = initial.size();
    auto E = [&](const std::vector<double>& a) { return coherence_energy(a, initial, w); };
    std::vector<double> zero(n, 0.0);
    const double e0 = E(zero);
    std::vector<double> ei(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto a = zero;
        a[i] = 1.0;
        ei[i] = E(a);
    }
    std::vector<std::vector<double>> m(n, std::vector<double>(n + 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double h;
            if (i == j) {
                auto a = zero;
                a[i] = -1.0;
                h = ei[i] + E(a) - 2 * e0;
            } else {
                auto a = zero;
                a[i] = a[j] = 1.0;
                h = E(a) - ei[i] - ei[j] + e0;
            }
            m[i][j] = m[j][i] = h;
        }
        auto a = zero;
        a[i] = -1.0;
        m[i][n] = -(ei[i] - E(a)) / 2.0; // -gradient at zero
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col]))
                piv = r;
        std::swap(m[col], m[piv]);
        for (std::size_t r = col + 1; r < n; ++r) {
            double f = m[r][col] / m[col][col];
            for (std::size_t c = col; c <= n; ++c)
                m[r][c] -= f * m[col][c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = m[i][n];
        for (std::size_t c = i + 1; c < n; ++c)
            s -= m[i][c] * x[c];
        x[i] = s / m[i][i];
    }
    return x;
}

inline Eigen::MatrixXd random_weights(salient::Rng& rng, int n)
{
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            w(i, j) = w(j, i) = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    return w;
}

// Naive metric implementations: direct per-pixel counting.
namespace naive {

inline std::array<std::size_t, 3> counts(const salient::SaliencyMap& m, const salient::LabelMask& g, double t)
{
    std::size_t tp = 0, fp = 0, fn = 0;
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            bool pred = double(m.at(x, y)) >= t, truth = g.at(x, y) == 1;
            if (pred && truth)
                ++tp;
            else if (pred)
                ++fp;
            else if (truth)
                ++fn;
        }
    return {tp, fp, fn};
}

inline double precision(const std::array<std::size_t, 3>& c)
{
    return c[0] + c[1] ? double(c[0]) / double(c[0] + c[1]) : 1.0;
}

inline double recall(const std::array<std::size_t, 3>& c)
{
    return c[0] + c[2] ? double(c[0]) / double(c[0] + c[2]) : 1.0;
}

inline double f(double p, double r, double b2 = 0.3)
{
    return p == 0 && r == 0 ? 0.0 : (1 + b2) * p * r / (b2 * p + r);
}

inline double ta(const salient::SaliencyMap& m)
{
    double s = 0;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            s += m.at(x, y);
    double t = 2 * s / (m.width * m.height);
    return t > 1 ? 1 : t;
}

inline double mae(const salient::SaliencyMap& m, const salient::LabelMask& g)
{
    double s = 0;
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            s += std::abs(double(m.at(x, y)) - double(g.at(x, y)));
    return s / (g.width * g.height);
}

inline double consistency(const salient::AnnotationSet& a)
{
    std::set<int> inter, uni;
    for (int p = 0; p < int(a.masks[0].pixel_count()); ++p) {
        bool b0 = a.masks[0].bits[p], b1 = a.masks[1].bits[p], b2 = a.masks[2].bits[p];
        if (b0 && b1 && b2)
            inter.insert(p);
        if (b0 || b1 || b2)
            uni.insert(p);
    }
    return uni.empty() ? 1.0 : double(inter.size()) / double(uni.size());
}

inline salient::LabelMask majority(const salient::AnnotationSet& a)
{
    salient::LabelMask out(a.masks[0].width, a.masks[0].height);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            int v = 0;
            for (const auto& m : a.masks)
                v += m.at(x, y);
            out.at(x, y) = v > 1;
        }
    return out;
}

} // namespace naive

} // namespace testing_support
