#pragma once

// Region saliency regressor: two fully connected hidden layers and a two-way softmax.

#include "salient/featwin.hpp"

#include <Eigen/Dense>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <limits>

namespace salient {

enum class Activation : std::uint8_t { Relu = 0, Tanh = 1 };
enum class LossKind : std::uint8_t { Squared = 0, CrossEntropy = 1 };

inline LossKind parse_loss(const std::string& s)
{
    if (s == "squared") return LossKind::Squared;
    if (s == "cross-entropy" || s == "cross_entropy") return LossKind::CrossEntropy;
    throw ParameterError("unknown loss '" + s + "' (squared, cross-entropy)");
}
inline Activation parse_activation(const std::string& s)
{
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw ParameterError("unknown activation '" + s + "' (relu, tanh)");
}

/// Weights of the network; column-per-sample convention throughout.
template <class Scalar>
struct Mlp {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix w1, w2, w3;
    Vector b1, b2, b3;
    Activation activation = Activation::Relu;

    Mlp() = default;
    Mlp(int inputs, int hidden1, int hidden2, Activation act = Activation::Relu)
        : w1(Matrix::Zero(hidden1, inputs)), w2(Matrix::Zero(hidden2, hidden1)), w3(Matrix::Zero(2, hidden2)),
          b1(Vector::Zero(hidden1)), b2(Vector::Zero(hidden2)), b3(Vector::Zero(2)), activation(act)
    {
    }

    int inputs() const noexcept { return int(w1.cols()); }
    int hidden1() const noexcept { return int(w1.rows()); }
    int hidden2() const noexcept { return int(w2.rows()); }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    void initialize(Rng& rng)
    {
        auto fill = [&](Matrix& m) {
            const double bound = 1.0 / std::sqrt(double(m.cols()));
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i)
                    m(i, j) = Scalar(rng.uniform(-bound, bound));
        };
        fill(w1);
        fill(w2);
        fill(w3);
        b1.setZero();
        b2.setZero();
        b3.setZero();
    }

    template <class Fn>
    void for_each_param(Fn&& fn)
    {
        fn(w1, true);
        fn(b1, false);
        fn(w2, true);
        fn(b2, false);
        fn(w3, true);
        fn(b3, false);
    }

    template <class To>
    Mlp<To> cast() const
    {
        Mlp<To> out;
        out.w1 = w1.template cast<To>();
        out.w2 = w2.template cast<To>();
        out.w3 = w3.template cast<To>();
        out.b1 = b1.template cast<To>();
        out.b2 = b2.template cast<To>();
        out.b3 = b3.template cast<To>();
        out.activation = activation;
        return out;
    }
};

namespace mlp_detail {

template <class M>
M activate(const M& z, Activation a)
{
    if (a == Activation::Relu)
        return z.cwiseMax(typename M::Scalar(0));
    return z.array().tanh().matrix();
}

/// Derivative of the activation expressed through its pre-activation z and output h.
template <class M>
M activate_grad(const M& z, const M& h, Activation a)
{
    using S = typename M::Scalar;
    if (a == Activation::Relu)
        return (z.array() > S(0)).template cast<S>().matrix();
    return (S(1) - h.array().square()).matrix();
}

template <class M>
M softmax_columns(const M& logits)
{
    M out(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        auto col = logits.col(j);
        auto shifted = (col.array() - col.maxCoeff()).exp();
        out.col(j) = (shifted / shifted.sum()).matrix();
    }
    return out;
}

} // namespace mlp_detail

template <class Scalar>
struct ForwardPass {
    using Matrix = typename Mlp<Scalar>::Matrix;
    Matrix z1, h1, z2, h2, logits, prob;
};

template <class Scalar>
ForwardPass<Scalar> forward(const Mlp<Scalar>& net, const typename Mlp<Scalar>::Matrix& x)
{
    using namespace mlp_detail;
    ForwardPass<Scalar> f;
    f.z1 = (net.w1 * x).colwise() + net.b1;
    f.h1 = activate(f.z1, net.activation);
    f.z2 = (net.w2 * f.h1).colwise() + net.b2;
    f.h2 = activate(f.z2, net.activation);
    f.logits = (net.w3 * f.h2).colwise() + net.b3;
    f.prob = softmax_columns(f.logits);
    return f;
}

/// Mean loss over the batch; row 1 of the softmax is the salient class.
template <class Scalar>
double batch_loss(const typename Mlp<Scalar>::Matrix& prob, const std::vector<int>& labels, LossKind loss)
{
    double total = 0.0;
    for (Eigen::Index j = 0; j < prob.cols(); ++j) {
        if (loss == LossKind::Squared) {
            double d = double(prob(1, j)) - labels[j];
            total += d * d;
        } else {
            total -= std::log(std::max(double(prob(labels[j], j)), 1e-300));
        }
    }
    return total / double(prob.cols());
}

/// Loss and its gradient with respect to every parameter (same layout as Mlp).
template <class Scalar>
double loss_and_gradient(const Mlp<Scalar>& net, const typename Mlp<Scalar>::Matrix& x, const std::vector<int>& labels,
                         LossKind loss, Mlp<Scalar>& grad)
{
    using namespace mlp_detail;
    using Matrix = typename Mlp<Scalar>::Matrix;
    const auto f = forward(net, x);
    const Eigen::Index n = x.cols();
    const Scalar inv_n = Scalar(1) / Scalar(n);

    Matrix d3(2, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        if (loss == LossKind::Squared) {
            Scalar p1 = f.prob(1, j), p0 = f.prob(0, j);
            Scalar g = Scalar(2) * (p1 - Scalar(labels[j])) * p1 * p0 * inv_n;
            d3(1, j) = g;
            d3(0, j) = -g;
        } else {
            d3(0, j) = (f.prob(0, j) - Scalar(labels[j] == 0)) * inv_n;
            d3(1, j) = (f.prob(1, j) - Scalar(labels[j] == 1)) * inv_n;
        }
    }
    grad.activation = net.activation;
    grad.w3 = d3 * f.h2.transpose();
    grad.b3 = d3.rowwise().sum();
    Matrix d2 = (net.w3.transpose() * d3).cwiseProduct(activate_grad(f.z2, f.h2, net.activation));
    grad.w2 = d2 * f.h1.transpose();
    grad.b2 = d2.rowwise().sum();
    Matrix d1 = (net.w2.transpose() * d2).cwiseProduct(activate_grad(f.z1, f.h1, net.activation));
    grad.w1 = d1 * x.transpose();
    grad.b1 = d1.rowwise().sum();
    return batch_loss<Scalar>(f.prob, labels, loss);
}

// ---------------------------------------------------------------------------
// Samples, configuration, model
// ---------------------------------------------------------------------------

struct TrainingSample {
    std::vector<float> vec;
    int label = 0;
};

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 64;
    int epochs = 100;
    std::uint64_t seed = 1;
    double weight_decay = 1e-4;
    LossKind loss = LossKind::Squared;
    Activation activation = Activation::Relu;
    int hidden1 = 300;
    int hidden2 = 300;
    double stdev_floor = 1e-6;   ///< smaller standardization divisors are raised to this

    void validate() const
    {
        if (!(learning_rate > 0.0) || momentum < 0.0 || momentum >= 1.0 || batch_size < 1 || epochs < 1 ||
            weight_decay < 0.0 || hidden1 < 1 || hidden2 < 1 || !(stdev_floor > 0.0))
            throw ParameterError("train config: need learning_rate > 0, momentum in [0,1), batch_size >= 1, "
                                 "epochs >= 1, weight_decay >= 0, hidden widths >= 1, stdev_floor > 0");
    }
};

struct TrainMetadata {
    std::uint64_t seed = 0;
    int epochs = 0;
    int batch_size = 0;
    float learning_rate = 0, momentum = 0, weight_decay = 0;
    std::vector<float> loss_curve;   ///< full-set training loss after each epoch
};

struct RegressorModel {
    Mlp<float> net;
    std::vector<float> mean;     ///< per-feature standardization
    std::vector<float> stdev;
    LossKind loss = LossKind::Squared;
    std::string feature_tag;     ///< extractor and block set the model was trained on
    TrainMetadata meta;

    int input_dim() const noexcept { return net.inputs(); }
    float final_loss() const noexcept { return meta.loss_curve.empty() ? NAN : meta.loss_curve.back(); }
};

/// Salient-fraction rule: >= hi salient -> 1, <= lo salient (>= hi background) -> 0, else skipped.
struct SampleRule {
    double salient_min = 0.7;
    double background_max = 0.3;
};

/// Labels each region of every level from the ground-truth mask; ambiguous regions are dropped.
inline std::vector<TrainingSample> make_samples(const SegmentationHierarchy& hier, const LabelMask& gt,
                                                const FeatureTable& features, BlockSet blocks = BlockSet::ABC,
                                                SampleRule rule = {})
{
    require_same_size(hier.base, gt, "make_samples");
    std::vector<TrainingSample> out;
    for (int l = 0; l < hier.level_count(); ++l) {
        const auto idx = index_level(hier, l);
        for (int r = 0; r < idx.region_count; ++r) {
            std::size_t salient = 0;
            for (int p : idx.pixels[r])
                salient += gt.bits[p];
            // Relative slack keeps the inclusive bounds exact under rounding: 7/10 counts as 70%.
            const double total = double(idx.pixels[r].size());
            int label;
            if (double(salient) >= rule.salient_min * total - 1e-9 * total)
                label = 1;
            else if (double(salient) <= rule.background_max * total + 1e-9 * total)
                label = 0;
            else
                continue;
            const auto& rec = features.at(l, r);
            out.push_back({select_blocks(rec.vec, blocks), label});
        }
    }
    return out;
}

namespace regressor_detail {

inline Eigen::MatrixXf standardized_columns(const std::vector<const std::vector<float>*>& vecs,
                                            const std::vector<float>& mean, const std::vector<float>& stdev)
{
    Eigen::MatrixXf x(Eigen::Index(mean.size()), Eigen::Index(vecs.size()));
    for (std::size_t j = 0; j < vecs.size(); ++j)
        for (std::size_t i = 0; i < mean.size(); ++i)
            x(Eigen::Index(i), Eigen::Index(j)) = ((*vecs[j])[i] - mean[i]) / stdev[i];
    return x;
}

} // namespace regressor_detail

/// Mini-batch SGD with momentum and L2 weight decay on standardized inputs.
/// Deterministic for a given config: initialisation and shuffles both come from cfg.seed.
inline RegressorModel train(const std::vector<TrainingSample>& samples, const TrainConfig& cfg)
{
    cfg.validate();
    if (samples.size() < 2)
        throw TrainingError("train: need at least 2 samples");
    const std::size_t dim = samples.front().vec.size();
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.vec.size() != dim)
            throw ContractError("train: sample " + std::to_string(i) + " has dimension " + std::to_string(s.vec.size()) +
                                ", expected " + std::to_string(dim));
        if (s.label != 0 && s.label != 1)
            throw ContractError("train: labels must be 0 or 1");
        for (float v : s.vec)
            if (!std::isfinite(v))
                throw DataError("train: sample " + std::to_string(i) + " has a non-finite feature");
        (s.label ? has1 : has0) = true;
    }
    if (!has0 || !has1)
        throw TrainingError("train: training data contains a single class");

    RegressorModel model;
    model.loss = cfg.loss;
    const std::size_t n = samples.size();
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    for (const auto& s : samples)
        for (std::size_t i = 0; i < dim; ++i)
            mean[i] += s.vec[i];
    for (auto& m : mean)
        m /= double(n);
    for (const auto& s : samples)
        for (std::size_t i = 0; i < dim; ++i) {
            double d = s.vec[i] - mean[i];
            var[i] += d * d;
        }
    model.mean.resize(dim);
    model.stdev.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        model.mean[i] = float(mean[i]);
        double sd = std::sqrt(var[i] / double(n));
        // Constant features standardize to zero; a unit divisor keeps unseen values bounded.
        model.stdev[i] = sd < 1e-6 ? 1.0f : float(std::max(sd, cfg.stdev_floor));
    }

    std::vector<const std::vector<float>*> ptrs(n);
    std::vector<int> labels(n);
    for (std::size_t j = 0; j < n; ++j) {
        ptrs[j] = &samples[j].vec;
        labels[j] = samples[j].label;
    }
    const Eigen::MatrixXf x = regressor_detail::standardized_columns(ptrs, model.mean, model.stdev);

    Rng rng(cfg.seed);
    Mlp<float> net(int(dim), cfg.hidden1, cfg.hidden2, cfg.activation);
    net.initialize(rng);
    Mlp<float> velocity(int(dim), cfg.hidden1, cfg.hidden2, cfg.activation);
    Mlp<float> grad;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const float lr = float(cfg.learning_rate), mu = float(cfg.momentum), wd = float(cfg.weight_decay);

    auto full_loss = [&] {
        double total = 0.0;
        const Eigen::Index chunk = 2048;
        for (Eigen::Index start = 0; start < Eigen::Index(n); start += chunk) {
            Eigen::Index len = std::min<Eigen::Index>(chunk, Eigen::Index(n) - start);
            auto f = forward(net, Eigen::MatrixXf(x.middleCols(start, len)));
            std::vector<int> lb(labels.begin() + start, labels.begin() + start + len);
            total += batch_loss<float>(f.prob, lb, cfg.loss) * double(len);
        }
        return total / double(n);
    };

    Eigen::MatrixXf batch;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += std::size_t(cfg.batch_size)) {
            const std::size_t len = std::min<std::size_t>(std::size_t(cfg.batch_size), n - start);
            batch.resize(Eigen::Index(dim), Eigen::Index(len));
            batch_labels.resize(len);
            for (std::size_t k = 0; k < len; ++k) {
                batch.col(Eigen::Index(k)) = x.col(order[start + k]);
                batch_labels[k] = labels[order[start + k]];
            }
            loss_and_gradient(net, batch, batch_labels, cfg.loss, grad);
            auto step = [&](auto& param, auto& vel, const auto& g, bool decay) {
                if (decay)
                    vel = mu * vel - lr * (g + wd * param);
                else
                    vel = mu * vel - lr * g;
                param += vel;
            };
            step(net.w1, velocity.w1, grad.w1, true);
            step(net.b1, velocity.b1, grad.b1, false);
            step(net.w2, velocity.w2, grad.w2, true);
            step(net.b2, velocity.b2, grad.b2, false);
            step(net.w3, velocity.w3, grad.w3, true);
            step(net.b3, velocity.b3, grad.b3, false);
        }
        const double loss = full_loss();
        if (!std::isfinite(loss))
            throw DivergenceError("train: loss became non-finite at epoch " + std::to_string(epoch + 1), epoch + 1);
        model.meta.loss_curve.push_back(float(loss));
    }
    model.net = std::move(net);
    model.meta.seed = cfg.seed;
    model.meta.epochs = cfg.epochs;
    model.meta.batch_size = cfg.batch_size;
    model.meta.learning_rate = lr;
    model.meta.momentum = mu;
    model.meta.weight_decay = wd;
    return model;
}

/// Salient-class probabilities for a batch of raw (unstandardized) vectors.
inline std::vector<double> predict_batch(const RegressorModel& model, const std::vector<const std::vector<float>*>& vecs)
{
    for (const auto* v : vecs)
        if (v->size() != model.mean.size())
            throw ContractError("predict: vector dimension " + std::to_string(v->size()) + " does not match model input " +
                                std::to_string(model.mean.size()));
    std::vector<double> out;
    out.reserve(vecs.size());
    const std::size_t chunk = 1024;
    for (std::size_t start = 0; start < vecs.size(); start += chunk) {
        std::vector<const std::vector<float>*> part(vecs.begin() + std::ptrdiff_t(start),
                                                    vecs.begin() + std::ptrdiff_t(std::min(vecs.size(), start + chunk)));
        auto f = forward(model.net, regressor_detail::standardized_columns(part, model.mean, model.stdev));
        for (Eigen::Index j = 0; j < f.prob.cols(); ++j)
            out.push_back(double(f.prob(1, j)));
    }
    return out;
}

inline double predict(const RegressorModel& model, const std::vector<float>& vec)
{
    return predict_batch(model, {&vec}).front();
}

/// Penultimate-layer activations (debug dump of the learned region embedding).
inline std::vector<float> hidden_features(const RegressorModel& model, const std::vector<float>& vec)
{
    if (vec.size() != model.mean.size())
        throw ContractError("hidden_features: dimension mismatch");
    auto f = forward(model.net, regressor_detail::standardized_columns({&vec}, model.mean, model.stdev));
    return {f.h2.data(), f.h2.data() + f.h2.size()};
}

/// Region scores broadcast to their pixels.
inline SaliencyMap score_level(const RegressorModel& model, const SegmentationHierarchy& hier, int level,
                               const FeatureTable& features, BlockSet blocks = BlockSet::ABC)
{
    const auto idx = index_level(hier, level);
    std::vector<std::vector<float>> vecs(idx.region_count);
    std::vector<const std::vector<float>*> ptrs(idx.region_count);
    for (int r = 0; r < idx.region_count; ++r) {
        vecs[r] = select_blocks(features.at(level, r).vec, blocks);
        ptrs[r] = &vecs[r];
    }
    const auto scores = predict_batch(model, ptrs);
    SaliencyMap map(hier.base.width, hier.base.height);
    for (int r = 0; r < idx.region_count; ++r)
        for (int p : idx.pixels[r])
            map.values[p] = float(std::clamp(scores[r], 0.0, 1.0));
    return map;
}

// ---------------------------------------------------------------------------
// Model file: "MDFR" | u32 version | header | f32 blobs | u32 CRC32 of all preceding bytes
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr char kModelMagic[4] = {'M', 'D', 'F', 'R'};

namespace model_detail {

class Writer {
public:
    template <class T>
    void put(const T& v)
    {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void put_floats(const float* data, std::size_t n)
    {
        const auto* p = reinterpret_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + n * sizeof(float));
    }
    /// Row-major, independent of Eigen's storage order.
    void put_matrix(const Eigen::MatrixXf& m)
    {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                put(m(i, j));
    }
    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& b, std::string name) : bytes_(b), name_(std::move(name)) {}
    template <class T>
    T get()
    {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void get_floats(float* out, std::size_t n)
    {
        need(n * sizeof(float));
        std::memcpy(out, bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }
    Eigen::MatrixXf get_matrix(Eigen::Index rows, Eigen::Index cols)
    {
        need(std::size_t(rows * cols) * sizeof(float));
        Eigen::MatrixXf m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                m(i, j) = get<float>();
        return m;
    }
    std::size_t position() const noexcept { return pos_; }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > bytes_.size())
            throw FormatError("'" + name_ + "': truncated at byte offset " + std::to_string(pos_));
    }
    const std::vector<std::uint8_t>& bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n)
{
    return std::uint32_t(::crc32(::crc32(0L, Z_NULL, 0), data, uInt(n)));
}

} // namespace model_detail

inline std::vector<std::uint8_t> serialize_model(const RegressorModel& m)
{
    model_detail::Writer w;
    w.bytes.insert(w.bytes.end(), kModelMagic, kModelMagic + 4);
    w.put(kModelVersion);
    w.put(std::uint32_t(m.net.inputs()));
    w.put(std::uint32_t(m.net.hidden1()));
    w.put(std::uint32_t(m.net.hidden2()));
    w.put(std::uint8_t(m.net.activation));
    w.put(std::uint8_t(m.loss));
    w.put(std::uint16_t(m.feature_tag.size()));
    w.bytes.insert(w.bytes.end(), m.feature_tag.begin(), m.feature_tag.end());
    w.put(m.meta.seed);
    w.put(std::uint32_t(m.meta.epochs));
    w.put(std::uint32_t(m.meta.batch_size));
    w.put(m.meta.learning_rate);
    w.put(m.meta.momentum);
    w.put(m.meta.weight_decay);
    w.put(std::uint32_t(m.meta.loss_curve.size()));
    w.put_floats(m.meta.loss_curve.data(), m.meta.loss_curve.size());
    w.put_floats(m.mean.data(), m.mean.size());
    w.put_floats(m.stdev.data(), m.stdev.size());
    w.put_matrix(m.net.w1);
    w.put_matrix(m.net.b1);
    w.put_matrix(m.net.w2);
    w.put_matrix(m.net.b2);
    w.put_matrix(m.net.w3);
    w.put_matrix(m.net.b3);
    w.put(model_detail::crc32_of(w.bytes.data(), w.bytes.size()));
    return w.bytes;
}

inline RegressorModel deserialize_model(const std::vector<std::uint8_t>& bytes, const std::string& name = "<memory>")
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kModelMagic, 4) != 0)
        throw FormatError("'" + name + "': not a model file (bad magic)");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != kModelVersion)
        throw FormatError("'" + name + "': unsupported model version " + std::to_string(version) + " (reader expects " +
                          std::to_string(kModelVersion) + ")");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (model_detail::crc32_of(bytes.data(), bytes.size() - 4) != stored_crc)
        throw FormatError("'" + name + "': checksum mismatch");

    model_detail::Reader r(bytes, name);
    r.get<std::uint32_t>(); // magic
    r.get<std::uint32_t>(); // version
    RegressorModel m;
    const auto in = r.get<std::uint32_t>(), h1 = r.get<std::uint32_t>(), h2 = r.get<std::uint32_t>();
    const auto act = r.get<std::uint8_t>(), loss = r.get<std::uint8_t>();
    if (act > 1 || loss > 1 || in == 0 || h1 == 0 || h2 == 0)
        throw FormatError("'" + name + "': invalid model header");
    const auto tag_len = r.get<std::uint16_t>();
    for (int i = 0; i < tag_len; ++i)
        m.feature_tag.push_back(char(r.get<std::uint8_t>()));
    m.loss = LossKind(loss);
    m.meta.seed = r.get<std::uint64_t>();
    m.meta.epochs = int(r.get<std::uint32_t>());
    m.meta.batch_size = int(r.get<std::uint32_t>());
    m.meta.learning_rate = r.get<float>();
    m.meta.momentum = r.get<float>();
    m.meta.weight_decay = r.get<float>();
    m.meta.loss_curve.resize(r.get<std::uint32_t>());
    r.get_floats(m.meta.loss_curve.data(), m.meta.loss_curve.size());
    m.mean.resize(in);
    m.stdev.resize(in);
    r.get_floats(m.mean.data(), in);
    r.get_floats(m.stdev.data(), in);
    m.net.activation = Activation(act);
    m.net.w1 = r.get_matrix(h1, in);
    m.net.b1 = r.get_matrix(h1, 1);
    m.net.w2 = r.get_matrix(h2, h1);
    m.net.b2 = r.get_matrix(h2, 1);
    m.net.w3 = r.get_matrix(2, h2);
    m.net.b3 = r.get_matrix(2, 1);
    if (r.position() + 4 != bytes.size())
        throw FormatError("'" + name + "': trailing bytes after model payload");
    return m;
}

inline void save_model(const RegressorModel& model, const std::filesystem::path& path)
{
    auto bytes = serialize_model(model);
    io_detail::write_all(path, bytes.data(), bytes.size());
}

inline RegressorModel load_model(const std::filesystem::path& path)
{
    return deserialize_model(io_detail::read_all(path), path.string());
}

} // namespace salient
