#pragma once

// DGCNN graph classifier: graph convolutions, sort pooling, 1-D convolutions and a dense head,
// with hand-written backpropagation and Adam.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relink/attack_graph.hpp"
#include "relink/error.hpp"
#include "relink/parallel.hpp"
#include "relink/random.hpp"
#include "relink/subgraph.hpp"

namespace relink {

enum class SelectBy : std::uint8_t { Loss, Accuracy, Auc };

struct GnnConfig {
    std::vector<std::size_t> conv_channels{32, 32, 32, 1};
    double sortpool_percentile = 0.6;
    std::size_t sortpool_floor = 10;
    std::array<std::size_t, 2> conv1d_channels{16, 32};
    std::size_t conv1d_kernel = 5;  // second 1-D convolution; the first spans one node row
    std::size_t dense_width = 128;
    std::size_t epochs = 50;
    std::size_t h_train = 2;
    double learning_rate = 1e-4;
    std::size_t batch_size = 50;
    std::uint64_t seed = 1;
    std::uint32_t drnl_cap = kDefaultDrnlCap;
    SelectBy select_by = SelectBy::Loss;
    std::size_t threads = 1;

    void validate() const {
        if (conv_channels.empty() || conv_channels.back() != 1)
            throw ValidationError("the last graph convolution must have one channel (the sort key)");
        for (std::size_t k : conv_channels)
            if (k == 0) throw ValidationError("channel counts must be positive");
        if (!conv1d_channels[0] || !conv1d_channels[1] || !conv1d_kernel || !dense_width || !batch_size)
            throw ValidationError("layer sizes and batch size must be positive");
        if (sortpool_percentile <= 0 || sortpool_percentile > 1) throw ValidationError("sort-pool percentile must lie in (0, 1]");
        if (sortpool_floor < 2 * conv1d_kernel)
            throw ValidationError("sort-pool floor must leave room for the second 1-D convolution");
        if (learning_rate < 0) throw ValidationError("learning rate must be non-negative");
    }

    std::size_t total_channels() const { return std::accumulate(conv_channels.begin(), conv_channels.end(), std::size_t{0}); }
    std::size_t input_width() const { return kFeatureWidth + drnl_cap + 1; }
};

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Adjacency = std::vector<std::vector<std::uint32_t>>;

/// D^-1 (A + I) Y for a symmetric adjacency list.
template <class S>
Matrix<S> propagate(const Adjacency& adj, const Matrix<S>& y) {
    Matrix<S> out(y.rows(), y.cols());
    for (std::size_t i = 0; i < adj.size(); ++i) {
        auto row = out.row(static_cast<Eigen::Index>(i));
        row = y.row(static_cast<Eigen::Index>(i));
        for (std::uint32_t j : adj[i]) row += y.row(j);
        row /= static_cast<S>(adj[i].size() + 1);
    }
    return out;
}

/// (D^-1 (A + I))^T Y.
template <class S>
Matrix<S> propagate_transposed(const Adjacency& adj, const Matrix<S>& y) {
    Matrix<S> scaled(y.rows(), y.cols());
    for (std::size_t i = 0; i < adj.size(); ++i)
        scaled.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(i)) / static_cast<S>(adj[i].size() + 1);
    Matrix<S> out = scaled;
    for (std::size_t i = 0; i < adj.size(); ++i)
        for (std::uint32_t j : adj[i]) out.row(j) += scaled.row(static_cast<Eigen::Index>(i));
    return out;
}

/// tanh(D^-1 (A + I) Z W), or the pre-activation when `activate` is false.
template <class S>
Matrix<S> graph_conv_forward(const Matrix<S>& z, const Adjacency& adj, const Matrix<S>& w, bool activate = true) {
    if (z.cols() != w.rows() || static_cast<std::size_t>(z.rows()) != adj.size())
        throw ShapeError("graph convolution shape mismatch");
    Matrix<S> pre = propagate<S>(adj, Matrix<S>(z * w));
    if (activate) pre = pre.array().tanh().matrix();
    return pre;
}

/// Row order of sort pooling: descending by the last column, ties by index.
template <class S>
std::vector<std::uint32_t> sort_pool_order(const Matrix<S>& z) {
    std::vector<std::uint32_t> order(static_cast<std::size_t>(z.rows()));
    std::iota(order.begin(), order.end(), 0U);
    const Eigen::Index key = z.cols() - 1;
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return z(a, key) > z(b, key); });
    return order;
}

/// The first c rows in sort-pool order, zero padded.
template <class S>
Matrix<S> sort_pool(const Matrix<S>& z, std::size_t c) {
    if (c == 0) throw ShapeError("sort pooling needs c >= 1");
    auto order = sort_pool_order(z);
    Matrix<S> out = Matrix<S>::Zero(static_cast<Eigen::Index>(c), z.cols());
    for (std::size_t r = 0; r < std::min(c, order.size()); ++r) out.row(static_cast<Eigen::Index>(r)) = z.row(order[r]);
    return out;
}

/// One-hot gate slot, PI and PO flags, one-hot DRNL label.
template <class S>
Matrix<S> node_features(const EnclosingSubgraph& g, std::uint32_t drnl_cap) {
    Matrix<S> x = Matrix<S>::Zero(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(kFeatureWidth + drnl_cap + 1));
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        x(r, g.slot[i]) = 1;
        x(r, 8) = (g.flags[i] & 1) ? 1 : 0;
        x(r, 9) = (g.flags[i] & 2) ? 1 : 0;
        const std::uint32_t l = g.labels[i] > drnl_cap ? 0 : g.labels[i];
        x(r, static_cast<Eigen::Index>(kFeatureWidth + l)) = 1;
    }
    return x;
}

/// Parameter tensors of a DGCNN, in a fixed order:
/// graph conv weights, conv1 weight/bias, conv2 weight/bias, dense weight/bias, output weight/bias.
template <class S>
class Dgcnn {
public:
    using Mat = Matrix<S>;

    Dgcnn() = default;

    Dgcnn(GnnConfig config, std::size_t sort_k) : config_(std::move(config)), k_(sort_k) {
        config_.validate();
        if (k_ < config_.sortpool_floor) throw ValidationError("sort-pool size below the configured floor");
        const std::size_t L = config_.conv_channels.size();
        std::size_t in = config_.input_width();
        for (std::size_t l = 0; l < L; ++l) {
            add("conv" + std::to_string(l), in, config_.conv_channels[l]);
            in = config_.conv_channels[l];
        }
        const std::size_t c1 = config_.conv1d_channels[0], c2 = config_.conv1d_channels[1];
        add("conv1d_0.weight", c1, config_.total_channels());
        add("conv1d_0.bias", c1, 1);
        add("conv1d_1.weight", c2, c1 * config_.conv1d_kernel);
        add("conv1d_1.bias", c2, 1);
        add("dense.weight", config_.dense_width, c2 * conv2_positions());
        add("dense.bias", config_.dense_width, 1);
        add("out.weight", 1, config_.dense_width);
        add("out.bias", 1, 1);
    }

    /// Glorot-uniform weights, zero biases.
    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        for (std::size_t t = 0; t < tensors_.size(); ++t) {
            Mat& w = tensors_[t];
            if (names_[t].ends_with(".bias")) {
                w.setZero();
                continue;
            }
            const auto [fan_in, fan_out] = fans(t);
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>((2 * uniform_real(rng) - 1) * limit);
        }
    }

    const GnnConfig& config() const noexcept { return config_; }
    std::size_t sort_k() const noexcept { return k_; }
    std::size_t input_width() const { return config_.input_width(); }
    std::size_t conv_layers() const { return config_.conv_channels.size(); }
    std::size_t conv2_positions() const { return k_ / 2 - config_.conv1d_kernel + 1; }

    std::vector<Mat>& tensors() noexcept { return tensors_; }
    const std::vector<Mat>& tensors() const noexcept { return tensors_; }
    const std::vector<std::string>& names() const noexcept { return names_; }

    std::vector<Mat> zero_like() const {
        std::vector<Mat> z;
        for (const Mat& t : tensors_) z.push_back(Mat::Zero(t.rows(), t.cols()));
        return z;
    }

    /// Intermediate values of one forward pass.
    struct Trace {
        Mat x;
        std::vector<Mat> z;       // z[l] = output of graph conv l
        Mat zcat;
        std::vector<std::uint32_t> order;
        Mat pooled;               // k x total_channels
        Mat y1_pre, q;            // conv1 pre-activation, after max pooling
        std::vector<Eigen::Index> pool_arg;
        Mat qcol, y2_pre;
        Eigen::Matrix<S, Eigen::Dynamic, 1> flat, h_pre, h;
        S logit = 0;
    };

    S forward(const EnclosingSubgraph& g, Trace* trace = nullptr) const {
        Trace local;
        Trace& t = trace ? *trace : local;
        run_forward(g, node_features<S>(g, config_.drnl_cap), t);
        return sigmoid(t.logit);
    }

    S forward_features(const Adjacency& adj, const Mat& x, Trace* trace = nullptr) const {
        Trace local;
        Trace& t = trace ? *trace : local;
        run_forward_adj(adj, x, t);
        return sigmoid(t.logit);
    }

    /// Binary cross-entropy of one sample; gradients are added to `grads`.
    S loss_and_gradient(const EnclosingSubgraph& g, bool label, std::vector<Mat>& grads) const {
        Trace t;
        run_forward(g, node_features<S>(g, config_.drnl_cap), t);
        backward(g.adj, t, label, grads);
        return bce(t.logit, label);
    }

    S loss(const EnclosingSubgraph& g, bool label) const {
        Trace t;
        run_forward(g, node_features<S>(g, config_.drnl_cap), t);
        return bce(t.logit, label);
    }

    static S sigmoid(S s) { return s >= 0 ? 1 / (1 + std::exp(-s)) : std::exp(s) / (1 + std::exp(s)); }

    /// log(1 + e^s) - y s, computed without overflow.
    static S bce(S s, bool y) { return std::max(s, S(0)) - (y ? s : S(0)) + std::log1p(std::exp(-std::abs(s))); }

private:
    void add(std::string name, std::size_t rows, std::size_t cols) {
        names_.push_back(std::move(name));
        tensors_.push_back(Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
    }

    std::pair<std::size_t, std::size_t> fans(std::size_t t) const {
        const Mat& w = tensors_[t];
        const auto r = static_cast<std::size_t>(w.rows()), c = static_cast<std::size_t>(w.cols());
        if (t < conv_layers()) return {r, c};
        if (names_[t] == "conv1d_1.weight") return {c, r * config_.conv1d_kernel};
        return {c, r};
    }

    void run_forward(const EnclosingSubgraph& g, Mat x, Trace& t) const { run_forward_adj(g.adj, std::move(x), t); }

    void run_forward_adj(const Adjacency& adj, Mat x, Trace& t) const {
        if (static_cast<std::size_t>(x.cols()) != input_width())
            throw ShapeError("feature width " + std::to_string(x.cols()) + " does not match the model (" +
                             std::to_string(input_width()) + ")");
        if (static_cast<std::size_t>(x.rows()) != adj.size()) throw ShapeError("feature rows do not match the graph");
        const std::size_t L = conv_layers();
        const auto n = x.rows();
        t.x = std::move(x);
        t.z.resize(L);
        t.zcat.resize(n, static_cast<Eigen::Index>(config_.total_channels()));
        Eigen::Index col = 0;
        for (std::size_t l = 0; l < L; ++l) {
            t.z[l] = graph_conv_forward<S>(l == 0 ? t.x : t.z[l - 1], adj, tensors_[l]);
            t.zcat.middleCols(col, t.z[l].cols()) = t.z[l];
            col += t.z[l].cols();
        }

        const auto k = static_cast<Eigen::Index>(k_);
        t.order = sort_pool_order<S>(t.zcat);
        t.pooled = Mat::Zero(k, t.zcat.cols());
        for (Eigen::Index r = 0; r < std::min<Eigen::Index>(k, n); ++r) t.pooled.row(r) = t.zcat.row(t.order[static_cast<std::size_t>(r)]);

        const Mat& w1 = tensors_[L];
        const Mat& b1 = tensors_[L + 1];
        t.y1_pre = t.pooled * w1.transpose();
        t.y1_pre.rowwise() += b1.col(0).transpose();
        const Mat y1 = t.y1_pre.cwiseMax(S(0));

        const Eigen::Index half = k / 2, c1 = y1.cols();
        t.q.resize(half, c1);
        t.pool_arg.assign(static_cast<std::size_t>(half * c1), 0);
        for (Eigen::Index p = 0; p < half; ++p)
            for (Eigen::Index i = 0; i < c1; ++i) {
                const bool second = y1(2 * p + 1, i) > y1(2 * p, i);
                t.q(p, i) = second ? y1(2 * p + 1, i) : y1(2 * p, i);
                t.pool_arg[static_cast<std::size_t>(p * c1 + i)] = 2 * p + (second ? 1 : 0);
            }

        const auto kw = static_cast<Eigen::Index>(config_.conv1d_kernel);
        const Eigen::Index m2 = half - kw + 1;
        t.qcol.resize(m2, kw * c1);
        for (Eigen::Index p = 0; p < m2; ++p)
            for (Eigen::Index j = 0; j < kw; ++j) t.qcol.block(p, j * c1, 1, c1) = t.q.row(p + j);
        const Mat& w2 = tensors_[L + 2];
        const Mat& b2 = tensors_[L + 3];
        t.y2_pre = t.qcol * w2.transpose();
        t.y2_pre.rowwise() += b2.col(0).transpose();
        const Mat y2 = t.y2_pre.cwiseMax(S(0));
        t.flat = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(y2.data(), y2.size());

        const Mat& wd = tensors_[L + 4];
        const Mat& bd = tensors_[L + 5];
        t.h_pre = wd * t.flat + bd.col(0);
        t.h = t.h_pre.cwiseMax(S(0));
        t.logit = (tensors_[L + 6] * t.h)(0, 0) + tensors_[L + 7](0, 0);
    }

    void backward(const Adjacency& adj, const Trace& t, bool label, std::vector<Mat>& grads) const {
        const std::size_t L = conv_layers();
        const S ds = sigmoid(t.logit) - (label ? S(1) : S(0));
        const Mat& wo = tensors_[L + 6];
        grads[L + 6] += ds * t.h.transpose();
        grads[L + 7](0, 0) += ds;
        Eigen::Matrix<S, Eigen::Dynamic, 1> dh_pre = (wo.transpose() * ds).col(0);
        for (Eigen::Index i = 0; i < dh_pre.size(); ++i)
            if (t.h_pre(i) <= 0) dh_pre(i) = 0;
        const Mat& wd = tensors_[L + 4];
        grads[L + 4] += dh_pre * t.flat.transpose();
        grads[L + 5].col(0) += dh_pre;
        Eigen::Matrix<S, Eigen::Dynamic, 1> dflat = wd.transpose() * dh_pre;

        Mat dy2 = Eigen::Map<const Mat>(dflat.data(), t.y2_pre.rows(), t.y2_pre.cols());
        dy2 = (t.y2_pre.array() > 0).select(dy2, S(0));
        grads[L + 2] += dy2.transpose() * t.qcol;
        grads[L + 3].col(0) += dy2.colwise().sum().transpose();
        const Mat dqcol = dy2 * tensors_[L + 2];

        const Eigen::Index c1 = t.q.cols();
        const auto kw = static_cast<Eigen::Index>(config_.conv1d_kernel);
        Mat dq = Mat::Zero(t.q.rows(), c1);
        for (Eigen::Index p = 0; p < dqcol.rows(); ++p)
            for (Eigen::Index j = 0; j < kw; ++j) dq.row(p + j) += dqcol.block(p, j * c1, 1, c1);
        Mat dy1 = Mat::Zero(t.y1_pre.rows(), c1);
        for (Eigen::Index p = 0; p < dq.rows(); ++p)
            for (Eigen::Index i = 0; i < c1; ++i) dy1(t.pool_arg[static_cast<std::size_t>(p * c1 + i)], i) += dq(p, i);
        dy1 = (t.y1_pre.array() > 0).select(dy1, S(0));
        grads[L] += dy1.transpose() * t.pooled;
        grads[L + 1].col(0) += dy1.colwise().sum().transpose();
        const Mat dpooled = dy1 * tensors_[L];

        const Eigen::Index n = t.zcat.rows();
        Mat dzcat = Mat::Zero(n, t.zcat.cols());
        for (Eigen::Index r = 0; r < std::min<Eigen::Index>(dpooled.rows(), n); ++r)
            dzcat.row(t.order[static_cast<std::size_t>(r)]) += dpooled.row(r);

        Eigen::Index col = t.zcat.cols();
        Mat dz;  // gradient flowing into z[l] from layer l + 1
        for (std::size_t l = L; l-- > 0;) {
            const Eigen::Index width = t.z[l].cols();
            col -= width;
            Mat dzl = dzcat.middleCols(col, width);
            if (l + 1 < L) dzl += dz;
            const Mat dpre = dzl.cwiseProduct((1 - t.z[l].array().square()).matrix());
            const Mat dh = propagate_transposed<S>(adj, dpre);
            const Mat& input = l == 0 ? t.x : t.z[l - 1];
            grads[l] += input.transpose() * dh;
            if (l > 0) dz = dh * tensors_[l].transpose();
        }
    }

    GnnConfig config_;
    std::size_t k_ = 0;
    std::vector<Mat> tensors_;
    std::vector<std::string> names_;
};

using GnnModel = Dgcnn<double>;

/// Sort-pool size: the smallest c such that the given share of graphs has at most c nodes.
inline std::size_t sort_pool_size(std::span<const EnclosingSubgraph> graphs, double percentile, std::size_t floor) {
    if (graphs.empty()) return floor;
    std::vector<std::size_t> sizes;
    for (const EnclosingSubgraph& g : graphs) sizes.push_back(g.size());
    std::sort(sizes.begin(), sizes.end());
    auto idx = static_cast<std::size_t>(std::ceil(percentile * static_cast<double>(sizes.size())));
    idx = std::clamp<std::size_t>(idx, 1, sizes.size()) - 1;
    return std::max(sizes[idx], floor);
}

/// Area under the ROC curve with ties counted half.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& labels) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2;
        for (std::size_t r = i; r < j; ++r)
            if (labels[idx[r]]) {
                rank_sum += avg_rank;
                ++pos;
            }
        i = j;
    }
    const std::size_t neg = scores.size() - pos;
    if (pos == 0 || neg == 0) return 0.5;
    return (rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2) /
           (static_cast<double>(pos) * static_cast<double>(neg));
}

inline std::vector<double> predict_batch(const GnnModel& model, std::span<const EnclosingSubgraph> graphs,
                                         std::size_t threads = 1) {
    std::vector<double> out(graphs.size());
    parallel_for(graphs.size(), threads, [&](std::size_t i) { out[i] = model.forward(graphs[i]); });
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0, train_accuracy = 0;
    double val_loss = 0, val_accuracy = 0, val_auc = 0;
};

struct TrainResult {
    GnnModel model;
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
};

struct Evaluation {
    double loss = 0, accuracy = 0, auc = 0.5;
};

inline Evaluation evaluate(const GnnModel& model, std::span<const EnclosingSubgraph> graphs, std::size_t threads = 1) {
    Evaluation e;
    if (graphs.empty()) return e;
    std::vector<double> losses(graphs.size()), scores(graphs.size());
    parallel_for(graphs.size(), threads, [&](std::size_t i) {
        GnnModel::Trace t;
        scores[i] = model.forward(graphs[i], &t);
        losses[i] = GnnModel::bce(t.logit, graphs[i].label.value());
    });
    std::vector<bool> labels;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        e.loss += losses[i];
        correct += (scores[i] >= 0.5) == *graphs[i].label;
        labels.push_back(*graphs[i].label);
    }
    e.loss /= static_cast<double>(graphs.size());
    e.accuracy = static_cast<double>(correct) / static_cast<double>(graphs.size());
    e.auc = roc_auc(scores, labels);
    return e;
}

/// Adam over a model's tensors.
class Adam {
public:
    Adam(const GnnModel& model, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(model.zero_like()), v_(model.zero_like()) {}

    void step(GnnModel& model, const std::vector<GnnModel::Mat>& grads) {
        ++t_;
        const double c1 = 1 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1 - std::pow(b2_, static_cast<double>(t_));
        auto& w = model.tensors();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1 - b1_) * grads[i];
            v_[i] = b2_ * v_[i] + (1 - b2_) * grads[i].cwiseProduct(grads[i]);
            w[i].array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    std::vector<GnnModel::Mat> m_, v_;
    std::size_t t_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training; returns the checkpoint with the best validation score.
///
/// The sample order is reshuffled every epoch from the seed. Per-batch gradients are summed in
/// sample order within each worker and workers are reduced in order, so a fixed thread count
/// gives bitwise-identical runs.
inline TrainResult train(const GnnConfig& config, std::span<const EnclosingSubgraph> train_set,
                         std::span<const EnclosingSubgraph> validation, const EpochCallback& on_epoch = {}) {
    config.validate();
    std::size_t pos = 0;
    for (const EnclosingSubgraph& g : train_set) {
        if (!g.label) throw TrainingError("training sample without a label");
        pos += *g.label;
    }
    if (pos == 0 || pos == train_set.size()) throw TrainingError("training set must contain both classes");
    for (const EnclosingSubgraph& g : validation)
        if (!g.label) throw TrainingError("validation sample without a label");

    const std::size_t k = sort_pool_size(train_set, config.sortpool_percentile, config.sortpool_floor);
    TrainResult result{GnnModel(config, k), {}, 0};
    GnnModel& model = result.model;
    model.initialize(derive_seed(config.seed, 0));
    GnnModel best = model;
    double best_score = 0;
    Adam adam(model, config.learning_rate);
    Rng rng(derive_seed(config.seed, 1));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t threads = std::max<std::size_t>(1, config.threads);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(std::span(order), rng);
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::size_t workers = std::min(threads, end - start);
            std::vector<std::vector<GnnModel::Mat>> partial(workers, model.zero_like());
            std::vector<double> worker_loss(workers, 0);
            std::vector<std::size_t> worker_correct(workers, 0);
            const std::size_t span_len = (end - start + workers - 1) / workers;
            parallel_for(workers, workers, [&](std::size_t w) {
                for (std::size_t i = start + w * span_len; i < std::min(end, start + (w + 1) * span_len); ++i) {
                    const EnclosingSubgraph& g = train_set[order[i]];
                    worker_loss[w] += model.loss_and_gradient(g, *g.label, partial[w]);
                }
            });
            auto& grads = partial[0];
            for (std::size_t w = 1; w < workers; ++w)
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += partial[w][i];
            const double scale = 1.0 / static_cast<double>(end - start);
            for (auto& g : grads) g *= scale;
            for (double l : worker_loss) loss_sum += l;
            adam.step(model, grads);
        }
        if (!std::isfinite(loss_sum)) throw TrainingError("loss diverged in epoch " + std::to_string(epoch));
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        Evaluation tr = evaluate(model, train_set, threads);
        rec.train_accuracy = tr.accuracy;
        Evaluation va = validation.empty() ? tr : evaluate(model, validation, threads);
        rec.val_loss = va.loss;
        rec.val_accuracy = va.accuracy;
        rec.val_auc = va.auc;
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);

        double score = config.select_by == SelectBy::Loss       ? -va.loss
                       : config.select_by == SelectBy::Accuracy ? va.accuracy
                                                                : va.auc;
        if (epoch == 1 || score > best_score) {
            best_score = score;
            best = model;
            result.best_epoch = epoch;
        }
    }
    if (config.epochs > 0) model = std::move(best);
    return result;
}

inline std::string format_log(const std::vector<EpochRecord>& log) {
    std::ostringstream out;
    out << "epoch train_loss train_acc val_loss val_acc val_auc\n";
    out.setf(std::ios::fixed);
    out.precision(6);
    for (const EpochRecord& r : log)
        out << r.epoch << ' ' << r.train_loss << ' ' << r.train_accuracy << ' ' << r.val_loss << ' ' << r.val_accuracy
            << ' ' << r.val_auc << "\n";
    return out.str();
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <class T>
std::string join(const T& values) {
    std::string s;
    for (auto v : values) s += (s.empty() ? "" : ",") + std::to_string(v);
    return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream in(s);
    for (std::string part; std::getline(in, part, ',');) out.push_back(std::stoull(part));
    return out;
}

}  // namespace detail

/// Text header, raw little-endian float64 tensor blobs, and an FNV-1a checksum line.
inline void write_model(const GnnModel& model, std::ostream& out) {
    std::ostringstream body;
    const GnnConfig& c = model.config();
    body << "# relink dgcnn model v1\n";
    body << "conv_channels " << detail::join(c.conv_channels) << "\n";
    body << "conv1d_channels " << detail::join(c.conv1d_channels) << "\n";
    body << "conv1d_kernel " << c.conv1d_kernel << "\n";
    body << "dense_width " << c.dense_width << "\n";
    body << "drnl_cap " << c.drnl_cap << "\n";
    body << "h_train " << c.h_train << "\n";
    body << "sort_k " << model.sort_k() << "\n";
    for (std::size_t i = 0; i < model.tensors().size(); ++i) {
        const auto& t = model.tensors()[i];
        body << "tensor " << model.names()[i] << ' ' << t.rows() << ' ' << t.cols() << "\n";
        for (Eigen::Index j = 0; j < t.size(); ++j) {
            double v = t.data()[j];
            char raw[8];
            std::memcpy(raw, &v, 8);
            body.write(raw, 8);
        }
        body << "\n";
    }
    const std::string text = body.str();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(detail::fnv1a(text)));
    out << text << "checksum " << hex << "\n";
}

inline GnnModel read_model(std::istream& in) {
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto pos = all.rfind("checksum ");
    if (pos == std::string::npos) throw ParseError(0, "model file has no checksum");
    const std::string body = all.substr(0, pos);
    unsigned long long stored = 0;
    if (std::sscanf(all.c_str() + pos, "checksum %16llx", &stored) != 1 || stored != detail::fnv1a(body))
        throw ParseError(0, "model checksum mismatch");

    std::istringstream s(body);
    std::string line;
    std::getline(s, line);
    if (line != "# relink dgcnn model v1") throw ParseError(1, "unsupported model version");
    GnnConfig c;
    std::size_t k = 0;
    auto field = [&](const char* name) {
        std::getline(s, line);
        std::istringstream l(line);
        std::string key, value;
        if (!(l >> key >> value) || key != name) throw ParseError(0, std::string("model header lacks '") + name + "'");
        return value;
    };
    try {
        c.conv_channels = detail::split_sizes(field("conv_channels"));
        auto c1 = detail::split_sizes(field("conv1d_channels"));
        if (c1.size() != 2) throw ParseError(0, "conv1d_channels needs two values");
        c.conv1d_channels = {c1[0], c1[1]};
        c.conv1d_kernel = std::stoull(field("conv1d_kernel"));
        c.dense_width = std::stoull(field("dense_width"));
        c.drnl_cap = static_cast<std::uint32_t>(std::stoul(field("drnl_cap")));
        c.h_train = std::stoull(field("h_train"));
        k = std::stoull(field("sort_k"));
    } catch (const std::logic_error&) {
        throw ParseError(0, "malformed model header");
    }
    c.sortpool_floor = std::min(c.sortpool_floor, k);
    c.sortpool_floor = std::max(c.sortpool_floor, 2 * c.conv1d_kernel);
    GnnModel model(c, k);
    for (std::size_t i = 0; i < model.tensors().size(); ++i) {
        auto& t = model.tensors()[i];
        std::getline(s, line);
        std::istringstream l(line);
        std::string word, name;
        Eigen::Index rows = 0, cols = 0;
        if (!(l >> word >> name >> rows >> cols) || word != "tensor" || name != model.names()[i] || rows != t.rows() ||
            cols != t.cols())
            throw ParseError(0, "tensor '" + model.names()[i] + "' has an unexpected shape");
        for (Eigen::Index j = 0; j < t.size(); ++j) {
            char raw[8];
            if (!s.read(raw, 8)) throw ParseError(0, "truncated tensor data");
            double v = 0;
            std::memcpy(&v, raw, 8);
            t.data()[j] = v;
        }
        std::getline(s, line);
    }
    return model;
}

inline std::string write_model(const GnnModel& model) {
    std::ostringstream out;
    write_model(model, out);
    return out.str();
}

inline GnnModel read_model(const std::string& bytes) {
    std::istringstream in(bytes);
    return read_model(in);
}

}  // namespace relink
