#include <gtest/gtest.h>

#include <chrono>

#include "relink/gnn.hpp"
#include "support/graphs.hpp"

using namespace relink;
using Mat = Matrix<double>;

namespace {

GnnConfig small_config() {
    GnnConfig c;
    c.epochs = 1;
    return c;
}

// Dense reference: tanh(D^-1 (A + I) Z W).
Mat dense_conv(const Adjacency& adj, const Mat& z, const Mat& w) {
    const auto n = static_cast<Eigen::Index>(adj.size());
    Mat a = Mat::Identity(n, n);
    for (std::size_t i = 0; i < adj.size(); ++i)
        for (auto j : adj[i]) a(static_cast<Eigen::Index>(i), j) = 1;
    Eigen::VectorXd deg = a.rowwise().sum();
    Mat p = deg.cwiseInverse().asDiagonal() * a;
    return (p * z * w).array().tanh().matrix();
}

double relative_error(const Mat& a, const Mat& b) {
    const double diff = (a - b).norm();
    const double scale = a.norm() + b.norm();
    if (diff < 1e-9) return 0;
    return diff / scale;
}

}  // namespace

TEST(GraphConv, SingleNodeIsIdentity) {
    Adjacency adj(1);
    Mat z(1, 3);
    z << 0.3, -0.2, 0.7;
    Mat pre = graph_conv_forward<double>(z, adj, Mat::Identity(3, 3), false);
    EXPECT_TRUE(pre.isApprox(z));
}

TEST(GraphConv, TwoConnectedNodesAverage) {
    Adjacency adj{{1}, {0}};
    Mat z(2, 2);
    z << 1, 0, 0, 1;
    Mat pre = graph_conv_forward<double>(z, adj, Mat::Identity(2, 2), false);
    EXPECT_DOUBLE_EQ(pre(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(pre(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(pre(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(pre(1, 1), 0.5);
}

TEST(GraphConv, MatchesDenseOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = fixtures::random_sample(rng, 8, 0.35);
        Mat z = Mat::Random(8, 5), w = Mat::Random(5, 4);
        Mat got = graph_conv_forward<double>(z, s.adj, w);
        EXPECT_LT((got - dense_conv(s.adj, z, w)).cwiseAbs().maxCoeff(), 1e-10);
        // Rows of the propagation operator sum to one.
        Mat ones = Mat::Ones(8, 1);
        EXPECT_LT((propagate<double>(s.adj, ones) - ones).cwiseAbs().maxCoeff(), 1e-12);
        // The transposed operator is the adjoint.
        Mat x = Mat::Random(8, 3), y = Mat::Random(8, 3);
        EXPECT_NEAR((propagate<double>(s.adj, x).cwiseProduct(y)).sum(),
                    (x.cwiseProduct(propagate_transposed<double>(s.adj, y))).sum(), 1e-12);
    }
    EXPECT_THROW(graph_conv_forward<double>(Mat::Zero(2, 3), Adjacency(2), Mat::Zero(4, 1)), ShapeError);
}

TEST(SortPool, IdentityWhenSorted) {
    Mat z(3, 2);
    z << 1, 3, 2, 2, 0, 1;
    EXPECT_EQ(sort_pool<double>(z, 3), z);
}

TEST(SortPool, PadsWithZeros) {
    Mat z(3, 2);
    z << 1, 1, 2, 3, 0, 2;
    Mat p = sort_pool<double>(z, 5);
    ASSERT_EQ(p.rows(), 5);
    EXPECT_EQ(p.row(0), z.row(1));
    EXPECT_EQ(p.row(1), z.row(2));
    EXPECT_EQ(p.row(2), z.row(0));
    EXPECT_TRUE(p.bottomRows(2).isZero());
}

TEST(SortPool, StableTiesAndProperty) {
    Mat z(4, 2);
    z << 0, 5, 1, 5, 2, 7, 3, 5;
    auto order = sort_pool_order<double>(z);
    EXPECT_EQ(order, (std::vector<std::uint32_t>{2, 0, 1, 3}));
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = static_cast<Eigen::Index>(1 + uniform_index(rng, 20));
        const auto c = 1 + uniform_index(rng, 25);
        Mat x = Mat::Random(n, 6);
        Mat p = sort_pool<double>(x, c);
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            if (r + 1 < p.rows() && r + 1 < n) {
                EXPECT_GE(p(r, 5), p(r + 1, 5));
            }
            bool found = p.row(r).isZero();
            for (Eigen::Index i = 0; i < n && !found; ++i) found = p.row(r) == x.row(i);
            EXPECT_TRUE(found);
        }
    }
}

TEST(Dgcnn, ShapesAndBounds) {
    GnnConfig c = small_config();
    GnnModel m(c, 25);
    m.initialize(7);
    EXPECT_EQ(c.total_channels(), 97u);
    Rng rng(2);
    auto s = fixtures::random_sample(rng, 40, 0.08);
    GnnModel::Trace t;
    double p = m.forward(s, &t);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_EQ(t.zcat.rows(), 40);
    EXPECT_EQ(t.zcat.cols(), 97);
    EXPECT_EQ(t.pooled.rows(), 25);
    EXPECT_EQ(t.pooled.cols(), 97);
    EXPECT_EQ(t.pooled.size(), 97 * 25);
    EXPECT_EQ(t.q.rows(), 12);
    EXPECT_EQ(t.flat.size(), 32 * 8);
    EXPECT_EQ(m.tensors()[c.conv_channels.size() + 4].cols(), 32 * 8);
}

TEST(Dgcnn, WidthMismatch) {
    GnnConfig c = small_config();
    c.drnl_cap = 10;
    GnnModel m(c, 10);
    m.initialize(1);
    Adjacency adj(3);
    EXPECT_THROW(m.forward_features(adj, Mat::Zero(3, 61)), ShapeError);
}

TEST(Dgcnn, PermutationInvariantWithDistinctKeys) {
    GnnModel m(small_config(), 12);
    m.initialize(5);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = fixtures::random_sample(rng, 15, 0.2);
        GnnModel::Trace t;
        double p = m.forward(s, &t);
        Eigen::VectorXd key = t.zcat.col(96);
        std::vector<double> keys(key.data(), key.data() + key.size());
        std::sort(keys.begin(), keys.end());
        if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) continue;
        // Relabel nodes 2..n-1 (targets stay first).
        std::vector<std::uint32_t> perm(15);
        std::iota(perm.begin(), perm.end(), 0U);
        shuffle(std::span(perm).subspan(2), rng);
        EnclosingSubgraph q = s;
        q.adj.assign(15, {});
        for (std::uint32_t i = 0; i < 15; ++i) {
            q.slot[perm[i]] = s.slot[i];
            q.flags[perm[i]] = s.flags[i];
            q.labels[perm[i]] = s.labels[i];
            for (auto j : s.adj[i]) q.adj[perm[i]].push_back(perm[j]);
        }
        for (auto& a : q.adj) std::sort(a.begin(), a.end());
        EXPECT_NEAR(m.forward(q), p, 1e-9);
    }
}

TEST(Dgcnn, GradientMatchesFiniteDifferences) {
    GnnConfig c = small_config();
    Rng rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        GnnModel m(c, 10);
        m.initialize(100 + trial);
        for (std::size_t t = 0; t < m.tensors().size(); ++t)
            if (m.names()[t].ends_with(".bias")) m.tensors()[t].setRandom();
        auto s = fixtures::random_sample(rng, 5, 0.5);
        const bool label = trial % 2 == 0;
        auto grads = m.zero_like();
        m.loss_and_gradient(s, label, grads);
        for (std::size_t t = 0; t < m.tensors().size(); ++t) {
            Mat& w = m.tensors()[t];
            Mat fd(w.rows(), w.cols());
            const double eps = 1e-6;
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                const double orig = w.data()[i];
                w.data()[i] = orig + eps;
                const double up = m.loss(s, label);
                w.data()[i] = orig - eps;
                const double down = m.loss(s, label);
                w.data()[i] = orig;
                fd.data()[i] = (up - down) / (2 * eps);
            }
            EXPECT_LT(relative_error(grads[t], fd), 1e-4) << m.names()[t] << " trial " << trial;
        }
    }
}

TEST(Train, ZeroLearningRateKeepsInitialisation) {
    GnnConfig c = small_config();
    c.learning_rate = 0;
    std::vector<EnclosingSubgraph> data;
    for (std::size_t n = 4; n < 14; ++n) {
        data.push_back(fixtures::triangle_or_path(true, n));
        data.push_back(fixtures::triangle_or_path(false, n));
    }
    TrainResult r = train(c, data, {});
    GnnModel fresh(c, r.model.sort_k());
    fresh.initialize(derive_seed(c.seed, 0));
    for (std::size_t t = 0; t < fresh.tensors().size(); ++t) EXPECT_EQ(r.model.tensors()[t], fresh.tensors()[t]);
    EXPECT_EQ(r.log.size(), 1u);
}

TEST(Train, SingleClassIsRejected) {
    std::vector<EnclosingSubgraph> data{fixtures::triangle_or_path(true, 5), fixtures::triangle_or_path(true, 6)};
    EXPECT_THROW(train(small_config(), data, {}), TrainingError);
}

TEST(Train, DeterministicPerSeed) {
    GnnConfig c = small_config();
    c.epochs = 2;
    c.learning_rate = 1e-3;
    std::vector<EnclosingSubgraph> data;
    for (std::size_t n = 4; n < 20; ++n) {
        data.push_back(fixtures::triangle_or_path(true, n));
        data.push_back(fixtures::triangle_or_path(false, n));
    }
    auto a = train(c, data, data);
    auto b = train(c, data, data);
    EXPECT_EQ(format_log(a.log), format_log(b.log));
    EXPECT_EQ(write_model(a.model), write_model(b.model));
}

TEST(Train, SeparatesTrianglesFromPaths) {
    GnnConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 8;
    std::vector<EnclosingSubgraph> train_set, val_set;
    for (std::size_t n = 4; n < 40; ++n) {
        for (bool tri : {true, false}) (n % 5 == 0 ? val_set : train_set).push_back(fixtures::triangle_or_path(tri, n));
        EXPECT_NE(fixtures::triangle_or_path(true, n).edge_count(), fixtures::triangle_or_path(false, n).edge_count());
    }
    auto r = train(c, train_set, val_set);
    auto tr = evaluate(r.model, train_set);
    auto va = evaluate(r.model, val_set);
    EXPECT_GE(tr.accuracy, 0.95);
    EXPECT_GE(va.accuracy, 0.90);
}

TEST(Predict, BatchMatchesForwardAndHandlesEmpty) {
    GnnModel m(small_config(), 10);
    m.initialize(3);
    EXPECT_TRUE(predict_batch(m, {}).empty());
    Rng rng(4);
    std::vector<EnclosingSubgraph> gs;
    for (int i = 0; i < 9; ++i) gs.push_back(fixtures::random_sample(rng, 3 + i * 3, 0.2));
    auto scores = predict_batch(m, gs, 3);
    for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_EQ(scores[i], m.forward(gs[i]));
}

TEST(Auc, KnownValues) {
    std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    std::vector<bool> y{false, false, true, true};
    EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
    std::vector<double> tied{0.5, 0.5};
    EXPECT_DOUBLE_EQ(roc_auc(tied, {true, false}), 0.5);
}

TEST(ModelFile, RoundTripAndChecksum) {
    GnnModel m(small_config(), 14);
    m.initialize(9);
    std::string bytes = write_model(m);
    GnnModel back = read_model(bytes);
    EXPECT_EQ(back.sort_k(), 14u);
    for (std::size_t t = 0; t < m.tensors().size(); ++t) EXPECT_EQ(back.tensors()[t], m.tensors()[t]);
    EXPECT_EQ(write_model(back), bytes);
    std::string corrupt = bytes;
    corrupt[corrupt.size() / 2] ^= 0x5A;
    EXPECT_THROW(read_model(corrupt), ParseError);
}
