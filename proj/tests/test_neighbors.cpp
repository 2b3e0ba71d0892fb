#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"

using namespace nbrseg;
using namespace nbrseg::testing;

namespace {

/// Plain-loop evaluation of an Mlp on one row.
std::vector<double> mlp_row(const Mlp<double>& mlp, std::vector<double> x) {
    for (const auto& layer : mlp.layers) {
        const auto& w = layer.weights->value;
        const auto& b = layer.bias->value;
        std::vector<double> y(w.cols());
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double s = b(0, j);
            for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w(i, j);
            y[j] = std::max(s, 0.0);
        }
        x = std::move(y);
    }
    return x;
}

std::vector<std::size_t> brute_force_knn_row(const Matrix<double>& d, std::size_t i, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < d.cols(); ++j)
        if (j != i) all.emplace_back(d(i, j), j);
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < k; ++j) out.push_back(all[j].second);
    return out;
}

double sse(const Matrix<double>& pts, const std::vector<std::size_t>& assign, std::size_t K) {
    Matrix<double> mean(K, pts.cols());
    std::vector<double> count(K, 0);
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        ++count[assign[i]];
        for (std::size_t a = 0; a < pts.cols(); ++a) mean(assign[i], a) += pts(i, a);
    }
    for (std::size_t c = 0; c < K; ++c)
        for (std::size_t a = 0; a < pts.cols(); ++a) mean(c, a) /= count[c];
    double s = 0;
    for (std::size_t i = 0; i < pts.rows(); ++i)
        for (std::size_t a = 0; a < pts.cols(); ++a) s += std::pow(pts(i, a) - mean(assign[i], a), 2);
    return s;
}

void expect_fixed_point(const Matrix<double>& pts, const ClusterAssignment<double>& ca) {
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        const double own = detail::squared_l2<double>(pts.row(i), ca.centers.row(ca.assignments[i]));
        for (std::size_t c = 0; c < ca.num_clusters(); ++c)
            EXPECT_LE(own, detail::squared_l2<double>(pts.row(i), ca.centers.row(c)) + 1e-12) << "point " << i;
    }
}

void expect_monotone(const ClusterAssignment<double>& ca) {
    for (std::size_t i = 1; i < ca.inertia_history.size(); ++i)
        EXPECT_LE(ca.inertia_history[i], ca.inertia_history[i - 1] * (1 + 1e-12) + 1e-15);
}

} // namespace

TEST(PairwiseL1, Examples) {
    EXPECT_EQ(pairwise_l1(Matrix<double>(1, 4)), Matrix<double>(1, 1));
    EXPECT_EQ(pairwise_l1(Matrix<double>::from_rows({{0}, {3}})), Matrix<double>::from_rows({{0, 3}, {3, 0}}));
    auto d = pairwise_l1(Matrix<double>::from_rows({{1, 2}, {3, 1}, {0, 0}}));
    EXPECT_EQ(d(0, 1), 3);
    EXPECT_EQ(d(0, 2), 3);
    EXPECT_EQ(d(1, 2), 4);
}

TEST(PairwiseL1, MatchesDirectSummationAndIsAMetric) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = random_matrix(15, 6, seed, -3, 3);
        auto d = pairwise_l1(x);
        for (std::size_t i = 0; i < 15; ++i) {
            EXPECT_EQ(d(i, i), 0.0);
            for (std::size_t j = 0; j < 15; ++j) {
                double s = 0;
                for (std::size_t f = 0; f < 6; ++f) s += std::abs(x(i, f) - x(j, f));
                EXPECT_EQ(d(i, j), s);
                EXPECT_EQ(d(i, j), d(j, i));
                EXPECT_GE(d(i, j), 0.0);
                for (std::size_t k = 0; k < 15; k += 4) EXPECT_LE(d(i, j), d(i, k) + d(k, j) + 1e-12);
            }
        }
    }
}

TEST(Knn, CollinearExample) {
    auto idx = knn_indices(pairwise_l1(Matrix<double>::from_rows({{0}, {1}, {5}})), 1);
    EXPECT_EQ(idx.indices, (std::vector<std::size_t>{1, 0, 1}));
}

TEST(Knn, CompleteNeighbourhood) {
    auto d = pairwise_l1(random_matrix(6, 2, 3));
    auto idx = knn_indices(d, 5);
    for (std::size_t i = 0; i < 6; ++i) {
        std::set<std::size_t> row;
        for (std::size_t j = 0; j < 5; ++j) row.insert(idx.at(i, j));
        EXPECT_EQ(row.size(), 5u);
        EXPECT_FALSE(row.count(i));
    }
}

TEST(Knn, DuplicatePointsTieToLowestIndex) {
    auto x = Matrix<double>::from_rows({{1, 1}, {0, 0}, {1, 1}, {1, 1}});
    auto a = knn_indices(pairwise_l1(x), 2);
    EXPECT_EQ(a.at(0, 0), 2u);
    EXPECT_EQ(a.at(0, 1), 3u);
    EXPECT_EQ(a.at(3, 0), 0u);
    EXPECT_EQ(a.at(3, 1), 2u);
    EXPECT_EQ(knn_indices(pairwise_l1(x), 2).indices, a.indices);
}

TEST(Knn, TooLargeKThrows) {
    EXPECT_THROW(knn_indices(Matrix<double>(3, 3), 3), ValidationError);
    EXPECT_THROW(knn_indices(Matrix<double>(0, 0), 0), ValidationError);
}

TEST(Knn, MatchesFullSortOracle) {
    std::mt19937_64 rng(42);
    for (int inst = 0; inst < 100; ++inst) {
        std::uniform_int_distribution<std::size_t> nd(2, 200);
        const std::size_t n = nd(rng);
        std::uniform_int_distribution<std::size_t> kd(1, std::min<std::size_t>(n - 1, 30));
        const std::size_t k = kd(rng);
        // Every other instance uses small integer features to force ties.
        Matrix<double> x = random_matrix(n, 3, rng(), 0, 4);
        if (inst % 2)
            for (auto& v : x.data()) v = std::floor(v);
        auto d = pairwise_l1(x);
        auto idx = knn_indices(d, k);
        for (std::size_t i = 0; i < n; ++i) {
            auto oracle = brute_force_knn_row(d, i, k);
            for (std::size_t j = 0; j < k; ++j) {
                ASSERT_EQ(idx.at(i, j), oracle[j]) << "instance " << inst << " row " << i;
                if (j) {
                    EXPECT_LE(idx.distance(i, j - 1), idx.distance(i, j));
                }
            }
        }
    }
}

TEST(NFModule, SymmetricPair) {
    ParamStore<double> s;
    std::mt19937_64 rng(1);
    auto nf = NFModule<double>::create(s, "nf", 3, 5, false, rng);
    Tape<double> t;
    auto out = nf.forward(t.constant(random_matrix(2, 3, 2)), 1).features.value();
    EXPECT_TRUE(std::equal(out.row(0).begin(), out.row(0).end(), out.row(1).begin()));
}

TEST(NFModule, ShrinksKForSmallInputs) {
    ParamStore<double> s;
    std::mt19937_64 rng(1);
    auto nf = NFModule<double>::create(s, "nf", 3, 5, false, rng);
    Tape<double> t;
    auto out = nf.forward(t.constant(random_matrix(4, 3, 2)), 30);
    EXPECT_EQ(out.index.k, 3u);
}

TEST(NFModule, MatchesPerPointBruteForce) {
    for (bool center : {false, true}) {
        ParamStore<double> s;
        std::mt19937_64 rng(3);
        auto nf = NFModule<double>::create(s, "nf", 4, 6, center, rng);
        auto x = random_matrix(9, 4, 4);
        Tape<double> t;
        auto out = nf.forward(t.constant(x), 3);
        auto idx = knn_indices(pairwise_l1(x), 3);
        EXPECT_EQ(out.index.indices, idx.indices);
        EXPECT_EQ(out.distances.value(), pairwise_l1(x));
        for (std::size_t i = 0; i < 9; ++i) {
            std::vector<double> best(6, -1e300);
            std::vector<std::size_t> slice{i};
            for (std::size_t j = 0; j < 3; ++j) slice.push_back(idx.at(i, j));
            for (std::size_t r : slice) {
                std::vector<double> in(x.row(r).begin(), x.row(r).end());
                if (center) in.insert(in.end(), x.row(i).begin(), x.row(i).end());
                auto y = mlp_row(nf.mlp, in);
                for (std::size_t c = 0; c < 6; ++c) best[c] = std::max(best[c], y[c]);
            }
            for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.features.value()(i, c), best[c], 1e-12);
        }
    }
}

TEST(NFModule, PermutationEquivariant) {
    ParamStore<double> s;
    std::mt19937_64 rng(5);
    auto nf = NFModule<double>::create(s, "nf", 4, 6, false, rng);
    auto x = random_matrix(12, 4, 6);
    auto run = [&](const Matrix<double>& m) {
        Tape<double> t;
        return nf.forward(t.constant(m), 3).features.value();
    };
    auto base = run(x);
    std::mt19937_64 prng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto perm = random_permutation(12, prng);
        EXPECT_EQ(run(permute_rows(x, perm)), permute_rows(base, perm));
    }
}

TEST(NFModule, FrozenIndexGradientCheck) {
    ParamStore<double> s;
    std::mt19937_64 rng(8);
    auto nf = NFModule<double>::create(s, "nf", 4, 6, false, rng);
    detail::jitter_biases(s, rng);
    auto& x = s.create("x", 5, 4);
    x.value = random_matrix(5, 4, 9);
    auto frozen = knn_indices(pairwise_l1(x.value), 2);
    auto w = random_matrix(5, 6, 10);
    auto rep = grad_check<double>([&](Tape<double>& t) { return weighted_sum(nf.forward(t.param(x), 2, &frozen).features, w); },
                                  s.all(), 1e-5, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst_param;
}

TEST(NFModule, ReceptiveFieldGrowsOneHopPerModule) {
    // Path graph: point i's only neighbour is i−1 (point 0 points at 1).
    const std::size_t n = 8, depth = 6, width = 5;
    NeighborIndex<double> path;
    path.num_points = n;
    path.k = 1;
    for (std::size_t i = 0; i < n; ++i) {
        path.indices.push_back(i == 0 ? 1 : i - 1);
        path.distances.push_back(1);
    }
    ParamStore<double> s;
    std::mt19937_64 rng(11);
    std::vector<NFModule<double>> stack;
    for (std::size_t m = 0; m < depth; ++m)
        stack.push_back(NFModule<double>::create(s, "nf" + std::to_string(m), m == 0 ? 3 : width, width, false, rng));
    // Non-negative weights keep a large positive perturbation visible through every max-pool.
    for (auto* p : s.all())
        for (auto& v : p->value.data()) v = std::abs(v);

    auto x = random_matrix(n, 3, 12, 0, 1);
    auto bumped = x;
    bumped(0, 0) += 100;
    auto run = [&](const Matrix<double>& in, std::size_t modules) {
        Tape<double> t;
        Var<double> cur = t.constant(in);
        for (std::size_t m = 0; m < modules; ++m) cur = stack[m].forward_with_index(cur, path);
        return cur.value();
    };
    for (std::size_t m = 1; m <= depth; ++m) {
        auto a = run(x, m), b = run(bumped, m);
        for (std::size_t i = 1; i < n; ++i) {
            const bool changed = !std::equal(a.row(i).begin(), a.row(i).end(), b.row(i).begin());
            EXPECT_EQ(changed, i <= m) << "point " << i << " after " << m << " modules";
        }
    }
}

TEST(KMeans, KFormula) {
    EXPECT_EQ(kmeans_K(4096), 78u);
    EXPECT_EQ(kmeans_K(256), 4u);
    EXPECT_EQ(kmeans_K(52), 1u);
    EXPECT_EQ(kmeans_K(10), 1u);
    EXPECT_EQ(kmeans_K(104), 2u);
    for (std::size_t n = 52; n < 5000; n += 37) EXPECT_EQ(kmeans_K(n), n / 52);
}

TEST(KMeans, EveryPointItsOwnCenter) {
    auto pts = random_matrix(7, 3, 13);
    std::mt19937_64 rng(1);
    auto ca = kmeans(pts, 7, KMeansConfig{}, rng);
    EXPECT_EQ(ca.inertia, 0.0);
    std::set<std::size_t> ids(ca.assignments.begin(), ca.assignments.end());
    EXPECT_EQ(ids.size(), 7u);
}

TEST(KMeans, SingleClusterIsTheMean) {
    auto pts = random_matrix(9, 2, 14);
    std::mt19937_64 rng(1);
    auto ca = kmeans(pts, 1, KMeansConfig{}, rng);
    for (std::size_t a = 0; a < 2; ++a) {
        double m = 0;
        for (std::size_t i = 0; i < 9; ++i) m += pts(i, a);
        EXPECT_NEAR(ca.centers(0, a), m / 9, 1e-15);
    }
}

TEST(KMeans, RejectsBadK) {
    std::mt19937_64 rng(1);
    EXPECT_THROW(kmeans(random_matrix(3, 2, 1), 4, KMeansConfig{}, rng), ValidationError);
    EXPECT_THROW(kmeans(random_matrix(3, 2, 1), 0, KMeansConfig{}, rng), ValidationError);
}

TEST(KMeans, TwoClumpsMatchExhaustivePartition) {
    std::mt19937_64 g(15);
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    Matrix<double> pts(10, 2);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t a = 0; a < 2; ++a) pts(i, a) = (i < 5 ? 0.0 : 10.0) + jitter(g);
    double best = 1e300;
    for (unsigned mask = 1; mask < (1u << 9); ++mask) { // point 9 fixed in cluster 0
        std::vector<std::size_t> a(10);
        for (std::size_t i = 0; i < 9; ++i) a[i] = (mask >> i) & 1u;
        best = std::min(best, sse(pts, a, 2));
    }
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        auto ca = kmeans(pts, 2, KMeansConfig{}, rng);
        for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(ca.assignments[i], i < 5 ? 0u : 1u);
        EXPECT_NEAR(ca.inertia, best, 1e-12 * best);
        expect_fixed_point(pts, ca);
        expect_monotone(ca);
    }
}

TEST(KMeans, ExhaustiveOptimumOnRandomSmallInstances) {
    // Random well-separated pairs of clumps, N ≤ 10, K = 2.
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
        std::mt19937_64 g(100 + inst);
        std::uniform_real_distribution<double> u(-0.3, 0.3), centre(-5, 5);
        const std::size_t n = 4 + inst % 7;
        const double cx = centre(g), cy = centre(g);
        Matrix<double> pts(n, 2);
        for (std::size_t i = 0; i < n; ++i) {
            pts(i, 0) = (i % 2 ? cx : -cx) + u(g) + (i % 2 ? 3 : -3);
            pts(i, 1) = (i % 2 ? cy : -cy) + u(g);
        }
        double best = 1e300;
        for (unsigned mask = 1; mask < (1u << (n - 1)); ++mask) {
            std::vector<std::size_t> a(n);
            for (std::size_t i = 0; i + 1 < n; ++i) a[i] = (mask >> i) & 1u;
            best = std::min(best, sse(pts, a, 2));
        }
        std::mt19937_64 rng(inst);
        auto ca = kmeans(pts, 2, KMeansConfig{}, rng);
        EXPECT_NEAR(ca.inertia, best, 1e-9 * std::max(best, 1.0)) << "instance " << inst;
        expect_fixed_point(pts, ca);
        expect_monotone(ca);
    }
}

TEST(KMeans, FixedPointAndMonotoneInertiaOnRandomRuns) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto pts = random_matrix(60 + seed, 3, 200 + seed, 0, 1);
        std::mt19937_64 rng(seed);
        KMeansConfig cfg;
        cfg.max_iters = 100;
        cfg.tol = 0;
        auto ca = kmeans(pts, 2 + seed % 6, cfg, rng);
        EXPECT_TRUE(ca.converged);
        expect_fixed_point(pts, ca);
        expect_monotone(ca);
        std::vector<std::size_t> count(ca.num_clusters(), 0);
        for (auto a : ca.assignments) ++count[a];
        for (auto c : count) EXPECT_GT(c, 0u);
    }
}

TEST(KMeans, EmptyClusterIsReseeded) {
    // Three identical points and one outlier with K=3: at least one seed
    // collides, so an empty cluster must be repaired.
    auto pts = Matrix<double>::from_rows({{0, 0}, {0, 0}, {0, 0}, {5, 5}});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        auto ca = kmeans(pts, 3, KMeansConfig{}, rng);
        std::vector<std::size_t> count(3, 0);
        for (auto a : ca.assignments) ++count[a];
        for (auto c : count) EXPECT_GT(c, 0u);
    }
}

TEST(KMeans, CanonicalNumbering) {
    auto pts = random_matrix(40, 2, 16);
    std::mt19937_64 rng(3);
    auto ca = kmeans(pts, 5, KMeansConfig{}, rng);
    std::size_t next = 0;
    for (auto a : ca.assignments) {
        EXPECT_LE(a, next);
        if (a == next) ++next;
    }
    std::mt19937_64 again(3);
    EXPECT_EQ(kmeans(pts, 5, KMeansConfig{}, again).assignments, ca.assignments);
}

TEST(NWModule, MatchesPerClusterBruteForce) {
    ParamStore<double> s;
    std::mt19937_64 rng(17);
    auto nw = NWModule<double>::create(s, "nw", 4, 5, rng);
    auto x = random_matrix(6, 4, 18);
    ClusterAssignment<double> ca;
    ca.assignments = {0, 1, 1, 0, 1, 0};
    ca.centers = Matrix<double>(2, 3);
    Tape<double> t;
    auto out = nw.forward(t.constant(x), ca);
    ASSERT_EQ(out.regional.rows(), 2u);
    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<double> mean(4, 0);
        double cnt = 0;
        for (std::size_t i = 0; i < 6; ++i)
            if (ca.assignments[i] == c) {
                ++cnt;
                for (std::size_t f = 0; f < 4; ++f) mean[f] += x(i, f);
            }
        for (auto& v : mean) v /= cnt;
        std::vector<double> best(5, -1e300);
        for (std::size_t i = 0; i < 6; ++i) {
            if (ca.assignments[i] != c) continue;
            std::vector<double> in(x.row(i).begin(), x.row(i).end());
            in.insert(in.end(), mean.begin(), mean.end());
            auto y = mlp_row(nw.mlp, in);
            for (std::size_t k = 0; k < 5; ++k) best[k] = std::max(best[k], y[k]);
        }
        for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(out.regional.value()(c, k), best[k], 1e-12);
    }
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t k = 0; k < 5; ++k)
            EXPECT_EQ(out.broadcast.value()(i, k), out.regional.value()(ca.assignments[i], k));
}

TEST(NWModule, SingleClusterBroadcastsOneRow) {
    ParamStore<double> s;
    std::mt19937_64 rng(19);
    auto nw = NWModule<double>::create(s, "nw", 3, 4, rng);
    ClusterAssignment<double> ca;
    ca.assignments.assign(5, 0);
    ca.centers = Matrix<double>(1, 3);
    Tape<double> t;
    auto out = nw.forward(t.constant(random_matrix(5, 3, 20)), ca).broadcast.value();
    for (std::size_t i = 1; i < 5; ++i) EXPECT_TRUE(std::equal(out.row(0).begin(), out.row(0).end(), out.row(i).begin()));
}

TEST(NWModule, OwnClusterIsPerPointTransform) {
    ParamStore<double> s;
    std::mt19937_64 rng(21);
    auto nw = NWModule<double>::create(s, "nw", 3, 4, rng);
    auto x = random_matrix(4, 3, 22);
    ClusterAssignment<double> ca;
    ca.assignments = {0, 1, 2, 3};
    ca.centers = Matrix<double>(4, 3);
    Tape<double> t;
    auto out = nw.forward(t.constant(x), ca).broadcast.value();
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> in(x.row(i).begin(), x.row(i).end());
        in.insert(in.end(), x.row(i).begin(), x.row(i).end());
        auto y = mlp_row(nw.mlp, in);
        for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out(i, k), y[k], 1e-12);
    }
}

TEST(NWModule, PermutationEquivariantWithCanonicalClusters) {
    ParamStore<double> s;
    std::mt19937_64 rng(23);
    auto nw = NWModule<double>::create(s, "nw", 3, 4, rng);
    auto x = random_matrix(10, 3, 24);
    auto pos = random_matrix(10, 3, 25);
    std::mt19937_64 krng(1);
    auto ca = kmeans(pos, 3, KMeansConfig{}, krng);
    auto run = [&](const Matrix<double>& feats, const ClusterAssignment<double>& c) {
        Tape<double> t;
        return nw.forward(t.constant(feats), c).broadcast.value();
    };
    auto base = run(x, ca);
    std::mt19937_64 prng(26);
    for (int trial = 0; trial < 20; ++trial) {
        auto perm = random_permutation(10, prng);
        ClusterAssignment<double> pc;
        pc.centers = ca.centers;
        for (auto p : perm) pc.assignments.push_back(ca.assignments[p]);
        EXPECT_EQ(run(permute_rows(x, perm), pc), permute_rows(base, perm));
    }
}

TEST(NWModule, AssignmentSizeMismatchThrows) {
    ParamStore<double> s;
    std::mt19937_64 rng(27);
    auto nw = NWModule<double>::create(s, "nw", 3, 4, rng);
    ClusterAssignment<double> ca;
    ca.assignments = {0, 0};
    ca.centers = Matrix<double>(1, 3);
    Tape<double> t;
    EXPECT_THROW(nw.forward(t.constant(random_matrix(3, 3, 1)), ca), ValidationError);
}
