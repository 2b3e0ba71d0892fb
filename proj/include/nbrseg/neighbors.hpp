#pragma once

// Feature-space neighborhoods (kNN under L1 in the learned space) and
// world-space neighborhoods (k-means clusters pooled into regional
// descriptors).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "diffcore.hpp"
#include "error.hpp"
#include "matrix.hpp"

namespace nbrseg {

// ---------------------------------------------------------------------------
// Pairwise L1 distances
// ---------------------------------------------------------------------------

/// D[i][j] = Σ_f |X[i][f] − X[j][f]|
template <class T>
Matrix<T> pairwise_l1(const Matrix<T>& x) {
    detail::require(x.rows() >= 1, "pairwise_l1: need at least one point");
    const std::size_t n = x.rows(), f = x.cols();
    Matrix<T> d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.row(i).data();
        for (std::size_t j = i + 1; j < n; ++j) {
            const T* xj = x.row(j).data();
            T s = 0;
            for (std::size_t k = 0; k < f; ++k) s += std::abs(xi[k] - xj[k]);
            d(i, j) = s;
            d(j, i) = s;
        }
    }
    return d;
}

/// Differentiable form; the backward uses sign(x_if − x_jf) with sign(0) = 0.
template <class T>
Var<T> pairwise_l1(Var<T> x) {
    ++x.tape->stats().pairwise_l1_calls;
    return x.tape->record(pairwise_l1(x.value()), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
        auto* gx = t.grad_ptr(x);
        const auto& v = t.value(x);
        const std::size_t n = v.rows(), f = v.cols();
        for (std::size_t i = 0; i < n; ++i) {
            const T* xi = v.row(i).data();
            T* gi = gx->row(i).data();
            for (std::size_t j = i + 1; j < n; ++j) {
                const T w = g(i, j) + g(j, i);
                if (w == T(0)) continue;
                const T* xj = v.row(j).data();
                T* gj = gx->row(j).data();
                for (std::size_t k = 0; k < f; ++k) {
                    const T diff = xi[k] - xj[k];
                    const T s = diff > T(0) ? w : (diff < T(0) ? -w : T(0));
                    gi[k] += s;
                    gj[k] -= s;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// k nearest neighbours
// ---------------------------------------------------------------------------

template <class T>
struct NeighborIndex {
    std::size_t num_points = 0;
    std::size_t k = 0;
    std::vector<std::size_t> indices; // num_points × k, row-major
    std::vector<T> distances;         // ascending per row

    std::size_t at(std::size_t i, std::size_t j) const { return indices[i * k + j]; }
    T distance(std::size_t i, std::size_t j) const { return distances[i * k + j]; }
};

/// The k smallest off-diagonal entries per row; ties go to the lower column.
template <class T>
NeighborIndex<T> knn_indices(const Matrix<T>& dist, std::size_t k) {
    const std::size_t n = dist.rows();
    detail::require(dist.cols() == n, "knn_indices: distance matrix must be square");
    if (n == 0 || k > n - 1)
        throw ValidationError("knn_indices: k=" + std::to_string(k) + " exceeds N-1=" +
                              std::to_string(n == 0 ? 0 : n - 1));
    NeighborIndex<T> out;
    out.num_points = n;
    out.k = k;
    out.indices.reserve(n * k);
    out.distances.reserve(n * k);
    std::vector<std::size_t> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand[c++] = j;
        auto closer = [&](std::size_t a, std::size_t b) {
            return dist(i, a) < dist(i, b) || (dist(i, a) == dist(i, b) && a < b);
        };
        std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(k), cand.end(), closer);
        for (std::size_t j = 0; j < k; ++j) {
            out.indices.push_back(cand[j]);
            out.distances.push_back(dist(i, cand[j]));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// N_F-module
// ---------------------------------------------------------------------------

template <class T>
struct NFOutput {
    Var<T> features;  // N×W
    Var<T> distances; // N×N, L1 over the module's input features
    NeighborIndex<T> index;
};

/// Updates each point from its k nearest neighbours in feature space: the
/// point's own row followed by its neighbours' rows pass through a shared MLP
/// and are max-pooled. Neighbour indices are constants in backward.
template <class T>
struct NFModule {
    Mlp<T> mlp;
    bool center_concat = false;

    template <class Rng>
    static NFModule create(ParamStore<T>& store, const std::string& name, std::size_t in_dim, std::size_t width,
                           bool center_concat, Rng& rng) {
        NFModule m;
        m.center_concat = center_concat;
        m.mlp = Mlp<T>::create(store, name + ".mlp", center_concat ? 2 * in_dim : in_dim, {width, width}, rng);
        return m;
    }

    std::size_t out_dim() const { return mlp.out_dim(); }

    /// `frozen`, when given, replaces the kNN search (gradient checks pin it).
    NFOutput<T> forward(Var<T> x, std::size_t k, const NeighborIndex<T>* frozen = nullptr) const {
        Var<T> dist = pairwise_l1(x);
        const std::size_t n = x.rows();
        NeighborIndex<T> index = frozen ? *frozen : knn_indices(dist.value(), std::min(k, n - 1));
        detail::require(index.num_points == n, "NFModule: neighbour index does not match point count");
        Var<T> out = forward_with_index(x, index);
        return {out, dist, std::move(index)};
    }

    Var<T> forward_with_index(Var<T> x, const NeighborIndex<T>& index) const {
        const std::size_t n = x.rows(), slice = index.k + 1;
        std::vector<std::size_t> rows, centers, groups;
        rows.reserve(n * slice);
        groups.reserve(n * slice);
        for (std::size_t i = 0; i < n; ++i) {
            rows.push_back(i);
            for (std::size_t j = 0; j < index.k; ++j) rows.push_back(index.at(i, j));
            for (std::size_t j = 0; j < slice; ++j) groups.push_back(i);
        }
        Var<T> stacked = gather_rows(x, rows);
        if (center_concat) stacked = concat_cols<T>({stacked, gather_rows(x, groups)});
        return max_pool_groups(mlp(stacked), groups, n).value;
    }
};

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansConfig {
    std::size_t max_iters = 20;
    double tol = 1e-4;
};

template <class T>
struct ClusterAssignment {
    std::vector<std::size_t> assignments;
    Matrix<T> centers;
    double inertia = 0;
    std::size_t iterations_run = 0;
    bool converged = false;
    /// Inertia after each assignment pass, first entry from the seeding pass.
    std::vector<double> inertia_history;

    std::size_t num_clusters() const { return centers.rows(); }
};

/// K = ⌊N / divisor⌋, clamped to at least one cluster.
inline std::size_t kmeans_K(std::size_t n, std::size_t divisor = 52) {
    detail::require(divisor > 0, "kmeans_K: divisor must be positive");
    return std::max<std::size_t>(1, n / divisor);
}

namespace detail {

template <class T>
double squared_l2(std::span<const T> a, std::span<const T> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s;
}

} // namespace detail

/// Lloyd iterations: nearest-center assignment (L2, ties to the lower center)
/// alternating with mean updates. Empty clusters are reseeded with the point
/// farthest from its current center. Stops on an unchanged assignment, on a
/// max center displacement below `tol`, or after `max_iters` updates.
/// Cluster ids are renumbered so cluster c's lowest member precedes cluster
/// c+1's.
template <class T, class Rng>
ClusterAssignment<T> kmeans(const Matrix<T>& points, std::size_t K, const KMeansConfig& cfg, Rng& rng) {
    const std::size_t n = points.rows(), d = points.cols();
    if (K < 1 || K > n)
        throw ValidationError("kmeans: K=" + std::to_string(K) + " must lie in [1, N=" + std::to_string(n) + "]");

    // Seed with K distinct points (partial Fisher-Yates).
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < K; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(perm[i], perm[pick(rng)]);
    }
    Matrix<T> centers(K, d);
    for (std::size_t c = 0; c < K; ++c)
        std::copy(points.row(perm[c]).begin(), points.row(perm[c]).end(), centers.row(c).begin());

    std::vector<std::size_t> assign(n, std::numeric_limits<std::size_t>::max());
    std::vector<double> dist(n, 0);

    // Returns true if any assignment changed.
    auto assign_pass = [&]() {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < K; ++c) {
                const double dd = detail::squared_l2<T>(points.row(i), centers.row(c));
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            changed = changed || assign[i] != best;
            assign[i] = best;
            dist[i] = bd;
        }
        std::vector<std::size_t> count(K, 0);
        for (auto a : assign) ++count[a];
        for (std::size_t c = 0; c < K; ++c) {
            if (count[c] != 0) continue;
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i)
                if (count[assign[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
            --count[assign[far]];
            assign[far] = c;
            ++count[c];
            dist[far] = 0;
            std::copy(points.row(far).begin(), points.row(far).end(), centers.row(c).begin());
            changed = true;
        }
        return changed;
    };
    auto total = [&] { return std::accumulate(dist.begin(), dist.end(), 0.0); };

    ClusterAssignment<T> out;
    assign_pass();
    out.inertia_history.push_back(total());
    for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
        Matrix<T> next(K, d);
        std::vector<std::size_t> count(K, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[assign[i]];
            auto row = next.row(assign[i]);
            for (std::size_t j = 0; j < d; ++j) row[j] += points(i, j);
        }
        double move = 0;
        for (std::size_t c = 0; c < K; ++c) {
            for (auto& v : next.row(c)) v /= T(count[c]);
            move = std::max(move, std::sqrt(detail::squared_l2<T>(next.row(c), centers.row(c))));
        }
        centers = std::move(next);
        const bool changed = assign_pass();
        out.inertia_history.push_back(total());
        out.iterations_run = it;
        if (!changed || move < cfg.tol) {
            out.converged = true;
            break;
        }
    }

    // Canonical renumbering by lowest member index.
    std::vector<std::size_t> relabel(K, K);
    std::size_t next_id = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (relabel[assign[i]] == K) relabel[assign[i]] = next_id++;
    out.centers = Matrix<T>(K, d);
    for (std::size_t c = 0; c < K; ++c)
        std::copy(centers.row(c).begin(), centers.row(c).end(), out.centers.row(relabel[c]).begin());
    out.assignments.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.assignments[i] = relabel[assign[i]];
    out.inertia = total();
    return out;
}

// ---------------------------------------------------------------------------
// N_W-module
// ---------------------------------------------------------------------------

template <class T>
struct NWOutput {
    Var<T> regional;  // K×W, one descriptor per cluster
    Var<T> broadcast; // N×W, each point's cluster descriptor
};

/// Regional descriptors: each member row is concatenated with its cluster's
/// mean feature, passed through a shared MLP and max-pooled per cluster.
template <class T>
struct NWModule {
    Mlp<T> mlp;

    template <class Rng>
    static NWModule create(ParamStore<T>& store, const std::string& name, std::size_t in_dim, std::size_t width,
                           Rng& rng) {
        NWModule m;
        m.mlp = Mlp<T>::create(store, name + ".mlp", 2 * in_dim, {width, width}, rng);
        return m;
    }

    std::size_t out_dim() const { return mlp.out_dim(); }

    template <class U>
    NWOutput<T> forward(Var<T> x, const ClusterAssignment<U>& clusters) const {
        const auto& ids = clusters.assignments;
        const std::size_t K = clusters.num_clusters();
        detail::require(ids.size() == x.rows(), "NWModule: assignment does not cover all points");
        Var<T> means = segment_mean(x, ids, K);
        Var<T> joined = concat_cols<T>({x, gather_rows(means, ids)});
        Var<T> regional = max_pool_groups(mlp(joined), ids, K).value;
        return {regional, gather_rows(regional, ids)};
    }
};

} // namespace nbrseg
