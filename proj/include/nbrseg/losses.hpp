#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffcore.hpp"
#include "error.hpp"

namespace nbrseg {

enum class PairReduction { sum, mean };
enum class CentDistance { cosine, l1, l2 };

struct LossConfig {
    double tau_near = 0.2;
    double tau_far = 2.0;
    PairReduction pair_reduction = PairReduction::sum;
    CentDistance cent_distance = CentDistance::cosine;
    /// class, pair, centroid
    std::array<double, 3> weights{1.0, 1.0, 1.0};
    /// 0 uses every unordered pair; otherwise this many pairs drawn uniformly.
    std::size_t pair_subsample = 0;

    void validate() const {
        detail::require(tau_near >= 0, "tau_near must be >= 0");
        detail::require(tau_far > tau_near, "tau_far must exceed tau_near");
        for (double w : weights) detail::require(w >= 0, "loss weights must be >= 0");
    }
};

struct LossReport {
    double l_class = 0;
    double l_pair = 0;
    double l_cent = 0;
    double total = 0;
};

/// Hinge on one pair distance: same-class pairs pay for distance beyond
/// tau_near, cross-class pairs pay for distance short of tau_far.
inline double pair_term(double distance, bool same_class, double tau_near, double tau_far) {
    return same_class ? std::max(distance - tau_near, 0.0) : std::max(tau_far - distance, 0.0);
}

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;

/// Draws `count` unordered pairs i<j uniformly (with replacement).
template <class Rng>
PairList sample_pairs(std::size_t n, std::size_t count, Rng& rng) {
    detail::require(n >= 2, "sample_pairs: need at least two points");
    const std::size_t total = n * (n - 1) / 2;
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    PairList out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        std::size_t r = pick(rng), i = 0;
        while (r >= n - 1 - i) {
            r -= n - 1 - i;
            ++i;
        }
        out.emplace_back(i, i + 1 + r);
    }
    return out;
}

/// Pairwise similarity loss over a feature-space distance matrix. Uses the
/// upper triangle (unordered pairs) or an explicit pair list.
template <class T>
Var<T> pairwise_loss(Var<T> dist, const std::vector<int>& labels, const LossConfig& cfg,
                     const PairList* pairs = nullptr) {
    const auto& d = dist.value();
    const std::size_t n = d.rows();
    detail::require(d.cols() == n && labels.size() == n, "pairwise_loss: distance matrix / labels mismatch");
    PairList all;
    if (!pairs) {
        all.reserve(n * (n - 1) / 2);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) all.emplace_back(i, j);
        pairs = &all;
    }
    const double norm = cfg.pair_reduction == PairReduction::mean && !pairs->empty() ? 1.0 / double(pairs->size()) : 1.0;
    double loss = 0;
    // Per pair: +1 (same class, beyond tau_near), -1 (cross class, inside tau_far), 0 clamped.
    std::vector<signed char> slope(pairs->size(), 0);
    for (std::size_t p = 0; p < pairs->size(); ++p) {
        const auto [i, j] = (*pairs)[p];
        const bool same = labels[i] == labels[j];
        const double dij = double(d(i, j));
        loss += pair_term(dij, same, cfg.tau_near, cfg.tau_far);
        if (same && dij > cfg.tau_near) slope[p] = 1;
        if (!same && dij < cfg.tau_far) slope[p] = -1;
    }
    return dist.tape->record(
        Matrix<T>(1, 1, T(loss * norm)), {dist},
        [dist, pl = *pairs, slope = std::move(slope), norm](Tape<T>& t, const Matrix<T>& g) {
            auto* gd = t.grad_ptr(dist);
            const T s = T(double(g(0, 0)) * norm);
            for (std::size_t p = 0; p < pl.size(); ++p)
                if (slope[p]) (*gd)(pl[p].first, pl[p].second) += s * T(slope[p]);
        });
}

namespace detail {

constexpr double cosine_eps = 1e-8;

/// Row-wise distance between equally shaped a and b → N×1.
template <class T>
Var<T> row_distance(Var<T> a, Var<T> b, CentDistance kind) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require_shape(av.same_shape(bv), "row_distance", av.shape_str() + " vs " + bv.shape_str());
    const std::size_t n = av.rows(), f = av.cols();
    Matrix<T> out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < f; ++j) {
            const double x = av(i, j), y = bv(i, j);
            switch (kind) {
            case CentDistance::cosine:
                acc += x * y;
                na += x * x;
                nb += y * y;
                break;
            case CentDistance::l1: acc += std::abs(x - y); break;
            case CentDistance::l2: acc += (x - y) * (x - y); break;
            }
        }
        if (kind == CentDistance::cosine)
            out(i, 0) = T(1.0 - acc / std::max(std::sqrt(na) * std::sqrt(nb), cosine_eps));
        else if (kind == CentDistance::l1)
            out(i, 0) = T(acc);
        else
            out(i, 0) = T(std::sqrt(acc));
    }
    return a.tape->record(std::move(out), {a, b}, [a, b, kind](Tape<T>& t, const Matrix<T>& g) {
        const auto& av = t.value(a);
        const auto& bv = t.value(b);
        auto* ga = t.grad_ptr(a);
        auto* gb = t.grad_ptr(b);
        const std::size_t f = av.cols();
        for (std::size_t i = 0; i < av.rows(); ++i) {
            const double go = g(i, 0);
            if (go == 0) continue;
            if (kind == CentDistance::cosine) {
                double dot = 0, na2 = 0, nb2 = 0;
                for (std::size_t j = 0; j < f; ++j) {
                    dot += double(av(i, j)) * bv(i, j);
                    na2 += double(av(i, j)) * av(i, j);
                    nb2 += double(bv(i, j)) * bv(i, j);
                }
                const double p = std::sqrt(na2) * std::sqrt(nb2);
                for (std::size_t j = 0; j < f; ++j) {
                    double dca, dcb; // d cos / d a_j, d cos / d b_j
                    if (p > cosine_eps) {
                        const double c = dot / p;
                        dca = bv(i, j) / p - c * av(i, j) / na2;
                        dcb = av(i, j) / p - c * bv(i, j) / nb2;
                    } else {
                        dca = bv(i, j) / cosine_eps;
                        dcb = av(i, j) / cosine_eps;
                    }
                    if (ga) (*ga)(i, j) += T(-go * dca);
                    if (gb) (*gb)(i, j) += T(-go * dcb);
                }
            } else if (kind == CentDistance::l1) {
                for (std::size_t j = 0; j < f; ++j) {
                    const double diff = double(av(i, j)) - bv(i, j);
                    const double s = diff > 0 ? go : (diff < 0 ? -go : 0.0);
                    if (ga) (*ga)(i, j) += T(s);
                    if (gb) (*gb)(i, j) -= T(s);
                }
            } else {
                double sq = 0;
                for (std::size_t j = 0; j < f; ++j) sq += (double(av(i, j)) - bv(i, j)) * (double(av(i, j)) - bv(i, j));
                const double norm = std::sqrt(sq);
                if (norm == 0) continue;
                for (std::size_t j = 0; j < f; ++j) {
                    const double s = go * (double(av(i, j)) - bv(i, j)) / norm;
                    if (ga) (*ga)(i, j) += T(s);
                    if (gb) (*gb)(i, j) -= T(s);
                }
            }
        }
    });
}

} // namespace detail

/// Maps arbitrary labels to dense group ids in order of first appearance.
inline std::pair<std::vector<std::size_t>, std::size_t> compact_labels(const std::vector<int>& labels) {
    std::map<int, std::size_t> ids;
    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = ids.emplace(labels[i], ids.size());
        out[i] = it->second;
    }
    return {std::move(out), ids.size()};
}

/// Σ_i dist(x_i, mean of x over i's class). Class centroids are computed from
/// the same features, so gradients also flow through the means.
template <class T>
Var<T> centroid_loss(Var<T> x, const std::vector<int>& labels, const LossConfig& cfg) {
    detail::require(labels.size() == x.rows(), "centroid_loss: one label per row");
    auto [ids, groups] = compact_labels(labels);
    Var<T> centroids = segment_mean(x, ids, groups);
    return sum_all(detail::row_distance(x, gather_rows(centroids, ids), cfg.cent_distance));
}

/// Weighted sum of the three losses. Terms with zero weight are left out of
/// the graph entirely.
template <class T>
std::pair<Var<T>, LossReport> total_loss(Var<T> l_class, Var<T> l_pair, Var<T> l_cent, const LossConfig& cfg) {
    LossReport rep;
    rep.l_class = double(l_class.scalar());
    rep.l_pair = double(l_pair.scalar());
    rep.l_cent = double(l_cent.scalar());
    const std::array<Var<T>, 3> parts{l_class, l_pair, l_cent};
    const std::array<double, 3> values{rep.l_class, rep.l_pair, rep.l_cent};
    std::optional<Var<T>> acc;
    for (std::size_t i = 0; i < 3; ++i) {
        if (cfg.weights[i] == 0) continue;
        rep.total += cfg.weights[i] * values[i];
        Var<T> term = cfg.weights[i] == 1 ? parts[i] : scale(parts[i], T(cfg.weights[i]));
        acc = acc ? add(*acc, term) : term;
    }
    if (!acc) acc = l_class.tape->constant(Matrix<T>(1, 1, T(0)));
    return {*acc, rep};
}

/// Scalar-only weighted sum for reporting.
inline LossReport total_loss(double l_class, double l_pair, double l_cent, const LossConfig& cfg) {
    LossReport rep{l_class, l_pair, l_cent, 0};
    rep.total = cfg.weights[0] * l_class + cfg.weights[1] * l_pair + cfg.weights[2] * l_cent;
    return rep;
}

} // namespace nbrseg
