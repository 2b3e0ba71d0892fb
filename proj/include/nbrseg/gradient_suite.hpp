#pragma once

// Finite-difference checks for every differentiable operation and for a
// tiny end-to-end model, in double precision.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "diffcore.hpp"
#include "featnet.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "neighbors.hpp"

namespace nbrseg {

struct GradSuiteEntry {
    std::string name;
    GradCheckReport report;
};

struct GradSuiteOptions {
    double eps = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 7;
};

namespace detail {

template <class Rng>
Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Matrix<double> m(r, c);
    for (auto& v : m.data()) v = d(rng);
    return m;
}

template <class Rng>
std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
    std::uniform_int_distribution<int> d(0, classes - 1);
    std::vector<int> out(n);
    for (auto& v : out) v = d(rng);
    return out;
}

/// Moves zero-initialised biases off zero so dead rows do not sit exactly on
/// a rectifier kink during finite differencing.
template <class Rng>
void jitter_biases(ParamStore<double>& store, Rng& rng) {
    std::normal_distribution<double> d(0.0, 0.1);
    for (auto* p : store.all())
        if (p->name.size() >= 2 && p->name.ends_with(".b"))
            for (auto& v : p->value.data()) v += d(rng);
}

} // namespace detail

inline std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& opt = {}) {
    using T = double;
    std::mt19937_64 rng(opt.seed);
    std::vector<GradSuiteEntry> out;
    auto check = [&](const std::string& name, ParamStore<T>& store, const std::function<Var<T>(Tape<T>&)>& f) {
        detail::jitter_biases(store, rng);
        out.push_back({name, grad_check<T>(f, store.all(), opt.eps, opt.tolerance)});
    };
    auto leaf = [&](ParamStore<T>& s, const std::string& name, Matrix<T> m) -> Param<T>& {
        Param<T>& p = s.create(name, m.rows(), m.cols());
        p.value = std::move(m);
        return p;
    };

    {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(4, 3, rng));
        auto& w = leaf(s, "w", detail::random_matrix(3, 2, rng));
        auto& b = leaf(s, "b", detail::random_matrix(1, 2, rng));
        auto r = detail::random_matrix(4, 2, rng);
        check("linear", s, [&](Tape<T>& t) { return weighted_sum(linear(t.param(x), t.param(w), t.param(b)), r); });
    }
    {
        ParamStore<T> s;
        Matrix<T> m = detail::random_matrix(5, 4, rng);
        for (auto& v : m.data())
            if (std::abs(v) < 1e-2) v = v < 0 ? -0.5 : 0.5;
        auto& x = leaf(s, "x", m);
        auto r = detail::random_matrix(5, 4, rng);
        check("relu", s, [&](Tape<T>& t) { return weighted_sum(relu(t.param(x)), r); });
    }
    {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(6, 3, rng));
        auto r = detail::random_matrix(1, 3, rng);
        check("max_pool_rows", s, [&](Tape<T>& t) { return weighted_sum(max_pool_rows(t.param(x)).value, r); });
    }
    {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(7, 3, rng));
        const std::vector<std::size_t> groups{0, 1, 2, 0, 1, 2, 2};
        auto r = detail::random_matrix(3, 3, rng);
        check("max_pool_groups", s,
              [&](Tape<T>& t) { return weighted_sum(max_pool_groups(t.param(x), groups, 3).value, r); });
    }
    {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(5, 3, rng));
        auto labels = detail::random_labels(5, 3, rng);
        check("softmax_cross_entropy", s, [&](Tape<T>& t) { return softmax_cross_entropy(t.param(x), labels); });
    }
    {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(5, 3, rng));
        auto r = detail::random_matrix(5, 5, rng);
        check("pairwise_l1", s, [&](Tape<T>& t) { return weighted_sum(pairwise_l1(t.param(x)), r); });
    }
    {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(5, 4, rng));
        auto nf = NFModule<T>::create(s, "nf", 4, 6, false, rng);
        NeighborIndex<T> frozen;
        {
            Tape<T> t;
            frozen = nf.forward(t.param(x), 2).index;
        }
        auto r = detail::random_matrix(5, 6, rng);
        check("nf_module", s, [&](Tape<T>& t) { return weighted_sum(nf.forward(t.param(x), 2, &frozen).features, r); });
    }
    {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(6, 4, rng));
        auto nw = NWModule<T>::create(s, "nw", 4, 5, rng);
        ClusterAssignment<double> ca;
        ca.assignments = {0, 1, 0, 1, 1, 0};
        ca.centers = Matrix<double>(2, 3);
        auto r1 = detail::random_matrix(2, 5, rng);
        auto r2 = detail::random_matrix(6, 5, rng);
        check("nw_module", s, [&](Tape<T>& t) {
            auto o = nw.forward(t.param(x), ca);
            return add(weighted_sum(o.regional, r1), weighted_sum(o.broadcast, r2));
        });
    }
    for (PairReduction red : {PairReduction::sum, PairReduction::mean}) {
        // Distances are a free leaf kept clear of both margins.
        ParamStore<T> s;
        std::uniform_real_distribution<double> u(0.0, 6.0);
        Matrix<T> d(6, 6);
        for (auto& v : d.data()) {
            do v = u(rng);
            while (std::abs(v - 1.0) < 1e-2 || std::abs(v - 5.0) < 1e-2);
        }
        auto& dist = leaf(s, "d", d);
        auto labels = detail::random_labels(6, 2, rng);
        LossConfig cfg;
        cfg.tau_near = 1.0;
        cfg.tau_far = 5.0;
        cfg.pair_reduction = red;
        check(red == PairReduction::sum ? "pairwise_loss_sum" : "pairwise_loss_mean", s,
              [&](Tape<T>& t) { return pairwise_loss(t.param(dist), labels, cfg); });
    }
    for (CentDistance kind : {CentDistance::cosine, CentDistance::l1, CentDistance::l2}) {
        ParamStore<T> s;
        auto& x = leaf(s, "x", detail::random_matrix(6, 4, rng));
        // No singleton classes: a lone member sits on its own centroid and has an exactly zero gradient.
        const std::vector<int> labels{0, 1, 0, 2, 1, 2};
        LossConfig cfg;
        cfg.cent_distance = kind;
        const char* tag = kind == CentDistance::cosine ? "cosine" : kind == CentDistance::l1 ? "l1" : "l2";
        check(std::string("centroid_loss_") + tag, s, [&](Tape<T>& t) { return centroid_loss(t.param(x), labels, cfg); });
    }
    {
        ParamStore<T> s;
        auto& p = leaf(s, "points", detail::random_matrix(8, 16, rng));
        auto& g = leaf(s, "global", detail::random_matrix(1, 16, rng));
        auto blk = FeatureBlock<T>::create(s, "block", 16, 16, 16, Fusion::additive, rng);
        auto r1 = detail::random_matrix(8, 16, rng);
        auto r2 = detail::random_matrix(1, 16, rng);
        check("feature_block", s, [&](Tape<T>& t) {
            auto o = blk.forward({t.param(p), t.param(g)});
            return add(weighted_sum(o.points, r1), weighted_sum(o.global, r2));
        });
    }
    for (Fusion fusion : {Fusion::additive, Fusion::concat}) {
        ParamStore<T> s;
        FeatureNetworkConfig cfg;
        cfg.num_blocks = 3;
        cfg.width = 6;
        cfg.input_dim = 3;
        cfg.fusion = fusion;
        auto& x = leaf(s, "x", detail::random_matrix(7, 3, rng));
        auto net = FeatureNetwork<T>::create(s, "fn", cfg, rng);
        auto r = detail::random_matrix(7, cfg.output_dim(), rng);
        check(fusion == Fusion::additive ? "feature_network_additive" : "feature_network_concat", s,
              [&](Tape<T>& t) { return weighted_sum(net.forward(t.param(x)), r); });
    }
    {
        ModelConfig mc;
        mc.featnet.width = 8;
        mc.featnet.num_blocks = 2;
        mc.knn_k = 3;
        mc.kmeans_divisor = 4;
        mc.init_seed = opt.seed;
        mc.loss.tau_near = 0.5;
        mc.loss.tau_far = 4.0;
        // Keeps the loss near unit scale so finite-difference round-off stays small.
        mc.loss.pair_reduction = PairReduction::mean;
        Model<T> model(mc);
        detail::jitter_biases(model.params(), rng);
        const std::size_t n = 12;
        Matrix<double> feats = detail::random_matrix(n, 9, rng);
        Matrix<double> world(n, 3);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < 3; ++a) world(i, a) = feats(i, a);
        auto labels = detail::random_labels(n, 3, rng);
        ForwardCache<T> cache;
        {
            Tape<T> t;
            model.forward(t, feats, world, 1, nullptr, &cache);
        }
        std::mt19937_64 unused(0);
        out.push_back({"full_model", grad_check<T>(
                                         [&](Tape<T>& t) {
                                             auto fr = model.forward(t, feats, world, 1, &cache);
                                             return model.loss(fr, labels, unused).first;
                                         },
                                         model.params().all(), opt.eps, opt.tolerance)});
    }
    return out;
}

} // namespace nbrseg
