#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "diffcore.hpp"
#include "error.hpp"

namespace nbrseg {

enum class Fusion { additive, concat };

struct FeatureNetworkConfig {
    std::size_t num_blocks = 17;
    Fusion fusion = Fusion::additive;
    std::size_t width = 64;
    std::size_t input_dim = 9;

    void validate() const {
        detail::require(num_blocks >= 1, "feature_blocks must be >= 1");
        detail::require(width >= 1, "width must be >= 1");
        detail::require(input_dim >= 1, "input dimension must be >= 1");
    }

    /// Width of the point pathway after `blocks` feature blocks.
    std::size_t pathway_width(std::size_t blocks) const {
        return fusion == Fusion::additive ? width : width * (blocks + 1);
    }
    std::size_t output_dim() const { return pathway_width(num_blocks); }
};

template <class T>
struct FeatureState {
    Var<T> points; // N×P, local point pathway
    Var<T> global; // 1×P, global pathway
};

/// One feature block: a point MLP, max-pooled global feature, a global MLP
/// that also reads the incoming global pathway, and a projection of
/// [point ‖ stacked global] back to the block width. The pathways then either
/// accumulate (additive) or append (concat) the block's new features.
template <class T>
struct FeatureBlock {
    Mlp<T> point_mlp;
    Mlp<T> global_mlp;
    Dense<T> fuse;
    Fusion fusion = Fusion::additive;

    template <class Rng>
    static FeatureBlock create(ParamStore<T>& store, const std::string& name, std::size_t point_in,
                               std::size_t global_in, std::size_t width, Fusion fusion, Rng& rng) {
        FeatureBlock b;
        b.fusion = fusion;
        b.point_mlp = Mlp<T>::create(store, name + ".point", point_in, {width, width}, rng);
        b.global_mlp = Mlp<T>::create(store, name + ".global", width + global_in, {width, width}, rng);
        b.fuse = Dense<T>::create(store, name + ".fuse", 2 * width, width, rng);
        return b;
    }

    FeatureState<T> forward(const FeatureState<T>& in) const {
        const std::size_t n = in.points.rows();
        detail::require_shape(in.points.cols() == point_mlp.layers.front().in_dim(), "feature block",
                              "point features " + in.points.value().shape_str());
        detail::require_shape(in.global.rows() == 1, "feature block", "global feature must be a single row");
        Var<T> p = point_mlp(in.points);
        Var<T> pooled = max_pool_rows(p).value;
        Var<T> g = global_mlp(concat_cols<T>({pooled, in.global}));
        Var<T> q = relu(fuse(concat_cols<T>({p, repeat_rows(g, n)})));
        if (fusion == Fusion::additive) return {add(in.points, q), add(in.global, g)};
        return {concat_cols<T>({in.points, q}), concat_cols<T>({in.global, g})};
    }
};

/// Entry layer lifting the input to the block width, followed by a chain of
/// feature blocks. The global pathway starts as the max-pool of the lifted
/// input.
template <class T>
struct FeatureNetwork {
    FeatureNetworkConfig config;
    Dense<T> entry;
    std::vector<FeatureBlock<T>> blocks;

    template <class Rng>
    static FeatureNetwork create(ParamStore<T>& store, const std::string& name, const FeatureNetworkConfig& cfg,
                                 Rng& rng) {
        cfg.validate();
        FeatureNetwork net;
        net.config = cfg;
        net.entry = Dense<T>::create(store, name + ".entry", cfg.input_dim, cfg.width, rng);
        for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
            const std::size_t in = cfg.pathway_width(b);
            net.blocks.push_back(FeatureBlock<T>::create(store, name + ".block" + std::to_string(b), in, in,
                                                         cfg.width, cfg.fusion, rng));
        }
        return net;
    }

    std::size_t output_dim() const { return config.output_dim(); }

    FeatureState<T> forward_state(Var<T> input) const {
        detail::require_shape(input.cols() == config.input_dim, "feature network",
                              "input " + input.value().shape_str() + ", expected D=" +
                                  std::to_string(config.input_dim));
        Var<T> lifted = relu(entry(input));
        FeatureState<T> s{lifted, max_pool_rows(lifted).value};
        for (const auto& b : blocks) s = b.forward(s);
        return s;
    }

    Var<T> forward(Var<T> input) const { return forward_state(input).points; }
};

} // namespace nbrseg
