#pragma once

// Full segmentation model: feature network → stacked N_F-modules → N_W-module
// over world-space clusters → head MLP → per-class logits, with the
// pairwise loss tapped on an N_F distance matrix and the centroid loss on
// the head features.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "dataio.hpp"
#include "diffcore.hpp"
#include "featnet.hpp"
#include "losses.hpp"
#include "neighbors.hpp"

namespace nbrseg {

enum class KMeansSpace { xyz, input };

struct ModelConfig {
    FeatureNetworkConfig featnet; // input_dim follows input_mode
    FeatureMode input_mode = FeatureMode::full9d;
    bool use_featnet = true;
    std::size_t num_nf_modules = 3;
    std::size_t knn_k = 30;
    bool nf_center_concat = false;
    bool use_nw = true;
    std::size_t kmeans_divisor = 52;
    KMeansConfig kmeans;
    KMeansSpace kmeans_space = KMeansSpace::xyz;
    std::size_t num_classes = 13;
    LossConfig loss;
    /// N_F-module whose distance matrix feeds the pairwise loss (1-based);
    /// 0 taps the feature network output instead.
    std::size_t pair_attachment = 2;
    std::uint64_t init_seed = 1;

    std::size_t input_dim() const { return feature_dim(input_mode); }

    void validate() const {
        FeatureNetworkConfig fn = featnet;
        fn.input_dim = input_dim();
        fn.validate();
        detail::require(num_classes >= 2, "num_classes must be >= 2");
        detail::require(pair_attachment <= num_nf_modules, "pair_attachment must not exceed num_nf_modules");
        detail::require(knn_k >= 1, "knn_k must be >= 1");
        detail::require(kmeans_divisor >= 1, "kmeans_divisor must be >= 1");
        loss.validate();
    }
};

struct TrainConfig {
    std::size_t epochs = 1;
    /// When non-zero, overrides epochs.
    std::size_t max_steps = 0;
    std::size_t blocks_per_batch = 1;
    std::size_t points_per_block = 4096;
    double block_size = 1.0;
    /// 0 means stride = block_size.
    double block_stride = 0;
    std::size_t min_block_points = 10;
    std::uint64_t seed = 0;
    bool augment = true;
    double max_offset = 0.1;
    AdamConfig adam;
    double lr_decay = 1.0;
    std::size_t lr_decay_every = 0;
    std::size_t checkpoint_every = 0;
    std::uint64_t eval_seed = 12345;

    double stride() const { return block_stride > 0 ? block_stride : block_size; }

    void validate() const {
        detail::require(blocks_per_batch >= 1, "blocks_per_batch must be >= 1");
        detail::require(points_per_block >= 1, "points_per_block must be >= 1");
        detail::require(block_size > 0, "block_size must be > 0");
        detail::require(stride() <= block_size, "block_stride must not exceed block_size");
        detail::require(epochs >= 1 || max_steps >= 1, "need epochs >= 1 or max_steps >= 1");
        detail::require(max_offset >= 0, "max_offset must be >= 0");
        detail::require(adam.learning_rate > 0, "learning_rate must be > 0");
        detail::require(lr_decay > 0, "lr_decay must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Config text
// ---------------------------------------------------------------------------

namespace detail {

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> opts) {
    std::string names;
    for (auto& [n, e] : opts) {
        if (v == n) return e;
        names += std::string(names.empty() ? "" : "|") + n;
    }
    throw ValidationError("config: '" + key + "' must be one of " + names + ", got '" + v + "'");
}

inline const char* name_of(FeatureMode m) {
    return m == FeatureMode::xyz ? "xyz" : m == FeatureMode::xyzrgb ? "xyzrgb" : "full9d";
}

} // namespace detail

/// Reads every recognised key; unknown keys are an error.
inline void apply_config(const KeyValueConfig& kv, ModelConfig& m, TrainConfig& t) {
    std::string s;
    kv.get("feature_blocks", m.featnet.num_blocks);
    if (kv.has("fusion")) {
        kv.get("fusion", s);
        m.featnet.fusion = detail::parse_enum<Fusion>("fusion", s, {{"additive", Fusion::additive}, {"concat", Fusion::concat}});
    }
    kv.get("width", m.featnet.width);
    if (kv.has("input_mode")) {
        kv.get("input_mode", s);
        m.input_mode = detail::parse_enum<FeatureMode>(
            "input_mode", s, {{"xyz", FeatureMode::xyz}, {"xyzrgb", FeatureMode::xyzrgb}, {"full9d", FeatureMode::full9d}});
    }
    kv.get("use_featnet", m.use_featnet);
    kv.get("num_nf_modules", m.num_nf_modules);
    kv.get("knn_k", m.knn_k);
    kv.get("nf_center_concat", m.nf_center_concat);
    kv.get("use_nw", m.use_nw);
    kv.get("kmeans_divisor", m.kmeans_divisor);
    kv.get("kmeans_max_iters", m.kmeans.max_iters);
    kv.get("kmeans_tol", m.kmeans.tol);
    if (kv.has("kmeans_space")) {
        kv.get("kmeans_space", s);
        m.kmeans_space = detail::parse_enum<KMeansSpace>("kmeans_space", s, {{"xyz", KMeansSpace::xyz}, {"input", KMeansSpace::input}});
    }
    kv.get("num_classes", m.num_classes);
    kv.get("tau_near", m.loss.tau_near);
    kv.get("tau_far", m.loss.tau_far);
    if (kv.has("pair_reduction")) {
        kv.get("pair_reduction", s);
        m.loss.pair_reduction = detail::parse_enum<PairReduction>(
            "pair_reduction", s, {{"sum", PairReduction::sum}, {"mean", PairReduction::mean}});
    }
    if (kv.has("cent_distance")) {
        kv.get("cent_distance", s);
        m.loss.cent_distance = detail::parse_enum<CentDistance>(
            "cent_distance", s, {{"cosine", CentDistance::cosine}, {"l1", CentDistance::l1}, {"l2", CentDistance::l2}});
    }
    if (kv.has("loss_weights")) {
        auto w = kv.get_list<double>("loss_weights");
        detail::require(w.size() == 3, "config: loss_weights needs three values (class, pair, centroid)");
        m.loss.weights = {w[0], w[1], w[2]};
    }
    kv.get("pair_subsample", m.loss.pair_subsample);
    kv.get("pair_attachment", m.pair_attachment);
    kv.get("init_seed", m.init_seed);

    kv.get("epochs", t.epochs);
    kv.get("max_steps", t.max_steps);
    kv.get("blocks_per_batch", t.blocks_per_batch);
    kv.get("points_per_block", t.points_per_block);
    kv.get("block_size", t.block_size);
    kv.get("block_stride", t.block_stride);
    kv.get("min_block_points", t.min_block_points);
    kv.get("seed", t.seed);
    kv.get("augment", t.augment);
    kv.get("max_offset", t.max_offset);
    kv.get("learning_rate", t.adam.learning_rate);
    kv.get("beta1", t.adam.beta1);
    kv.get("beta2", t.adam.beta2);
    kv.get("epsilon", t.adam.epsilon);
    kv.get("lr_decay", t.lr_decay);
    kv.get("lr_decay_every", t.lr_decay_every);
    kv.get("checkpoint_every", t.checkpoint_every);
    kv.get("eval_seed", t.eval_seed);

    if (auto unused = kv.unused_keys(); !unused.empty()) throw ValidationError("config: unknown key '" + unused.front() + "'");
    m.featnet.input_dim = m.input_dim();
    m.validate();
    t.validate();
}

inline std::string to_config_text(const ModelConfig& m, const TrainConfig& t) {
    using detail::format_double;
    std::ostringstream o;
    auto b = [](bool v) { return v ? "true" : "false"; };
    o << "feature_blocks = " << m.featnet.num_blocks << "\n"
      << "fusion = " << (m.featnet.fusion == Fusion::additive ? "additive" : "concat") << "\n"
      << "width = " << m.featnet.width << "\n"
      << "input_mode = " << detail::name_of(m.input_mode) << "\n"
      << "use_featnet = " << b(m.use_featnet) << "\n"
      << "num_nf_modules = " << m.num_nf_modules << "\n"
      << "knn_k = " << m.knn_k << "\n"
      << "nf_center_concat = " << b(m.nf_center_concat) << "\n"
      << "use_nw = " << b(m.use_nw) << "\n"
      << "kmeans_divisor = " << m.kmeans_divisor << "\n"
      << "kmeans_max_iters = " << m.kmeans.max_iters << "\n"
      << "kmeans_tol = " << format_double(m.kmeans.tol) << "\n"
      << "kmeans_space = " << (m.kmeans_space == KMeansSpace::xyz ? "xyz" : "input") << "\n"
      << "num_classes = " << m.num_classes << "\n"
      << "tau_near = " << format_double(m.loss.tau_near) << "\n"
      << "tau_far = " << format_double(m.loss.tau_far) << "\n"
      << "pair_reduction = " << (m.loss.pair_reduction == PairReduction::sum ? "sum" : "mean") << "\n"
      << "cent_distance = "
      << (m.loss.cent_distance == CentDistance::cosine ? "cosine" : m.loss.cent_distance == CentDistance::l1 ? "l1" : "l2")
      << "\n"
      << "loss_weights = " << format_double(m.loss.weights[0]) << "," << format_double(m.loss.weights[1]) << ","
      << format_double(m.loss.weights[2]) << "\n"
      << "pair_subsample = " << m.loss.pair_subsample << "\n"
      << "pair_attachment = " << m.pair_attachment << "\n"
      << "init_seed = " << m.init_seed << "\n"
      << "epochs = " << t.epochs << "\n"
      << "max_steps = " << t.max_steps << "\n"
      << "blocks_per_batch = " << t.blocks_per_batch << "\n"
      << "points_per_block = " << t.points_per_block << "\n"
      << "block_size = " << format_double(t.block_size) << "\n"
      << "block_stride = " << format_double(t.block_stride) << "\n"
      << "min_block_points = " << t.min_block_points << "\n"
      << "seed = " << t.seed << "\n"
      << "augment = " << b(t.augment) << "\n"
      << "max_offset = " << format_double(t.max_offset) << "\n"
      << "learning_rate = " << format_double(t.adam.learning_rate) << "\n"
      << "beta1 = " << format_double(t.adam.beta1) << "\n"
      << "beta2 = " << format_double(t.adam.beta2) << "\n"
      << "epsilon = " << format_double(t.adam.epsilon) << "\n"
      << "lr_decay = " << format_double(t.lr_decay) << "\n"
      << "lr_decay_every = " << t.lr_decay_every << "\n"
      << "checkpoint_every = " << t.checkpoint_every << "\n"
      << "eval_seed = " << t.eval_seed << "\n";
    return o.str();
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Neighbour indices and clusters of one forward pass. Replaying them pins
/// the non-differentiable choices, which gradient checks rely on.
template <class T>
struct ForwardCache {
    std::vector<NeighborIndex<T>> nf_indices;
    std::optional<ClusterAssignment<double>> clusters;
};

template <class T>
struct ForwardResult {
    Var<T> logits;                   // N×C
    Var<T> head_features;            // N×W, centroid-loss tap
    Var<T> base_features;            // feature network (or entry layer) output
    std::vector<Var<T>> nf_outputs;  // one per N_F-module
    std::optional<Var<T>> pair_distances;
    std::optional<NWOutput<T>> regional;
};

template <class T>
Matrix<T> convert_matrix(const Matrix<double>& m) {
    if constexpr (std::is_same_v<T, double>) {
        return m;
    } else {
        Matrix<T> out(m.rows(), m.cols());
        for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = T(m.data()[i]);
        return out;
    }
}

template <class T>
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), store_(std::make_unique<ParamStore<T>>()) {
        cfg_.featnet.input_dim = cfg_.input_dim();
        cfg_.validate();
        std::mt19937_64 rng(cfg_.init_seed);
        const std::size_t w = cfg_.featnet.width;
        std::size_t base_dim;
        if (cfg_.use_featnet) {
            featnet_ = FeatureNetwork<T>::create(*store_, "fn", cfg_.featnet, rng);
            base_dim = featnet_->output_dim();
        } else {
            lift_ = Dense<T>::create(*store_, "lift", cfg_.input_dim(), w, rng);
            base_dim = w;
        }
        std::size_t cur = base_dim;
        for (std::size_t m = 0; m < cfg_.num_nf_modules; ++m) {
            nf_.push_back(NFModule<T>::create(*store_, "nf" + std::to_string(m + 1), cur, w, cfg_.nf_center_concat, rng));
            cur = w;
        }
        if (cfg_.use_nw) nw_ = NWModule<T>::create(*store_, "nw", cur, w, rng);
        std::size_t head_in = 0;
        for (std::size_t d : tap_dims(base_dim)) head_in += d;
        head_ = Mlp<T>::create(*store_, "head", head_in, {w, w}, rng);
        classifier_ = Dense<T>::create(*store_, "classifier", w, cfg_.num_classes, rng);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return *store_; }
    const ParamStore<T>& params() const { return *store_; }

    /// `features` are the N×D network inputs; `world` the N×3 positions used
    /// for clustering when kmeans_space is xyz.
    ForwardResult<T> forward(Tape<T>& tape, const Matrix<double>& features, const Matrix<double>& world,
                             std::uint64_t kmeans_seed, const ForwardCache<T>* frozen = nullptr,
                             ForwardCache<T>* record = nullptr) const {
        detail::require(features.cols() == cfg_.input_dim(),
                        "model: input has " + std::to_string(features.cols()) + " columns, expected " +
                            std::to_string(cfg_.input_dim()));
        detail::require(world.rows() == features.rows(), "model: world positions / features row mismatch");
        ForwardResult<T> r;
        Var<T> x = tape.constant(convert_matrix<T>(features));
        r.base_features = featnet_ ? featnet_->forward(x) : relu((*lift_)(x));

        Var<T> cur = r.base_features;
        std::vector<Var<T>> dists;
        for (std::size_t m = 0; m < nf_.size(); ++m) {
            const NeighborIndex<T>* pin = frozen ? &frozen->nf_indices.at(m) : nullptr;
            auto out = nf_[m].forward(cur, cfg_.knn_k, pin);
            if (record) record->nf_indices.push_back(out.index);
            dists.push_back(out.distances);
            r.nf_outputs.push_back(out.features);
            cur = out.features;
        }

        if (cfg_.loss.weights[1] > 0)
            r.pair_distances = cfg_.pair_attachment == 0 ? pairwise_l1(r.base_features) : dists[cfg_.pair_attachment - 1];

        if (nw_) {
            ClusterAssignment<double> clusters;
            if (frozen && frozen->clusters) {
                clusters = *frozen->clusters;
            } else {
                const Matrix<double>& space = cfg_.kmeans_space == KMeansSpace::xyz ? world : features;
                const std::size_t K = std::min(kmeans_K(space.rows(), cfg_.kmeans_divisor), space.rows());
                std::mt19937_64 krng(kmeans_seed);
                clusters = kmeans(space, K, cfg_.kmeans, krng);
            }
            if (record) record->clusters = clusters;
            r.regional = nw_->forward(cur, clusters);
        }

        std::vector<Var<T>> taps;
        const std::size_t m = r.nf_outputs.size();
        if (m >= 2) {
            taps = {r.nf_outputs[m - 2], r.nf_outputs[m - 1]};
        } else if (m == 1) {
            taps = {r.nf_outputs[0]};
        } else {
            taps = {r.base_features};
        }
        if (r.regional) taps.push_back(r.regional->broadcast);
        Var<T> head_in = taps.size() == 1 ? taps.front() : concat_cols(taps);
        r.head_features = head_(head_in);
        r.logits = classifier_(r.head_features);
        return r;
    }

    /// Classification, pairwise and centroid losses of one forward result.
    template <class Rng>
    std::pair<Var<T>, LossReport> loss(const ForwardResult<T>& r, const std::vector<int>& labels, Rng& rng) const {
        Tape<T>& tape = *r.logits.tape;
        auto zero = [&] { return tape.constant(Matrix<T>(1, 1, T(0))); };
        Var<T> l_class = softmax_cross_entropy(r.logits, labels);
        Var<T> l_pair = zero();
        if (r.pair_distances) {
            if (cfg_.loss.pair_subsample > 0 && labels.size() >= 2) {
                PairList pairs = sample_pairs(labels.size(), cfg_.loss.pair_subsample, rng);
                l_pair = pairwise_loss(*r.pair_distances, labels, cfg_.loss, &pairs);
            } else {
                l_pair = pairwise_loss(*r.pair_distances, labels, cfg_.loss);
            }
        }
        Var<T> l_cent = cfg_.loss.weights[2] > 0 ? centroid_loss(r.head_features, labels, cfg_.loss) : zero();
        return total_loss(l_class, l_pair, l_cent, cfg_.loss);
    }

private:
    std::vector<std::size_t> tap_dims(std::size_t base_dim) const {
        const std::size_t w = cfg_.featnet.width, m = cfg_.num_nf_modules;
        std::vector<std::size_t> d;
        if (m >= 2) d = {w, w};
        else if (m == 1) d = {w};
        else d = {base_dim};
        if (cfg_.use_nw) d.push_back(w);
        return d;
    }

    ModelConfig cfg_;
    std::unique_ptr<ParamStore<T>> store_;
    std::optional<FeatureNetwork<T>> featnet_;
    std::optional<Dense<T>> lift_;
    std::vector<NFModule<T>> nf_;
    std::optional<NWModule<T>> nw_;
    Mlp<T> head_;
    Dense<T> classifier_;
};

/// Index of the largest logit per row (ties to the lowest class).
template <class T>
std::vector<int> argmax_rows(const Matrix<T>& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto r = logits.row(i);
        out[i] = int(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

} // namespace nbrseg
