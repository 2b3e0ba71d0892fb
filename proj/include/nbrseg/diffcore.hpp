#pragma once

// Minimal reverse-mode differentiation over 2-D arrays.
//
// A Tape records every operation of one forward pass in creation order, which
// is already a topological order, so backward() is a single reverse sweep.
// Parameters live outside the tape in a ParamStore and survive across passes;
// their gradients accumulate until the optimizer clears them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"

namespace nbrseg {

template <class T>
struct Param {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;

    void zero_grad() { grad = Matrix<T>(value.rows(), value.cols()); }
};

/// Owns named parameters with stable addresses, in registration order.
template <class T>
class ParamStore {
public:
    Param<T>& create(const std::string& name, std::size_t rows, std::size_t cols) {
        if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
        index_[name] = params_.size();
        params_.push_back(Param<T>{name, Matrix<T>(rows, cols), Matrix<T>(rows, cols)});
        return params_.back();
    }

    Param<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    const Param<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    std::vector<Param<T>*> all() {
        std::vector<Param<T>*> out;
        for (auto& p : params_) out.push_back(&p);
        return out;
    }
    std::vector<const Param<T>*> all() const {
        std::vector<const Param<T>*> out;
        for (auto& p : params_) out.push_back(&p);
        return out;
    }

    std::size_t size() const { return params_.size(); }
    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::deque<Param<T>> params_;
    std::map<std::string, std::size_t> index_;
};

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Matrix<T>& value() const { return tape->value(*this); }
    Matrix<T> grad() const { return tape->grad(*this); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    T scalar() const { return value()(0, 0); }
};

struct TapeStats {
    std::size_t pairwise_l1_calls = 0;
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Matrix<T> value) { return push(std::move(value), false, nullptr, {}); }

    /// Leaf that collects a gradient but is not tied to a Param.
    Var<T> leaf(Matrix<T> value) { return push(std::move(value), true, nullptr, {}); }

    Var<T> param(Param<T>& p) { return push(p.value, true, &p, {}); }

    /// Records an op. `backward` receives the output gradient and must
    /// accumulate into parents through grad_ptr().
    Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> parents, Backward backward) {
        return record(std::move(value), std::vector<Var<T>>(parents), std::move(backward));
    }
    Var<T> record(Matrix<T> value, const std::vector<Var<T>>& parents, Backward backward) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
        return push(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
    }

    const Matrix<T>& value(Var<T> v) const { return nodes_[v.id].value; }

    /// Accumulated gradient of `v`; zeros when nothing flowed to it.
    Matrix<T> grad(Var<T> v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.empty()) return Matrix<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    /// Gradient buffer of `v`, allocated on first use, or nullptr when no
    /// gradient flows to it.
    Matrix<T>* grad_ptr(Var<T> v) {
        Node& n = nodes_[v.id];
        if (!n.needs_grad) return nullptr;
        if (n.grad.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
        return &n.grad;
    }

    bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }

    /// Seeds d(root)/d(root) = 1 and sweeps backwards; parameter gradients are
    /// added into Param::grad.
    void backward(Var<T> root) {
        const Matrix<T>& rv = nodes_[root.id].value;
        if (rv.rows() != 1 || rv.cols() != 1)
            throw ValidationError("backward: root must be 1x1, got " + rv.shape_str());
        if (!nodes_[root.id].needs_grad) return;
        grad_ptr(root)->fill(T(1));
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty()) continue;
            if (n.backward) n.backward(*this, n.grad);
            if (n.param) {
                if (n.param->grad.empty()) n.param->zero_grad();
                auto& pg = n.param->grad.data();
                const auto& g = n.grad.data();
                for (std::size_t j = 0; j < g.size(); ++j) pg[j] += g[j];
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }
    TapeStats& stats() { return stats_; }
    const TapeStats& stats() const { return stats_; }

private:
    struct Node {
        Matrix<T> value;
        Matrix<T> grad;
        Backward backward;
        Param<T>* param = nullptr;
        bool needs_grad = false;
    };

    Var<T> push(Matrix<T> value, bool needs, Param<T>* p, Backward bw) {
        nodes_.push_back(Node{std::move(value), {}, std::move(bw), p, needs});
        return Var<T>{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    TapeStats stats_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_shape(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw ValidationError(std::string(op) + ": shape mismatch (" + detail + ")");
}

} // namespace detail

/// input·weights + bias, bias broadcast over rows.
template <class T>
Var<T> linear(Var<T> input, Var<T> weights, Var<T> bias) {
    const auto& x = input.value();
    const auto& w = weights.value();
    const auto& b = bias.value();
    detail::require_shape(x.cols() == w.rows() && b.rows() == 1 && b.cols() == w.cols(), "linear",
                          x.shape_str() + " * " + w.shape_str() + " + " + b.shape_str());
    Matrix<T> out(x.rows(), w.cols());
    for (std::size_t i = 0; i < out.rows(); ++i)
        std::copy(b.data().begin(), b.data().end(), out.row(i).begin());
    gemm_acc(x, w, out);
    return input.tape->record(std::move(out), {input, weights, bias},
                              [input, weights, bias](Tape<T>& t, const Matrix<T>& g) {
                                  if (auto* gx = t.grad_ptr(input)) gemm_nt_acc(g, t.value(weights), *gx);
                                  if (auto* gw = t.grad_ptr(weights)) gemm_tn_acc(t.value(input), g, *gw);
                                  if (auto* gb = t.grad_ptr(bias)) {
                                      for (std::size_t i = 0; i < g.rows(); ++i)
                                          for (std::size_t j = 0; j < g.cols(); ++j) (*gb)(0, j) += g(i, j);
                                  }
                              });
}

/// Elementwise max(x, 0); the subgradient at 0 is 0.
template <class T>
Var<T> relu(Var<T> input) {
    Matrix<T> out = input.value();
    for (auto& v : out.data()) v = v <= T(0) ? T(0) : v; // NaN passes through
    return input.tape->record(std::move(out), {input}, [input](Tape<T>& t, const Matrix<T>& g) {
        auto* gx = t.grad_ptr(input);
        const auto& x = t.value(input).data();
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] > T(0)) gx->data()[i] += g.data()[i];
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require_shape(a.value().same_shape(b.value()), "add",
                          a.value().shape_str() + " + " + b.value().shape_str());
    Matrix<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.value().data()[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
        for (Var<T> v : {a, b})
            if (auto* gv = t.grad_ptr(v))
                for (std::size_t i = 0; i < g.size(); ++i) gv->data()[i] += g.data()[i];
    });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
    Matrix<T> out = a.value();
    for (auto& v : out.data()) v *= s;
    return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& t, const Matrix<T>& g) {
        auto* ga = t.grad_ptr(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga->data()[i] += s * g.data()[i];
    });
}

/// Sum of every entry, as a 1×1 value.
template <class T>
Var<T> sum_all(Var<T> a) {
    T s = 0;
    for (T v : a.value().data()) s += v;
    return a.tape->record(Matrix<T>(1, 1, s), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
        auto* ga = t.grad_ptr(a);
        for (auto& v : ga->data()) v += g(0, 0);
    });
}

/// Σ a_ij · w_ij against a constant weight matrix, as a 1×1 value.
template <class T>
Var<T> weighted_sum(Var<T> a, Matrix<T> weights) {
    detail::require_shape(a.value().same_shape(weights), "weighted_sum",
                          a.value().shape_str() + " vs " + weights.shape_str());
    T s = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += a.value().data()[i] * weights.data()[i];
    return a.tape->record(Matrix<T>(1, 1, s), {a}, [a, w = std::move(weights)](Tape<T>& t, const Matrix<T>& g) {
        auto* ga = t.grad_ptr(a);
        for (std::size_t i = 0; i < w.size(); ++i) ga->data()[i] += g(0, 0) * w.data()[i];
    });
}

/// Horizontal concatenation of equally tall values.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t width = 0;
    for (const auto& p : parts) {
        detail::require_shape(p.rows() == n, "concat_cols", "row counts differ");
        width += p.cols();
    }
    Matrix<T> out(n, width);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        for (std::size_t i = 0; i < n; ++i) std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + off);
        off += v.cols();
    }
    return parts.front().tape->record(std::move(out), parts, [parts](Tape<T>& t, const Matrix<T>& g) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t w = t.value(p).cols();
            if (auto* gp = t.grad_ptr(p))
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < w; ++j) (*gp)(i, j) += g(i, off + j);
            off += w;
        }
    });
}

/// out[r] = input[indices[r]]; backward scatter-adds.
template <class T>
Var<T> gather_rows(Var<T> input, std::vector<std::size_t> indices) {
    const auto& x = input.value();
    Matrix<T> out(indices.size(), x.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        detail::require(indices[r] < x.rows(), "gather_rows: index out of range");
        std::copy(x.row(indices[r]).begin(), x.row(indices[r]).end(), out.row(r).begin());
    }
    return input.tape->record(std::move(out), {input},
                              [input, idx = std::move(indices)](Tape<T>& t, const Matrix<T>& g) {
                                  auto* gx = t.grad_ptr(input);
                                  for (std::size_t r = 0; r < idx.size(); ++r) {
                                      auto src = g.row(r);
                                      auto dst = gx->row(idx[r]);
                                      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                                  }
                              });
}

/// Stacks a 1×F value n times.
template <class T>
Var<T> repeat_rows(Var<T> row, std::size_t n) {
    detail::require_shape(row.rows() == 1, "repeat_rows", "expected a single row, got " + row.value().shape_str());
    return gather_rows(row, std::vector<std::size_t>(n, 0));
}

template <class T>
struct Pooled {
    Var<T> value;
    /// G×F row indices of the selected maxima (into the pooled input).
    std::vector<std::size_t> argmax;
};

/// Per-group column-wise maximum. Ties resolve to the lowest row index and
/// backward routes each output gradient entirely to that row.
template <class T>
Pooled<T> max_pool_groups(Var<T> input, const std::vector<std::size_t>& group_ids, std::size_t num_groups) {
    const auto& x = input.value();
    detail::require_shape(group_ids.size() == x.rows(), "max_pool_groups", "one group id per row");
    const std::size_t f = x.cols();
    constexpr std::size_t unset = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> arg(num_groups * f, unset);
    Matrix<T> out(num_groups, f);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const std::size_t g = group_ids[r];
        detail::require(g < num_groups, "max_pool_groups: group id out of range");
        for (std::size_t j = 0; j < f; ++j) {
            std::size_t& a = arg[g * f + j];
            if (a == unset || x(r, j) > out(g, j)) {
                a = r;
                out(g, j) = x(r, j);
            }
        }
    }
    for (std::size_t g = 0; g < num_groups; ++g)
        if (f > 0 && arg[g * f] == unset)
            throw ValidationError("max_pool_groups: group " + std::to_string(g) + " is empty");
    Var<T> v = input.tape->record(std::move(out), {input}, [input, arg, f](Tape<T>& t, const Matrix<T>& g) {
        auto* gx = t.grad_ptr(input);
        for (std::size_t gi = 0; gi < g.rows(); ++gi)
            for (std::size_t j = 0; j < f; ++j) (*gx)(arg[gi * f + j], j) += g(gi, j);
    });
    return {v, std::move(arg)};
}

/// Column-wise maximum over all rows → 1×F.
template <class T>
Pooled<T> max_pool_rows(Var<T> input) {
    detail::require(input.rows() >= 1, "max_pool_rows: need at least one row");
    return max_pool_groups(input, std::vector<std::size_t>(input.rows(), 0), 1);
}

/// Per-group mean of member rows → G×F. Every group must be non-empty.
template <class T>
Var<T> segment_mean(Var<T> input, const std::vector<std::size_t>& group_ids, std::size_t num_groups) {
    const auto& x = input.value();
    detail::require_shape(group_ids.size() == x.rows(), "segment_mean", "one group id per row");
    std::vector<std::size_t> count(num_groups, 0);
    std::vector<std::vector<std::size_t>> members(num_groups);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        detail::require(group_ids[r] < num_groups, "segment_mean: group id out of range");
        ++count[group_ids[r]];
        members[group_ids[r]].push_back(r);
    }
    // Values are summed in sorted order so the mean ignores row order.
    Matrix<T> out(num_groups, x.cols());
    std::vector<T> vals;
    for (std::size_t g = 0; g < num_groups; ++g) {
        if (count[g] == 0) throw ValidationError("segment_mean: group " + std::to_string(g) + " is empty");
        for (std::size_t j = 0; j < x.cols(); ++j) {
            vals.clear();
            for (std::size_t r : members[g]) vals.push_back(x(r, j));
            std::sort(vals.begin(), vals.end());
            T sum = 0;
            for (T v : vals) sum += v;
            out(g, j) = sum / T(count[g]);
        }
    }
    return input.tape->record(std::move(out), {input},
                              [input, group_ids, count](Tape<T>& t, const Matrix<T>& g) {
                                  auto* gx = t.grad_ptr(input);
                                  for (std::size_t r = 0; r < group_ids.size(); ++r) {
                                      const std::size_t gi = group_ids[r];
                                      const T inv = T(1) / T(count[gi]);
                                      for (std::size_t j = 0; j < g.cols(); ++j) (*gx)(r, j) += g(gi, j) * inv;
                                  }
                              });
}

/// Mean over rows of −log softmax(logits)[label], stabilised by subtracting
/// the row maximum.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& labels) {
    const auto& z = logits.value();
    detail::require_shape(labels.size() == z.rows(), "softmax_cross_entropy", "one label per row");
    const std::size_t n = z.rows(), c = z.cols();
    Matrix<T> prob(n, c);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        detail::require(labels[i] >= 0 && std::size_t(labels[i]) < c, "softmax_cross_entropy: label out of range");
        auto row = z.row(i);
        const T m = *std::max_element(row.begin(), row.end());
        T denom = 0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - m);
        for (std::size_t j = 0; j < c; ++j) prob(i, j) = std::exp(row[j] - m) / denom;
        loss += std::log(denom) - (row[labels[i]] - m);
    }
    loss /= T(n);
    return logits.tape->record(Matrix<T>(1, 1, loss), {logits},
                               [logits, labels, prob = std::move(prob)](Tape<T>& t, const Matrix<T>& g) {
                                   auto* gz = t.grad_ptr(logits);
                                   const T s = g(0, 0) / T(prob.rows());
                                   for (std::size_t i = 0; i < prob.rows(); ++i)
                                       for (std::size_t j = 0; j < prob.cols(); ++j) {
                                           const T onehot = std::size_t(labels[i]) == j ? T(1) : T(0);
                                           (*gz)(i, j) += s * (prob(i, j) - onehot);
                                       }
                               });
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
template <class T, class Rng>
void glorot_uniform(Param<T>& p, Rng& rng) {
    const T bound = std::sqrt(T(6) / T(p.value.rows() + p.value.cols()));
    std::uniform_real_distribution<double> dist(-double(bound), double(bound));
    for (auto& v : p.value.data()) v = T(dist(rng));
}

template <class T>
struct Dense {
    Param<T>* weights = nullptr;
    Param<T>* bias = nullptr;

    template <class Rng>
    static Dense create(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        Dense d;
        d.weights = &store.create(name + ".w", in, out);
        d.bias = &store.create(name + ".b", 1, out);
        glorot_uniform(*d.weights, rng);
        return d;
    }

    std::size_t in_dim() const { return weights->value.rows(); }
    std::size_t out_dim() const { return weights->value.cols(); }

    Var<T> operator()(Var<T> x) const {
        return linear(x, x.tape->param(*weights), x.tape->param(*bias));
    }
};

/// Stack of dense layers, each followed by a rectifier.
template <class T>
struct Mlp {
    std::vector<Dense<T>> layers;

    template <class Rng>
    static Mlp create(ParamStore<T>& store, const std::string& name, std::size_t in,
                      const std::vector<std::size_t>& widths, Rng& rng) {
        Mlp m;
        std::size_t prev = in;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            m.layers.push_back(Dense<T>::create(store, name + "." + std::to_string(i), prev, widths[i], rng));
            prev = widths[i];
        }
        return m;
    }

    std::size_t out_dim() const { return layers.back().out_dim(); }

    Var<T> operator()(Var<T> x) const {
        for (const auto& l : layers) x = relu(l(x));
        return x;
    }
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adaptive moment estimation with bias-corrected moments. Moments are keyed
/// by parameter name so state can be saved and restored.
template <class T>
class Adam {
public:
    struct Moments {
        Matrix<T> first;
        Matrix<T> second;
    };

    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore<T>& store) {
        ++steps_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
        for (Param<T>* p : store.all()) {
            if (p->grad.empty()) p->zero_grad();
            auto& mo = moments_[p->name];
            if (mo.first.empty()) {
                mo.first = Matrix<T>(p->value.rows(), p->value.cols());
                mo.second = Matrix<T>(p->value.rows(), p->value.cols());
            }
            detail::require(mo.first.same_shape(p->value), "Adam: moment shape mismatch for " + p->name);
            auto& w = p->value.data();
            const auto& g = p->grad.data();
            auto& m = mo.first.data();
            auto& v = mo.second.data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = T(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
                v[i] = T(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * double(g[i]) * double(g[i]));
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                w[i] = T(w[i] - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon));
            }
            p->zero_grad();
        }
    }

    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }
    std::size_t steps() const { return steps_; }
    void set_steps(std::size_t s) { steps_ = s; }
    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

private:
    AdamConfig cfg_;
    std::size_t steps_ = 0;
    std::map<std::string, Moments> moments_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient verification
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0;
    double max_abs_error = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
    double tolerance = 0;
    bool passed = true;
};

/// |a − n| / max(|a|, |n|, 1e-12)
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

/// Compares backward() against central differences for every coordinate of
/// `params`. `forward` must build a fresh scalar on the given tape and be
/// deterministic. `analytic_scale` multiplies the analytic gradient before
/// comparison; it exists so tests can corrupt backward deliberately.
template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>&)>& forward, const std::vector<Param<T>*>& params,
                           T eps, double tolerance, T analytic_scale = T(1)) {
    for (auto* p : params) p->zero_grad();
    {
        Tape<T> tape;
        Var<T> out = forward(tape);
        tape.backward(out);
    }
    GradCheckReport rep;
    rep.tolerance = tolerance;
    auto eval = [&] {
        Tape<T> tape;
        return forward(tape).scalar();
    };
    for (auto* p : params) {
        const Matrix<T> analytic = p->grad;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            T& w = p->value.data()[i];
            const T saved = w;
            w = saved + eps;
            const T fp = eval();
            w = saved - eps;
            const T fm = eval();
            w = saved;
            const double numeric = (double(fp) - double(fm)) / (2.0 * double(eps));
            const double a = double(analytic.data()[i]) * double(analytic_scale);
            const double rel = relative_error(a, numeric);
            rep.max_abs_error = std::max(rep.max_abs_error, std::abs(a - numeric));
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_param = p->name;
                rep.worst_index = i;
            }
            ++rep.coordinates;
        }
        p->zero_grad();
    }
    rep.passed = rep.max_rel_error < tolerance;
    return rep;
}

} // namespace nbrseg
