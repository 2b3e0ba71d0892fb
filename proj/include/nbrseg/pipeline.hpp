#pragma once

// Training, evaluation and prediction over point cloud datasets.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "checkpoint.hpp"
#include "dataio.hpp"
#include "diffcore.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace nbrseg {

/// Independent generator for (seed, a, b); every random choice in training
/// and evaluation is keyed this way so runs replay from any step.
inline std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(a), std::uint32_t(a >> 32),
                      std::uint32_t(b), std::uint32_t(b >> 32)};
    return std::mt19937_64(seq);
}

struct BlockRef {
    std::size_t scene = 0;
    std::size_t block = 0;
    Block data;
};

/// Network inputs for one sampled block of `scene`.
template <class Rng>
SampledBlock prepare_block(const PointCloud& scene, const Block& block, const ModelConfig& m, std::size_t n_points,
                           Rng& rng) {
    SampledBlock s = sample_block(scene, block, n_points, rng);
    const auto [lo, hi] = scene.bounds();
    s.features = compute_input_features(s, lo, hi, m.input_mode);
    return s;
}

struct TrainRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    LossReport loss;
    double accuracy = 0; // on the sampled points of this step
    double learning_rate = 0;
};

template <class T>
class Trainer {
public:
    Trainer(ModelConfig model_cfg, TrainConfig train_cfg, std::vector<PointCloud> scenes)
        : train_(train_cfg), scenes_(std::move(scenes)), model_(std::move(model_cfg)), opt_(train_cfg.adam) {
        train_.validate();
        for (std::size_t s = 0; s < scenes_.size(); ++s) {
            scenes_[s].validate(model_.config().num_classes);
            auto blocks = split_into_blocks(scenes_[s], train_.block_size, train_.stride());
            for (std::size_t b = 0; b < blocks.size(); ++b)
                if (blocks[b].point_indices.size() >= train_.min_block_points)
                    blocks_.push_back({s, b, std::move(blocks[b])});
        }
        if (blocks_.empty())
            throw ValidationError("no training block has at least " + std::to_string(train_.min_block_points) +
                                  " points");
    }

    /// Restores parameters, optimizer state and the step counter.
    static Trainer resume(const CheckpointData& c, std::vector<PointCloud> scenes) {
        auto [m, t] = c.configs();
        Trainer tr(m, t, std::move(scenes));
        load_parameters(tr.model_, c);
        load_optimizer(tr.opt_, c);
        tr.step_ = c.step;
        return tr;
    }

    std::size_t num_blocks() const { return blocks_.size(); }
    std::size_t steps_per_epoch() const { return (blocks_.size() + train_.blocks_per_batch - 1) / train_.blocks_per_batch; }
    std::size_t total_steps() const { return train_.max_steps ? train_.max_steps : train_.epochs * steps_per_epoch(); }
    std::size_t steps_done() const { return step_; }
    bool done() const { return step_ >= total_steps(); }

    Model<T>& model() { return model_; }
    const Model<T>& model() const { return model_; }
    Adam<T>& optimizer() { return opt_; }
    const TrainConfig& train_config() const { return train_; }
    const std::vector<PointCloud>& scenes() const { return scenes_; }

    double learning_rate_at(std::size_t step) const {
        if (train_.lr_decay_every == 0) return train_.adam.learning_rate;
        return train_.adam.learning_rate * std::pow(train_.lr_decay, double(step / train_.lr_decay_every));
    }

    /// One optimizer step over `blocks_per_batch` blocks. Block order is a
    /// per-epoch shuffle; gradients are averaged over the batch.
    TrainRecord step() {
        TrainRecord rec;
        rec.step = step_;
        rec.learning_rate = learning_rate_at(step_);
        opt_.config().learning_rate = rec.learning_rate;
        model_.params().zero_grad();
        std::size_t correct = 0, seen = 0;
        const std::size_t bpb = train_.blocks_per_batch;
        for (std::size_t j = 0; j < bpb; ++j) {
            const std::size_t counter = step_ * bpb + j;
            const std::size_t epoch = counter / blocks_.size();
            if (j == 0) rec.epoch = epoch;
            const BlockRef& ref = blocks_[epoch_order(epoch)[counter % blocks_.size()]];
            auto rng = keyed_rng(train_.seed, counter, 1);
            SampledBlock s = prepare_block(scenes_[ref.scene], ref.data, model_.config(), train_.points_per_block, rng);
            if (train_.augment) s = augment_translate(std::move(s), rng, train_.max_offset);
            const std::uint64_t kseed = rng();

            Tape<T> tape;
            auto fr = model_.forward(tape, s.features, s.world_positions, kseed);
            auto [total, report] = model_.loss(fr, s.labels, rng);
            if (!std::isfinite(report.total))
                throw NumericalError("non-finite loss at step " + std::to_string(step_) + " on block " +
                                     block_id(ref) + " (class " + std::to_string(report.l_class) + ", pair " +
                                     std::to_string(report.l_pair) + ", centroid " + std::to_string(report.l_cent) + ")");
            tape.backward(bpb == 1 ? total : scale(total, T(1) / T(bpb)));
            rec.loss.l_class += report.l_class / double(bpb);
            rec.loss.l_pair += report.l_pair / double(bpb);
            rec.loss.l_cent += report.l_cent / double(bpb);
            rec.loss.total += report.total / double(bpb);
            const auto pred = argmax_rows(fr.logits.value());
            for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == s.labels[i];
            seen += pred.size();
        }
        opt_.step(model_.params());
        rec.accuracy = double(correct) / double(seen);
        ++step_;
        return rec;
    }

    CheckpointData checkpoint() const { return make_checkpoint(model_, train_, &opt_, step_); }

    std::string block_id(const BlockRef& ref) const {
        return scenes_[ref.scene].scene_id + "#" + std::to_string(ref.block);
    }

private:
    const std::vector<std::size_t>& epoch_order(std::size_t epoch) {
        auto it = orders_.find(epoch);
        if (it != orders_.end()) return it->second;
        std::vector<std::size_t> order(blocks_.size());
        std::iota(order.begin(), order.end(), 0);
        auto rng = keyed_rng(train_.seed, epoch, 0);
        std::shuffle(order.begin(), order.end(), rng);
        if (orders_.size() > 4) orders_.erase(orders_.begin());
        return orders_[epoch] = std::move(order);
    }

    TrainConfig train_;
    std::vector<PointCloud> scenes_;
    std::vector<BlockRef> blocks_;
    Model<T> model_;
    Adam<T> opt_;
    std::size_t step_ = 0;
    std::map<std::size_t, std::vector<std::size_t>> orders_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ScenePrediction {
    std::vector<int> labels;        // argmax of averaged logits per point
    std::vector<std::size_t> votes; // forward passes that scored each point
};

/// Scores every point of every scene. Each block (no occupancy filter) is
/// covered by consecutive chunks of a seeded permutation; a short final chunk
/// is topped up with other block points. A point's logits are averaged over
/// every chunk that contains it, counting each point once per chunk.
template <class T>
std::vector<ScenePrediction> predict_scenes(const Model<T>& model, const std::vector<PointCloud>& scenes,
                                            const TrainConfig& data_cfg) {
    const ModelConfig& mc = model.config();
    const std::size_t n = data_cfg.points_per_block;
    std::vector<ScenePrediction> out;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const PointCloud& scene = scenes[si];
        scene.validate(mc.num_classes);
        Matrix<double> sums(scene.size(), mc.num_classes);
        ScenePrediction sp;
        sp.votes.assign(scene.size(), 0);
        const auto [lo, hi] = scene.bounds();
        const auto blocks = split_into_blocks(scene, data_cfg.block_size, data_cfg.stride());
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            const auto& idx = blocks[bi].point_indices;
            auto rng = keyed_rng(data_cfg.eval_seed, si, bi);
            std::vector<std::size_t> order(idx);
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += n) {
                Block chunk;
                const std::size_t end = std::min(order.size(), start + n);
                chunk.point_indices.assign(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
                const std::size_t own = chunk.point_indices.size();
                // Top up from the rest of the block, without repeats while possible.
                if (own < n && order.size() > own) {
                    std::vector<std::size_t> rest;
                    rest.reserve(order.size() - own);
                    for (std::size_t i = 0; i < order.size(); ++i)
                        if (i < start || i >= end) rest.push_back(order[i]);
                    std::shuffle(rest.begin(), rest.end(), rng);
                    rest.resize(std::min(rest.size(), n - own));
                    chunk.point_indices.insert(chunk.point_indices.end(), rest.begin(), rest.end());
                }
                // sample_block keeps every point once and fills with replacement.
                SampledBlock s = sample_block(scene, chunk, n, rng);
                s.features = compute_input_features(s, lo, hi, mc.input_mode);
                Tape<T> tape;
                auto fr = model.forward(tape, s.features, s.world_positions, rng());
                const auto& logits = fr.logits.value();
                std::vector<bool> counted(scene.size(), false);
                for (std::size_t r = 0; r < s.size(); ++r) {
                    const std::size_t src = s.source_indices[r];
                    if (counted[src]) continue;
                    counted[src] = true;
                    ++sp.votes[src];
                    for (std::size_t c = 0; c < mc.num_classes; ++c) sums(src, c) += double(logits(r, c));
                }
            }
        }
        sp.labels = argmax_rows(sums); // averaging does not change the argmax
        for (std::size_t i = 0; i < scene.size(); ++i)
            if (sp.votes[i] == 0) throw NumericalError("evaluation left point " + std::to_string(i) + " unscored");
        out.push_back(std::move(sp));
    }
    return out;
}

struct EvalReport {
    ConfusionMatrix confusion;
    SegmentationMetrics metrics;
    std::vector<ScenePrediction> predictions;
};

template <class T>
EvalReport evaluate(const Model<T>& model, const std::vector<PointCloud>& scenes, const TrainConfig& data_cfg) {
    EvalReport rep{ConfusionMatrix(model.config().num_classes), {}, predict_scenes(model, scenes, data_cfg)};
    for (std::size_t s = 0; s < scenes.size(); ++s) rep.confusion.accumulate(rep.predictions[s].labels, scenes[s].labels);
    rep.metrics = compute_metrics(rep.confusion);
    return rep;
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

struct TrainSummary {
    std::vector<TrainRecord> log;
    /// Accuracy over the sampled points of the final epoch.
    double final_epoch_accuracy = 0;
};

/// Runs the trainer to completion. `on_step` sees every record; when
/// `checkpoint_dir` is set, checkpoints are written every
/// `checkpoint_every` steps and at the end as `last.ckpt`.
template <class T>
TrainSummary run_training(Trainer<T>& trainer, const std::function<void(const TrainRecord&)>& on_step = {},
                          const std::filesystem::path& checkpoint_dir = {}) {
    TrainSummary sum;
    const std::size_t every = trainer.train_config().checkpoint_every;
    while (!trainer.done()) {
        sum.log.push_back(trainer.step());
        if (on_step) on_step(sum.log.back());
        if (!checkpoint_dir.empty() && every && trainer.steps_done() % every == 0)
            write_checkpoint(checkpoint_dir / ("step_" + std::to_string(trainer.steps_done()) + ".ckpt"),
                             trainer.checkpoint());
    }
    if (!checkpoint_dir.empty()) write_checkpoint(checkpoint_dir / "last.ckpt", trainer.checkpoint());
    const std::size_t tail = std::min(sum.log.size(), trainer.steps_per_epoch());
    double acc = 0;
    for (std::size_t i = sum.log.size() - tail; i < sum.log.size(); ++i) acc += sum.log[i].accuracy;
    sum.final_epoch_accuracy = tail ? acc / double(tail) : 0.0;
    return sum;
}

} // namespace nbrseg
