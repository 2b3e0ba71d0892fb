#pragma once

// Component ablation runner: trains one model per component setting on the
// same data and reports comparable metric rows.

#include <cstddef>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "pipeline.hpp"

namespace nbrseg {

struct AblationSetting {
    std::string name;
    bool use_featnet;
    std::size_t num_nf_modules;
    bool use_nw;
    bool pair_loss;
    bool centroid_loss;
};

/// FN only → N_F×3 → N_F×3 + L_pair → FN + N_F×3 + L_pair → … + N_W → … + L_cent.
inline std::vector<AblationSetting> component_ablation() {
    return {
        {"FN", true, 0, false, false, false},
        {"NFx3", false, 3, false, false, false},
        {"NFx3+Lpair", false, 3, false, true, false},
        {"FN+NFx3+Lpair", true, 3, false, true, false},
        {"FN+NFx3+NW+Lpair", true, 3, true, true, false},
        {"FN+NFx3+NW+Lpair+Lcent", true, 3, true, true, true},
    };
}

inline ModelConfig apply_setting(ModelConfig m, const AblationSetting& s) {
    m.use_featnet = s.use_featnet;
    m.num_nf_modules = s.num_nf_modules;
    m.use_nw = s.use_nw;
    m.loss.weights[1] = s.pair_loss ? (m.loss.weights[1] > 0 ? m.loss.weights[1] : 1.0) : 0.0;
    m.loss.weights[2] = s.centroid_loss ? (m.loss.weights[2] > 0 ? m.loss.weights[2] : 1.0) : 0.0;
    if (m.pair_attachment > m.num_nf_modules) m.pair_attachment = m.num_nf_modules;
    return m;
}

struct AblationRow {
    AblationSetting setting;
    double train_accuracy = 0; // final-epoch sampled accuracy
    SegmentationMetrics eval;
};

template <class T>
std::vector<AblationRow> run_ablation(const std::vector<PointCloud>& scenes, const ModelConfig& base,
                                      const TrainConfig& train, const std::vector<AblationSetting>& settings,
                                      std::ostream* progress = nullptr) {
    std::vector<AblationRow> rows;
    for (const auto& s : settings) {
        Trainer<T> trainer(apply_setting(base, s), train, scenes);
        auto summary = run_training(trainer);
        auto rep = evaluate(trainer.model(), scenes, train);
        rows.push_back({s, summary.final_epoch_accuracy, rep.metrics});
        if (progress) *progress << "  " << s.name << " done\n";
    }
    return rows;
}

inline void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << std::left << std::setw(26) << "components" << "train_oAcc\toAcc\tmAcc\tmIoU\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows)
        os << std::left << std::setw(26) << r.setting.name << r.train_accuracy << "\t" << r.eval.overall_accuracy
           << "\t" << r.eval.mean_class_accuracy << "\t" << r.eval.mean_iou << "\n";
}

} // namespace nbrseg
