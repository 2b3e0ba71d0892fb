#pragma once

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace nbrseg {

/// counts(g, p): points with ground truth g predicted as p.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 0)
        : c_(num_classes), counts_(num_classes * num_classes, 0) {}

    std::size_t num_classes() const { return c_; }
    std::uint64_t operator()(std::size_t g, std::size_t p) const { return counts_[g * c_ + p]; }

    void add(int label, int prediction) {
        if (label < 0 || std::size_t(label) >= c_ || prediction < 0 || std::size_t(prediction) >= c_)
            throw ValidationError("confusion matrix: class out of range (label " + std::to_string(label) +
                                  ", prediction " + std::to_string(prediction) + ", C=" + std::to_string(c_) + ")");
        ++counts_[std::size_t(label) * c_ + std::size_t(prediction)];
    }

    void accumulate(const std::vector<int>& predictions, const std::vector<int>& labels) {
        detail::require(predictions.size() == labels.size(), "accumulate: predictions/labels size mismatch");
        for (std::size_t i = 0; i < labels.size(); ++i) add(labels[i], predictions[i]);
    }

    void merge(const ConfusionMatrix& other) {
        detail::require(other.c_ == c_, "merge: class count mismatch");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto v : counts_) t += v;
        return t;
    }
    std::uint64_t row_sum(std::size_t g) const {
        std::uint64_t s = 0;
        for (std::size_t p = 0; p < c_; ++p) s += (*this)(g, p);
        return s;
    }
    std::uint64_t col_sum(std::size_t p) const {
        std::uint64_t s = 0;
        for (std::size_t g = 0; g < c_; ++g) s += (*this)(g, p);
        return s;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t c_;
    std::vector<std::uint64_t> counts_;
};

struct SegmentationMetrics {
    double overall_accuracy = 0;
    double mean_class_accuracy = 0;
    double mean_iou = 0;
    std::vector<double> class_accuracy; // NaN for classes without ground truth
    std::vector<double> class_iou;      // NaN for classes with empty union
    std::vector<bool> present;          // class has a non-empty union
};

/// Classes absent from both ground truth and predictions are excluded from
/// the means. mAcc averages over classes that occur in the ground truth.
inline SegmentationMetrics compute_metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw ValidationError("compute_metrics: empty confusion matrix");
    const std::size_t c = cm.num_classes();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    SegmentationMetrics m;
    m.class_accuracy.assign(c, nan);
    m.class_iou.assign(c, nan);
    m.present.assign(c, false);
    std::uint64_t diag = 0;
    double acc_sum = 0, iou_sum = 0;
    std::size_t acc_n = 0, iou_n = 0;
    for (std::size_t k = 0; k < c; ++k) {
        const std::uint64_t tp = cm(k, k), row = cm.row_sum(k), col = cm.col_sum(k);
        diag += tp;
        if (row > 0) {
            m.class_accuracy[k] = double(tp) / double(row);
            acc_sum += m.class_accuracy[k];
            ++acc_n;
        }
        const std::uint64_t uni = row + col - tp;
        if (uni > 0) {
            m.present[k] = true;
            m.class_iou[k] = double(tp) / double(uni);
            iou_sum += m.class_iou[k];
            ++iou_n;
        }
    }
    m.overall_accuracy = double(diag) / double(total);
    m.mean_class_accuracy = acc_n ? acc_sum / double(acc_n) : 0.0;
    m.mean_iou = iou_n ? iou_sum / double(iou_n) : 0.0;
    return m;
}

/// `key: value` summary followed by a per-class table
/// (class, accuracy, IoU, ground-truth points, predicted points).
inline void write_metrics_report(std::ostream& os, const ConfusionMatrix& cm, const SegmentationMetrics& m) {
    auto fmt = [](double v) {
        if (v != v) return std::string("-");
        std::ostringstream s;
        s << std::fixed << std::setprecision(4) << v;
        return s.str();
    };
    os << "points: " << cm.total() << "\n";
    os << "oAcc: " << fmt(m.overall_accuracy) << "\n";
    os << "mAcc: " << fmt(m.mean_class_accuracy) << "\n";
    os << "mIoU: " << fmt(m.mean_iou) << "\n";
    os << "class\tacc\tiou\tgt_points\tpred_points\n";
    for (std::size_t k = 0; k < cm.num_classes(); ++k)
        os << k << "\t" << fmt(m.class_accuracy[k]) << "\t" << fmt(m.class_iou[k]) << "\t" << cm.row_sum(k) << "\t"
           << cm.col_sum(k) << "\n";
}

} // namespace nbrseg
