#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "nbrseg/metrics.hpp"

using namespace nbrseg;

TEST(Confusion, PerfectPredictionsFillDiagonal) {
    ConfusionMatrix cm(3);
    cm.accumulate({0, 1, 2, 2}, {0, 1, 2, 2});
    for (std::size_t g = 0; g < 3; ++g)
        for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(cm(g, p), g == p ? (g == 2 ? 2u : 1u) : 0u);
}

TEST(Confusion, HandCount) {
    ConfusionMatrix cm(3);
    cm.accumulate({0, 1, 1}, {0, 1, 2});
    EXPECT_EQ(cm(0, 0), 1u);
    EXPECT_EQ(cm(1, 1), 1u);
    EXPECT_EQ(cm(2, 1), 1u);
    EXPECT_EQ(cm.total(), 3u);
}

TEST(Confusion, HalvesMergeToWhole) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> c(0, 4);
    std::vector<int> p(100), l(100);
    for (int i = 0; i < 100; ++i) p[i] = c(rng), l[i] = c(rng);
    ConfusionMatrix whole(5), a(5), b(5);
    whole.accumulate(p, l);
    a.accumulate({p.begin(), p.begin() + 37}, {l.begin(), l.begin() + 37});
    b.accumulate({p.begin() + 37, p.end()}, {l.begin() + 37, l.end()});
    a.merge(b);
    EXPECT_EQ(a, whole);
}

TEST(Confusion, OutOfRangeThrows) {
    ConfusionMatrix cm(2);
    EXPECT_THROW(cm.add(2, 0), ValidationError);
    EXPECT_THROW(cm.add(0, -1), ValidationError);
    EXPECT_THROW(cm.accumulate({0}, {0, 1}), ValidationError);
}

TEST(Metrics, PerfectDiagonal) {
    ConfusionMatrix cm(4);
    cm.accumulate({0, 1, 2, 3, 3}, {0, 1, 2, 3, 3});
    auto m = compute_metrics(cm);
    EXPECT_EQ(m.overall_accuracy, 1.0);
    EXPECT_EQ(m.mean_class_accuracy, 1.0);
    EXPECT_EQ(m.mean_iou, 1.0);
}

TEST(Metrics, TwoClassHandEvaluation) {
    ConfusionMatrix cm(2);
    cm.accumulate({0, 1, 0, 1}, {0, 0, 1, 1});
    auto m = compute_metrics(cm);
    EXPECT_EQ(m.overall_accuracy, 0.5);
    EXPECT_DOUBLE_EQ(m.class_iou[0], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.class_iou[1], 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.mean_iou, 1.0 / 3.0);
    EXPECT_EQ(m.mean_class_accuracy, 0.5);
}

TEST(Metrics, AbsentClassIsExcluded) {
    ConfusionMatrix cm(3);
    cm.accumulate({0, 2, 2}, {0, 2, 2});
    auto m = compute_metrics(cm);
    EXPECT_EQ(m.mean_iou, 1.0);
    EXPECT_EQ(m.mean_class_accuracy, 1.0);
    EXPECT_FALSE(m.present[1]);
    EXPECT_TRUE(std::isnan(m.class_iou[1]));
}

TEST(Metrics, PredictedOnlyClassCountsInIoU) {
    // Class 1 never occurs in ground truth but is predicted: IoU 0, no accuracy.
    ConfusionMatrix cm(2);
    cm.accumulate({0, 1}, {0, 0});
    auto m = compute_metrics(cm);
    EXPECT_DOUBLE_EQ(m.class_iou[0], 0.5);
    EXPECT_EQ(m.class_iou[1], 0.0);
    EXPECT_DOUBLE_EQ(m.mean_iou, 0.25);
    EXPECT_DOUBLE_EQ(m.mean_class_accuracy, 0.5);
}

TEST(Metrics, EmptyMatrixThrows) {
    EXPECT_THROW(compute_metrics(ConfusionMatrix(3)), ValidationError);
}

TEST(Metrics, MatchesPerPointTallyAndIgnoresOrder) {
    std::mt19937_64 rng(7);
    for (int inst = 0; inst < 50; ++inst) {
        const int C = 2 + inst % 6;
        std::uniform_int_distribution<int> c(0, C - 1);
        std::vector<int> p(200), l(200);
        for (int i = 0; i < 200; ++i) {
            l[i] = c(rng);
            p[i] = (rng() % 3) ? l[i] : c(rng);
        }
        ConfusionMatrix cm(C);
        cm.accumulate(p, l);
        auto m = compute_metrics(cm);

        // Independent tally.
        double correct = 0, iou_sum = 0, acc_sum = 0;
        int iou_n = 0, acc_n = 0;
        for (int i = 0; i < 200; ++i) correct += p[i] == l[i];
        for (int k = 0; k < C; ++k) {
            int tp = 0, gt = 0, pr = 0;
            for (int i = 0; i < 200; ++i) {
                tp += p[i] == k && l[i] == k;
                gt += l[i] == k;
                pr += p[i] == k;
            }
            if (gt) acc_sum += double(tp) / gt, ++acc_n;
            if (gt + pr - tp) iou_sum += double(tp) / (gt + pr - tp), ++iou_n;
        }
        EXPECT_DOUBLE_EQ(m.overall_accuracy, correct / 200);
        EXPECT_NEAR(m.mean_iou, iou_sum / iou_n, 1e-15);
        EXPECT_NEAR(m.mean_class_accuracy, acc_sum / acc_n, 1e-15);
        for (double v : {m.overall_accuracy, m.mean_class_accuracy, m.mean_iou}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }

        std::vector<std::size_t> order(200);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> p2, l2;
        for (auto o : order) p2.push_back(p[o]), l2.push_back(l[o]);
        ConfusionMatrix cm2(C);
        cm2.accumulate(p2, l2);
        EXPECT_EQ(cm2, cm);
    }
}

TEST(Metrics, ReportLayout) {
    ConfusionMatrix cm(2);
    cm.accumulate({0, 1, 1}, {0, 1, 0});
    std::ostringstream os;
    write_metrics_report(os, cm, compute_metrics(cm));
    const std::string s = os.str();
    EXPECT_NE(s.find("points: 3\n"), std::string::npos);
    EXPECT_NE(s.find("oAcc: 0.6667\n"), std::string::npos);
    EXPECT_NE(s.find("class\tacc\tiou\tgt_points\tpred_points\n"), std::string::npos);
    EXPECT_NE(s.find("0\t0.5000\t0.5000\t2\t1\n"), std::string::npos);
}
