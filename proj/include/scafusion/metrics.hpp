#pragma once

// nuScenes-style detection metrics: per-class AP over center-distance
// thresholds, translation/scale/orientation errors at 2 m, and the NDS
// composite. Matching is 2D (ground plane) and greedy by score.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "scafusion/box.hpp"

namespace scafusion {

inline const std::vector<double>& match_thresholds() {
    static const std::vector<double> t = {0.5, 1.0, 2.0, 4.0};
    return t;
}

struct MatchResult {
    struct Entry {
        double score = 0;
        bool tp = false;
        double dist = 0;    // 2D center distance, valid when tp
        int gt_index = -1;  // index into the gts list, valid when tp
        int pred_index = -1;
    };
    std::vector<Entry> entries;  // descending score
    int64_t n_gt = 0;
};

MatchResult match_predictions(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts,
                              double threshold, int cls);

// Merge per-sample matches of the same class/threshold; equivalent to
// matching a pooled, globally score-sorted prediction list.
MatchResult merge_matches(const std::vector<MatchResult>& parts);

// 101-point interpolated AP; returns -1 when n_gt == 0 with predictions
// present (undefined, excluded from mAP) and 0 when there is nothing at all.
double average_precision(const MatchResult& m);

// Precision at the 101 recall grid points 0.00, 0.01, ..., 1.00.
std::array<double, 101> precision_recall_curve(const MatchResult& m);
double ap_from_curve(const std::array<double, 101>& curve);

struct TpErrors {
    double ate = 1.0;
    double ase = 1.0;
    double aoe = 1.0;
    int64_t matches = 0;
};

// Means over true positives of the 2 m match; no matches keeps the
// devkit convention of 1.0 per error.
TpErrors tp_errors(const MatchResult& at_2m, const std::vector<Box3D>& preds,
                   const std::vector<Box3D>& gts);

double nds(double mean_ap, double ate, double ase, double aoe);

// IoU of two boxes after aligning centers and yaw (size-only overlap).
double aligned_iou(const Box3D& a, const Box3D& b);

struct ClassMetrics {
    std::string name;
    bool present = false;                   // any GT of this class
    std::map<double, double> ap;            // threshold -> AP
    std::map<double, std::array<double, 101>> curves;
    TpErrors errors;
    double mean_ap = 0;
};

struct MetricsReport {
    std::vector<ClassMetrics> classes;
    double mean_ap = 0;   // over present classes and all thresholds
    double mate = 1, mase = 1, maoe = 1;
    double nds_value = 0;
};

struct SampleDetections {
    std::vector<Box3D> preds;  // scored
    std::vector<Box3D> gts;
};

MetricsReport evaluate_detections(const std::vector<SampleDetections>& samples);

void write_report(const std::string& dir, const MetricsReport& report,
                  const std::string& model_label);

}  // namespace scafusion
