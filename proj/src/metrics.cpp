#include "scafusion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace scafusion {

namespace {

constexpr double kPi = 3.14159265358979323846;

double center_dist(const Box3D& a, const Box3D& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace

MatchResult match_predictions(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts,
                              double threshold, int cls) {
    MatchResult out;
    for (const auto& g : gts)
        if (g.cls == cls) ++out.n_gt;

    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(preds.size()); ++i)
        if (preds[static_cast<size_t>(i)].cls == cls) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
    });

    std::vector<bool> taken(gts.size(), false);
    for (int pi : order) {
        const Box3D& p = preds[static_cast<size_t>(pi)];
        MatchResult::Entry e;
        e.score = p.score;
        e.pred_index = pi;
        int best = -1;
        double best_d = threshold;
        for (int gi = 0; gi < static_cast<int>(gts.size()); ++gi) {
            const Box3D& g = gts[static_cast<size_t>(gi)];
            if (g.cls != cls || taken[static_cast<size_t>(gi)]) continue;
            const double d = center_dist(p, g);
            if (d <= best_d) {
                best_d = d;
                best = gi;
            }
        }
        if (best >= 0) {
            taken[static_cast<size_t>(best)] = true;
            e.tp = true;
            e.dist = best_d;
            e.gt_index = best;
        }
        out.entries.push_back(e);
    }
    return out;
}

MatchResult merge_matches(const std::vector<MatchResult>& parts) {
    MatchResult out;
    for (const auto& p : parts) {
        out.n_gt += p.n_gt;
        out.entries.insert(out.entries.end(), p.entries.begin(), p.entries.end());
    }
    std::stable_sort(out.entries.begin(), out.entries.end(),
                     [](const MatchResult::Entry& a, const MatchResult::Entry& b) {
                         return a.score > b.score;
                     });
    return out;
}

std::array<double, 101> precision_recall_curve(const MatchResult& m) {
    std::array<double, 101> curve{};
    if (m.n_gt == 0) return curve;
    // operating points: precision/recall after each prediction
    std::vector<std::pair<double, double>> ops;  // (recall, precision)
    int64_t tp = 0, fp = 0;
    for (const auto& e : m.entries) {
        (e.tp ? tp : fp) += 1;
        ops.emplace_back(static_cast<double>(tp) / static_cast<double>(m.n_gt),
                         static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    // interpolated precision: best precision achievable at recall >= r
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        double best = 0;
        for (const auto& [rec, prec] : ops)
            if (rec >= r - 1e-12) best = std::max(best, prec);
        curve[static_cast<size_t>(i)] = best;
    }
    curve[0] = std::max(curve[0], curve[1]);
    return curve;
}

double ap_from_curve(const std::array<double, 101>& curve) {
    double acc = 0;
    for (int i = 10; i <= 100; ++i)
        acc += std::max(0.0, curve[static_cast<size_t>(i)] - 0.1) / 0.9;
    return acc / 91.0;
}

double average_precision(const MatchResult& m) {
    if (m.n_gt == 0) return m.entries.empty() ? 0.0 : -1.0;
    return ap_from_curve(precision_recall_curve(m));
}

double aligned_iou(const Box3D& a, const Box3D& b) {
    const double inter = std::min(a.l, b.l) * std::min(a.w, b.w) * std::min(a.h, b.h);
    const double uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

TpErrors tp_errors(const MatchResult& at_2m, const std::vector<Box3D>& preds,
                   const std::vector<Box3D>& gts) {
    TpErrors out;
    double ate = 0, ase = 0, aoe = 0;
    for (const auto& e : at_2m.entries) {
        if (!e.tp) continue;
        const Box3D& p = preds[static_cast<size_t>(e.pred_index)];
        const Box3D& g = gts[static_cast<size_t>(e.gt_index)];
        ate += e.dist;
        ase += 1.0 - aligned_iou(p, g);
        double dy = std::fmod(std::abs(p.yaw - g.yaw), 2 * kPi);
        if (dy > kPi) dy = 2 * kPi - dy;
        aoe += dy;
        ++out.matches;
    }
    if (out.matches > 0) {
        out.ate = ate / static_cast<double>(out.matches);
        out.ase = ase / static_cast<double>(out.matches);
        out.aoe = aoe / static_cast<double>(out.matches);
    }
    return out;
}

double nds(double mean_ap, double ate, double ase, double aoe) {
    double acc = 5.0 * mean_ap;
    for (double err : {ate, ase, aoe}) acc += 1.0 - std::min(1.0, err);
    return acc / 8.0;
}

MetricsReport evaluate_detections(const std::vector<SampleDetections>& samples) {
    MetricsReport report;
    double ap_sum = 0;
    int64_t ap_count = 0;
    double ate_sum = 0, ase_sum = 0, aoe_sum = 0;
    int64_t err_classes = 0;

    for (int cls = 0; cls < kNumClasses; ++cls) {
        ClassMetrics cm;
        cm.name = class_names()[static_cast<size_t>(cls)];
        for (const auto& s : samples)
            for (const auto& g : s.gts)
                if (g.cls == cls) cm.present = true;

        for (double thr : match_thresholds()) {
            // per-sample greedy matching, merged by score; tp_errors need
            // box lookups, so keep the per-sample results for the 2 m pass
            std::vector<MatchResult> parts;
            for (const auto& s : samples)
                parts.push_back(match_predictions(s.preds, s.gts, thr, cls));
            MatchResult merged = merge_matches(parts);
            cm.curves[thr] = precision_recall_curve(merged);
            cm.ap[thr] = average_precision(merged);
            if (cm.present) {
                ap_sum += std::max(0.0, cm.ap[thr]);
                ++ap_count;
            }
            if (thr == 2.0) {
                // accumulate errors across samples at the fixed 2 m threshold
                TpErrors agg;
                double ate = 0, ase = 0, aoe = 0;
                int64_t n = 0;
                for (size_t si = 0; si < samples.size(); ++si) {
                    TpErrors e = tp_errors(parts[si], samples[si].preds, samples[si].gts);
                    ate += e.ate * static_cast<double>(e.matches);
                    ase += e.ase * static_cast<double>(e.matches);
                    aoe += e.aoe * static_cast<double>(e.matches);
                    n += e.matches;
                }
                if (n > 0) {
                    agg.ate = ate / static_cast<double>(n);
                    agg.ase = ase / static_cast<double>(n);
                    agg.aoe = aoe / static_cast<double>(n);
                    agg.matches = n;
                }
                cm.errors = agg;
                if (cm.present) {
                    ate_sum += agg.ate;
                    ase_sum += agg.ase;
                    aoe_sum += agg.aoe;
                    ++err_classes;
                }
            }
        }
        double cap = 0;
        int64_t cn = 0;
        for (const auto& [thr, ap] : cm.ap)
            if (ap >= 0) {
                cap += ap;
                ++cn;
            }
        cm.mean_ap = cn > 0 ? cap / static_cast<double>(cn) : 0.0;
        report.classes.push_back(std::move(cm));
    }

    report.mean_ap = ap_count > 0 ? ap_sum / static_cast<double>(ap_count) : 0.0;
    if (err_classes > 0) {
        report.mate = ate_sum / static_cast<double>(err_classes);
        report.mase = ase_sum / static_cast<double>(err_classes);
        report.maoe = aoe_sum / static_cast<double>(err_classes);
    }
    report.nds_value = nds(report.mean_ap, report.mate, report.mase, report.maoe);
    return report;
}

void write_report(const std::string& dir, const MetricsReport& report,
                  const std::string& model_label) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["model"] = model_label;
    j["mAP"] = report.mean_ap;
    j["NDS"] = report.nds_value;
    j["mATE"] = report.mate;
    j["mASE"] = report.mase;
    j["mAOE"] = report.maoe;
    for (const auto& c : report.classes) {
        nlohmann::json jc;
        jc["present"] = c.present;
        jc["mean_ap"] = c.mean_ap;
        jc["ATE"] = c.errors.ate;
        jc["ASE"] = c.errors.ase;
        jc["AOE"] = c.errors.aoe;
        jc["tp_matches"] = c.errors.matches;
        for (const auto& [thr, ap] : c.ap) jc["ap"][std::to_string(thr)] = ap;
        for (const auto& [thr, curve] : c.curves)
            jc["pr_curve"][std::to_string(thr)] = curve;
        j["classes"][c.name] = jc;
    }
    std::ofstream((fs::path(dir) / "report.json").string()) << j.dump(2) << "\n";

    std::ofstream csv((fs::path(dir) / "report.csv").string());
    csv << "model";
    for (const auto& c : report.classes) csv << ",AP_" << c.name;
    csv << ",mAP,NDS,mATE,mASE,mAOE\n" << model_label;
    for (const auto& c : report.classes) csv << "," << c.mean_ap;
    csv << "," << report.mean_ap << "," << report.nds_value << "," << report.mate << ","
        << report.mase << "," << report.maoe << "\n";
}

}  // namespace scafusion
