#pragma once

// Training loop, dataset generation, evaluation, and the ablation matrix.

#include <string>
#include <vector>

#include "scafusion/metrics.hpp"
#include "scafusion/model.hpp"

namespace scafusion {

struct StepRecord {
    int step = 0;
    double total = 0;
    double det_main = 0;
    double det_aux = 0;
    double align = 0;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    double initial_det = 0;  // main detection loss at the first step
    double final_det = 0;
};

// Deterministic sample cycling; aborts on a non-finite loss, naming the
// step and the component values.
TrainHistory train_loop(Model<float>& model, const std::vector<PreparedSample<float>>& samples);

void write_history_csv(const std::string& path, const TrainHistory& history);

MetricsReport evaluate_model(Model<float>& model,
                             const std::vector<PreparedSample<float>>& samples);

// Generates cfg.gen.num_samples scenes (per-sample derived seeds) into
// cfg.dataset_root with a train/val split.
void generate_dataset(const RunConfig& cfg);

std::vector<PreparedSample<float>> load_split(const RunConfig& cfg, const std::string& split);

// BEV raster with GT (green), matched predictions (yellow), unmatched
// predictions (red), box outlines over the occupancy shading.
void render_bev_ppm(const std::string& path, const BEVGridSpec& grid,
                    const std::vector<Box3D>& gts, const std::vector<Box3D>& dets);

struct AblateRow {
    std::string name;
    Toggles toggles;
    uint64_t seed = 0;
    double mean_ap = 0;
    double nds = 0;
    double meteor_ap = 0;
    double platform_ap = 0;
    int64_t total_params = 0;
    double sca_param_ratio = 0;  // SCA params / fused-stage params
};

// Seven-configuration toggle matrix per seed; writes ablate.csv plus a
// summary.txt comparing the full model with the no-SCA configuration.
std::vector<AblateRow> run_ablation(const RunConfig& base, const std::string& out_dir,
                                    const std::vector<uint64_t>& seeds);

}  // namespace scafusion
