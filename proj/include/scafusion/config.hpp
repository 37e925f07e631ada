#pragma once

// Single-JSON run configuration. Every key is validated on load; unknown
// keys are rejected so ablation diffs stay honest.

#include <string>

#include "scafusion/heads.hpp"
#include "scafusion/scenes.hpp"
#include "scafusion/view_transform.hpp"

namespace scafusion {

struct ModelDims {
    int c_ce = 32;       // camera BEV / context channels
    int c_lidar = 64;
    int c_fused = 64;
    int c_aux = 64;
    int c_ctr = 64;
    int depth_bins = 32;
    double depth_min = 1.0;
    double depth_max = 40.0;
    int image_width = 64;
    int image_height = 64;
    int max_pillar_points = 16;
    int sca_rho = 8;
    int mona_ratio = 4;
};

struct Toggles {
    bool camera_branch = true;
    bool cam_align = true;   // CAM contrastive alignment
    bool aux_branch = true;  // CATB
    bool sca = true;
    bool saem = true;        // spatial gate inside SCA
    bool mona = true;        // adapters + frozen backbone
};

struct OptimConfig {
    double lr = 1e-3;
    int steps = 200;
    int batch_size = 2;
    uint64_t seed = 7;
};

struct GenConfig {
    int num_samples = 16;
    double train_fraction = 0.75;
    SceneSpec scene;  // per-sample seeds derived from scene.seed
};

struct RunConfig {
    std::string dataset_root = "data";
    BEVGridSpec grid;
    ModelDims model;
    Toggles toggles;
    OptimConfig optim;
    AuxConfig loss;            // lambda_align / lambda_aux / c_aux / c_ctr
    double align_tau = 0.1;
    double score_thresh = 0.1;
    double nms_radius = 1.0;
    std::string eval_split = "val";
    GenConfig gen;

    void validate() const;
};

RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

}  // namespace scafusion
