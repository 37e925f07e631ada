#include "scafusion/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace scafusion {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& scope) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument("config: unknown key '" + scope + key + "'");
}

template <class T>
void opt(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

void load_grid(const json& j, BEVGridSpec& g) {
    reject_unknown(j, {"x_min", "x_max", "y_min", "y_max", "cell", "z_min", "z_max"}, "grid.");
    opt(j, "x_min", g.x_min);
    opt(j, "x_max", g.x_max);
    opt(j, "y_min", g.y_min);
    opt(j, "y_max", g.y_max);
    opt(j, "cell", g.cell);
    opt(j, "z_min", g.z_min);
    opt(j, "z_max", g.z_max);
}

void load_scene(const json& j, SceneSpec& s) {
    reject_unknown(j,
                   {"seed", "extent", "crater_count", "crater_radius_min", "crater_radius_max",
                    "crater_depth_max", "meteor_count", "meteor_size_min", "meteor_size_max",
                    "platform_count", "platform_size_min", "platform_size_max", "light_elevation",
                    "lidar_rings", "lidar_azimuth_steps", "lidar_max_range"},
                   "gen.scene.");
    opt(j, "seed", s.seed);
    opt(j, "extent", s.extent);
    opt(j, "crater_count", s.crater_count);
    opt(j, "crater_radius_min", s.crater_radius_min);
    opt(j, "crater_radius_max", s.crater_radius_max);
    opt(j, "crater_depth_max", s.crater_depth_max);
    opt(j, "meteor_count", s.meteor_count);
    opt(j, "meteor_size_min", s.meteor_size_min);
    opt(j, "meteor_size_max", s.meteor_size_max);
    opt(j, "platform_count", s.platform_count);
    opt(j, "platform_size_min", s.platform_size_min);
    opt(j, "platform_size_max", s.platform_size_max);
    opt(j, "light_elevation", s.light_elevation);
    opt(j, "lidar_rings", s.lidar.rings);
    opt(j, "lidar_azimuth_steps", s.lidar.azimuth_steps);
    opt(j, "lidar_max_range", s.lidar.max_range);
}

}  // namespace

void RunConfig::validate() const {
    grid.validate();
    if (model.c_ce < 1 || model.c_lidar < 1 || model.c_fused < 1 || model.c_aux < 2 ||
        model.c_ctr < 1)
        throw std::invalid_argument("config: model channel widths must be positive");
    if (model.c_aux % 2 != 0)
        throw std::invalid_argument("config: model.c_aux must be even");
    if (model.depth_bins < 1 || model.depth_min <= 0 || model.depth_max <= model.depth_min)
        throw std::invalid_argument("config: depth bin range invalid");
    if (model.image_width % 16 != 0 || model.image_height % 16 != 0)
        throw std::invalid_argument("config: image size must be divisible by 16");
    if (model.max_pillar_points < 1 || model.sca_rho < 1 || model.mona_ratio < 1)
        throw std::invalid_argument("config: model capacity fields must be positive");
    if (optim.lr <= 0 || optim.steps < 0 || optim.batch_size < 1)
        throw std::invalid_argument("config: optimizer fields invalid");
    if (loss.lambda_align < 0 || loss.lambda_aux < 0)
        throw std::invalid_argument("config: loss weights must be non-negative");
    if (align_tau <= 0) throw std::invalid_argument("config: align_tau must be positive");
    if (score_thresh < 0 || score_thresh > 1 || nms_radius <= 0)
        throw std::invalid_argument("config: head decode fields invalid");
    if (gen.num_samples < 1 || gen.train_fraction <= 0 || gen.train_fraction > 1)
        throw std::invalid_argument("config: gen fields invalid");
    if (grid.height() % 4 != 0 || grid.width() % 4 != 0)
        throw std::invalid_argument("config: BEV grid extent must be divisible by 4 cells");
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    json j = json::parse(f, nullptr, true);
    reject_unknown(j,
                   {"dataset_root", "grid", "model", "toggles", "optim", "loss", "heads",
                    "eval_split", "gen"},
                   "");
    RunConfig cfg;
    opt(j, "dataset_root", cfg.dataset_root);
    if (j.contains("grid")) load_grid(j.at("grid"), cfg.grid);
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m,
                       {"c_ce", "c_lidar", "c_fused", "c_aux", "c_ctr", "depth_bins",
                        "depth_min", "depth_max", "image_width", "image_height",
                        "max_pillar_points", "sca_rho", "mona_ratio"},
                       "model.");
        opt(m, "c_ce", cfg.model.c_ce);
        opt(m, "c_lidar", cfg.model.c_lidar);
        opt(m, "c_fused", cfg.model.c_fused);
        opt(m, "c_aux", cfg.model.c_aux);
        opt(m, "c_ctr", cfg.model.c_ctr);
        opt(m, "depth_bins", cfg.model.depth_bins);
        opt(m, "depth_min", cfg.model.depth_min);
        opt(m, "depth_max", cfg.model.depth_max);
        opt(m, "image_width", cfg.model.image_width);
        opt(m, "image_height", cfg.model.image_height);
        opt(m, "max_pillar_points", cfg.model.max_pillar_points);
        opt(m, "sca_rho", cfg.model.sca_rho);
        opt(m, "mona_ratio", cfg.model.mona_ratio);
    }
    if (j.contains("toggles")) {
        const json& t = j.at("toggles");
        reject_unknown(t, {"camera_branch", "cam_align", "aux_branch", "sca", "saem", "mona"},
                       "toggles.");
        opt(t, "camera_branch", cfg.toggles.camera_branch);
        opt(t, "cam_align", cfg.toggles.cam_align);
        opt(t, "aux_branch", cfg.toggles.aux_branch);
        opt(t, "sca", cfg.toggles.sca);
        opt(t, "saem", cfg.toggles.saem);
        opt(t, "mona", cfg.toggles.mona);
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        reject_unknown(o, {"lr", "steps", "batch_size", "seed"}, "optim.");
        opt(o, "lr", cfg.optim.lr);
        opt(o, "steps", cfg.optim.steps);
        opt(o, "batch_size", cfg.optim.batch_size);
        opt(o, "seed", cfg.optim.seed);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown(l, {"lambda_align", "lambda_aux", "tau"}, "loss.");
        opt(l, "lambda_align", cfg.loss.lambda_align);
        opt(l, "lambda_aux", cfg.loss.lambda_aux);
        opt(l, "tau", cfg.align_tau);
    }
    if (j.contains("heads")) {
        const json& h = j.at("heads");
        reject_unknown(h, {"score_thresh", "nms_radius"}, "heads.");
        opt(h, "score_thresh", cfg.score_thresh);
        opt(h, "nms_radius", cfg.nms_radius);
    }
    opt(j, "eval_split", cfg.eval_split);
    if (j.contains("gen")) {
        const json& g = j.at("gen");
        reject_unknown(g, {"num_samples", "train_fraction", "scene"}, "gen.");
        opt(g, "num_samples", cfg.gen.num_samples);
        opt(g, "train_fraction", cfg.gen.train_fraction);
        if (g.contains("scene")) load_scene(g.at("scene"), cfg.gen.scene);
    }
    cfg.loss.c_aux = cfg.model.c_aux;
    cfg.loss.c_ctr = cfg.model.c_ctr;
    cfg.gen.scene.camera = default_camera(cfg.model.image_width, cfg.model.image_height);
    cfg.validate();
    return cfg;
}

void save_config(const std::string& path, const RunConfig& cfg) {
    json j;
    j["dataset_root"] = cfg.dataset_root;
    j["grid"] = {{"x_min", cfg.grid.x_min}, {"x_max", cfg.grid.x_max},
                 {"y_min", cfg.grid.y_min}, {"y_max", cfg.grid.y_max},
                 {"cell", cfg.grid.cell},   {"z_min", cfg.grid.z_min},
                 {"z_max", cfg.grid.z_max}};
    j["model"] = {{"c_ce", cfg.model.c_ce},
                  {"c_lidar", cfg.model.c_lidar},
                  {"c_fused", cfg.model.c_fused},
                  {"c_aux", cfg.model.c_aux},
                  {"c_ctr", cfg.model.c_ctr},
                  {"depth_bins", cfg.model.depth_bins},
                  {"depth_min", cfg.model.depth_min},
                  {"depth_max", cfg.model.depth_max},
                  {"image_width", cfg.model.image_width},
                  {"image_height", cfg.model.image_height},
                  {"max_pillar_points", cfg.model.max_pillar_points},
                  {"sca_rho", cfg.model.sca_rho},
                  {"mona_ratio", cfg.model.mona_ratio}};
    j["toggles"] = {{"camera_branch", cfg.toggles.camera_branch},
                    {"cam_align", cfg.toggles.cam_align},
                    {"aux_branch", cfg.toggles.aux_branch},
                    {"sca", cfg.toggles.sca},
                    {"saem", cfg.toggles.saem},
                    {"mona", cfg.toggles.mona}};
    j["optim"] = {{"lr", cfg.optim.lr},
                  {"steps", cfg.optim.steps},
                  {"batch_size", cfg.optim.batch_size},
                  {"seed", cfg.optim.seed}};
    j["loss"] = {{"lambda_align", cfg.loss.lambda_align},
                 {"lambda_aux", cfg.loss.lambda_aux},
                 {"tau", cfg.align_tau}};
    j["heads"] = {{"score_thresh", cfg.score_thresh}, {"nms_radius", cfg.nms_radius}};
    j["eval_split"] = cfg.eval_split;
    j["gen"] = {{"num_samples", cfg.gen.num_samples},
                {"train_fraction", cfg.gen.train_fraction},
                {"scene",
                 {{"seed", cfg.gen.scene.seed},
                  {"extent", cfg.gen.scene.extent},
                  {"crater_count", cfg.gen.scene.crater_count},
                  {"crater_radius_min", cfg.gen.scene.crater_radius_min},
                  {"crater_radius_max", cfg.gen.scene.crater_radius_max},
                  {"crater_depth_max", cfg.gen.scene.crater_depth_max},
                  {"meteor_count", cfg.gen.scene.meteor_count},
                  {"meteor_size_min", cfg.gen.scene.meteor_size_min},
                  {"meteor_size_max", cfg.gen.scene.meteor_size_max},
                  {"platform_count", cfg.gen.scene.platform_count},
                  {"platform_size_min", cfg.gen.scene.platform_size_min},
                  {"platform_size_max", cfg.gen.scene.platform_size_max},
                  {"light_elevation", cfg.gen.scene.light_elevation},
                  {"lidar_rings", cfg.gen.scene.lidar.rings},
                  {"lidar_azimuth_steps", cfg.gen.scene.lidar.azimuth_steps},
                  {"lidar_max_range", cfg.gen.scene.lidar.max_range}}}};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot write " + path);
    f << j.dump(2) << "\n";
}

}  // namespace scafusion
