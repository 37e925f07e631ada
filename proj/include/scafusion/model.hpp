#pragma once

// Full detection pipeline assembled from the module library: camera
// backbone + LSS lift into BEV, pillar LiDAR branch, conv fusion with the
// SCA gate, detection heads, plus the train-only alignment loss and camera
// auxiliary branch. Toggles select any subset of the optional modules.

#include <optional>
#include <vector>

#include "scafusion/backbone.hpp"
#include "scafusion/config.hpp"
#include "scafusion/dataset.hpp"
#include "scafusion/fusion.hpp"
#include "scafusion/heads.hpp"
#include "scafusion/lidar.hpp"
#include "scafusion/optimizer.hpp"
#include "scafusion/view_transform.hpp"

namespace scafusion {

struct RunCounters {
    int64_t align_evals = 0;  // contrastive alignment loss computations
    int64_t aux_evals = 0;    // auxiliary branch forwards
    int64_t cam_evals = 0;    // camera backbone forwards
};

template <class T>
struct Model {
    RunConfig cfg;
    BackboneConfig backbone;
    ParamStore<T> store;
    std::vector<double> depth_bins;
    Tensor<T> frustum;  // (D, H', W', 3), constant
    FreezeReport freeze;
    RunCounters counters;
};

template <class T>
Model<T> build_model(const RunConfig& cfg) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    Rng rng = Rng(cfg.optim.seed).fork(0x90de1);
    const int K = kNumClasses;
    const auto& dims = cfg.model;

    if (cfg.toggles.camera_branch) {
        m.backbone.adapter_enabled = cfg.toggles.mona;
        m.backbone.mona_ratio = dims.mona_ratio;
        register_backbone_params(m.store, m.backbone, rng);

        // stride-8 stage feeds the view transform
        const int c_feat = m.backbone.widths[1];
        m.store.add_normal("dc.w", {dims.depth_bins + dims.c_ce, c_feat, 1, 1}, rng,
                           std::sqrt(2.0 / c_feat));
        m.store.add_zeros("dc.b", {dims.depth_bins + dims.c_ce});

        for (int d = 0; d < dims.depth_bins; ++d)
            m.depth_bins.push_back(dims.depth_min + (d + 0.5) *
                                                        (dims.depth_max - dims.depth_min) /
                                                        dims.depth_bins);
        const CameraCalib calib = default_camera(dims.image_width, dims.image_height);
        m.frustum = build_frustum<T>(calib, m.depth_bins, dims.image_height / 8,
                                     dims.image_width / 8);

        if (cfg.toggles.cam_align) {
            // depth-map encoder: three stride-2 convs down to the feature grid
            int prev = 1;
            for (int i = 0; i < 3; ++i) {
                const int next = 8 << i;
                const std::string p = "denc.c" + std::to_string(i) + ".";
                m.store.add_normal(p + "w", {next, prev, 3, 3}, rng,
                                   std::sqrt(2.0 / (9.0 * prev)));
                m.store.add_zeros(p + "b", {next});
                prev = next;
            }
            register_align_params(m.store, "align.", 32, dims.c_ce, rng);
        }
        if (cfg.toggles.aux_branch) {
            register_aux_params(m.store, "aux.", dims.c_ce, dims.c_aux, rng);
            register_head_params(m.store, "aux_head.", dims.c_aux, dims.c_ctr, K, rng);
        }
    }

    register_pillar_params(m.store, "lidar.", dims.c_lidar, rng);
    const int c_cam = cfg.toggles.camera_branch ? dims.c_ce : 0;
    register_fusion_params(m.store, "fuse.", c_cam, dims.c_lidar, dims.c_fused, rng);
    if (cfg.toggles.sca)
        register_sca_params(m.store, "sca.", dims.c_fused, dims.sca_rho, rng);
    register_head_params(m.store, "head.", dims.c_fused, dims.c_ctr, K, rng);

    if (cfg.toggles.camera_branch && cfg.toggles.mona)
        m.freeze = freeze_partition(m.store, FreezeMode::AdapterOnly, "backbone.");
    return m;
}

// Static per-sample inputs, computed once and reused across steps.
template <class T>
struct PreparedSample {
    std::string token;
    Tensor<T> image;  // 1 x 3 x H x W, [0,1]
    Tensor<T> depth;  // 1 x 1 x H x W, meters (0 = sky)
    PillarSet pillars;
    RenderedTargets targets;
    std::vector<Box3D> gts;
};

template <class T>
PreparedSample<T> prepare_sample(const SceneSample& s, const RunConfig& cfg) {
    PreparedSample<T> out;
    out.token = s.token;
    const int H = s.frame.height, W = s.frame.width;
    if (W != cfg.model.image_width || H != cfg.model.image_height)
        throw std::invalid_argument("prepare_sample: image " + std::to_string(W) + "x" +
                                    std::to_string(H) + " does not match the configured " +
                                    std::to_string(cfg.model.image_width) + "x" +
                                    std::to_string(cfg.model.image_height));
    std::vector<T> img(static_cast<size_t>(3 * H * W));
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < H * W; ++i)
            img[static_cast<size_t>(c * H * W + i)] =
                static_cast<T>(s.frame.rgb[static_cast<size_t>(i * 3 + c)] / 255.0);
    out.image = Tensor<T>::from({1, 3, H, W}, std::move(img));
    std::vector<T> dep(s.frame.depth.begin(), s.frame.depth.end());
    out.depth = Tensor<T>::from({1, 1, H, W}, std::move(dep));
    out.pillars = voxelize(s.cloud, cfg.grid, cfg.model.max_pillar_points);
    out.targets = render_targets(s.boxes, cfg.grid, kNumClasses);
    out.gts = s.boxes;
    return out;
}

template <class T>
struct ForwardResult {
    HeadOutput<T> main;
    std::optional<HeadOutput<T>> aux;
    std::optional<Tensor<T>> align_loss;
};

template <class T>
ForwardResult<T> forward_model(Model<T>& m, const std::vector<const PreparedSample<T>*>& batch,
                               bool training) {
    if (batch.empty()) throw std::invalid_argument("forward_model: empty batch");
    const auto& cfg = m.cfg;
    const int64_t N = static_cast<int64_t>(batch.size());
    ForwardResult<T> out;

    // LiDAR stream
    std::vector<Tensor<T>> lidar_maps;
    for (const auto* s : batch) {
        Tensor<T> map = pillar_encode_scatter(s->pillars, cfg.grid, m.store, "lidar.");
        lidar_maps.push_back(reshape(map, {1, map.dim(0), map.dim(1), map.dim(2)}));
    }
    Tensor<T> lidar_bev = lidar_maps.size() == 1 ? lidar_maps[0] : concat(lidar_maps, 0);

    Tensor<T> fused;
    if (cfg.toggles.camera_branch) {
        std::vector<Tensor<T>> images;
        for (const auto* s : batch) images.push_back(s->image);
        Tensor<T> image = images.size() == 1 ? images[0] : concat(images, 0);
        auto feats = backbone_forward(m.store, m.backbone, image);
        ++m.counters.cam_evals;
        Tensor<T> dc = conv2d(feats[1], m.store.at("dc.w").tensor, m.store.at("dc.b").tensor);
        auto split = depth_context_split(dc, cfg.model.depth_bins);
        Tensor<T> cam_bev =
            lift_splat(split.context, split.depth_probs, m.frustum, cfg.grid);

        if (training && cfg.toggles.cam_align && cfg.loss.lambda_align > 0) {
            std::vector<Tensor<T>> depths;
            for (const auto* s : batch) depths.push_back(s->depth);
            Tensor<T> dmap = depths.size() == 1 ? depths[0] : concat(depths, 0);
            for (int i = 0; i < 3; ++i) {
                const std::string p = "denc.c" + std::to_string(i) + ".";
                dmap = relu(conv2d(dmap, m.store.at(p + "w").tensor,
                                   m.store.at(p + "b").tensor, 2, 1, 1));
            }
            auto ab = cam_align_preprocess(split.context, dmap, m.store, "align.",
                                           cfg.align_tau);
            out.align_loss = nt_xent_align_loss(ab);
            ++m.counters.align_evals;
        }
        fused = fuse_convcat(cam_bev, lidar_bev, m.store, "fuse.");

        if (training && cfg.toggles.aux_branch) {
            Tensor<T> x_aux = aux_branch_forward(cam_bev, m.store, "aux.");
            out.aux = ffn_heads(x_aux, m.store, "aux_head.");
            ++m.counters.aux_evals;
        }
    } else {
        // LiDAR-only: the fusion conv consumes the LiDAR map directly
        Tensor<T> x = conv2d(lidar_bev, m.store.at("fuse.conv.w").tensor,
                             m.store.at("fuse.conv.b").tensor, 1, 1, 1);
        x = channel_norm(x, m.store.at("fuse.norm.gamma").tensor,
                         m.store.at("fuse.norm.beta").tensor);
        fused = relu(x);
    }

    if (cfg.toggles.sca) fused = sca_apply(fused, m.store, "sca.", cfg.toggles.saem);
    out.main = ffn_heads(fused, m.store, "head.");
    (void)N;
    return out;
}

// Decode one sample's detections with inference-time NMS.
template <class T>
std::vector<Box3D> infer_sample(Model<T>& m, const PreparedSample<T>& s) {
    std::vector<const PreparedSample<T>*> batch = {&s};
    auto fw = forward_model(m, batch, /*training=*/false);
    return decode_boxes(fw.main, m.cfg.grid, m.cfg.score_thresh, m.cfg.nms_radius,
                        /*apply_nms=*/true);
}

}  // namespace scafusion
