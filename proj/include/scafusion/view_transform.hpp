#pragma once

// Camera -> BEV lift-splat projection and the contrastive alignment loss
// that supervises the camera stream during training.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "scafusion/param.hpp"
#include "scafusion/tensor.hpp"

namespace scafusion {

struct CameraCalib {
    double fx = 100, fy = 100, cx = 32, cy = 32;
    int width = 64, height = 64;
    std::array<std::array<double, 3>, 3> rot = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};  // camera->ego
    std::array<double, 3> trans = {0, 0, 0};

    void validate() const {
        if (fx <= 0 || fy <= 0)
            throw std::invalid_argument("CameraCalib: focal lengths must be positive");
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double dot = 0;
                for (int k = 0; k < 3; ++k)
                    dot += rot[static_cast<size_t>(k)][static_cast<size_t>(i)] *
                           rot[static_cast<size_t>(k)][static_cast<size_t>(j)];
                double expect = (i == j) ? 1.0 : 0.0;
                if (std::abs(dot - expect) > 1e-6)
                    throw std::invalid_argument("CameraCalib: rotation is not orthonormal");
            }
    }
};

struct BEVGridSpec {
    double x_min = -12, x_max = 12;
    double y_min = -12, y_max = 12;
    double cell = 0.5;
    double z_min = -3, z_max = 5;

    int64_t width() const { return static_cast<int64_t>(std::llround((x_max - x_min) / cell)); }
    int64_t height() const { return static_cast<int64_t>(std::llround((y_max - y_min) / cell)); }

    void validate() const {
        if (cell <= 0) throw std::invalid_argument("BEVGridSpec: cell size must be positive");
        for (double range : {x_max - x_min, y_max - y_min}) {
            double cells = range / cell;
            if (cells < 1 || std::abs(cells - std::llround(cells)) > 1e-9)
                throw std::invalid_argument("BEVGridSpec: range must be a positive multiple of cell size");
        }
        if (z_max <= z_min) throw std::invalid_argument("BEVGridSpec: empty z range");
    }

    // Flat cell index for an ego-frame point, or kScatterDrop when outside.
    int64_t cell_of(double x, double y, double z) const {
        if (z < z_min || z > z_max) return kScatterDrop;
        if (x < x_min || x >= x_max || y < y_min || y >= y_max) return kScatterDrop;
        int64_t col = static_cast<int64_t>(std::floor((x - x_min) / cell));
        int64_t row = static_cast<int64_t>(std::floor((y - y_min) / cell));
        col = std::min(col, width() - 1);
        row = std::min(row, height() - 1);
        return row * width() + col;
    }
};

// ---------------------------------------------------------------------------
// frustum
// ---------------------------------------------------------------------------

// Ego-frame 3D point for every (depth bin, feature pixel): D x H' x W' x 3.
// Feature pixels map to image pixels through the ratio of image to feature
// size, sampling at pixel centers.
template <class T>
Tensor<T> build_frustum(const CameraCalib& calib, const std::vector<double>& depth_bins,
                        int64_t feat_h, int64_t feat_w) {
    calib.validate();
    if (depth_bins.empty()) throw std::invalid_argument("build_frustum: need at least one depth bin");
    for (size_t i = 1; i < depth_bins.size(); ++i)
        if (depth_bins[i] <= depth_bins[i - 1])
            throw std::invalid_argument("build_frustum: depth bins must be strictly increasing");
    const int64_t D = static_cast<int64_t>(depth_bins.size());
    const double sx = static_cast<double>(calib.width) / static_cast<double>(feat_w);
    const double sy = static_cast<double>(calib.height) / static_cast<double>(feat_h);
    std::vector<T> out(static_cast<size_t>(D * feat_h * feat_w * 3));
    size_t k = 0;
    for (int64_t d = 0; d < D; ++d) {
        const double depth = depth_bins[static_cast<size_t>(d)];
        for (int64_t v = 0; v < feat_h; ++v) {
            const double v_img = sy == 1.0 ? static_cast<double>(v)
                                           : (static_cast<double>(v) + 0.5) * sy - 0.5;
            for (int64_t u = 0; u < feat_w; ++u) {
                const double u_img = sx == 1.0 ? static_cast<double>(u)
                                               : (static_cast<double>(u) + 0.5) * sx - 0.5;
                // camera frame: x right, y down, z forward
                const double pc[3] = {(u_img - calib.cx) * depth / calib.fx,
                                      (v_img - calib.cy) * depth / calib.fy, depth};
                for (int i = 0; i < 3; ++i) {
                    double e = calib.trans[static_cast<size_t>(i)];
                    for (int j = 0; j < 3; ++j)
                        e += calib.rot[static_cast<size_t>(i)][static_cast<size_t>(j)] * pc[j];
                    out[k++] = static_cast<T>(e);
                }
            }
        }
    }
    return Tensor<T>::from({D, feat_h, feat_w, 3}, std::move(out));
}

// ---------------------------------------------------------------------------
// depth/context split
// ---------------------------------------------------------------------------

template <class T>
struct DepthContext {
    Tensor<T> depth_probs;  // N x D x H' x W', softmax over D
    Tensor<T> context;      // N x C_CE x H' x W'
};

template <class T>
DepthContext<T> depth_context_split(const Tensor<T>& feat, int64_t depth_bins) {
    if (feat.rank() != 4)
        throw std::invalid_argument("depth_context_split: expected NCHW input");
    const int64_t C = feat.dim(1);
    if (C <= depth_bins)
        throw std::invalid_argument("depth_context_split: channel extent " + std::to_string(C) +
                                    " must exceed depth bin count " + std::to_string(depth_bins));
    DepthContext<T> out;
    out.depth_probs = softmax(slice(feat, 1, 0, depth_bins), 1);
    out.context = slice(feat, 1, depth_bins, C - depth_bins);
    return out;
}

// ---------------------------------------------------------------------------
// lift-splat
// ---------------------------------------------------------------------------

struct SplatDiagnostics {
    int64_t total_points = 0;
    int64_t dropped_points = 0;
};

// Each frustum point carries context * depth_prob and is scatter-added into
// its BEV cell; points outside the grid or z range are dropped.
template <class T>
Tensor<T> lift_splat(const Tensor<T>& context, const Tensor<T>& depth_probs,
                     const Tensor<T>& frustum, const BEVGridSpec& grid,
                     SplatDiagnostics* diag = nullptr) {
    grid.validate();
    const int64_t N = context.dim(0), C = context.dim(1);
    const int64_t Hf = context.dim(2), Wf = context.dim(3);
    const int64_t D = depth_probs.dim(1);
    if (depth_probs.dim(0) != N || depth_probs.dim(2) != Hf || depth_probs.dim(3) != Wf)
        throw std::invalid_argument("lift_splat: depth_probs shape " +
                                    shape_str(depth_probs.shape()) +
                                    " inconsistent with context " + shape_str(context.shape()));
    if (frustum.shape() != Shape{D, Hf, Wf, 3})
        throw std::invalid_argument("lift_splat: frustum shape " + shape_str(frustum.shape()) +
                                    " inconsistent with features");

    // cell index per frustum point, shared across the batch
    const int64_t P = D * Hf * Wf;
    std::vector<int64_t> cell(static_cast<size_t>(P));
    int64_t dropped = 0;
    const auto& F = frustum.data();
    for (int64_t p = 0; p < P; ++p) {
        const double x = static_cast<double>(F[static_cast<size_t>(3 * p)]);
        const double y = static_cast<double>(F[static_cast<size_t>(3 * p + 1)]);
        const double z = static_cast<double>(F[static_cast<size_t>(3 * p + 2)]);
        cell[static_cast<size_t>(p)] = grid.cell_of(x, y, z);
        if (cell[static_cast<size_t>(p)] == kScatterDrop) ++dropped;
    }
    if (diag) {
        diag->total_points += N * P;
        diag->dropped_points += N * dropped;
    }

    // outer product context x depth prob -> rows (D*H'*W', C) per sample
    Tensor<T> ctx = reshape(context, {N, 1, C, Hf * Wf});
    Tensor<T> dpr = reshape(depth_probs, {N, D, 1, Hf * Wf});
    Tensor<T> prod = mul(dpr, ctx);  // N x D x C x H'W'
    std::vector<Tensor<T>> maps;
    const int64_t Hb = grid.height(), Wb = grid.width();
    for (int64_t n = 0; n < N; ++n) {
        Tensor<T> rows = reshape(permute(reshape(slice(prod, 0, n, 1), {D, C, Hf * Wf}),
                                         {0, 2, 1}),
                                 {P, C});
        maps.push_back(reshape(scatter_add(rows, cell, Hb, Wb), {1, C, Hb, Wb}));
    }
    return maps.size() == 1 ? maps[0] : concat(maps, 0);
}

// ---------------------------------------------------------------------------
// contrastive alignment
// ---------------------------------------------------------------------------

enum class AlignInstanceMode { PerSampleChannel, PerSample };

template <class T>
struct AlignBatch {
    Tensor<T> rgb;    // N_inst x L
    Tensor<T> depth;  // N_inst x L
    double tau = 0.1;
};

// Register the three channel-adjustment conv blocks that bring the depth
// stack to C_CE channels (widths step geometrically).
template <class T>
void register_align_params(ParamStore<T>& store, const std::string& prefix, int c_in,
                           int c_ce, Rng& rng) {
    double ratio = std::pow(static_cast<double>(c_ce) / c_in, 1.0 / 3.0);
    int prev = c_in;
    for (int b = 0; b < 3; ++b) {
        int next = (b == 2) ? c_ce
                            : std::max(1, static_cast<int>(std::lround(c_in * std::pow(ratio, b + 1))));
        std::string bp = prefix + "block" + std::to_string(b) + ".";
        store.add_normal(bp + "w", {next, prev, 1, 1}, rng, std::sqrt(2.0 / prev));
        store.add_zeros(bp + "b", {next});
        store.add_full(bp + "gamma", {next}, T(1));
        store.add_zeros(bp + "beta", {next});
        prev = next;
    }
}

// Channel-wise norm on an NCHW map (normalizes over C per spatial position).
template <class T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    Tensor<T> tokens = reshape(permute(x, {0, 2, 3, 1}), {N * H * W, x.dim(1)});
    Tensor<T> ln = layer_norm(tokens, gamma, beta);
    return permute(reshape(ln, {N, H, W, x.dim(1)}), {0, 3, 1, 2});
}

template <class T>
AlignBatch<T> cam_align_preprocess(const Tensor<T>& rgb_feat, const Tensor<T>& depth_feat,
                                   ParamStore<T>& store, const std::string& prefix, double tau,
                                   AlignInstanceMode mode = AlignInstanceMode::PerSampleChannel) {
    if (rgb_feat.dim(0) != depth_feat.dim(0))
        throw std::invalid_argument("cam_align_preprocess: instance count mismatch: " +
                                    std::to_string(rgb_feat.dim(0)) + " vs " +
                                    std::to_string(depth_feat.dim(0)));
    Tensor<T> d = depth_feat;
    for (int b = 0; b < 3; ++b) {
        std::string bp = prefix + "block" + std::to_string(b) + ".";
        d = conv2d(d, store.at(bp + "w").tensor, store.at(bp + "b").tensor);
        d = channel_norm(d, store.at(bp + "gamma").tensor, store.at(bp + "beta").tensor);
        // last block stays linear: a trailing relu can clip a whole channel
        // row to zero, which the contrastive loss rejects
        if (b < 2) d = relu(d);
    }
    if (d.dim(1) != rgb_feat.dim(1))
        throw std::invalid_argument("cam_align_preprocess: adjusted depth channels " +
                                    std::to_string(d.dim(1)) + " != C_CE " +
                                    std::to_string(rgb_feat.dim(1)));
    const int64_t N = rgb_feat.dim(0), C = rgb_feat.dim(1);
    const int64_t L = rgb_feat.dim(2) * rgb_feat.dim(3);
    AlignBatch<T> batch;
    batch.tau = tau;
    if (mode == AlignInstanceMode::PerSampleChannel) {
        batch.rgb = reshape(rgb_feat, {N * C, L});
        batch.depth = reshape(d, {N * C, L});
    } else {
        batch.rgb = reshape(rgb_feat, {N, C * L});
        batch.depth = reshape(d, {N, C * L});
    }
    return batch;
}

// NT-Xent anchored on the RGB stack:
//   L = -(1/N) sum_i log( exp(sim(r_i,d_i)/tau) / sum_j exp(sim(r_i,d_j)/tau) )
template <class T>
Tensor<T> nt_xent_align_loss(const AlignBatch<T>& batch) {
    const int64_t N = batch.rgb.dim(0), L = batch.rgb.dim(1);
    if (N < 2) throw std::invalid_argument("nt_xent_align_loss: need at least 2 instances");
    if (batch.depth.shape() != batch.rgb.shape())
        throw std::invalid_argument("nt_xent_align_loss: stack shapes differ");
    if (batch.tau <= 0) throw std::invalid_argument("nt_xent_align_loss: tau must be positive");

    auto norm_of = [&](const Tensor<T>& x) {
        Tensor<T> n = sqrt(reduce_pool(square(x), {1}, PoolMode::Avg));
        return scale(n, static_cast<T>(std::sqrt(static_cast<double>(L))));
    };
    Tensor<T> rn = norm_of(batch.rgb);
    Tensor<T> dn = norm_of(batch.depth);
    for (const auto& n : {rn, dn})
        for (T v : n.data())
            if (static_cast<double>(v) < 1e-12)
                throw std::invalid_argument("nt_xent_align_loss: zero-norm feature vector");
    Tensor<T> r = div(batch.rgb, rn);
    Tensor<T> d = div(batch.depth, dn);
    Tensor<T> sim = matmul(r, permute(d, {1, 0}));  // N x N cosine similarities
    Tensor<T> logits = scale(sim, static_cast<T>(1.0 / batch.tau));
    Tensor<T> probs = softmax(logits, 1);
    // diagonal extraction via a constant identity mask
    std::vector<T> eye(static_cast<size_t>(N * N), T(0));
    for (int64_t i = 0; i < N; ++i) eye[static_cast<size_t>(i * N + i)] = T(1);
    Tensor<T> mask = Tensor<T>::from({N, N}, std::move(eye));
    Tensor<T> diag = scale(reduce_pool(mul(probs, mask), {1}, PoolMode::Avg),
                           static_cast<T>(N));
    return neg(mean(log(diag)));
}

}  // namespace scafusion
