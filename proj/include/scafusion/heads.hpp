#pragma once

// Detection heads and training losses: the train-only camera auxiliary
// branch (ResBlocks + FPN fusion), the shared FFN head family, CenterPoint
// style target rendering, box decoding, and the composite loss.

#include <algorithm>
#include <cmath>
#include <string>

#include "scafusion/box.hpp"
#include "scafusion/param.hpp"
#include "scafusion/view_transform.hpp"

namespace scafusion {

struct AuxConfig {
    int c_aux = 64;
    int c_ctr = 64;
    double lambda_align = 0.1;
    double lambda_aux = 0.5;
};

// ---------------------------------------------------------------------------
// residual stages + FPN fusion (camera auxiliary branch)
// ---------------------------------------------------------------------------

template <class T>
void register_res_block(ParamStore<T>& store, const std::string& prefix, int c_in, int c_out,
                        bool strided, Rng& rng) {
    store.add_normal(prefix + "conv1.w", {c_out, c_in, 3, 3}, rng, std::sqrt(2.0 / (9.0 * c_in)));
    store.add_zeros(prefix + "conv1.b", {c_out});
    store.add_full(prefix + "n1.gamma", {c_out}, T(1));
    store.add_zeros(prefix + "n1.beta", {c_out});
    store.add_normal(prefix + "conv2.w", {c_out, c_out, 3, 3}, rng, std::sqrt(2.0 / (9.0 * c_out)));
    store.add_zeros(prefix + "conv2.b", {c_out});
    store.add_full(prefix + "n2.gamma", {c_out}, T(1));
    store.add_zeros(prefix + "n2.beta", {c_out});
    if (strided || c_in != c_out) {
        store.add_normal(prefix + "proj.w", {c_out, c_in, 1, 1}, rng, std::sqrt(2.0 / c_in));
        store.add_zeros(prefix + "proj.b", {c_out});
    }
}

template <class T>
Tensor<T> res_block(const Tensor<T>& x, ParamStore<T>& store, const std::string& prefix,
                    int stride) {
    Tensor<T> y = conv2d(x, store.at(prefix + "conv1.w").tensor,
                         store.at(prefix + "conv1.b").tensor, stride, 1, 1);
    y = relu(channel_norm(y, store.at(prefix + "n1.gamma").tensor,
                          store.at(prefix + "n1.beta").tensor));
    y = conv2d(y, store.at(prefix + "conv2.w").tensor, store.at(prefix + "conv2.b").tensor, 1, 1, 1);
    y = channel_norm(y, store.at(prefix + "n2.gamma").tensor, store.at(prefix + "n2.beta").tensor);
    Tensor<T> skip = x;
    if (store.has(prefix + "proj.w"))
        skip = conv2d(x, store.at(prefix + "proj.w").tensor, store.at(prefix + "proj.b").tensor,
                      stride, 0, 1);
    return relu(add(y, skip));
}

template <class T>
void register_aux_params(ParamStore<T>& store, const std::string& prefix, int c_in, int c_aux,
                         Rng& rng) {
    const int half = c_aux / 2;
    // stage 1: downsample, c_in -> c_aux/2
    register_res_block(store, prefix + "stage1.res0.", c_in, half, true, rng);
    register_res_block(store, prefix + "stage1.res1.", half, half, false, rng);
    // stage 2: downsample, -> c_aux
    register_res_block(store, prefix + "stage2.res0.", half, c_aux, true, rng);
    register_res_block(store, prefix + "stage2.res1.", c_aux, c_aux, false, rng);
    // stage 3: channel-only change -> 2*c_aux
    register_res_block(store, prefix + "stage3.res0.", c_aux, 2 * c_aux, false, rng);
    register_res_block(store, prefix + "stage3.res1.", 2 * c_aux, 2 * c_aux, false, rng);
    // FPN fusion block: concat(2*c_aux, c_aux/2) -> c_aux
    const int c_cat = 2 * c_aux + half;
    store.add_normal(prefix + "fpn.conv.w", {c_aux, c_cat, 3, 3}, rng,
                     std::sqrt(2.0 / (9.0 * c_cat)));
    store.add_zeros(prefix + "fpn.conv.b", {c_aux});
    store.add_full(prefix + "fpn.norm.gamma", {c_aux}, T(1));
    store.add_zeros(prefix + "fpn.norm.beta", {c_aux});
}

// x_CE (N,C_CE,H,W) -> x_aux (N,C_aux,H,W); H,W must be divisible by 4.
template <class T>
Tensor<T> aux_branch_forward(const Tensor<T>& x, ParamStore<T>& store,
                             const std::string& prefix) {
    if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
        throw std::invalid_argument("aux_branch_forward: spatial size " +
                                    std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                                    " must be divisible by 4");
    Tensor<T> s1 = res_block(x, store, prefix + "stage1.res0.", 2);
    s1 = res_block(s1, store, prefix + "stage1.res1.", 1);
    Tensor<T> s2 = res_block(s1, store, prefix + "stage2.res0.", 2);
    s2 = res_block(s2, store, prefix + "stage2.res1.", 1);
    Tensor<T> s3 = res_block(s2, store, prefix + "stage3.res0.", 1);
    s3 = res_block(s3, store, prefix + "stage3.res1.", 1);
    Tensor<T> up3 = bilinear_upsample2x(s3);
    Tensor<T> cat = concat<T>({up3, s1}, 1);
    Tensor<T> f = conv2d(cat, store.at(prefix + "fpn.conv.w").tensor,
                         store.at(prefix + "fpn.conv.b").tensor, 1, 1, 1);
    f = relu(channel_norm(f, store.at(prefix + "fpn.norm.gamma").tensor,
                          store.at(prefix + "fpn.norm.beta").tensor));
    return bilinear_upsample2x(f);
}

// ---------------------------------------------------------------------------
// FFN heads
// ---------------------------------------------------------------------------

template <class T>
struct HeadOutput {
    Tensor<T> cls;     // N x K x H x W (logits)
    Tensor<T> offset;  // N x 2 x H x W (cell fractions from cell center)
    Tensor<T> height;  // N x 1 x H x W (meters)
    Tensor<T> dim;     // N x 3 x H x W (log-meters, l/w/h)
    Tensor<T> rot;     // N x 2 x H x W (sin, cos)
};

template <class T>
void register_head_params(ParamStore<T>& store, const std::string& prefix, int c_in, int c_ctr,
                          int num_classes, Rng& rng) {
    store.add_normal(prefix + "shared.w", {c_ctr, c_in, 1, 1}, rng, std::sqrt(2.0 / c_in));
    store.add_zeros(prefix + "shared.b", {c_ctr});
    auto head = [&](const std::string& name, int out_ch, T bias_init) {
        store.add_normal(prefix + name + ".fc1.w", {c_ctr, c_ctr, 1, 1}, rng,
                         std::sqrt(2.0 / c_ctr));
        store.add_zeros(prefix + name + ".fc1.b", {c_ctr});
        store.add_normal(prefix + name + ".fc2.w", {out_ch, c_ctr, 1, 1}, rng, 0.01);
        store.add_full(prefix + name + ".fc2.b", {out_ch}, bias_init);
    };
    head("cls", num_classes, T(-2.19));  // sigmoid ~= 0.1 at init
    head("c", 2, T(0));
    head("h", 1, T(0));
    head("dim", 3, T(0));
    head("rot", 2, T(0));
}

template <class T>
HeadOutput<T> ffn_heads(const Tensor<T>& x, ParamStore<T>& store, const std::string& prefix) {
    Tensor<T> shared = relu(conv2d(x, store.at(prefix + "shared.w").tensor,
                                   store.at(prefix + "shared.b").tensor));
    auto run = [&](const std::string& name) {
        Tensor<T> h = relu(conv2d(shared, store.at(prefix + name + ".fc1.w").tensor,
                                  store.at(prefix + name + ".fc1.b").tensor));
        return conv2d(h, store.at(prefix + name + ".fc2.w").tensor,
                      store.at(prefix + name + ".fc2.b").tensor);
    };
    HeadOutput<T> out;
    out.cls = run("cls");
    out.offset = run("c");
    out.height = run("h");
    out.dim = run("dim");
    out.rot = run("rot");
    return out;
}

// ---------------------------------------------------------------------------
// box decoding
// ---------------------------------------------------------------------------

template <class T>
std::vector<Box3D> decode_boxes(const HeadOutput<T>& out, const BEVGridSpec& grid,
                                double score_thresh, double nms_radius, bool apply_nms,
                                int64_t sample = 0) {
    const int64_t K = out.cls.dim(1), Hb = out.cls.dim(2), Wb = out.cls.dim(3);
    const int64_t HW = Hb * Wb;
    std::vector<Box3D> boxes;
    auto at = [&](const Tensor<T>& t, int64_t c, int64_t cell) {
        return static_cast<double>(
            t.data()[static_cast<size_t>((sample * t.dim(1) + c) * HW + cell)]);
    };
    for (int64_t cell = 0; cell < HW; ++cell) {
        int best = 0;
        double best_logit = at(out.cls, 0, cell);
        for (int64_t k = 1; k < K; ++k) {
            double v = at(out.cls, k, cell);
            if (v > best_logit) {
                best_logit = v;
                best = static_cast<int>(k);
            }
        }
        double score = 1.0 / (1.0 + std::exp(-best_logit));
        if (score < score_thresh) continue;
        Box3D b;
        const int64_t row = cell / Wb, col = cell % Wb;
        b.x = grid.x_min + (static_cast<double>(col) + 0.5 + at(out.offset, 0, cell)) * grid.cell;
        b.y = grid.y_min + (static_cast<double>(row) + 0.5 + at(out.offset, 1, cell)) * grid.cell;
        b.z = at(out.height, 0, cell);
        b.l = std::exp(at(out.dim, 0, cell));
        b.w = std::exp(at(out.dim, 1, cell));
        b.h = std::exp(at(out.dim, 2, cell));
        b.yaw = std::atan2(at(out.rot, 0, cell), at(out.rot, 1, cell));
        b.cls = best;
        b.score = score;
        boxes.push_back(b);
    }
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const Box3D& a, const Box3D& b) { return a.score > b.score; });
    if (!apply_nms) return boxes;
    std::vector<Box3D> kept;
    for (const auto& b : boxes) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.cls != b.cls) continue;
            double dx = k.x - b.x, dy = k.y - b.y;
            if (dx * dx + dy * dy <= nms_radius * nms_radius) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(b);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// target rendering (CenterPoint-style)
// ---------------------------------------------------------------------------

struct RenderedTargets {
    // all maps are per-sample, row-major over the BEV grid
    std::vector<float> heatmap;   // K x Hb x Wb, gaussian-smoothed
    std::vector<float> offset;    // 2 x Hb x Wb
    std::vector<float> height;    // 1 x Hb x Wb
    std::vector<float> dim;       // 3 x Hb x Wb (log-meters)
    std::vector<float> rot;       // 2 x Hb x Wb (sin, cos)
    std::vector<float> pos_mask;  // 1 x Hb x Wb, 1 at positive cells
    int64_t num_pos = 0;
};

inline double gaussian_radius(double h_cells, double w_cells, double min_overlap = 0.3) {
    const double a1 = 1, b1 = h_cells + w_cells, c1 = w_cells * h_cells * (1 - min_overlap) / (1 + min_overlap);
    const double r1 = (b1 - std::sqrt(std::max(0.0, b1 * b1 - 4 * a1 * c1))) / (2 * a1);
    const double a2 = 4, b2 = 2 * (h_cells + w_cells), c2 = (1 - min_overlap) * w_cells * h_cells;
    const double r2 = (b2 - std::sqrt(std::max(0.0, b2 * b2 - 4 * a2 * c2))) / (2 * a2);
    const double a3 = 4 * min_overlap, b3 = -2 * min_overlap * (h_cells + w_cells);
    const double c3 = (min_overlap - 1) * w_cells * h_cells;
    const double r3 = (-b3 + std::sqrt(std::max(0.0, b3 * b3 - 4 * a3 * c3))) / (2 * a3);
    return std::min({r1, r2, r3});
}

inline RenderedTargets render_targets(const std::vector<Box3D>& gts, const BEVGridSpec& grid,
                                      int num_classes) {
    const int64_t Hb = grid.height(), Wb = grid.width(), HW = Hb * Wb;
    RenderedTargets t;
    t.heatmap.assign(static_cast<size_t>(num_classes * HW), 0.f);
    t.offset.assign(static_cast<size_t>(2 * HW), 0.f);
    t.height.assign(static_cast<size_t>(HW), 0.f);
    t.dim.assign(static_cast<size_t>(3 * HW), 0.f);
    t.rot.assign(static_cast<size_t>(2 * HW), 0.f);
    t.pos_mask.assign(static_cast<size_t>(HW), 0.f);
    for (const auto& b : gts) {
        const double fx = (b.x - grid.x_min) / grid.cell;
        const double fy = (b.y - grid.y_min) / grid.cell;
        const int64_t col = static_cast<int64_t>(std::floor(fx));
        const int64_t row = static_cast<int64_t>(std::floor(fy));
        if (col < 0 || col >= Wb || row < 0 || row >= Hb) continue;
        const int64_t cell = row * Wb + col;
        // gaussian footprint radius from the box's BEV extent
        const double r = std::max(1.0, gaussian_radius(b.w / grid.cell, b.l / grid.cell));
        const double sigma = (2.0 * r + 1.0) / 6.0;
        const int64_t ri = static_cast<int64_t>(std::ceil(r));
        for (int64_t dy = -ri; dy <= ri; ++dy)
            for (int64_t dx = -ri; dx <= ri; ++dx) {
                const int64_t rr = row + dy, cc = col + dx;
                if (rr < 0 || rr >= Hb || cc < 0 || cc >= Wb) continue;
                const float g = static_cast<float>(
                    std::exp(-(static_cast<double>(dx * dx + dy * dy)) / (2.0 * sigma * sigma)));
                float& slot = t.heatmap[static_cast<size_t>(b.cls * HW + rr * Wb + cc)];
                slot = std::max(slot, g);
            }
        t.heatmap[static_cast<size_t>(b.cls * HW + cell)] = 1.f;
        if (t.pos_mask[static_cast<size_t>(cell)] == 0.f) ++t.num_pos;
        t.pos_mask[static_cast<size_t>(cell)] = 1.f;
        t.offset[static_cast<size_t>(cell)] = static_cast<float>(fx - col - 0.5);
        t.offset[static_cast<size_t>(HW + cell)] = static_cast<float>(fy - row - 0.5);
        t.height[static_cast<size_t>(cell)] = static_cast<float>(b.z);
        t.dim[static_cast<size_t>(cell)] = static_cast<float>(std::log(b.l));
        t.dim[static_cast<size_t>(HW + cell)] = static_cast<float>(std::log(b.w));
        t.dim[static_cast<size_t>(2 * HW + cell)] = static_cast<float>(std::log(b.h));
        t.rot[static_cast<size_t>(cell)] = static_cast<float>(std::sin(b.yaw));
        t.rot[static_cast<size_t>(HW + cell)] = static_cast<float>(std::cos(b.yaw));
    }
    return t;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <class T>
struct LossComponents {
    Tensor<T> total;
    double det_main = 0;
    double det_aux = 0;
    double align = 0;
};

namespace detail_loss {

template <class T>
Tensor<T> constant(const Shape& shape, const std::vector<float>& v) {
    std::vector<T> d(v.begin(), v.end());
    return Tensor<T>::from(shape, std::move(d));
}

}  // namespace detail_loss

// Penalty-reduced focal loss (alpha=2, beta=4) on the class heatmap plus L1
// regression at positive cells; normalized by the positive-cell count.
template <class T>
Tensor<T> detection_loss(const HeadOutput<T>& out,
                         const std::vector<RenderedTargets>& targets, const BEVGridSpec& grid) {
    const int64_t N = out.cls.dim(0), K = out.cls.dim(1);
    const int64_t Hb = grid.height(), Wb = grid.width(), HW = Hb * Wb;
    if (out.cls.dim(2) != Hb || out.cls.dim(3) != Wb)
        throw std::invalid_argument("detection_loss: head map size " +
                                    shape_str(out.cls.shape()) + " does not match the BEV grid");
    if (static_cast<int64_t>(targets.size()) != N)
        throw std::invalid_argument("detection_loss: target count mismatch");

    std::vector<float> hm, off, hei, dm, rt, mask;
    int64_t num_pos = 0;
    for (const auto& t : targets) {
        hm.insert(hm.end(), t.heatmap.begin(), t.heatmap.end());
        off.insert(off.end(), t.offset.begin(), t.offset.end());
        hei.insert(hei.end(), t.height.begin(), t.height.end());
        dm.insert(dm.end(), t.dim.begin(), t.dim.end());
        rt.insert(rt.end(), t.rot.begin(), t.rot.end());
        mask.insert(mask.end(), t.pos_mask.begin(), t.pos_mask.end());
        num_pos += t.num_pos;
    }
    Tensor<T> M = detail_loss::constant<T>({N, 1, Hb, Wb}, mask);

    const T epsc = static_cast<T>(1e-6);
    Tensor<T> p = sigmoid(out.cls);
    p = add_scalar(scale(p, static_cast<T>(1.0 - 2e-6)), epsc);  // clamp away from 0/1
    // positive mask: cells where Y == 1
    std::vector<T> posv(hm.size());
    for (size_t i = 0; i < hm.size(); ++i) posv[i] = hm[i] >= 1.f ? T(1) : T(0);
    Tensor<T> pos = Tensor<T>::from({N, K, Hb, Wb}, std::move(posv));
    // (1-Y)^4 penalty reduction for negatives
    std::vector<T> negv(hm.size());
    for (size_t i = 0; i < hm.size(); ++i) {
        double q = 1.0 - static_cast<double>(hm[i]);
        negv[i] = hm[i] >= 1.f ? T(0) : static_cast<T>(q * q * q * q);
    }
    Tensor<T> negw = Tensor<T>::from({N, K, Hb, Wb}, std::move(negv));

    Tensor<T> one_minus_p = add_scalar(neg(p), T(1));
    Tensor<T> pos_term = mul(pos, mul(square(one_minus_p), log(p)));
    Tensor<T> neg_term = mul(negw, mul(square(p), log(one_minus_p)));
    const T inv_pos = static_cast<T>(1.0 / std::max<int64_t>(1, num_pos));
    Tensor<T> focal = scale(add(sum(pos_term), sum(neg_term)), -inv_pos);

    auto l1 = [&](const Tensor<T>& pred, const std::vector<float>& tgt, int64_t ch) {
        Tensor<T> R = detail_loss::constant<T>({N, ch, Hb, Wb}, tgt);
        return scale(sum(mul(abs(sub(pred, R)), M)), inv_pos);
    };
    Tensor<T> reg = add(add(l1(out.offset, off, 2), l1(out.height, hei, 1)),
                        add(l1(out.dim, dm, 3), l1(out.rot, rt, 2)));
    return add(focal, reg);
}

template <class T>
LossComponents<T> compute_losses(const HeadOutput<T>& main, const HeadOutput<T>* aux,
                                 const Tensor<T>* align_loss,
                                 const std::vector<RenderedTargets>& targets,
                                 const BEVGridSpec& grid, const AuxConfig& cfg) {
    LossComponents<T> out;
    Tensor<T> det_main = detection_loss(main, targets, grid);
    out.det_main = static_cast<double>(det_main.item());
    Tensor<T> total = det_main;
    if (aux && cfg.lambda_aux > 0) {
        Tensor<T> det_aux = detection_loss(*aux, targets, grid);
        out.det_aux = static_cast<double>(det_aux.item());
        total = add(total, scale(det_aux, static_cast<T>(cfg.lambda_aux)));
    }
    if (align_loss && cfg.lambda_align > 0) {
        out.align = static_cast<double>(align_loss->item());
        total = add(total, scale(*align_loss, static_cast<T>(cfg.lambda_align)));
    }
    out.total = total;
    return out;
}

}  // namespace scafusion
