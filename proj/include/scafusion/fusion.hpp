#pragma once

// BEV-space fusion of the camera and LiDAR streams, followed by the
// section-aware coordinate attention gate: directional 1D-pooled channel
// weights (CPEM) times a channel-pooled spatial weight map (SAEM).

#include <string>

#include "scafusion/param.hpp"
#include "scafusion/tensor.hpp"
#include "scafusion/view_transform.hpp"

namespace scafusion {

template <class T>
void register_fusion_params(ParamStore<T>& store, const std::string& prefix, int c_cam,
                            int c_lidar, int c_fused, Rng& rng) {
    store.add_normal(prefix + "conv.w", {c_fused, c_cam + c_lidar, 3, 3}, rng,
                     std::sqrt(2.0 / (9.0 * (c_cam + c_lidar))));
    store.add_zeros(prefix + "conv.b", {c_fused});
    store.add_full(prefix + "norm.gamma", {c_fused}, T(1));
    store.add_zeros(prefix + "norm.beta", {c_fused});
}

// Channel concat then one 3x3 conv block to C_f.
template <class T>
Tensor<T> fuse_convcat(const Tensor<T>& cam_bev, const Tensor<T>& lidar_bev,
                       ParamStore<T>& store, const std::string& prefix) {
    if (cam_bev.dim(2) != lidar_bev.dim(2) || cam_bev.dim(3) != lidar_bev.dim(3))
        throw std::invalid_argument("fuse_convcat: spatial size mismatch " +
                                    shape_str(cam_bev.shape()) + " vs " +
                                    shape_str(lidar_bev.shape()));
    Tensor<T> x = concat<T>({cam_bev, lidar_bev}, 1);
    x = conv2d(x, store.at(prefix + "conv.w").tensor, store.at(prefix + "conv.b").tensor, 1, 1, 1);
    x = channel_norm(x, store.at(prefix + "norm.gamma").tensor,
                     store.at(prefix + "norm.beta").tensor);
    return relu(x);
}

// ---------------------------------------------------------------------------
// SCA
// ---------------------------------------------------------------------------

// First convs get a He init so the zero-initialized final convs can start
// training; at init every sigmoid output is exactly 0.5.
template <class T>
void register_sca_params(ParamStore<T>& store, const std::string& prefix, int channels, int rho,
                         Rng& rng, bool zero_all = false) {
    const int64_t C = channels;
    const int64_t Cr = std::max<int64_t>(1, C / rho);
    if (zero_all) {
        store.add_zeros(prefix + "cpem.shared.w", {Cr, C, 1, 1});
    } else {
        store.add_normal(prefix + "cpem.shared.w", {Cr, C, 1, 1}, rng, std::sqrt(2.0 / C));
    }
    store.add_zeros(prefix + "cpem.shared.b", {Cr});
    store.add_zeros(prefix + "cpem.h.w", {C, Cr, 1, 1});
    store.add_zeros(prefix + "cpem.h.b", {C});
    store.add_zeros(prefix + "cpem.w.w", {C, Cr, 1, 1});
    store.add_zeros(prefix + "cpem.w.b", {C});
    store.add_zeros(prefix + "saem.w", {1, 2, 1, 1});
    store.add_zeros(prefix + "saem.b", {1});
}

template <class T>
struct CpemWeights {
    Tensor<T> w_h;  // N x C x H x 1
    Tensor<T> w_w;  // N x C x 1 x W
};

// Directional 1D average pooling, shared 1x1 conv + ReLU on the concatenated
// strip, split, per-direction 1x1 conv + sigmoid.
template <class T>
CpemWeights<T> cpem(const Tensor<T>& x, ParamStore<T>& store, const std::string& prefix) {
    const int64_t H = x.dim(2), W = x.dim(3);
    Tensor<T> zh = reduce_pool(x, {3}, PoolMode::Avg);                  // N,C,H,1
    Tensor<T> zw = reduce_pool(x, {2}, PoolMode::Avg);                  // N,C,1,W
    Tensor<T> zw_col = permute(zw, {0, 1, 3, 2});                       // N,C,W,1
    Tensor<T> strip = concat<T>({zh, zw_col}, 2);                       // N,C,H+W,1
    Tensor<T> f = relu(conv2d(strip, store.at(prefix + "cpem.shared.w").tensor,
                              store.at(prefix + "cpem.shared.b").tensor));
    CpemWeights<T> out;
    out.w_h = sigmoid(conv2d(slice(f, 2, 0, H), store.at(prefix + "cpem.h.w").tensor,
                             store.at(prefix + "cpem.h.b").tensor));
    Tensor<T> fw = permute(slice(f, 2, H, W), {0, 1, 3, 2});            // N,Cr,1,W
    out.w_w = sigmoid(conv2d(fw, store.at(prefix + "cpem.w.w").tensor,
                             store.at(prefix + "cpem.w.b").tensor));
    return out;
}

// Channel-pooled avg and max maps, 1x1 conv 2->1, sigmoid: N x 1 x H x W.
template <class T>
Tensor<T> saem(const Tensor<T>& x, ParamStore<T>& store, const std::string& prefix) {
    Tensor<T> avg = reduce_pool(x, {1}, PoolMode::Avg);
    Tensor<T> mx = reduce_pool(x, {1}, PoolMode::Max);
    Tensor<T> f = concat<T>({avg, mx}, 1);  // N,2,H,W
    return sigmoid(conv2d(f, store.at(prefix + "saem.w").tensor,
                          store.at(prefix + "saem.b").tensor));
}

// y_c(i,j) = x_c(i,j) * w^h_c(i) * w^w_c(j) [* w^s(i,j)]
template <class T>
Tensor<T> sca_apply(const Tensor<T>& x, ParamStore<T>& store, const std::string& prefix,
                    bool saem_enabled) {
    CpemWeights<T> cw = cpem(x, store, prefix);
    Tensor<T> y = mul(mul(x, cw.w_h), cw.w_w);
    if (saem_enabled) y = mul(y, saem(x, store, prefix));
    return y;
}

}  // namespace scafusion
