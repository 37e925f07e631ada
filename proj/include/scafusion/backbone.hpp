#pragma once

// Trimmed three-stage transformer camera backbone with the Mona adapter
// inserted after attention and after the MLP in every block. Windowed
// attention is replaced by full self-attention on the stage grids; the
// 3-stage / 2-blocks-per-stage topology is kept.

#include <array>
#include <string>

#include "scafusion/param.hpp"
#include "scafusion/tensor.hpp"

namespace scafusion {

struct BackboneConfig {
    int patch = 4;
    std::array<int, 3> widths = {32, 64, 128};
    int blocks_per_stage = 2;
    int heads = 4;
    bool adapter_enabled = true;
    int mona_ratio = 4;  // bottleneck C -> C/ratio
};

// ---------------------------------------------------------------------------
// layout helpers
// ---------------------------------------------------------------------------

// (N,C,H,W) -> (N*H*W, C)
template <class T>
Tensor<T> map_to_tokens(const Tensor<T>& x) {
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    return reshape(permute(x, {0, 2, 3, 1}), {N * H * W, C});
}

// (N*H*W, C) -> (N,C,H,W)
template <class T>
Tensor<T> tokens_to_map(const Tensor<T>& t, int64_t N, int64_t H, int64_t W) {
    const int64_t C = t.dim(1);
    return permute(reshape(t, {N, H, W, C}), {0, 3, 1, 2});
}

// ---------------------------------------------------------------------------
// Mona adapter
// ---------------------------------------------------------------------------

template <class T>
void register_mona_params(ParamStore<T>& store, const std::string& prefix, int channels,
                          int ratio, Rng& rng) {
    const int64_t C = channels;
    const int64_t Cr = std::max<int64_t>(1, C / ratio);
    store.add_full(prefix + "norm.gamma", {C}, T(1));
    store.add_zeros(prefix + "norm.beta", {C});
    store.add_full(prefix + "s1", {1}, T(1));
    store.add_zeros(prefix + "s2", {1});
    store.add_normal(prefix + "down.w", {C, Cr}, rng, 0.02);
    store.add_zeros(prefix + "down.b", {Cr});
    for (int k : {3, 5, 7}) {
        std::string name = prefix + "dw" + std::to_string(k);
        store.add_normal(name + ".w", {Cr, 1, k, k}, rng, 0.02);
        store.add_zeros(name + ".b", {Cr});
    }
    store.add_normal(prefix + "pw.w", {Cr, Cr, 1, 1}, rng, 0.02);
    store.add_zeros(prefix + "pw.b", {Cr});
    // zero-initialized up-projection: the adapter is the identity at init
    store.add_zeros(prefix + "up.w", {Cr, C});
    store.add_zeros(prefix + "up.b", {C});
}

// x + U * Sigmoid(Conv1x1(Convdw(D(x_norm)))), x_norm = s1*LN(x) + s2*x.
// Convdw is the mean of three parallel depthwise convolutions (3/5/7) plus a
// residual of its input.
template <class T>
Tensor<T> mona_adapter(const Tensor<T>& x, ParamStore<T>& store, const std::string& prefix) {
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != store.at(prefix + "norm.gamma").tensor.dim(0))
        throw std::invalid_argument("mona_adapter: channel extent " + std::to_string(C) +
                                    " does not match parameters at '" + prefix + "'");
    Tensor<T> tokens = map_to_tokens(x);
    Tensor<T> ln = layer_norm(tokens, store.at(prefix + "norm.gamma").tensor,
                              store.at(prefix + "norm.beta").tensor);
    Shape ones{1, 1};
    Tensor<T> xn = add(mul(ln, reshape(store.at(prefix + "s1").tensor, ones)),
                       mul(tokens, reshape(store.at(prefix + "s2").tensor, ones)));
    Tensor<T> d = linear(xn, store.at(prefix + "down.w").tensor, store.at(prefix + "down.b").tensor);
    const int64_t Cr = d.dim(1);
    Tensor<T> dmap = tokens_to_map(d, N, H, W);
    Tensor<T> dw3 = conv2d(dmap, store.at(prefix + "dw3.w").tensor,
                           store.at(prefix + "dw3.b").tensor, 1, 1, static_cast<int>(Cr));
    Tensor<T> dw5 = conv2d(dmap, store.at(prefix + "dw5.w").tensor,
                           store.at(prefix + "dw5.b").tensor, 1, 2, static_cast<int>(Cr));
    Tensor<T> dw7 = conv2d(dmap, store.at(prefix + "dw7.w").tensor,
                           store.at(prefix + "dw7.b").tensor, 1, 3, static_cast<int>(Cr));
    Tensor<T> dw = add(scale(add(add(dw3, dw5), dw7), T(1) / T(3)), dmap);
    Tensor<T> pw = conv2d(dw, store.at(prefix + "pw.w").tensor, store.at(prefix + "pw.b").tensor);
    Tensor<T> act = sigmoid(pw);
    Tensor<T> up = linear(map_to_tokens(act), store.at(prefix + "up.w").tensor,
                          store.at(prefix + "up.b").tensor);
    return add(x, tokens_to_map(up, N, H, W));
}

// ---------------------------------------------------------------------------
// transformer blocks
// ---------------------------------------------------------------------------

template <class T>
void register_block_params(ParamStore<T>& store, const std::string& prefix, int channels,
                           const BackboneConfig& cfg, Rng& rng) {
    const int64_t C = channels;
    store.add_full(prefix + "ln1.gamma", {C}, T(1));
    store.add_zeros(prefix + "ln1.beta", {C});
    store.add_full(prefix + "ln2.gamma", {C}, T(1));
    store.add_zeros(prefix + "ln2.beta", {C});
    store.add_normal(prefix + "attn.qkv.w", {C, 3 * C}, rng, 0.02);
    store.add_zeros(prefix + "attn.qkv.b", {3 * C});
    store.add_normal(prefix + "attn.proj.w", {C, C}, rng, 0.02);
    store.add_zeros(prefix + "attn.proj.b", {C});
    store.add_normal(prefix + "mlp.fc1.w", {C, 4 * C}, rng, 0.02);
    store.add_zeros(prefix + "mlp.fc1.b", {4 * C});
    store.add_normal(prefix + "mlp.fc2.w", {4 * C, C}, rng, 0.02);
    store.add_zeros(prefix + "mlp.fc2.b", {C});
    register_mona_params(store, prefix + "mona_attn.", channels, cfg.mona_ratio, rng);
    register_mona_params(store, prefix + "mona_mlp.", channels, cfg.mona_ratio, rng);
}

template <class T>
Tensor<T> self_attention(const Tensor<T>& tokens, ParamStore<T>& store,
                         const std::string& prefix, int64_t N, int heads) {
    const int64_t NT = tokens.dim(0), C = tokens.dim(1);
    const int64_t Tk = NT / N;
    const int64_t dh = C / heads;
    Tensor<T> qkv = linear(tokens, store.at(prefix + "qkv.w").tensor,
                           store.at(prefix + "qkv.b").tensor);
    // (N*T, 3C) -> (N, T, 3, heads, dh) -> (3, N, heads, T, dh)
    Tensor<T> q5 = permute(reshape(qkv, {N, Tk, 3, heads, dh}), {2, 0, 3, 1, 4});
    auto head_mat = [&](int which) {
        return reshape(slice(q5, 0, which, 1), {N * heads, Tk, dh});
    };
    Tensor<T> q = head_mat(0), k = head_mat(1), v = head_mat(2);
    Tensor<T> scores = scale(bmm(q, permute(k, {0, 2, 1})),
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<T> attn = softmax(scores, 2);
    Tensor<T> out = bmm(attn, v);  // (N*heads, T, dh)
    out = reshape(permute(reshape(out, {N, heads, Tk, dh}), {0, 2, 1, 3}), {NT, C});
    return linear(out, store.at(prefix + "proj.w").tensor, store.at(prefix + "proj.b").tensor);
}

// One block on an NCHW stage map; Mona after attention and after MLP.
template <class T>
Tensor<T> backbone_block(const Tensor<T>& x, ParamStore<T>& store, const std::string& prefix,
                         const BackboneConfig& cfg) {
    const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    Tensor<T> tokens = map_to_tokens(x);
    Tensor<T> ln1 = layer_norm(tokens, store.at(prefix + "ln1.gamma").tensor,
                               store.at(prefix + "ln1.beta").tensor);
    Tensor<T> y = add(tokens, self_attention(ln1, store, prefix + "attn.", N, cfg.heads));
    Tensor<T> map = tokens_to_map(y, N, H, W);
    if (cfg.adapter_enabled) map = mona_adapter(map, store, prefix + "mona_attn.");
    tokens = map_to_tokens(map);
    Tensor<T> ln2 = layer_norm(tokens, store.at(prefix + "ln2.gamma").tensor,
                               store.at(prefix + "ln2.beta").tensor);
    Tensor<T> h = linear(ln2, store.at(prefix + "mlp.fc1.w").tensor,
                         store.at(prefix + "mlp.fc1.b").tensor);
    h = linear(gelu(h), store.at(prefix + "mlp.fc2.w").tensor,
               store.at(prefix + "mlp.fc2.b").tensor);
    map = tokens_to_map(add(tokens, h), N, H, W);
    if (cfg.adapter_enabled) map = mona_adapter(map, store, prefix + "mona_mlp.");
    return map;
}

// ---------------------------------------------------------------------------
// backbone
// ---------------------------------------------------------------------------

template <class T>
void register_backbone_params(ParamStore<T>& store, const BackboneConfig& cfg, Rng& rng) {
    const int64_t p = cfg.patch;
    store.add_normal("backbone.patch_embed.w", {3 * p * p, cfg.widths[0]}, rng, 0.02);
    store.add_zeros("backbone.patch_embed.b", {cfg.widths[0]});
    for (int s = 0; s < 3; ++s) {
        std::string sp = "backbone.stage" + std::to_string(s + 1) + ".";
        if (s > 0) {
            store.add_normal(sp + "merge.w", {4LL * cfg.widths[s - 1], cfg.widths[s]}, rng, 0.02);
            store.add_zeros(sp + "merge.b", {cfg.widths[s]});
        }
        for (int b = 0; b < cfg.blocks_per_stage; ++b)
            register_block_params(store, sp + "block" + std::to_string(b) + ".",
                                  cfg.widths[s], cfg, rng);
    }
}

// 2x2 non-overlapping patch flatten: (N,C,H,W) -> (N*H/2*W/2, 4C)
template <class T>
Tensor<T> patch_merge_tokens(const Tensor<T>& x) {
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> r = reshape(x, {N, C, H / 2, 2, W / 2, 2});
    r = permute(r, {0, 2, 4, 1, 3, 5});
    return reshape(r, {N * (H / 2) * (W / 2), C * 4});
}

// Returns feature maps at strides 4, 8, 16.
template <class T>
std::array<Tensor<T>, 3> backbone_forward(ParamStore<T>& store, const BackboneConfig& cfg,
                                          const Tensor<T>& image) {
    if (image.rank() != 4 || image.dim(1) != 3)
        throw std::invalid_argument("backbone_forward: expected (N,3,H,W), got " +
                                    shape_str(image.shape()));
    const int64_t N = image.dim(0), H = image.dim(2), W = image.dim(3);
    if (H % 16 != 0 || W % 16 != 0)
        throw std::invalid_argument("backbone_forward: H and W must be divisible by 16, got " +
                                    std::to_string(H) + "x" + std::to_string(W));
    const int64_t p = cfg.patch;
    // patchify: (N,3,H,W) -> (N*H/p*W/p, 3*p*p)
    Tensor<T> r = reshape(image, {N, 3, H / p, p, W / p, p});
    r = reshape(permute(r, {0, 2, 4, 1, 3, 5}), {N * (H / p) * (W / p), 3 * p * p});
    Tensor<T> tokens = linear(r, store.at("backbone.patch_embed.w").tensor,
                              store.at("backbone.patch_embed.b").tensor);
    Tensor<T> map = tokens_to_map(tokens, N, H / p, W / p);

    std::array<Tensor<T>, 3> out;
    for (int s = 0; s < 3; ++s) {
        std::string sp = "backbone.stage" + std::to_string(s + 1) + ".";
        if (s > 0) {
            Tensor<T> merged = linear(patch_merge_tokens(map), store.at(sp + "merge.w").tensor,
                                      store.at(sp + "merge.b").tensor);
            map = tokens_to_map(merged, N, map.dim(2) / 2, map.dim(3) / 2);
        }
        for (int b = 0; b < cfg.blocks_per_stage; ++b)
            map = backbone_block(map, store, sp + "block" + std::to_string(b) + ".", cfg);
        out[static_cast<size_t>(s)] = map;
    }
    return out;
}

// ---------------------------------------------------------------------------
// freeze partition
// ---------------------------------------------------------------------------

enum class FreezeMode { Full, AdapterOnly };

struct FreezeReport {
    std::vector<std::string> frozen;
    std::vector<std::string> trainable;
    double tunable_fraction = 0.0;
};

// Partitions every parameter under `scope` into frozen/trainable sets.
// AdapterOnly keeps exactly the adapter (and adapter-norm) parameters
// trainable; Full keeps everything trainable.
template <class T>
FreezeReport freeze_partition(ParamStore<T>& store, FreezeMode mode,
                              const std::string& scope = "backbone.") {
    FreezeReport rep;
    int64_t total = 0, trainable = 0;
    for (auto& p : store.all()) {
        if (p.name.rfind(scope, 0) != 0) continue;
        total += p.tensor.numel();
        bool keep = (mode == FreezeMode::Full) || p.name.find(".mona") != std::string::npos;
        store.set_trainable(p.name, keep);
        if (keep) {
            trainable += p.tensor.numel();
            rep.trainable.push_back(p.name);
        } else {
            rep.frozen.push_back(p.name);
        }
    }
    rep.tunable_fraction = total ? static_cast<double>(trainable) / static_cast<double>(total) : 0.0;
    return rep;
}

}  // namespace scafusion
