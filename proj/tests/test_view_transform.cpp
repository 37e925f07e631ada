#include <doctest.h>

#include "scafusion/gradcheck.hpp"
#include "scafusion/view_transform.hpp"

using namespace scafusion;

namespace {

template <class T>
Tensor<T> rand_t(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
    std::vector<T> v(static_cast<size_t>(shape_numel(s)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>::from(s, std::move(v));
}

// Loop-over-every-point reference for lift_splat.
template <class T>
std::vector<T> splat_oracle(const Tensor<T>& ctx, const Tensor<T>& probs,
                            const Tensor<T>& frustum, const BEVGridSpec& grid) {
    const int64_t N = ctx.dim(0), C = ctx.dim(1), H = ctx.dim(2), W = ctx.dim(3);
    const int64_t D = probs.dim(1), Hb = grid.height(), Wb = grid.width();
    std::vector<T> out(static_cast<size_t>(N * C * Hb * Wb), T(0));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < D; ++d)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    size_t f = static_cast<size_t>(((d * H + h) * W + w) * 3);
                    int64_t cell = grid.cell_of(frustum.data()[f], frustum.data()[f + 1],
                                                frustum.data()[f + 2]);
                    if (cell == kScatterDrop) continue;
                    T p = probs.data()[static_cast<size_t>(((n * D + d) * H + h) * W + w)];
                    for (int64_t c = 0; c < C; ++c)
                        out[static_cast<size_t>((n * C + c) * Hb * Wb + cell)] +=
                            p * ctx.data()[static_cast<size_t>(((n * C + c) * H + h) * W + w)];
                }
    return out;
}

}  // namespace

TEST_CASE("build_frustum pinhole geometry") {
    CameraCalib calib;
    calib.fx = calib.fy = 50;
    calib.cx = 8;
    calib.cy = 8;
    calib.width = calib.height = 16;

    SUBCASE("principal point stays on the optical axis") {
        auto fr = build_frustum<double>(calib, {1.0, 2.0}, 16, 16);
        REQUIRE(fr.shape() == Shape{2, 16, 16, 3});
        for (int d = 0; d < 2; ++d) {
            size_t base = static_cast<size_t>(((d * 16 + 8) * 16 + 8) * 3);
            CHECK(fr.data()[base] == doctest::Approx(0.0));
            CHECK(fr.data()[base + 1] == doctest::Approx(0.0));
            CHECK(fr.data()[base + 2] == doctest::Approx(1.0 + d));
        }
    }
    SUBCASE("one focal length off-center gives 1 m lateral offset") {
        CameraCalib c2 = calib;
        c2.fx = c2.fy = 4;  // pixel u = cx + fx stays inside the image
        auto fr = build_frustum<double>(c2, {1.0}, 16, 16);
        size_t base = static_cast<size_t>(((0 * 16 + 8) * 16 + 12) * 3);  // u = cx + fx
        CHECK(fr.data()[base] == doctest::Approx(1.0));
    }
    SUBCASE("bins must strictly increase") {
        CHECK_THROWS_AS(build_frustum<double>(calib, {2.0, 1.0}, 4, 4), std::invalid_argument);
        CHECK_THROWS_AS(build_frustum<double>(calib, {}, 4, 4), std::invalid_argument);
    }
    SUBCASE("extrinsics applied") {
        CameraCalib c2 = calib;
        // camera->ego: z_cam (forward) -> x_ego, x_cam -> -y_ego, y_cam -> -z_ego
        c2.rot = {{{0, 0, 1}, {-1, 0, 0}, {0, -1, 0}}};
        c2.trans = {1, 0, 0.5};
        auto fr = build_frustum<double>(c2, {2.0}, 16, 16);
        size_t base = static_cast<size_t>(((0 * 16 + 8) * 16 + 8) * 3);
        CHECK(fr.data()[base] == doctest::Approx(3.0));    // 2 m forward + 1
        CHECK(fr.data()[base + 1] == doctest::Approx(0.0));
        CHECK(fr.data()[base + 2] == doctest::Approx(0.5));
    }
}

TEST_CASE("camera calib validation") {
    CameraCalib c;
    c.fx = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.fx = 100;
    c.rot[0][0] = 2.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("depth_context_split") {
    SUBCASE("uniform logits give uniform probs") {
        auto feat = TensorF::full({1, 6, 2, 2}, 0.7f);  // D=4, C=2
        auto dc = depth_context_split(feat, 4);
        REQUIRE(dc.depth_probs.shape() == Shape{1, 4, 2, 2});
        REQUIRE(dc.context.shape() == Shape{1, 2, 2, 2});
        for (float v : dc.depth_probs.data()) CHECK(v == doctest::Approx(0.25f));
        for (float v : dc.context.data()) CHECK(v == doctest::Approx(0.7f));
    }
    SUBCASE("large logit saturates to one-hot") {
        std::vector<float> v = {30.f, 0.f, 0.f, 1.f};  // D=3 + C=1, single pixel
        auto dc = depth_context_split(TensorF::from({1, 4, 1, 1}, v), 3);
        CHECK(dc.depth_probs.data()[0] == doctest::Approx(1.f).epsilon(1e-6));
        CHECK(dc.depth_probs.data()[1] < 1e-6f);
    }
    SUBCASE("per-pixel sums are one") {
        Rng rng(4);
        auto feat = rand_t<double>({2, 10, 3, 3}, rng, -3, 3);
        auto dc = depth_context_split(feat, 6);
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t p = 0; p < 9; ++p) {
                double s = 0;
                for (int64_t d = 0; d < 6; ++d)
                    s += dc.depth_probs.data()[static_cast<size_t>((n * 6 + d) * 9 + p)];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
    SUBCASE("channel mismatch rejected") {
        auto feat = TensorF::zeros({1, 4, 1, 1});
        CHECK_THROWS_AS(depth_context_split(feat, 5), std::invalid_argument);
    }
}

TEST_CASE("lift_splat") {
    BEVGridSpec grid;
    grid.x_min = -2;
    grid.x_max = 2;
    grid.y_min = -2;
    grid.y_max = 2;
    grid.cell = 1.0;
    grid.z_min = -1;
    grid.z_max = 3;

    SUBCASE("one pixel, one-hot depth lands in exactly one cell") {
        // frustum point for bin 1 at (0.5, 0.5, 0) -> row 2, col 2
        auto frustum = TensorF::from({2, 1, 1, 3}, {0.5f, -1.5f, 0.f, 0.5f, 0.5f, 0.f});
        auto ctx = TensorF::from({1, 2, 1, 1}, {3.f, 4.f});
        auto probs = TensorF::from({1, 2, 1, 1}, {0.f, 1.f});
        auto bev = lift_splat(ctx, probs, frustum, grid);
        REQUIRE(bev.shape() == Shape{1, 2, 4, 4});
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t i = 0; i < 16; ++i) {
                float expect = (i == 2 * 4 + 2) ? (c == 0 ? 3.f : 4.f) : 0.f;
                CHECK(bev.data()[static_cast<size_t>(c * 16 + i)] == doctest::Approx(expect));
            }
    }
    SUBCASE("all points outside give a zero map") {
        auto frustum = TensorF::from({1, 1, 1, 3}, {100.f, 0.f, 0.f});
        auto ctx = TensorF::full({1, 1, 1, 1}, 5.f);
        auto probs = TensorF::full({1, 1, 1, 1}, 1.f);
        SplatDiagnostics diag;
        auto bev = lift_splat(ctx, probs, frustum, grid, &diag);
        for (float v : bev.data()) CHECK(v == 0.f);
        CHECK(diag.dropped_points == 1);
    }
    SUBCASE("matches brute-force oracle and conserves mass on random instances") {
        Rng rng(77);
        for (int trial = 0; trial < 50; ++trial) {
            const int64_t D = 1 + rng.uniform_int(1, 7), H = rng.uniform_int(1, 8),
                          W = rng.uniform_int(1, 8), C = rng.uniform_int(1, 4);
            auto ctx = rand_t<float>({1, C, H, W}, rng);
            auto probs = rand_t<float>({1, D, H, W}, rng, 0.0, 1.0);
            auto frustum = rand_t<float>({D, H, W, 3}, rng, -3.0, 3.0);
            auto bev = lift_splat(ctx, probs, frustum, grid);
            auto expect = splat_oracle(ctx, probs, frustum, grid);
            double mass_in = 0;
            for (size_t i = 0; i < expect.size(); ++i) {
                double denom = std::max(1.0, std::abs(static_cast<double>(expect[i])));
                CHECK(std::abs(bev.data()[i] - expect[i]) / denom < 1e-5);
                mass_in += expect[i];
            }
            double mass_out = 0;
            for (float v : bev.data()) mass_out += v;
            CHECK(mass_out == doctest::Approx(mass_in).epsilon(1e-5));
        }
    }
    SUBCASE("integral cell translation shifts the map") {
        Rng rng(78);
        const int64_t D = 3, H = 4, W = 4;
        auto ctx = rand_t<float>({1, 2, H, W}, rng);
        auto probs = rand_t<float>({1, D, H, W}, rng, 0.0, 1.0);
        // frustum confined to the interior so a one-cell shift stays in range
        auto frustum = rand_t<float>({D, H, W, 3}, rng, -0.9, 0.9);
        auto bev = lift_splat(ctx, probs, frustum, grid);
        auto shifted = frustum.detach();
        for (int64_t p = 0; p < D * H * W; ++p)
            shifted.data()[static_cast<size_t>(3 * p)] += static_cast<float>(grid.cell);
        auto bev2 = lift_splat(ctx, probs, shifted, grid);
        const int64_t Hb = grid.height(), Wb = grid.width();
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t r = 0; r < Hb; ++r)
                for (int64_t col = 0; col + 1 < Wb; ++col)
                    CHECK(bev2.data()[static_cast<size_t>((c * Hb + r) * Wb + col + 1)] ==
                          doctest::Approx(bev.data()[static_cast<size_t>((c * Hb + r) * Wb + col)])
                              .epsilon(1e-5));
    }
    SUBCASE("gradient through the splat") {
        Rng rng(79);
        auto ctx = rand_t<double>({1, 2, 2, 2}, rng);
        auto probs = rand_t<double>({1, 2, 2, 2}, rng, 0.1, 1.0);
        auto frustum = rand_t<double>({2, 2, 2, 3}, rng, -1.5, 1.5);
        auto res = gradcheck(
            [&] { return sum(square(lift_splat(ctx, probs, frustum, grid))); }, {ctx, probs});
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("cam_align_preprocess") {
    Rng rng(21);
    ParamStore<float> store;
    register_align_params(store, "cam.align.", 8, 32, rng);

    auto rgb = rand_t<float>({2, 32, 4, 4}, rng);
    auto depth = rand_t<float>({2, 8, 4, 4}, rng);
    auto batch = cam_align_preprocess(rgb, depth, store, "cam.align.", 0.1);

    SUBCASE("stack shapes equal, channel width reaches C_CE") {
        CHECK(batch.rgb.shape() == batch.depth.shape());
        CHECK(batch.rgb.shape() == Shape{2 * 32, 16});
        CHECK(store.at("cam.align.block2.w").tensor.dim(0) == 32);
    }
    SUBCASE("per-sample instance mode") {
        auto b2 = cam_align_preprocess(rgb, depth, store, "cam.align.", 0.1,
                                       AlignInstanceMode::PerSample);
        CHECK(b2.rgb.shape() == Shape{2, 32 * 16});
    }
    SUBCASE("zero depth features are deterministic") {
        auto zd = TensorF::zeros({2, 8, 4, 4});
        auto b1 = cam_align_preprocess(rgb, zd, store, "cam.align.", 0.1);
        auto b2 = cam_align_preprocess(rgb, zd, store, "cam.align.", 0.1);
        for (size_t i = 0; i < b1.depth.data().size(); ++i)
            CHECK(b1.depth.data()[i] == b2.depth.data()[i]);
    }
    SUBCASE("instance count mismatch rejected") {
        auto bad = rand_t<float>({3, 8, 4, 4}, rng);
        CHECK_THROWS_AS(cam_align_preprocess(rgb, bad, store, "cam.align.", 0.1),
                        std::invalid_argument);
    }
}

TEST_CASE("nt_xent_align_loss") {
    SUBCASE("orthogonal matched pairs at tau=1") {
        auto r = TensorD::from({2, 2}, {1, 0, 0, 1});
        AlignBatch<double> b{r, r.detach(), 1.0};
        double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
        CHECK(nt_xent_align_loss(b).item() == doctest::Approx(expect).epsilon(1e-9));
        CHECK(expect == doctest::Approx(0.31326).epsilon(1e-4));
    }
    SUBCASE("sharp temperature drives the loss to zero") {
        auto r = TensorD::from({2, 2}, {1, 0, 0, 1});
        AlignBatch<double> b{r, r.detach(), 0.05};
        CHECK(nt_xent_align_loss(b).item() < 1e-6);
    }
    SUBCASE("shuffled pairing strictly increases the loss") {
        auto r = TensorD::from({2, 2}, {1, 0, 0, 1});
        auto matched = nt_xent_align_loss(AlignBatch<double>{r, r.detach(), 1.0}).item();
        auto d_swapped = TensorD::from({2, 2}, {0, 1, 1, 0});
        auto shuffled = nt_xent_align_loss(AlignBatch<double>{r, d_swapped, 1.0}).item();
        CHECK(shuffled > matched);
    }
    SUBCASE("nonnegative, bounded, monotone in matched similarity") {
        Rng rng(31);
        for (int trial = 0; trial < 20; ++trial) {
            auto r = rand_t<double>({4, 6}, rng);
            auto d = rand_t<double>({4, 6}, rng);
            double tau = rng.uniform(0.2, 2.0);
            double loss = nt_xent_align_loss(AlignBatch<double>{r, d, tau}).item();
            CHECK(loss >= 0.0);
            CHECK(loss <= std::log(4.0) + 2.0 / tau);
        }
        // pull one matched pair closer with everything else fixed
        auto r = TensorD::from({2, 2}, {1, 0, 0, 1});
        auto d_far = TensorD::from({2, 2}, {0.5, std::sqrt(0.75), 0, 1});
        auto d_near = TensorD::from({2, 2}, {0.9, std::sqrt(1 - 0.81), 0, 1});
        double far_loss = nt_xent_align_loss(AlignBatch<double>{r, d_far, 0.5}).item();
        double near_loss = nt_xent_align_loss(AlignBatch<double>{r, d_near, 0.5}).item();
        CHECK(near_loss < far_loss);
    }
    SUBCASE("gradients pass finite differences") {
        Rng rng(33);
        auto r = rand_t<double>({3, 5}, rng);
        auto d = rand_t<double>({3, 5}, rng);
        auto res = gradcheck(
            [&] { return nt_xent_align_loss(AlignBatch<double>{r, d, 0.5}); }, {r, d});
        CHECK(res.max_rel_error < 1e-4);
    }
    SUBCASE("zero-norm vector rejected") {
        auto r = TensorD::from({2, 2}, {0, 0, 0, 1});
        CHECK_THROWS_AS(nt_xent_align_loss(AlignBatch<double>{r, r.detach(), 1.0}),
                        std::invalid_argument);
    }
}
