#pragma once

// Finite-difference sweep over every differentiable operation, several
// random instances each. Shared by the gradcheck CLI subcommand and the
// gradient acceptance check. Kinked ops (relu, abs, max pool) get inputs
// nudged away from their non-smooth points so the central difference is
// valid at the default 1e-3 step.

#include <string>
#include <vector>

#include "scafusion/gradcheck.hpp"
#include "scafusion/rng.hpp"
#include "scafusion/tensor.hpp"

namespace scafusion {

struct FamilyResult {
    std::string family;
    int instances = 0;
    double max_rel_error = 0.0;
    std::string worst_tensor;
};

namespace gradsuite_detail {

inline TensorD rand_leaf(Rng& r, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = r.uniform(lo, hi);
    return TensorD::from(shape, std::move(v));
}

// Values bounded away from zero, for relu/abs/max-tie safety.
inline TensorD rand_leaf_nonzero(Rng& r, const Shape& shape, double margin = 0.05) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) {
        double u = r.uniform(-1.0, 1.0);
        x = u >= 0 ? u + margin : u - margin;
    }
    return TensorD::from(shape, std::move(v));
}

}  // namespace gradsuite_detail

// Each entry runs `instances` random cases of one op family and keeps the
// worst relative error across all of them.
inline std::vector<FamilyResult> run_gradient_suite(uint64_t seed = 12345,
                                                    int instances = 5) {
    using gradsuite_detail::rand_leaf;
    using gradsuite_detail::rand_leaf_nonzero;
    Rng rng(seed);
    std::vector<FamilyResult> results;

    auto run = [&](const std::string& family,
                   const std::function<GradCheckResult(Rng&)>& one) {
        FamilyResult fr;
        fr.family = family;
        fr.instances = instances;
        for (int i = 0; i < instances; ++i) {
            Rng r = rng.fork(static_cast<uint64_t>(results.size() * 1000 + i));
            auto g = one(r);
            if (g.max_rel_error > fr.max_rel_error) {
                fr.max_rel_error = g.max_rel_error;
                fr.worst_tensor = g.worst_tensor;
            }
        }
        results.push_back(fr);
    };

    auto shape_small = [](Rng& r) {
        return Shape{r.uniform_int(1, 3), r.uniform_int(2, 4), r.uniform_int(2, 4)};
    };

    run("add_sub", [&](Rng& r) {
        Shape s = shape_small(r);
        Shape sb = s;
        sb[2] = 1;  // exercise broadcasting
        TensorD a = rand_leaf(r, s).set_name("a");
        TensorD b = rand_leaf(r, sb).set_name("b");
        return gradcheck([&] { return sum(add(a, sub(a, b))); }, {a, b});
    });
    run("mul_div", [&](Rng& r) {
        Shape s = shape_small(r);
        TensorD a = rand_leaf(r, s).set_name("a");
        TensorD b = rand_leaf_nonzero(r, s, 0.5).set_name("b");
        return gradcheck([&] { return sum(div(mul(a, b), b)); }, {a, b});
    });
    run("scale_neg_add_scalar", [&](Rng& r) {
        TensorD a = rand_leaf(r, shape_small(r)).set_name("a");
        return gradcheck([&] { return sum(add_scalar(neg(scale(a, 1.7)), 0.3)); }, {a});
    });
    run("exp_log", [&](Rng& r) {
        TensorD a = rand_leaf(r, shape_small(r), 0.2, 2.0).set_name("a");
        return gradcheck([&] { return sum(log(exp(a))); }, {a});
    });
    run("sqrt", [&](Rng& r) {
        TensorD a = rand_leaf(r, shape_small(r), 0.5, 3.0).set_name("a");
        return gradcheck([&] { return sum(sqrt(a)); }, {a});
    });
    run("abs", [&](Rng& r) {
        TensorD a = rand_leaf_nonzero(r, shape_small(r)).set_name("a");
        return gradcheck([&] { return sum(abs(a)); }, {a});
    });
    run("sigmoid", [&](Rng& r) {
        TensorD a = rand_leaf(r, shape_small(r), -3.0, 3.0).set_name("a");
        return gradcheck([&] { return sum(sigmoid(a)); }, {a});
    });
    run("relu", [&](Rng& r) {
        TensorD a = rand_leaf_nonzero(r, shape_small(r)).set_name("a");
        return gradcheck([&] { return sum(relu(a)); }, {a});
    });
    run("gelu", [&](Rng& r) {
        TensorD a = rand_leaf(r, shape_small(r), -2.0, 2.0).set_name("a");
        return gradcheck([&] { return sum(gelu(a)); }, {a});
    });
    run("square", [&](Rng& r) {
        TensorD a = rand_leaf(r, shape_small(r)).set_name("a");
        return gradcheck([&] { return sum(square(a)); }, {a});
    });
    run("reshape_permute", [&](Rng& r) {
        TensorD a = rand_leaf(r, {2, 3, 4}).set_name("a");
        return gradcheck(
            [&] { return sum(mul(permute(a, {2, 0, 1}), permute(a, {2, 0, 1}))); }, {a});
    });
    run("concat_slice", [&](Rng& r) {
        TensorD a = rand_leaf(r, {2, 3}).set_name("a");
        TensorD b = rand_leaf(r, {2, 2}).set_name("b");
        return gradcheck(
            [&] {
                TensorD c = concat<double>({a, b}, 1);
                return sum(mul(slice(c, 1, 1, 3), slice(c, 1, 1, 3)));
            },
            {a, b});
    });
    run("avg_pool", [&](Rng& r) {
        TensorD a = rand_leaf(r, {2, 3, 4, 5}).set_name("a");
        return gradcheck([&] { return sum(square(reduce_pool(a, {2, 3}, PoolMode::Avg))); },
                         {a});
    });
    run("max_pool", [&](Rng& r) {
        // distinct values so the argmax never flips inside the probe step
        Shape s{2, 3, 4};
        std::vector<double> v(24);
        for (size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i);
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<size_t>(r.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        TensorD a = TensorD::from(s, std::move(v)).set_name("a");
        return gradcheck([&] { return sum(square(reduce_pool(a, {2}, PoolMode::Max))); }, {a});
    });
    run("sum_mean", [&](Rng& r) {
        TensorD a = rand_leaf(r, shape_small(r)).set_name("a");
        return gradcheck([&] { return add(sum(square(a)), mean(square(a))); }, {a});
    });
    run("softmax", [&](Rng& r) {
        TensorD a = rand_leaf(r, {2, 5}, -2.0, 2.0).set_name("a");
        TensorD w = rand_leaf(r, {2, 5}).set_name("w");
        return gradcheck([&] { return sum(mul(softmax(a, 1), w)); }, {a, w});
    });
    run("matmul", [&](Rng& r) {
        TensorD a = rand_leaf(r, {3, 4}).set_name("a");
        TensorD b = rand_leaf(r, {4, 2}).set_name("b");
        return gradcheck([&] { return sum(square(matmul(a, b))); }, {a, b});
    });
    run("bmm", [&](Rng& r) {
        TensorD a = rand_leaf(r, {2, 3, 4}).set_name("a");
        TensorD b = rand_leaf(r, {2, 4, 2}).set_name("b");
        return gradcheck([&] { return sum(square(bmm(a, b))); }, {a, b});
    });
    run("linear", [&](Rng& r) {
        TensorD x = rand_leaf(r, {3, 4}).set_name("x");
        TensorD w = rand_leaf(r, {4, 2}).set_name("w");
        TensorD b = rand_leaf(r, {2}).set_name("b");
        return gradcheck([&] { return sum(square(linear(x, w, b))); }, {x, w, b});
    });
    run("conv2d", [&](Rng& r) {
        TensorD x = rand_leaf(r, {1, 2, 5, 5}).set_name("x");
        TensorD w = rand_leaf(r, {3, 2, 3, 3}).set_name("w");
        TensorD b = rand_leaf(r, {3}).set_name("b");
        const int stride = static_cast<int>(r.uniform_int(1, 2));
        return gradcheck([&] { return sum(square(conv2d(x, w, b, stride, 1))); }, {x, w, b});
    });
    run("conv2d_grouped", [&](Rng& r) {
        TensorD x = rand_leaf(r, {1, 4, 4, 4}).set_name("x");
        TensorD w = rand_leaf(r, {4, 1, 3, 3}).set_name("w");
        return gradcheck([&] { return sum(square(conv2d_nobias(x, w, 1, 1, 4))); }, {x, w});
    });
    run("bilinear_upsample2x", [&](Rng& r) {
        TensorD x = rand_leaf(r, {1, 2, 3, 4}).set_name("x");
        return gradcheck([&] { return sum(square(bilinear_upsample2x(x))); }, {x});
    });
    run("scatter_add", [&](Rng& r) {
        const int64_t N = 6, C = 3, H = 2, W = 3;
        TensorD v = rand_leaf(r, {N, C}).set_name("v");
        std::vector<int64_t> idx(static_cast<size_t>(N));
        for (auto& i : idx) i = r.uniform_int(0, H * W - 1);
        idx[0] = kScatterDrop;
        return gradcheck([&] { return sum(square(scatter_add(v, idx, H, W))); }, {v});
    });
    run("layer_norm", [&](Rng& r) {
        TensorD x = rand_leaf(r, {2, 3, 4}).set_name("x");
        TensorD g = rand_leaf(r, {4}, 0.5, 1.5).set_name("g");
        TensorD b = rand_leaf(r, {4}).set_name("b");
        return gradcheck([&] { return sum(square(layer_norm(x, g, b))); }, {x, g, b});
    });

    return results;
}

}  // namespace scafusion
