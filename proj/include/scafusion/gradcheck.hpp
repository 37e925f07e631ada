#pragma once

// Central finite-difference verification of analytic gradients. Always runs
// in double; the default step is 1e-3. Relative error uses a floored
// denominator so near-zero gradient pairs compare on an absolute scale.

#include <functional>
#include <vector>

#include "scafusion/tensor.hpp"

namespace scafusion {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    int64_t worst_index = -1;
};

inline double rel_error(double analytic, double numeric) {
    double denom = std::max(1e-2, std::abs(analytic) + std::abs(numeric));
    return std::abs(analytic - numeric) / denom;
}

// make_loss must rebuild the graph from the current leaf values each call.
inline GradCheckResult gradcheck(const std::function<TensorD()>& make_loss,
                                 std::vector<TensorD> leaves, double eps = 1e-3) {
    for (auto& l : leaves) l.set_requires_grad(true);
    TensorD loss = make_loss();
    for (auto& l : leaves) l.zero_grad();
    backward(loss);

    GradCheckResult result;
    for (auto& leaf : leaves) {
        std::vector<double> analytic = leaf.grad();
        if (analytic.empty()) analytic.assign(static_cast<size_t>(leaf.numel()), 0.0);
        for (int64_t i = 0; i < leaf.numel(); ++i) {
            double saved = leaf.data()[static_cast<size_t>(i)];
            leaf.data()[static_cast<size_t>(i)] = saved + eps;
            double fp = make_loss().item();
            leaf.data()[static_cast<size_t>(i)] = saved - eps;
            double fm = make_loss().item();
            leaf.data()[static_cast<size_t>(i)] = saved;
            double numeric = (fp - fm) / (2.0 * eps);
            double err = rel_error(analytic[static_cast<size_t>(i)], numeric);
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_tensor = leaf.name();
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace scafusion
