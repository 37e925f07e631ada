#pragma once

// Adam over a ParamStore. Frozen parameters are skipped entirely, so their
// values stay bit-identical across steps.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "scafusion/param.hpp"

namespace scafusion {

template <class T>
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    void step(ParamStore<T>& store) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (auto& p : store.all()) {
            if (!p.trainable) continue;
            auto& m = m_[p.name];
            auto& v = v_[p.name];
            auto& val = p.tensor.data();
            const auto& g = p.tensor.grad();
            if (m.size() != val.size()) {
                m.assign(val.size(), 0.0);
                v.assign(val.size(), 0.0);
            }
            for (size_t i = 0; i < val.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                val[i] = static_cast<T>(static_cast<double>(val[i]) -
                                        lr_ * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace scafusion
