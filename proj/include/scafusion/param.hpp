#pragma once

// Named parameter tensors with trainable flags. Parameter names follow a
// dotted-path scheme ("backbone.stage1.block0.mona.up") consumed by
// checkpoint I/O and the freeze partitioner.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "scafusion/rng.hpp"
#include "scafusion/tensor.hpp"

namespace scafusion {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
};

template <class T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, const Shape& shape, std::vector<T> init) {
        if (index_.count(name))
            throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
        Parameter<T> p;
        p.name = name;
        p.tensor = Tensor<T>::from(shape, std::move(init));
        p.tensor.set_requires_grad(true).set_name(name);
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return params_.back().tensor;
    }

    Tensor<T>& add_zeros(const std::string& name, const Shape& shape) {
        return add(name, shape, std::vector<T>(static_cast<size_t>(shape_numel(shape)), T(0)));
    }

    Tensor<T>& add_full(const std::string& name, const Shape& shape, T v) {
        return add(name, shape, std::vector<T>(static_cast<size_t>(shape_numel(shape)), v));
    }

    Tensor<T>& add_normal(const std::string& name, const Shape& shape, Rng& rng, double stddev) {
        std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
        for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
        return add(name, shape, std::move(v));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
        return params_[it->second];
    }
    const Parameter<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
        return params_[it->second];
    }

    std::vector<Parameter<T>>& all() { return params_; }
    const std::vector<Parameter<T>>& all() const { return params_; }

    size_t size() const { return params_.size(); }

    void set_trainable(const std::string& name, bool trainable) {
        auto& p = at(name);
        p.trainable = trainable;
        p.tensor.set_requires_grad(trainable);
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    int64_t trainable_count() const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.tensor.numel();
        return n;
    }

    // Count of parameters whose name contains the given substring.
    int64_t count_matching(const std::string& substr) const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (p.name.find(substr) != std::string::npos) n += p.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

private:
    std::vector<Parameter<T>> params_;
    std::map<std::string, size_t> index_;  // ordered for stable iteration/reporting
};

using ParamStoreF = ParamStore<float>;

}  // namespace scafusion
