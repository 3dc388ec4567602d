// SPDX-License-Identifier: Apache-2.0
//
// Small stand-in velocity models with closed-form behaviour.
#pragma once

#include <cmath>
#include <limits>
#include <span>

#include "rlfseg/flow_net.hpp"

namespace test_models {

using rlfseg::PromptBatch;
using rlfseg::Tensor;
namespace nn = rlfseg::nn;

/// v(z, t, c) = a * z + b with scalar parameters a (slot 0) and b (slot 1).
/// With poison set, backward writes NaN into the gradient.
struct AffineField {
    bool poison = false;

    template <class T>
    struct Cache {
        Tensor<T> z;
    };

    template <class T>
    static nn::ParamStore<T> params(T a, T b) {
        nn::ParamStore<T> p;
        p.names = {"a", "b"};
        p.tensors.emplace_back(std::vector<int>{1}, a);
        p.tensors.emplace_back(std::vector<int>{1}, b);
        return p;
    }

    template <class T>
    Tensor<T> forward(const nn::ParamStore<T>& p, const Tensor<T>& z, std::span<const T>, const PromptBatch&,
                      Cache<T>* c) const {
        Tensor<T> v(z.shape());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = p[0][0] * z[i] + p[1][0];
        if (c) c->z = z;
        return v;
    }

    template <class T>
    void backward(const nn::ParamStore<T>&, nn::ParamStore<T>& g, const Cache<T>& c, const Tensor<T>& dv) const {
        for (std::size_t i = 0; i < dv.size(); ++i) {
            g[0][0] += dv[i] * c.z[i];
            g[1][0] += dv[i];
        }
        if (poison) g[0][0] = std::numeric_limits<T>::quiet_NaN();
    }
};

/// v = a * t * 1 + b: depends on t but not on z.
struct TimeField {
    template <class T>
    struct Cache {};

    template <class T>
    Tensor<T> forward(const nn::ParamStore<T>& p, const Tensor<T>& z, std::span<const T> t, const PromptBatch&,
                      Cache<T>*) const {
        Tensor<T> v(z.shape());
        const std::size_t per = z.size() / t.size();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = p[0][0] * t[i / per] + p[1][0];
        return v;
    }
};

} // namespace test_models
