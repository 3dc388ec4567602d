// SPDX-License-Identifier: Apache-2.0
//
// Image latent -> mask latent. The network predicts z1 - z0, so every sampler
// moves against its output: one step z1 - v(z1, 1, c), Euler with K steps, and
// the adaptive one-step rule, which stretches the single step by (1 + gamma)
// where gamma measures how far the prediction stopped short of the black
// reference on positions that already look like background.
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "rlfseg/codec.hpp"
#include "rlfseg/flow_net.hpp"

namespace rlfseg {

struct AosConfig {
    double epsilon = 0.01;
    double gamma_cap = 1.0;
    double delta_t = 1.0;

    void validate() const {
        require(epsilon > 0, "AOS: epsilon must be positive");
        require(gamma_cap >= 0, "AOS: gamma_cap must be non-negative");
        require(delta_t > 0, "AOS: delta_t must be positive");
    }
};

struct StableRegion {
    std::vector<std::size_t> indices; ///< flattened latent positions
    double gamma = 0;
};

/// {i : |zb[i] - z0_pred[i]| < epsilon}
inline StableRegion compute_stable_region(std::span<const float> z0_pred, std::span<const float> zb, double epsilon) {
    require(z0_pred.size() == zb.size(), "compute_stable_region: size mismatch");
    require(epsilon > 0, "compute_stable_region: epsilon must be positive");
    StableRegion s;
    for (std::size_t i = 0; i < zb.size(); ++i)
        if (std::abs(static_cast<double>(zb[i]) - static_cast<double>(z0_pred[i])) < epsilon) s.indices.push_back(i);
    return s;
}

inline StableRegion compute_stable_region(const LatentGrid& z0_pred, const LatentGrid& zb, double epsilon) {
    require(z0_pred.same_shape(zb), "compute_stable_region: shape mismatch");
    return compute_stable_region(z0_pred.data.span(), zb.data.span(), epsilon);
}

/// Adaptive one-step update for one sample given the step dz = -v * delta_t.
/// Writes z1 + dz (1 + gamma) into out and returns the stable region with gamma.
inline StableRegion aos_update(std::span<const float> z1, std::span<const float> dz, std::span<const float> zb,
                               const AosConfig& cfg, std::span<float> out) {
    cfg.validate();
    require(z1.size() == dz.size() && z1.size() == zb.size() && z1.size() == out.size(), "aos_update: size mismatch");
    std::vector<float> z0(z1.size());
    for (std::size_t i = 0; i < z1.size(); ++i) z0[i] = z1[i] + dz[i];
    StableRegion s = compute_stable_region(z0, zb, cfg.epsilon);
    double num = 0, den = 0;
    for (std::size_t i : s.indices) {
        num += std::abs(static_cast<double>(zb[i]) - static_cast<double>(z0[i]));
        den += std::abs(static_cast<double>(dz[i]));
    }
    s.gamma = s.indices.empty() || den == 0 ? 0.0 : std::clamp(num / den, 0.0, cfg.gamma_cap);
    if (s.gamma == 0) {
        std::copy(z0.begin(), z0.end(), out.begin());
    } else {
        for (std::size_t i = 0; i < z1.size(); ++i)
            out[i] = static_cast<float>(static_cast<double>(z1[i]) + static_cast<double>(dz[i]) * (1.0 + s.gamma));
    }
    return s;
}

inline std::pair<LatentGrid, StableRegion> aos_update(const LatentGrid& z1, const LatentGrid& dz, const LatentGrid& zb,
                                                      const AosConfig& cfg) {
    require(z1.same_shape(dz) && z1.same_shape(zb), "aos_update: shape mismatch");
    LatentGrid out = z1;
    auto s = aos_update(z1.data.span(), dz.data.span(), zb.data.span(), cfg, out.data.span());
    return {std::move(out), std::move(s)};
}

namespace detail {

template <class Model>
Tensor<float> velocity_at(const Model& model, const nn::ParamStore<float>& p, const Tensor<float>& z, float t,
                          const PromptBatch& prompts) {
    const std::vector<float> tv(static_cast<std::size_t>(z.dim(0)), t);
    return model.template forward<float>(p, z, std::span<const float>(tv), prompts, nullptr);
}

} // namespace detail

/// z1 - v(z1, 1, c) for a batch [B, C, H, W].
template <class Model>
Tensor<float> one_step_sample(const Model& model, const nn::ParamStore<float>& p, const Tensor<float>& z1,
                              const PromptBatch& prompts) {
    const Tensor<float> v = detail::velocity_at(model, p, z1, 1.f, prompts);
    Tensor<float> out(z1.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z1[i] - v[i];
    return out;
}

struct AosBatchResult {
    Tensor<float> z0;
    std::vector<StableRegion> regions; ///< one per sample
};

/// Adaptive one-step sampling against the reference zb (one sample's shape).
template <class Model>
AosBatchResult aos_sample(const Model& model, const nn::ParamStore<float>& p, const Tensor<float>& z1,
                          const PromptBatch& prompts, const LatentGrid& zb, const AosConfig& cfg = {}) {
    cfg.validate();
    const Tensor<float> v = detail::velocity_at(model, p, z1, 1.f, prompts);
    const std::size_t b = static_cast<std::size_t>(z1.dim(0)), per = z1.size() / b;
    require(zb.data.size() == per, "aos_sample: reference latent has the wrong size");
    const float dt = static_cast<float>(cfg.delta_t);
    std::vector<float> dz(z1.size());
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = -v[i] * dt;
    AosBatchResult r{Tensor<float>(z1.shape()), {}};
    for (std::size_t n = 0; n < b; ++n)
        r.regions.push_back(aos_update(z1.span().subspan(n * per, per), std::span<const float>(dz).subspan(n * per, per),
                                       zb.data.span(), cfg, r.z0.span().subspan(n * per, per)));
    return r;
}

/// K Euler steps from t = 1 to t = 0, velocity taken at the left end t_k = 1 - k/K.
template <class Model>
Tensor<float> multi_step_euler(const Model& model, const nn::ParamStore<float>& p, const Tensor<float>& z1,
                               const PromptBatch& prompts, int steps) {
    require(steps >= 1, "multi_step_euler: steps must be >= 1");
    Tensor<float> z = z1;
    const float h = 1.f / static_cast<float>(steps);
    for (int k = 0; k < steps; ++k) {
        const float t = 1.f - static_cast<float>(k) / static_cast<float>(steps);
        const Tensor<float> v = detail::velocity_at(model, p, z, t, prompts);
        if (steps == 1) {
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = z[i] - v[i];
        } else {
            for (std::size_t i = 0; i < z.size(); ++i) z[i] -= v[i] * h;
        }
    }
    return z;
}

struct CrossingPoint {
    double t = 0;
    std::vector<double> cosine; ///< per sample; NaN when either velocity has zero norm
    std::vector<double> norm;   ///< per sample velocity norm at this node
};

/// Follows the Euler trajectory through t_list (descending, starting at 1) and
/// records, at each node, the cosine between the current velocity and the one at t = 1.
template <class Model>
std::vector<CrossingPoint> path_crossing_diagnostic(const Model& model, const nn::ParamStore<float>& p,
                                                    const Tensor<float>& z1, const PromptBatch& prompts,
                                                    const std::vector<double>& t_list) {
    require(!t_list.empty() && t_list.front() == 1.0, "path_crossing_diagnostic: t_list must start at 1.0");
    for (std::size_t k = 0; k < t_list.size(); ++k) {
        require(t_list[k] >= 0 && t_list[k] <= 1, "path_crossing_diagnostic: t values must lie in [0,1]");
        require(k == 0 || t_list[k] < t_list[k - 1], "path_crossing_diagnostic: t_list must be strictly descending");
    }
    const std::size_t b = static_cast<std::size_t>(z1.dim(0)), per = z1.size() / b;
    Tensor<float> z = z1, v0;
    std::vector<CrossingPoint> out;
    for (std::size_t k = 0; k < t_list.size(); ++k) {
        const Tensor<float> v = detail::velocity_at(model, p, z, static_cast<float>(t_list[k]), prompts);
        if (k == 0) v0 = v;
        CrossingPoint cp;
        cp.t = t_list[k];
        for (std::size_t n = 0; n < b; ++n) {
            double dot = 0, a = 0, c = 0;
            for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
                dot += static_cast<double>(v[i]) * v0[i];
                a += static_cast<double>(v[i]) * v[i];
                c += static_cast<double>(v0[i]) * v0[i];
            }
            cp.norm.push_back(std::sqrt(a));
            cp.cosine.push_back(a == 0 || c == 0 ? std::numeric_limits<double>::quiet_NaN()
                                                 : std::clamp(dot / std::sqrt(a * c), -1.0, 1.0));
        }
        out.push_back(std::move(cp));
        if (k + 1 < t_list.size()) {
            const float h = static_cast<float>(t_list[k] - t_list[k + 1]);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] -= v[i] * h;
        }
    }
    return out;
}

} // namespace rlfseg
