// SPDX-License-Identifier: Apache-2.0
//
// Minimal NCHW layers with explicit forward/backward passes. Every layer keeps
// its parameters as slots in a ParamStore so optimizers and checkpoints see a
// flat list of named arrays. Gradients live in a second store of the same layout.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rlfseg/errors.hpp"
#include "rlfseg/tensor.hpp"

namespace rlfseg::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

enum class Init { uniform_fan_in, zeros, ones };

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    Init init = Init::uniform_fan_in;
    int fan_in = 1;
};

/// Names, shapes and initializers of every parameter array of a model.
class ParamLayout {
public:
    int add(std::string name, std::vector<int> shape, Init init, int fan_in = 1) {
        specs_.push_back({std::move(name), std::move(shape), init, fan_in});
        return static_cast<int>(specs_.size()) - 1;
    }
    const std::vector<ParamSpec>& specs() const noexcept { return specs_; }
    int size() const noexcept { return static_cast<int>(specs_.size()); }

private:
    std::vector<ParamSpec> specs_;
};

template <class T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;

    Tensor<T>& operator[](int slot) { return tensors[static_cast<std::size_t>(slot)]; }
    const Tensor<T>& operator[](int slot) const { return tensors[static_cast<std::size_t>(slot)]; }
    int size() const noexcept { return static_cast<int>(tensors.size()); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    ParamStore zeros_like() const {
        ParamStore z;
        z.names = names;
        for (const auto& t : tensors) z.tensors.emplace_back(t.shape());
        return z;
    }

    void zero() {
        for (auto& t : tensors) t.fill(T(0));
    }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        return -1;
    }

    bool all_finite() const {
        for (const auto& t : tensors)
            if (!t.all_finite()) return false;
        return true;
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        out.names = names;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }

    friend bool operator==(const ParamStore& a, const ParamStore& b) {
        return a.names == b.names && a.tensors == b.tensors;
    }
};

/// Deterministic materialization: each array draws from its own stream keyed by (seed, slot).
template <class T>
ParamStore<T> materialize(const ParamLayout& layout, std::uint64_t seed) {
    ParamStore<T> p;
    int slot = 0;
    for (const auto& s : layout.specs()) {
        Tensor<T> t(s.shape);
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(slot) * 0xBF58476D1CE4E5B9ull + 1);
        switch (s.init) {
        case Init::zeros: break;
        case Init::ones: t.fill(T(1)); break;
        case Init::uniform_fan_in: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, s.fan_in)));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : t) v = static_cast<T>(u(rng));
            break;
        }
        }
        p.names.push_back(s.name);
        p.tensors.push_back(std::move(t));
        ++slot;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Stateless elementwise helpers

template <class T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
    return y;
}

template <class T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = sigmoid(x[i]);
        dx[i] = dy[i] * (s + x[i] * s * (T(1) - s));
    }
    return dx;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add_inplace: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

/// 2x2 average pooling.
template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(h % 2 == 0 && w % 2 == 0, "avg_pool2: odd spatial size");
    Tensor<T> y({b, c, h / 2, w / 2});
    for (int n = 0; n < b * c; ++n) {
        const T* src = x.data() + static_cast<std::size_t>(n) * h * w;
        T* dst = y.data() + static_cast<std::size_t>(n) * (h / 2) * (w / 2);
        for (int i = 0; i < h / 2; ++i)
            for (int j = 0; j < w / 2; ++j)
                dst[i * (w / 2) + j] = T(0.25) * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                                                  src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
    }
    return y;
}

template <class T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy) {
    const int b = dy.dim(0), c = dy.dim(1), h = dy.dim(2) * 2, w = dy.dim(3) * 2;
    Tensor<T> dx({b, c, h, w});
    for (int n = 0; n < b * c; ++n) {
        const T* src = dy.data() + static_cast<std::size_t>(n) * (h / 2) * (w / 2);
        T* dst = dx.data() + static_cast<std::size_t>(n) * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) dst[i * w + j] = T(0.25) * src[(i / 2) * (w / 2) + j / 2];
    }
    return dx;
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2(const Tensor<T>& x) {
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({b, c, 2 * h, 2 * w});
    for (int n = 0; n < b * c; ++n) {
        const T* src = x.data() + static_cast<std::size_t>(n) * h * w;
        T* dst = y.data() + static_cast<std::size_t>(n) * 4 * h * w;
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
    return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
    const int b = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
    Tensor<T> dx({b, c, h, w});
    for (int n = 0; n < b * c; ++n) {
        const T* src = dy.data() + static_cast<std::size_t>(n) * 4 * h * w;
        T* dst = dx.data() + static_cast<std::size_t>(n) * h * w;
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
    }
    return dx;
}

/// Channel concatenation [B,Ca,H,W] ++ [B,Cb,H,W].
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3), "concat_channels: shape mismatch");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    Tensor<T> y({n, ca + cb, a.dim(2), a.dim(3)});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * ca * hw, ca * hw, y.data() + i * (ca + cb) * hw);
        std::copy_n(b.data() + i * cb * hw, cb * hw, y.data() + (i * (ca + cb) + ca) * hw);
    }
    return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, int ca) {
    const int n = y.dim(0), c = y.dim(1), cb = c - ca;
    const std::size_t hw = static_cast<std::size_t>(y.dim(2)) * y.dim(3);
    Tensor<T> a({n, ca, y.dim(2), y.dim(3)}), b({n, cb, y.dim(2), y.dim(3)});
    for (int i = 0; i < n; ++i) {
        std::copy_n(y.data() + i * c * hw, ca * hw, a.data() + i * ca * hw);
        std::copy_n(y.data() + (i * c + ca) * hw, cb * hw, b.data() + i * cb * hw);
    }
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Parametric layers

/// y = x W^T + b with x [B,in].
struct Linear {
    int in = 0, out = 0;
    int weight = -1, bias = -1;

    template <class T>
    struct Cache {
        Tensor<T> x;
    };

    Linear() = default;
    Linear(ParamLayout& l, const std::string& name, int in_features, int out_features, Init winit = Init::uniform_fan_in)
        : in(in_features), out(out_features) {
        weight = l.add(name + ".weight", {out, in}, winit, in);
        bias = l.add(name + ".bias", {out}, winit == Init::zeros ? Init::zeros : Init::uniform_fan_in, in);
    }

    template <class T>
    Tensor<T> forward(const ParamStore<T>& p, const Tensor<T>& x, Cache<T>* cache) const {
        require(x.rank() == 2 && x.dim(1) == in, "Linear: expected [B," + std::to_string(in) + "], got " + x.shape_string());
        const int b = x.dim(0);
        Tensor<T> y({b, out});
        MapMat<T> ym(y.data(), b, out);
        ym.noalias() = CMapMat<T>(x.data(), b, in) * CMapMat<T>(p[weight].data(), out, in).transpose();
        ym.rowwise() += CMapVec<T>(p[bias].data(), out).transpose();
        if (cache) cache->x = x;
        return y;
    }

    template <class T>
    Tensor<T> backward(const ParamStore<T>& p, ParamStore<T>& g, const Cache<T>& c, const Tensor<T>& dy) const {
        const int b = dy.dim(0);
        CMapMat<T> dym(dy.data(), b, out);
        MapMat<T>(g[weight].data(), out, in).noalias() += dym.transpose() * CMapMat<T>(c.x.data(), b, in);
        MapVec<T>(g[bias].data(), out) += dym.colwise().sum().transpose();
        Tensor<T> dx({b, in});
        MapMat<T>(dx.data(), b, in).noalias() = dym * CMapMat<T>(p[weight].data(), out, in);
        return dx;
    }
};

/// Stride-1 convolution with square kernel k (1 or 3) and same padding, via im2col + GEMM.
struct Conv2d {
    int in = 0, out = 0, k = 3;
    int weight = -1, bias = -1;

    template <class T>
    struct Cache {
        AlignedVector<T> cols;
        std::vector<int> in_shape;
    };

    Conv2d() = default;
    Conv2d(ParamLayout& l, const std::string& name, int in_ch, int out_ch, int kernel, Init winit = Init::uniform_fan_in)
        : in(in_ch), out(out_ch), k(kernel) {
        require(k == 1 || k == 3, "Conv2d: kernel must be 1 or 3");
        weight = l.add(name + ".weight", {out, in * k * k}, winit, in * k * k);
        bias = l.add(name + ".bias", {out}, winit == Init::zeros ? Init::zeros : Init::uniform_fan_in, in * k * k);
    }

    template <class T>
    void im2col(const T* x, int h, int w, T* col) const {
        if (k == 1) {
            std::copy_n(x, static_cast<std::size_t>(in) * h * w, col);
            return;
        }
        const int hw = h * w;
        for (int c = 0; c < in; ++c)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    T* row = col + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * hw;
                    const T* src = x + static_cast<std::size_t>(c) * hw;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - 1;
                        for (int xx = 0; xx < w; ++xx) {
                            const int sx = xx + kx - 1;
                            row[y * w + xx] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : T(0);
                        }
                    }
                }
    }

    template <class T>
    void col2im(const T* col, int h, int w, T* dx) const {
        const int hw = h * w;
        if (k == 1) {
            for (std::size_t i = 0; i < static_cast<std::size_t>(in) * hw; ++i) dx[i] += col[i];
            return;
        }
        for (int c = 0; c < in; ++c)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const T* row = col + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * hw;
                    T* dst = dx + static_cast<std::size_t>(c) * hw;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= h) continue;
                        for (int xx = 0; xx < w; ++xx) {
                            const int sx = xx + kx - 1;
                            if (sx >= 0 && sx < w) dst[sy * w + sx] += row[y * w + xx];
                        }
                    }
                }
    }

    template <class T>
    Tensor<T> forward(const ParamStore<T>& p, const Tensor<T>& x, Cache<T>* cache) const {
        require(x.rank() == 4 && x.dim(1) == in,
                "Conv2d: expected [B," + std::to_string(in) + ",H,W], got " + x.shape_string());
        const int b = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w, kk = in * k * k;
        Tensor<T> y({b, out, h, w});
        AlignedVector<T> local;
        T* cols = nullptr;
        if (cache) {
            cache->cols.resize(static_cast<std::size_t>(b) * kk * hw);
            cache->in_shape = x.shape();
            cols = cache->cols.data();
        } else {
            local.resize(static_cast<std::size_t>(kk) * hw);
            cols = local.data();
        }
        CMapMat<T> wm(p[weight].data(), out, kk);
        CMapVec<T> bv(p[bias].data(), out);
        for (int n = 0; n < b; ++n) {
            T* col = cache ? cols + static_cast<std::size_t>(n) * kk * hw : cols;
            im2col(x.data() + static_cast<std::size_t>(n) * in * hw, h, w, col);
            MapMat<T> ym(y.data() + static_cast<std::size_t>(n) * out * hw, out, hw);
            ym.noalias() = wm * CMapMat<T>(col, kk, hw);
            ym.colwise() += bv;
        }
        return y;
    }

    template <class T>
    Tensor<T> backward(const ParamStore<T>& p, ParamStore<T>& g, const Cache<T>& c, const Tensor<T>& dy) const {
        const int b = c.in_shape[0], h = c.in_shape[2], w = c.in_shape[3], hw = h * w, kk = in * k * k;
        Tensor<T> dx(c.in_shape);
        AlignedVector<T> dcol(static_cast<std::size_t>(kk) * hw);
        CMapMat<T> wm(p[weight].data(), out, kk);
        MapMat<T> gw(g[weight].data(), out, kk);
        MapVec<T> gb(g[bias].data(), out);
        for (int n = 0; n < b; ++n) {
            CMapMat<T> dym(dy.data() + static_cast<std::size_t>(n) * out * hw, out, hw);
            CMapMat<T> col(c.cols.data() + static_cast<std::size_t>(n) * kk * hw, kk, hw);
            gw.noalias() += dym * col.transpose();
            gb += dym.rowwise().sum();
            MapMat<T>(dcol.data(), kk, hw).noalias() = wm.transpose() * dym;
            col2im(dcol.data(), h, w, dx.data() + static_cast<std::size_t>(n) * in * hw);
        }
        return dx;
    }
};

struct GroupNorm {
    int channels = 0, groups = 1;
    int gamma = -1, beta = -1;
    double eps = 1e-5;

    template <class T>
    struct Cache {
        Tensor<T> xhat;
        std::vector<T> inv_std;
    };

    GroupNorm() = default;
    GroupNorm(ParamLayout& l, const std::string& name, int ch, int g) : channels(ch), groups(g) {
        require(g >= 1 && ch % g == 0, "GroupNorm: channels must be divisible by groups");
        gamma = l.add(name + ".gamma", {ch}, Init::ones);
        beta = l.add(name + ".beta", {ch}, Init::zeros);
    }

    template <class T>
    Tensor<T> forward(const ParamStore<T>& p, const Tensor<T>& x, Cache<T>* cache) const {
        require(x.rank() == 4 && x.dim(1) == channels, "GroupNorm: channel mismatch " + x.shape_string());
        const int b = x.dim(0), hw = x.dim(2) * x.dim(3), cg = channels / groups;
        const std::size_t gsize = static_cast<std::size_t>(cg) * hw;
        Tensor<T> y(x.shape());
        if (cache) {
            cache->xhat = Tensor<T>(x.shape());
            cache->inv_std.assign(static_cast<std::size_t>(b) * groups, T(0));
        }
        for (int n = 0; n < b; ++n)
            for (int gi = 0; gi < groups; ++gi) {
                const std::size_t off = (static_cast<std::size_t>(n) * channels + gi * cg) * hw;
                const T* src = x.data() + off;
                T mean = 0;
                for (std::size_t i = 0; i < gsize; ++i) mean += src[i];
                mean /= static_cast<T>(gsize);
                T var = 0;
                for (std::size_t i = 0; i < gsize; ++i) var += (src[i] - mean) * (src[i] - mean);
                var /= static_cast<T>(gsize);
                const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                if (cache) cache->inv_std[static_cast<std::size_t>(n) * groups + gi] = inv;
                for (int cc = 0; cc < cg; ++cc) {
                    const int ch = gi * cg + cc;
                    const T ga = p[gamma][ch], be = p[beta][ch];
                    for (int i = 0; i < hw; ++i) {
                        const std::size_t idx = off + static_cast<std::size_t>(cc) * hw + i;
                        const T xh = (x[idx] - mean) * inv;
                        if (cache) cache->xhat[idx] = xh;
                        y[idx] = xh * ga + be;
                    }
                }
            }
        return y;
    }

    template <class T>
    Tensor<T> backward(const ParamStore<T>& p, ParamStore<T>& g, const Cache<T>& c, const Tensor<T>& dy) const {
        const int b = dy.dim(0), hw = dy.dim(2) * dy.dim(3), cg = channels / groups;
        const T gsize = static_cast<T>(cg * hw);
        Tensor<T> dx(dy.shape());
        for (int n = 0; n < b; ++n)
            for (int gi = 0; gi < groups; ++gi) {
                const std::size_t off = (static_cast<std::size_t>(n) * channels + gi * cg) * hw;
                T s1 = 0, s2 = 0;
                for (int cc = 0; cc < cg; ++cc) {
                    const int ch = gi * cg + cc;
                    const T ga = p[gamma][ch];
                    T dg = 0, db = 0;
                    for (int i = 0; i < hw; ++i) {
                        const std::size_t idx = off + static_cast<std::size_t>(cc) * hw + i;
                        dg += dy[idx] * c.xhat[idx];
                        db += dy[idx];
                        const T dxh = dy[idx] * ga;
                        s1 += dxh;
                        s2 += dxh * c.xhat[idx];
                    }
                    g[gamma][ch] += dg;
                    g[beta][ch] += db;
                }
                const T inv = c.inv_std[static_cast<std::size_t>(n) * groups + gi];
                for (int cc = 0; cc < cg; ++cc) {
                    const T ga = p[gamma][gi * cg + cc];
                    for (int i = 0; i < hw; ++i) {
                        const std::size_t idx = off + static_cast<std::size_t>(cc) * hw + i;
                        dx[idx] = inv * (dy[idx] * ga - s1 / gsize - c.xhat[idx] * s2 / gsize);
                    }
                }
            }
        return dx;
    }
};

} // namespace rlfseg::nn
