// SPDX-License-Identifier: Apache-2.0
//
// Conditional U-shaped velocity network v(z, t, c).
//
//   conv_in -> enc1 --------------------------------------------> cat -> dec1 -> out
//               \-> pool -> enc2 ----------------------> cat -> dec2 -/
//                           \-> pool -> enc3 -> mid -> up -/
//
// Every residual block adds a projection of the time embedding and applies a
// feature-wise affine modulation (scale, shift) predicted from the prompt
// embedding. The output convolution and a 1x1 input-to-output skip are both
// zero-initialized, so a fresh network is the zero field.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "rlfseg/nn.hpp"
#include "rlfseg/prompt.hpp"

namespace rlfseg {

struct FlowNetConfig {
    int latent_channels = 48;
    int latent_height = 16;
    int latent_width = 16;
    int ch1 = 32;
    int ch2 = 64;
    int ch3 = 128;
    int groups = 8;
    int time_dim = 64;
    int cond_dim = 64;
    int emb_dim = 128;
    int vocab_size = 32;

    std::vector<int> latent_shape() const { return {latent_channels, latent_height, latent_width}; }
    friend bool operator==(const FlowNetConfig&, const FlowNetConfig&) = default;
};

/// Sinusoidal features of t in [0,1]: [sin(w_k s), cos(w_k s)] with s = 1000 t and
/// log-spaced w_k = 10000^(-k/half).
template <class T>
std::vector<T> time_embedding(T t, int dim) {
    const int half = dim / 2;
    std::vector<T> e(static_cast<std::size_t>(dim), T(0));
    for (int k = 0; k < half; ++k) {
        const double w = std::exp(-std::log(10000.0) * k / half);
        const double a = 1000.0 * static_cast<double>(t) * w;
        e[k] = static_cast<T>(std::sin(a));
        e[half + k] = static_cast<T>(std::cos(a));
    }
    return e;
}

namespace detail {

struct ResBlock {
    int in = 0, out = 0;
    nn::GroupNorm norm1;
    nn::Conv2d conv1;
    nn::Linear time_proj;
    nn::GroupNorm norm2;
    nn::Linear film;
    nn::Conv2d conv2;
    nn::Conv2d skip;
    bool has_skip = false;

    template <class T>
    struct Cache {
        typename nn::GroupNorm::Cache<T> n1, n2;
        typename nn::Conv2d::Cache<T> c1, c2, sk;
        typename nn::Linear::Cache<T> tp, fm;
        Tensor<T> a1;    // norm1 output
        Tensor<T> n2out; // norm2 output
        Tensor<T> mod;   // modulated, pre-activation
        Tensor<T> film_out;
    };

    ResBlock() = default;
    ResBlock(nn::ParamLayout& l, const std::string& name, int in_ch, int out_ch, int groups, int emb)
        : in(in_ch), out(out_ch),
          norm1(l, name + ".norm1", in_ch, groups),
          conv1(l, name + ".conv1", in_ch, out_ch, 3),
          time_proj(l, name + ".time_proj", emb, out_ch),
          norm2(l, name + ".norm2", out_ch, groups),
          film(l, name + ".film", emb, 2 * out_ch),
          conv2(l, name + ".conv2", out_ch, out_ch, 3),
          has_skip(in_ch != out_ch) {
        if (has_skip) skip = nn::Conv2d(l, name + ".skip", in_ch, out_ch, 1);
    }

    template <class T>
    Tensor<T> forward(const nn::ParamStore<T>& p, const Tensor<T>& x, const Tensor<T>& temb, const Tensor<T>& cemb,
                      Cache<T>* c) const {
        const int b = x.dim(0), hw = x.dim(2) * x.dim(3);
        Tensor<T> a1 = norm1.forward(p, x, c ? &c->n1 : nullptr);
        Tensor<T> h = conv1.forward(p, nn::silu(a1), c ? &c->c1 : nullptr);
        const Tensor<T> tp = time_proj.forward(p, temb, c ? &c->tp : nullptr);
        for (int n = 0; n < b; ++n)
            for (int ch = 0; ch < out; ++ch) {
                T* dst = h.data() + (static_cast<std::size_t>(n) * out + ch) * hw;
                const T v = tp[static_cast<std::size_t>(n) * out + ch];
                for (int i = 0; i < hw; ++i) dst[i] += v;
            }
        Tensor<T> n2 = norm2.forward(p, h, c ? &c->n2 : nullptr);
        Tensor<T> fo = film.forward(p, cemb, c ? &c->fm : nullptr);
        Tensor<T> mod(n2.shape());
        for (int n = 0; n < b; ++n)
            for (int ch = 0; ch < out; ++ch) {
                const T scale = T(1) + fo[static_cast<std::size_t>(n) * 2 * out + ch];
                const T shift = fo[static_cast<std::size_t>(n) * 2 * out + out + ch];
                const std::size_t off = (static_cast<std::size_t>(n) * out + ch) * hw;
                for (int i = 0; i < hw; ++i) mod[off + i] = n2[off + i] * scale + shift;
            }
        Tensor<T> y = conv2.forward(p, nn::silu(mod), c ? &c->c2 : nullptr);
        if (has_skip)
            nn::add_inplace(y, skip.forward(p, x, c ? &c->sk : nullptr));
        else
            nn::add_inplace(y, x);
        if (c) {
            c->a1 = std::move(a1);
            c->n2out = std::move(n2);
            c->mod = std::move(mod);
            c->film_out = std::move(fo);
        }
        return y;
    }

    /// Returns dx; accumulates into d_temb and d_cemb.
    template <class T>
    Tensor<T> backward(const nn::ParamStore<T>& p, nn::ParamStore<T>& g, const Cache<T>& c, const Tensor<T>& dy,
                       Tensor<T>& d_temb, Tensor<T>& d_cemb) const {
        const int b = dy.dim(0), hw = dy.dim(2) * dy.dim(3);
        Tensor<T> dx = has_skip ? skip.backward(p, g, c.sk, dy) : dy;

        const Tensor<T> dmod = nn::silu_backward(c.mod, conv2.backward(p, g, c.c2, dy));
        Tensor<T> dn2(dmod.shape());
        Tensor<T> dfo({b, 2 * out});
        for (int n = 0; n < b; ++n)
            for (int ch = 0; ch < out; ++ch) {
                const T scale = T(1) + c.film_out[static_cast<std::size_t>(n) * 2 * out + ch];
                const std::size_t off = (static_cast<std::size_t>(n) * out + ch) * hw;
                T ds = 0, dsh = 0;
                for (int i = 0; i < hw; ++i) {
                    dn2[off + i] = dmod[off + i] * scale;
                    ds += dmod[off + i] * c.n2out[off + i];
                    dsh += dmod[off + i];
                }
                dfo[static_cast<std::size_t>(n) * 2 * out + ch] = ds;
                dfo[static_cast<std::size_t>(n) * 2 * out + out + ch] = dsh;
            }
        nn::add_inplace(d_cemb, film.backward(p, g, c.fm, dfo));

        const Tensor<T> dh = norm2.backward(p, g, c.n2, dn2);
        Tensor<T> dtp({b, out});
        for (int n = 0; n < b; ++n)
            for (int ch = 0; ch < out; ++ch) {
                const T* src = dh.data() + (static_cast<std::size_t>(n) * out + ch) * hw;
                T s = 0;
                for (int i = 0; i < hw; ++i) s += src[i];
                dtp[static_cast<std::size_t>(n) * out + ch] = s;
            }
        nn::add_inplace(d_temb, time_proj.backward(p, g, c.tp, dtp));

        const Tensor<T> da1 = nn::silu_backward(c.a1, conv1.backward(p, g, c.c1, dh));
        nn::add_inplace(dx, norm1.backward(p, g, c.n1, da1));
        return dx;
    }
};

} // namespace detail

/// Prompt token ids per batch element.
using PromptBatch = std::vector<std::vector<int>>;

class FlowNet {
public:
    template <class T>
    struct Cache {
        typename nn::Linear::Cache<T> t1, t2, c1, c2;
        Tensor<T> t1_out, t2_out, c1_out, c2_out;
        typename nn::Conv2d::Cache<T> conv_in, conv_out, skip_in;
        typename detail::ResBlock::Cache<T> enc1, enc2, enc3, mid, dec2, dec1;
        typename nn::GroupNorm::Cache<T> norm_out;
        Tensor<T> norm_out_y;
        PromptBatch prompts;
    };

    explicit FlowNet(FlowNetConfig cfg = {}) : cfg_(cfg) {
        require(cfg_.latent_height % 4 == 0 && cfg_.latent_width % 4 == 0,
                "FlowNet: latent spatial size must be divisible by 4");
        require(cfg_.time_dim % 2 == 0, "FlowNet: time_dim must be even");
        auto& l = layout_;
        const int e = cfg_.emb_dim, g = cfg_.groups;
        embedding_ = l.add("prompt.embedding", {cfg_.vocab_size, cfg_.cond_dim}, nn::Init::uniform_fan_in, 1);
        time1_ = nn::Linear(l, "time.fc1", cfg_.time_dim, e);
        time2_ = nn::Linear(l, "time.fc2", e, e);
        cond1_ = nn::Linear(l, "cond.fc1", cfg_.cond_dim, e);
        cond2_ = nn::Linear(l, "cond.fc2", e, e);
        conv_in_ = nn::Conv2d(l, "conv_in", cfg_.latent_channels, cfg_.ch1, 3);
        enc1_ = detail::ResBlock(l, "enc1", cfg_.ch1, cfg_.ch1, g, e);
        enc2_ = detail::ResBlock(l, "enc2", cfg_.ch1, cfg_.ch2, g, e);
        enc3_ = detail::ResBlock(l, "enc3", cfg_.ch2, cfg_.ch3, g, e);
        mid_ = detail::ResBlock(l, "mid", cfg_.ch3, cfg_.ch3, g, e);
        dec2_ = detail::ResBlock(l, "dec2", cfg_.ch3 + cfg_.ch2, cfg_.ch2, g, e);
        dec1_ = detail::ResBlock(l, "dec1", cfg_.ch2 + cfg_.ch1, cfg_.ch1, g, e);
        norm_out_ = nn::GroupNorm(l, "norm_out", cfg_.ch1, g);
        conv_out_ = nn::Conv2d(l, "conv_out", cfg_.ch1, cfg_.latent_channels, 3, nn::Init::zeros);
        skip_in_ = nn::Conv2d(l, "skip_in", cfg_.latent_channels, cfg_.latent_channels, 1, nn::Init::zeros);
    }

    const FlowNetConfig& config() const noexcept { return cfg_; }
    const nn::ParamLayout& layout() const noexcept { return layout_; }
    int embedding_slot() const noexcept { return embedding_; }

    template <class T>
    nn::ParamStore<T> init_params(std::uint64_t seed) const {
        return nn::materialize<T>(layout_, seed);
    }

    /// Checks names and shapes against this architecture.
    template <class T>
    bool compatible(const nn::ParamStore<T>& p) const {
        if (p.size() != layout_.size()) return false;
        for (int i = 0; i < p.size(); ++i) {
            const auto& s = layout_.specs()[static_cast<std::size_t>(i)];
            if (p.names[static_cast<std::size_t>(i)] != s.name || p[i].shape() != s.shape) return false;
        }
        return true;
    }

    /// Mean-pooled prompt embeddings [B, cond_dim].
    template <class T>
    Tensor<T> embed(const nn::ParamStore<T>& p, const PromptBatch& prompts) const {
        Tensor<T> c({static_cast<int>(prompts.size()), cfg_.cond_dim});
        for (std::size_t n = 0; n < prompts.size(); ++n) {
            const auto e = embed_prompt<T>(prompts[n], p[embedding_]);
            std::copy(e.begin(), e.end(), c.data() + n * cfg_.cond_dim);
        }
        return c;
    }

    /// v(z, t, c) for a batch z [B,C,H,W], t [B], c [B,cond_dim].
    template <class T>
    Tensor<T> forward_embedded(const nn::ParamStore<T>& p, const Tensor<T>& z, std::span<const T> t,
                               const Tensor<T>& c, Cache<T>* cache) const {
        check_input(z, t);
        require(c.rank() == 2 && c.dim(0) == z.dim(0) && c.dim(1) == cfg_.cond_dim,
                "FlowNet: condition must be [B," + std::to_string(cfg_.cond_dim) + "], got " + c.shape_string());
        const int b = z.dim(0);

        Tensor<T> tfeat({b, cfg_.time_dim});
        for (int n = 0; n < b; ++n) {
            const auto e = time_embedding<T>(t[static_cast<std::size_t>(n)], cfg_.time_dim);
            std::copy(e.begin(), e.end(), tfeat.data() + static_cast<std::size_t>(n) * cfg_.time_dim);
        }
        Tensor<T> t1 = time1_.forward(p, tfeat, cache ? &cache->t1 : nullptr);
        Tensor<T> t2 = time2_.forward(p, nn::silu(t1), cache ? &cache->t2 : nullptr);
        const Tensor<T> temb = nn::silu(t2);
        Tensor<T> c1 = cond1_.forward(p, c, cache ? &cache->c1 : nullptr);
        Tensor<T> c2 = cond2_.forward(p, nn::silu(c1), cache ? &cache->c2 : nullptr);
        const Tensor<T> cemb = nn::silu(c2);

        const Tensor<T> h0 = conv_in_.forward(p, z, cache ? &cache->conv_in : nullptr);
        const Tensor<T> e1 = enc1_.forward(p, h0, temb, cemb, cache ? &cache->enc1 : nullptr);
        const Tensor<T> e2 = enc2_.forward(p, nn::avg_pool2(e1), temb, cemb, cache ? &cache->enc2 : nullptr);
        const Tensor<T> e3 = enc3_.forward(p, nn::avg_pool2(e2), temb, cemb, cache ? &cache->enc3 : nullptr);
        const Tensor<T> m = mid_.forward(p, e3, temb, cemb, cache ? &cache->mid : nullptr);
        const Tensor<T> d2 = dec2_.forward(p, nn::concat_channels(nn::upsample2(m), e2), temb, cemb,
                                           cache ? &cache->dec2 : nullptr);
        const Tensor<T> d1 = dec1_.forward(p, nn::concat_channels(nn::upsample2(d2), e1), temb, cemb,
                                           cache ? &cache->dec1 : nullptr);
        Tensor<T> no = norm_out_.forward(p, d1, cache ? &cache->norm_out : nullptr);
        Tensor<T> v = conv_out_.forward(p, nn::silu(no), cache ? &cache->conv_out : nullptr);
        nn::add_inplace(v, skip_in_.forward(p, z, cache ? &cache->skip_in : nullptr));

        if (cache) {
            cache->t1_out = std::move(t1);
            cache->t2_out = std::move(t2);
            cache->c1_out = std::move(c1);
            cache->c2_out = std::move(c2);
            cache->norm_out_y = std::move(no);
        }
        if (!v.all_finite()) throw NumericalError("FlowNet: non-finite velocity output");
        return v;
    }

    template <class T>
    Tensor<T> forward(const nn::ParamStore<T>& p, const Tensor<T>& z, std::span<const T> t, const PromptBatch& prompts,
                      Cache<T>* cache) const {
        require(prompts.size() == static_cast<std::size_t>(z.dim(0)), "FlowNet: one prompt per batch element required");
        if (cache) cache->prompts = prompts;
        return forward_embedded(p, z, t, embed(p, prompts), cache);
    }

    /// Backward pass for forward_embedded. Returns d/dc [B,cond_dim]; optionally writes d/dz.
    template <class T>
    Tensor<T> backward_embedded(const nn::ParamStore<T>& p, nn::ParamStore<T>& g, const Cache<T>& c,
                                const Tensor<T>& dv, Tensor<T>* dz = nullptr) const {
        const int b = dv.dim(0);
        Tensor<T> d_temb({b, cfg_.emb_dim}), d_cemb({b, cfg_.emb_dim});

        Tensor<T> dz_acc = skip_in_.backward(p, g, c.skip_in, dv);
        const Tensor<T> dno = nn::silu_backward(c.norm_out_y, conv_out_.backward(p, g, c.conv_out, dv));
        const Tensor<T> dd1 = norm_out_.backward(p, g, c.norm_out, dno);

        auto [du1, de1] = nn::split_channels(dec1_.backward(p, g, c.dec1, dd1, d_temb, d_cemb), cfg_.ch2);
        const Tensor<T> dd2 = nn::upsample2_backward(du1);
        auto [du2, de2] = nn::split_channels(dec2_.backward(p, g, c.dec2, dd2, d_temb, d_cemb), cfg_.ch3);
        const Tensor<T> dm = nn::upsample2_backward(du2);
        const Tensor<T> de3 = mid_.backward(p, g, c.mid, dm, d_temb, d_cemb);
        nn::add_inplace(de2, nn::avg_pool2_backward(enc3_.backward(p, g, c.enc3, de3, d_temb, d_cemb)));
        nn::add_inplace(de1, nn::avg_pool2_backward(enc2_.backward(p, g, c.enc2, de2, d_temb, d_cemb)));
        const Tensor<T> dh0 = enc1_.backward(p, g, c.enc1, de1, d_temb, d_cemb);
        nn::add_inplace(dz_acc, conv_in_.backward(p, g, c.conv_in, dh0));
        if (dz) *dz = std::move(dz_acc);

        const Tensor<T> dt2 = nn::silu_backward(c.t2_out, d_temb);
        const Tensor<T> dt1 = nn::silu_backward(c.t1_out, time2_.backward(p, g, c.t2, dt2));
        (void)time1_.backward(p, g, c.t1, dt1);

        const Tensor<T> dc2 = nn::silu_backward(c.c2_out, d_cemb);
        const Tensor<T> dc1 = nn::silu_backward(c.c1_out, cond2_.backward(p, g, c.c2, dc2));
        return cond1_.backward(p, g, c.c1, dc1);
    }

    /// Backward pass for forward; routes d/dc into the embedding table gradient.
    template <class T>
    void backward(const nn::ParamStore<T>& p, nn::ParamStore<T>& g, const Cache<T>& c, const Tensor<T>& dv,
                  Tensor<T>* dz = nullptr) const {
        const Tensor<T> dc = backward_embedded(p, g, c, dv, dz);
        for (std::size_t n = 0; n < c.prompts.size(); ++n)
            embed_prompt_backward<T>(c.prompts[n], std::span<const T>(dc.data() + n * cfg_.cond_dim, cfg_.cond_dim),
                                     g[embedding_]);
    }

private:
    template <class T>
    void check_input(const Tensor<T>& z, std::span<const T> t) const {
        require(z.rank() == 4 && z.dim(1) == cfg_.latent_channels && z.dim(2) == cfg_.latent_height &&
                    z.dim(3) == cfg_.latent_width,
                "FlowNet: latent shape mismatch, got " + z.shape_string());
        require(t.size() == static_cast<std::size_t>(z.dim(0)), "FlowNet: one time value per batch element required");
        for (T tv : t) require(tv >= T(0) && tv <= T(1), "FlowNet: t must lie in [0,1]");
    }

    FlowNetConfig cfg_;
    nn::ParamLayout layout_;
    int embedding_ = -1;
    nn::Linear time1_, time2_, cond1_, cond2_;
    nn::Conv2d conv_in_, conv_out_, skip_in_;
    detail::ResBlock enc1_, enc2_, enc3_, mid_, dec2_, dec1_;
    nn::GroupNorm norm_out_;
};

} // namespace rlfseg
