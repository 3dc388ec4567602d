// SPDX-License-Identifier: Apache-2.0
//
// Exact space-to-depth latent codec. Pixels in non-overlapping p x p patches
// are stacked into 3*p*p channels and mapped affinely: z = (x - offset) / scale.
#pragma once

#include <cmath>
#include <memory>
#include <mutex>
#include <string>

#include "rlfseg/errors.hpp"
#include "rlfseg/tensor.hpp"

namespace rlfseg {

/// RGB image [3, H, W], values in [0, 1].
struct RgbImage {
    Tensor<float> data;

    RgbImage() = default;
    RgbImage(int h, int w, float fill = 0.f) : data({3, h, w}, fill) {}
    explicit RgbImage(Tensor<float> t) : data(std::move(t)) {
        require(data.rank() == 3 && data.dim(0) == 3, "RgbImage: expected [3,H,W], got " + data.shape_string());
    }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Single-channel mask [H, W], values in [0, 1].
struct MaskImage {
    Tensor<float> data;

    MaskImage() = default;
    MaskImage(int h, int w, float fill = 0.f) : data({h, w}, fill) {}
    explicit MaskImage(Tensor<float> t) : data(std::move(t)) {
        require(data.rank() == 2, "MaskImage: expected [H,W], got " + data.shape_string());
    }
    int height() const { return data.dim(0); }
    int width() const { return data.dim(1); }
    float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width() + x]; }
    float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width() + x]; }
    bool fg(int y, int x) const { return at(y, x) > 0.5f; }
    bool contains_pixel(int y, int x) const { return y >= 0 && y < height() && x >= 0 && x < width(); }
    bool in_range() const {
        for (float v : data) if (!(v >= 0.f && v <= 1.f)) return false;
        return true;
    }
    bool is_binary() const {
        for (float v : data) if (v != 0.f && v != 1.f) return false;
        return true;
    }
    std::size_t foreground_count() const {
        std::size_t n = 0;
        for (float v : data) n += v > 0.5f;
        return n;
    }
    friend bool operator==(const MaskImage&, const MaskImage&) = default;
};

enum class LatentSpace { image, mask };

/// Latent array [C, H/p, W/p].
struct LatentGrid {
    Tensor<float> data;
    LatentSpace space = LatentSpace::image;

    int channels() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
    bool same_shape(const LatentGrid& o) const { return data.shape() == o.data.shape(); }
};

struct CodecConfig {
    int patch = 4;
    int height = 64;
    int width = 64;
    float offset = 0.5f;
    float scale = 0.5f;

    int latent_channels() const { return 3 * patch * patch; }
    int latent_height() const { return height / patch; }
    int latent_width() const { return width / patch; }
    std::vector<int> latent_shape() const { return {latent_channels(), latent_height(), latent_width()}; }
};

class LatentCodec {
public:
    explicit LatentCodec(CodecConfig cfg = {}) : cfg_(cfg), black_(std::make_shared<BlackCache>()) {
        require(cfg_.patch >= 1, "LatentCodec: patch size must be >= 1");
        require(cfg_.scale > 0.f, "LatentCodec: scale must be positive");
        require(cfg_.height % cfg_.patch == 0 && cfg_.width % cfg_.patch == 0,
                "LatentCodec: image size must be divisible by patch size");
    }

    const CodecConfig& config() const noexcept { return cfg_; }

    LatentGrid encode_image(const RgbImage& img) const {
        const int h = img.height(), w = img.width(), p = cfg_.patch;
        if (h % p != 0 || w % p != 0)
            throw InvalidArgument("encode_image: size " + std::to_string(h) + "x" + std::to_string(w) +
                                  " not divisible by patch size " + std::to_string(p));
        for (float v : img.data)
            if (!(v >= 0.f && v <= 1.f)) throw InvalidArgument("encode_image: pixel values must lie in [0,1]");
        const int hl = h / p, wl = w / p;
        LatentGrid z{Tensor<float>({3 * p * p, hl, wl}), LatentSpace::image};
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int ch = (c * p + y % p) * p + x % p;
                    z.data[(static_cast<std::size_t>(ch) * hl + y / p) * wl + x / p] =
                        (img.at(c, y, x) - cfg_.offset) / cfg_.scale;
                }
        return z;
    }

    /// Masks are rendered white-on-black in all three channels, then encoded as images.
    LatentGrid encode_mask(const MaskImage& m) const {
        if (!m.in_range()) throw InvalidArgument("encode_mask: mask values must lie in [0,1]");
        RgbImage img(m.height(), m.width());
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < m.height(); ++y)
                for (int x = 0; x < m.width(); ++x) img.at(c, y, x) = m.at(y, x);
        LatentGrid z = encode_image(img);
        z.space = LatentSpace::mask;
        return z;
    }

    /// Inverse rearrangement without clamping.
    RgbImage decode_image(const LatentGrid& z) const {
        if (!z.data.all_finite()) throw NumericalError("decode: latent contains non-finite values");
        const int p = cfg_.patch;
        require(z.channels() == 3 * p * p, "decode: channel count does not match patch size");
        const int hl = z.height(), wl = z.width();
        RgbImage img(hl * p, wl * p);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < hl * p; ++y)
                for (int x = 0; x < wl * p; ++x) {
                    const int ch = (c * p + y % p) * p + x % p;
                    img.at(c, y, x) =
                        z.data[(static_cast<std::size_t>(ch) * hl + y / p) * wl + x / p] * cfg_.scale + cfg_.offset;
                }
        return img;
    }

    /// Channel-averaged grayscale clamped to [0,1]; binarized (v >= threshold) when threshold >= 0.
    MaskImage decode_to_mask(const LatentGrid& z, float threshold) const {
        const RgbImage img = decode_image(z);
        MaskImage m(img.height(), img.width());
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x) {
                float v = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.f;
                v = std::clamp(v, 0.f, 1.f);
                if (threshold >= 0.f) v = v >= threshold ? 1.f : 0.f;
                m.at(y, x) = v;
            }
        return m;
    }

    /// Latent of a pure black image at the configured size. Computed once.
    const LatentGrid& black_reference() const {
        std::call_once(black_->once, [&] {
            black_->grid = encode_image(RgbImage(cfg_.height, cfg_.width, 0.f));
        });
        return black_->grid;
    }

    const LatentGrid& black_reference(const std::vector<int>& shape) const {
        const LatentGrid& b = black_reference();
        require(b.data.shape() == shape, "black_reference: shape " + Tensor<float>(shape).shape_string() +
                                             " does not match configured latent shape " + b.data.shape_string());
        return b;
    }

private:
    struct BlackCache {
        std::once_flag once;
        LatentGrid grid;
    };

    CodecConfig cfg_;
    std::shared_ptr<BlackCache> black_;
};

} // namespace rlfseg
