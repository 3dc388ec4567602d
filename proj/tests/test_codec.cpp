// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "rlfseg/codec.hpp"

using namespace rlfseg;

namespace {

RgbImage random_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    RgbImage img(h, w);
    for (auto& v : img.data) v = u(rng);
    return img;
}

MaskImage checkerboard(int h, int w) {
    MaskImage m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.at(y, x) = static_cast<float>((x + y) % 2);
    return m;
}

} // namespace

TEST(Codec, BlackImageEncodesToConstantOffset) {
    const LatentCodec codec;
    const auto z = codec.encode_image(RgbImage(64, 64, 0.f));
    EXPECT_EQ(z.data.shape(), (std::vector<int>{48, 16, 16}));
    for (float v : z.data) EXPECT_EQ(v, -1.f);
}

TEST(Codec, RoundTripIsExactToFloatPrecision) {
    const LatentCodec codec;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto img = random_image(64, 64, s);
        EXPECT_LT(max_abs_diff(codec.decode_image(codec.encode_image(img)).data, img.data), 1e-6f);
    }
}

// Space-to-depth index map: pixel (c, y, x) -> channel (c*p + y%p)*p + x%p at site (y/p, x/p).
TEST(Codec, SinglePixelTouchesOneLatentSite) {
    const LatentCodec codec;
    RgbImage img(64, 64, 0.f);
    img.at(0, 0, 0) = 1.f;
    const auto z = codec.encode_image(img);
    int changed_sites = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            bool changed = false;
            for (int c = 0; c < 48; ++c) changed |= z.data[(static_cast<std::size_t>(c) * 16 + y) * 16 + x] != -1.f;
            if (changed) {
                ++changed_sites;
                EXPECT_EQ(y, 0);
                EXPECT_EQ(x, 0);
            }
        }
    EXPECT_EQ(changed_sites, 1);
    EXPECT_EQ(z.data[0], 1.f);
    for (int c = 1; c < 48; ++c) EXPECT_EQ(z.data[static_cast<std::size_t>(c) * 256], -1.f);

    // interior pixel of the second patch row/column lands on a distinct channel
    RgbImage img2(64, 64, 0.f);
    img2.at(2, 5, 6) = 1.f;
    const auto z2 = codec.encode_image(img2);
    const int ch = (2 * 4 + 1) * 4 + 2;
    EXPECT_EQ(z2.data[(static_cast<std::size_t>(ch) * 16 + 1) * 16 + 1], 1.f);
}

TEST(Codec, RejectsIndivisibleSizeAndOutOfRange) {
    const LatentCodec codec;
    EXPECT_THROW(codec.encode_image(RgbImage(62, 64)), InvalidArgument);
    EXPECT_THROW(codec.encode_image(RgbImage(64, 64, 1.5f)), InvalidArgument);
    MaskImage m(64, 64, 0.f);
    m.at(3, 3) = -0.1f;
    EXPECT_THROW(codec.encode_mask(m), InvalidArgument);
    EXPECT_THROW(LatentCodec(CodecConfig{.patch = 3}), InvalidArgument);
}

TEST(Codec, MaskLatentsMatchBlackReference) {
    const LatentCodec codec;
    const auto zero = codec.encode_mask(MaskImage(64, 64, 0.f));
    EXPECT_EQ(zero.data, codec.black_reference().data);
    EXPECT_EQ(zero.space, LatentSpace::mask);
    const auto ones = codec.encode_mask(MaskImage(64, 64, 1.f));
    for (float v : ones.data) EXPECT_EQ(v, 1.f);
    EXPECT_FALSE(ones.data == codec.black_reference().data);
}

TEST(Codec, BlackReferenceIsCachedAndShapeChecked) {
    const LatentCodec codec;
    const auto& a = codec.black_reference();
    const auto& b = codec.black_reference({48, 16, 16});
    EXPECT_EQ(&a, &b);
    EXPECT_EQ(a.data.shape(), (std::vector<int>{48, 16, 16}));
    EXPECT_THROW(codec.black_reference({48, 8, 8}), InvalidArgument);
    const LatentCodec copy = codec;
    EXPECT_EQ(copy.black_reference().data, a.data);
}

TEST(Codec, CheckerboardRoundTripsThroughThreshold) {
    const LatentCodec codec;
    const auto m = checkerboard(64, 64);
    EXPECT_EQ(codec.decode_to_mask(codec.encode_mask(m), 0.5f), m);
}

TEST(Codec, DecodeBlackReferenceIsAllZeros) {
    const LatentCodec codec;
    const auto m = codec.decode_to_mask(codec.black_reference(), -1.f);
    for (float v : m.data) EXPECT_EQ(v, 0.f);
}

TEST(Codec, MidpointOfWhiteAndBlackDecodesToHalfGray) {
    const LatentCodec codec;
    const auto w = codec.encode_mask(MaskImage(64, 64, 1.f));
    const auto b = codec.encode_mask(MaskImage(64, 64, 0.f));
    LatentGrid mid = w;
    for (std::size_t i = 0; i < mid.data.size(); ++i) mid.data[i] = 0.5f * (w.data[i] + b.data[i]);
    const auto m = codec.decode_to_mask(mid, -1.f);
    for (float v : m.data) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Codec, DecodeClampsGrayscaleAndRejectsNonFinite) {
    const LatentCodec codec;
    LatentGrid z = codec.encode_mask(MaskImage(64, 64, 1.f));
    for (auto& v : z.data) v = 3.f;
    for (float v : codec.decode_to_mask(z, -1.f).data) EXPECT_EQ(v, 1.f);
    z.data[5] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(codec.decode_to_mask(z, 0.5f), NumericalError);
}

// encode(a x + b y) - (a encode(x) + b encode(y)) is the constant -(1 - a - b) * offset / scale.
TEST(Codec, EncodeIsAffine) {
    const LatentCodec codec;
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<float> u(0.f, 0.5f);
    for (int k = 0; k < 10; ++k) {
        const auto x = random_image(64, 64, 100 + k), y = random_image(64, 64, 200 + k);
        const float a = u(rng), b = u(rng);
        RgbImage mix(64, 64);
        for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
        const auto zx = codec.encode_image(x), zy = codec.encode_image(y), zm = codec.encode_image(mix);
        const float expected = -(1.f - a - b) * 0.5f / 0.5f;
        for (std::size_t i = 0; i < zm.data.size(); ++i)
            ASSERT_NEAR(zm.data[i] - (a * zx.data[i] + b * zy.data[i]), expected, 1e-6f);
    }
}
