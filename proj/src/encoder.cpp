#include "dcsam/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "dcsam/errors.hpp"
#include "dcsam/rng.hpp"

namespace dcsam {
namespace {

constexpr std::size_t kPatch = 3;

// Replicate-padded 3×3 neighbourhood of every pixel, centred at 0.5:
// returns (C·9)×(H·W) columns.
Tensor patch_columns(const Tensor& image)
{
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor cols({c * kPatch * kPatch, h * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < kPatch; ++dy)
            for (std::size_t dx = 0; dx < kPatch; ++dx) {
                const std::size_t row = (ch * kPatch + dy) * kPatch + dx;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::size_t sy = std::clamp<std::ptrdiff_t>(
                        static_cast<std::ptrdiff_t>(y + dy) - 1, 0, static_cast<std::ptrdiff_t>(h) - 1);
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::size_t sx = std::clamp<std::ptrdiff_t>(
                            static_cast<std::ptrdiff_t>(x + dx) - 1, 0, static_cast<std::ptrdiff_t>(w) - 1);
                        cols.at(row, y * w + x) = image.at(ch, sy, sx) - 0.5;
                    }
                }
            }
    return cols;
}

Tensor tanh_layer(const Tensor& w, const Tensor& b, const Tensor& cols)
{
    Tensor out = matmul(w, cols);
    for (std::size_t o = 0; o < out.dim(0); ++o)
        for (std::size_t p = 0; p < out.dim(1); ++p) out.at(o, p) = std::tanh(out.at(o, p) + b[o]);
    return out;
}

// Replicate-padded 3×3 box filter on a C×H×W map.
Tensor box_blur(const Tensor& map)
{
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    Tensor out({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const auto sy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + dy, 0, static_cast<std::ptrdiff_t>(h) - 1);
                        const auto sx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) + dx, 0, static_cast<std::ptrdiff_t>(w) - 1);
                        acc += map.at(ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                    }
                out.at(ch, y, x) = acc / 9.0;
            }
    return out;
}

void normalize_pixels(Tensor& map, double norm)
{
    const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
    for (std::size_t p = 0; p < hw; ++p) {
        double sq = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) sq += map[ch * hw + p] * map[ch * hw + p];
        const double inv = sq > 0.0 ? norm / std::sqrt(sq) : 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) map[ch * hw + p] *= inv;
    }
}

}  // namespace

StubEncoder::StubEncoder(const EncoderConfig& config) : config_(config)
{
    if (config.image_channels == 0 || config.d_mid == 0 || config.d_high == 0 ||
        config.d_sam == 0 || config.stride == 0)
        throw InvalidArgument("encoder widths and stride must be positive");
    const std::size_t fan_in = config.image_channels * kPatch * kPatch;
    CounterRng rng(derive_seed(config.seed, {0xE1C0DE}));
    CounterRng mid = rng.split(1), high = rng.split(2), sam = rng.split(3);
    const double patch_std = 2.0 / std::sqrt(static_cast<double>(fan_in));
    mid_w_ = mid.normal_tensor({config.d_mid, fan_in}, patch_std);
    mid_b_ = mid.normal_tensor({config.d_mid}, 0.3);
    high_w_ = high.normal_tensor({config.d_high, config.d_mid},
                                 1.5 / std::sqrt(static_cast<double>(config.d_mid)));
    high_b_ = high.normal_tensor({config.d_high}, 0.3);
    sam_w_ = sam.normal_tensor({config.d_sam, fan_in}, patch_std);
    sam_b_ = sam.normal_tensor({config.d_sam}, 0.3);
}

EncodedImage StubEncoder::encode(const Tensor& image) const
{
    require_rank(image, 3, "StubEncoder::encode");
    if (image.dim(0) != config_.image_channels)
        throw ShapeMismatch("encoder expects " + std::to_string(config_.image_channels) +
                            " channels, got " + shape_string(image.shape()));
    require_finite(image, "StubEncoder::encode");
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h % config_.stride != 0 || w % config_.stride != 0)
        throw ShapeMismatch("image " + shape_string(image.shape()) +
                            " is not divisible by stride " + std::to_string(config_.stride));

    const Tensor cols = patch_columns(image);
    Tensor mid = tanh_layer(mid_w_, mid_b_, cols).reshaped({config_.d_mid, h, w});
    const Tensor context = box_blur(mid).reshaped({config_.d_mid, h * w});
    Tensor high = tanh_layer(high_w_, high_b_, context).reshaped({config_.d_high, h, w});
    Tensor sam = tanh_layer(sam_w_, sam_b_, cols).reshaped({config_.d_sam, h, w});

    EncodedImage out{average_pool(mid, config_.stride), average_pool(high, config_.stride),
                     average_pool(sam, config_.stride)};
    normalize_pixels(out.sam, std::sqrt(static_cast<double>(config_.d_sam)));
    return out;
}

Tensor average_pool(const Tensor& map, std::size_t stride)
{
    require_rank(map, 3, "average_pool");
    if (stride == 1) return map;
    const std::size_t c = map.dim(0), h = map.dim(1) / stride, w = map.dim(2) / stride;
    Tensor out({c, h, w});
    const double inv = 1.0 / static_cast<double>(stride * stride);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h * stride; ++y)
            for (std::size_t x = 0; x < w * stride; ++x)
                out.at(ch, y / stride, x / stride) += map.at(ch, y, x) * inv;
    return out;
}

Tensor downsample_mask(const Tensor& mask, std::size_t stride)
{
    require_rank(mask, 2, "downsample_mask");
    if (stride == 1) return mask;
    const Tensor pooled =
        average_pool(mask.reshaped({1, mask.dim(0), mask.dim(1)}), stride);
    Tensor out({pooled.dim(1), pooled.dim(2)});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pooled[i] >= 0.5 ? 1.0 : 0.0;
    return out;
}

Tensor upsample_nearest(const Tensor& mask, std::size_t stride)
{
    require_rank(mask, 2, "upsample_nearest");
    if (stride == 1) return mask;
    const std::size_t h = mask.dim(0) * stride, w = mask.dim(1) * stride;
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.at(y, x) = mask.at(y / stride, x / stride);
    return out;
}

}  // namespace dcsam
