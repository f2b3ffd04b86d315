#pragma once

#include <cstddef>
#include <cstdint>

#include "dcsam/tensor.hpp"

namespace dcsam {

struct EncoderConfig {
    std::uint64_t seed = 7;
    std::size_t image_channels = 3;
    std::size_t d_mid = 16;
    std::size_t d_high = 16;
    std::size_t d_sam = 16;
    std::size_t stride = 1;  // average-pooling stride applied to every map
};

/// The three maps produced for one image, all at the pooled resolution.
struct EncodedImage {
    Tensor mid;   // d_mid×h×w, fused into the prompt features
    Tensor high;  // d_high×h×w, wider receptive field, drives the prior mask
    Tensor sam;   // d_sam×h×w, unit-direction features scaled to norm sqrt(d_sam)
};

/// Fixed random-feature extractor standing in for the pretrained backbones.
/// Weights are a pure function of the seed, so encode() is deterministic.
class StubEncoder {
   public:
    explicit StubEncoder(const EncoderConfig& config);

    const EncoderConfig& config() const { return config_; }
    EncodedImage encode(const Tensor& image) const;

   private:
    EncoderConfig config_;
    Tensor mid_w_, mid_b_;
    Tensor high_w_, high_b_;
    Tensor sam_w_, sam_b_;
};

/// Block-average pooling of a C×H×W map; H and W must divide by stride.
Tensor average_pool(const Tensor& map, std::size_t stride);
/// A stride×stride block is foreground when at least half of it is.
Tensor downsample_mask(const Tensor& mask, std::size_t stride);
Tensor upsample_nearest(const Tensor& mask, std::size_t stride);

}  // namespace dcsam
