#pragma once

#include <cstddef>
#include <vector>

#include "dcsam/episodes.hpp"
#include "dcsam/metrics.hpp"
#include "dcsam/pipeline.hpp"

namespace dcsam {

/// Runs the prompt generator once on frame 0 against the episode's support,
/// then decodes every frame with those frozen prompts. Stands in for memory-based
/// propagation: the prompts carry the target, only the features change per frame.
MaskTube propagate_first_frame(const Episode& support, const MaskTube& tube,
                               const ModelParams& params, const StubEncoder& encoder,
                               const ModelConfig& config);

struct FrameScores {
    std::vector<double> j;
    std::vector<double> f;
};

FrameScores per_frame_scores(const MaskTube& predicted, const MaskTube& truth, std::size_t tol);
MetricReport jf_score(const MaskTube& predicted, const MaskTube& truth, std::size_t tol);

}  // namespace dcsam
