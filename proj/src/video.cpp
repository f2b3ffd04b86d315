#include "dcsam/video.hpp"

#include "dcsam/errors.hpp"

namespace dcsam {

MaskTube propagate_first_frame(const Episode& support, const MaskTube& tube,
                               const ModelParams& params, const StubEncoder& encoder,
                               const ModelConfig& config)
{
    check_tube(tube);
    if (tube.length() == 0) throw InvalidArgument("empty tube");
    const std::size_t stride = encoder.config().stride;
    const EncodedPair pair =
        encode_pair(encoder, support.support_image, support.support_mask, tube.frames[0]);
    const GeneratedPrompts generated = generate_prompts(params, pair, config);

    MaskTube out;
    out.class_id = tube.class_id;
    out.seed = tube.seed;
    out.transforms = tube.transforms;
    out.frames = tube.frames;
    for (std::size_t t = 0; t < tube.length(); ++t) {
        const Tensor& sam = t == 0 ? pair.query.sam : encoder.encode(tube.frames[t]).sam;
        out.masks.push_back(
            upsample_nearest(binarize(decode(generated.prompts, sam, config.decoder)), stride));
    }
    return out;
}

FrameScores per_frame_scores(const MaskTube& predicted, const MaskTube& truth, std::size_t tol)
{
    if (predicted.length() != truth.length())
        throw FrameCountMismatch(std::to_string(predicted.length()) + " vs " +
                                 std::to_string(truth.length()) + " frames");
    FrameScores s;
    for (std::size_t t = 0; t < truth.length(); ++t) {
        s.j.push_back(iou(predicted.masks[t], truth.masks[t]));
        s.f.push_back(boundary_f(predicted.masks[t], truth.masks[t], tol));
    }
    return s;
}

MetricReport jf_score(const MaskTube& predicted, const MaskTube& truth, std::size_t tol)
{
    MetricReport r = jf_score(predicted.masks, truth.masks, tol);
    r.per_class_iou[truth.class_id] = r.j;
    r.miou = r.j;
    return r;
}

}  // namespace dcsam
