#include <gtest/gtest.h>

#include "dcsam/errors.hpp"
#include "dcsam/video.hpp"
#include "test_support.hpp"

using namespace dcsam;

namespace {

struct Fixture {
    ModelConfig config;
    ModelParams params = init_params(config, 21);
    StubEncoder encoder{config.encoder};
    Episode episode = gen_episode(9, 17, Canvas{16, 16});
};

}  // namespace

TEST(Propagation, SingleFrameEqualsImageInference)
{
    const Fixture f;
    const MaskTube tube = make_tube(f.episode, 1, 3);
    const MaskTube pred = propagate_first_frame(f.episode, tube, f.params, f.encoder, f.config);
    const Tensor image = binarize(predict_probabilities(f.params, f.encoder, f.episode.support_image,
                                                        f.episode.support_mask, f.episode.query_image, f.config));
    ASSERT_EQ(pred.length(), 1u);
    EXPECT_EQ(pred.masks[0], image);
}

TEST(Propagation, StaticTubeGivesIdenticalFrames)
{
    const Fixture f;
    MaskTube tube;
    tube.class_id = f.episode.class_id;
    for (int t = 0; t < 4; ++t) {
        tube.frames.push_back(f.episode.query_image);
        tube.masks.push_back(f.episode.query_mask);
        tube.transforms.push_back({});
    }
    const MaskTube pred = propagate_first_frame(f.episode, tube, f.params, f.encoder, f.config);
    for (std::size_t t = 1; t < pred.length(); ++t) EXPECT_EQ(pred.masks[t], pred.masks[0]);
    const MetricReport r = jf_score(pred, pred, 1);
    EXPECT_EQ(r.jf, 1.0);
}

TEST(Propagation, OutputSatisfiesTubeInvariants)
{
    const Fixture f;
    const MaskTube tube = make_tube(f.episode, 5, 4);
    const MaskTube pred = propagate_first_frame(f.episode, tube, f.params, f.encoder, f.config);
    EXPECT_NO_THROW(check_tube(pred));
    EXPECT_EQ(pred.length(), 5u);
    const FrameScores s = per_frame_scores(pred, tube, 1);
    EXPECT_EQ(s.j.size(), 5u);
    MaskTube short_tube = tube;
    short_tube.frames.pop_back();
    short_tube.masks.pop_back();
    short_tube.transforms.pop_back();
    EXPECT_THROW(per_frame_scores(pred, short_tube, 1), FrameCountMismatch);
}
