#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "dcsam/dcst.hpp"
#include "dcsam/episodes.hpp"
#include "dcsam/errors.hpp"
#include "dcsam/metrics.hpp"
#include "test_support.hpp"

using namespace dcsam;
namespace fs = std::filesystem;

namespace {

double count(const Tensor& m)
{
    double s = 0;
    for (double v : m.data()) s += v;
    return s;
}

bool binary(const Tensor& m)
{
    for (double v : m.data())
        if (v != 0.0 && v != 1.0) return false;
    return true;
}

fs::path scratch_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("dcsam_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Folds, TwentyClassConvention)
{
    std::vector<int> ids(20);
    for (int i = 0; i < 20; ++i) ids[i] = i;
    EXPECT_EQ(split_folds(ids, 0).test_classes, (std::vector<int>{0, 1, 2, 3, 4}));
    EXPECT_EQ(split_folds(ids, 3).test_classes, (std::vector<int>{15, 16, 17, 18, 19}));
}

TEST(Folds, DisjointAndCovering)
{
    for (int k = 0; k < kFoldCount; ++k) {
        const FoldSplit s = split_folds(all_classes(), k);
        std::set<int> train(s.train_classes.begin(), s.train_classes.end());
        std::set<int> all = train;
        for (int c : s.test_classes) {
            EXPECT_FALSE(train.count(c));
            all.insert(c);
        }
        EXPECT_EQ(all.size(), static_cast<std::size_t>(kNumClasses));
        EXPECT_EQ(s.test_classes.size(), 4u);
    }
    // Fold 0 trains on the classes of folds 1, 2 and 3.
    EXPECT_EQ(split_folds(all_classes(), 0).train_classes.front(), 4);
    EXPECT_THROW(split_folds({0, 1, 2}, 0), NonDivisibleClassCount);
    EXPECT_THROW(split_folds(all_classes(), 4), InvalidArgument);
}

TEST(Episodes, DeterministicPureFunction)
{
    const Episode a = gen_episode(7, 42), b = gen_episode(7, 42);
    EXPECT_EQ(a.support_image, b.support_image);
    EXPECT_EQ(a.query_mask, b.query_mask);
    const Episode c = gen_episode(7, 43);
    EXPECT_FALSE(a.support_image == c.support_image);
}

TEST(Episodes, GeneratorContract)
{
    for (const Canvas canvas : {Canvas{24, 24}, Canvas{8, 8}, Canvas{16, 20}}) {
        const double hw = static_cast<double>(canvas.height * canvas.width);
        for (int cls = 0; cls < kNumClasses; ++cls)
            for (std::uint64_t s = 0; s < 5; ++s) {
                const Episode e = gen_episode(cls, s, canvas);
                EXPECT_EQ(e.class_id, cls);
                EXPECT_EQ(e.support_image.shape(), (Shape{3, canvas.height, canvas.width}));
                for (const Tensor* m : {&e.support_mask, &e.query_mask}) {
                    EXPECT_TRUE(binary(*m));
                    EXPECT_GE(count(*m), 0.02 * hw);
                    EXPECT_LE(count(*m), 0.5 * hw);
                }
                for (double v : e.query_image.data()) {
                    EXPECT_GE(v, 0.0);
                    EXPECT_LE(v, 1.0);
                }
            }
    }
    EXPECT_THROW(gen_episode(kNumClasses, 0), UnknownClass);
    EXPECT_THROW(gen_episode(0, 0, Canvas{4, 4}), InvalidArgument);
}

TEST(Episodes, DistractorOverlapAudit)
{
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const int cls = static_cast<int>(s % kNumClasses);
        const RenderedImage r = render_scene(cls, s, Canvas{});
        ASSERT_FALSE(r.distractor_masks.empty());
        const double area = count(r.target_mask);
        for (std::size_t k = 0; k < r.distractor_masks.size(); ++k) {
            EXPECT_NE(r.distractor_classes[k], cls);
            double overlap = 0;
            for (std::size_t i = 0; i < r.target_mask.size(); ++i)
                overlap += r.target_mask[i] * r.distractor_masks[k][i];
            EXPECT_LE(overlap, 0.1 * area) << "seed " << s;
        }
    }
}

TEST(Episodes, BundleRoundTrip)
{
    const fs::path dir = scratch_dir("bundle");
    const Episode e = gen_episode(3, 5);
    write_episode_bundle(dir, e);
    const Episode r = read_episode_bundle(dir);
    EXPECT_EQ(r.class_id, 3);
    EXPECT_EQ(r.seed, 5u);
    EXPECT_EQ(r.query_mask, e.query_mask);
    EXPECT_LE(max_abs_diff(r.support_image, e.support_image), 1e-7);
    fs::remove_all(dir);
    EXPECT_THROW(read_episode_bundle(dir), IoError);
}

TEST(Warp, IdentityAndInverseTranslation)
{
    const Episode e = gen_episode(2, 8);
    EXPECT_EQ(warp(e.query_mask, TransformSpec{}), e.query_mask);
    const Tensor moved = warp(e.query_mask, TransformSpec{2, -1, false, 10});
    const Tensor back = warp(moved, TransformSpec{-2, 1, false, 10});
    // Wherever the round trip stayed on the canvas it reproduces the original.
    const std::size_t h = e.query_mask.dim(0), w = e.query_mask.dim(1);
    for (std::size_t y = 1; y + 2 < h; ++y)
        for (std::size_t x = 2; x + 2 < w; ++x) EXPECT_EQ(back.at(y, x), e.query_mask.at(y, x));
}

TEST(Tubes, SingleFrameIsTheQuery)
{
    const Episode e = gen_episode(4, 1);
    const MaskTube t = make_tube(e, 1, 9);
    ASSERT_EQ(t.length(), 1u);
    EXPECT_EQ(t.frames[0], e.query_image);
    EXPECT_EQ(t.masks[0], e.query_mask);
    EXPECT_TRUE(t.transforms[0].is_identity());
}

TEST(Tubes, RewarpAudit)
{
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const Episode e = gen_episode(static_cast<int>(s % kNumClasses), s, Canvas{12, 12});
        const MaskTube t = make_tube(e, 4, s);
        check_tube(t);
        for (std::size_t k = 0; k < t.length(); ++k) {
            ASSERT_EQ(t.masks[k], warp(e.query_mask, t.transforms[k])) << "seed " << s << " frame " << k;
            ASSERT_TRUE(binary(t.masks[k]));
            if (k > 0) {
                EXPECT_LE(std::abs(t.transforms[k].dx - t.transforms[k - 1].dx), 2);
                EXPECT_LE(std::abs(t.transforms[k].dy - t.transforms[k - 1].dy), 2);
            }
        }
    }
}

TEST(Tubes, TranslationOnlyMotion)
{
    const Episode e = gen_episode(6, 2);
    TubeMotion motion;
    motion.allow_flip = motion.allow_scale = false;
    const MaskTube t = make_tube(e, 8, 3, motion);
    for (const TransformSpec& s : t.transforms) {
        EXPECT_FALSE(s.flip);
        EXPECT_EQ(s.scale_tenths, 10);
    }
}

TEST(Tubes, DiskRoundTripAndMeta)
{
    const fs::path dir = scratch_dir("tube");
    const MaskTube t = make_tube(gen_episode(1, 4), 3, 5);
    write_tube(dir, t);
    EXPECT_TRUE(fs::exists(dir / "frames" / "frame_0002.dcst"));
    EXPECT_TRUE(fs::exists(dir / "masks" / "mask_0000.dcst"));
    const MaskTube r = read_tube(dir);
    EXPECT_EQ(r.length(), 3u);
    EXPECT_EQ(r.masks, t.masks);
    EXPECT_EQ(r.transforms, t.transforms);
    EXPECT_EQ(r.class_id, 1);
    EXPECT_NE(format_tube_meta(t).find("T = 3"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Tubes, CheckRejectsBrokenTubes)
{
    MaskTube t = make_tube(gen_episode(1, 4), 2, 5);
    t.masks.pop_back();
    EXPECT_THROW(check_tube(t), InvalidArgument);
    t = make_tube(gen_episode(1, 4), 2, 5);
    t.masks[1][0] = 0.5;
    EXPECT_THROW(check_tube(t), InvalidArgument);
}

TEST(KeyValues, Parsing)
{
    const auto kv = parse_key_values("# comment\n\na = 1\n  b=two words  \n");
    ASSERT_EQ(kv.size(), 2u);
    EXPECT_EQ(kv[0].first, "a");
    EXPECT_EQ(kv[1].second, "two words");
    EXPECT_THROW(parse_key_values("novalue\n"), ConfigError);
}

TEST(Dcst, RoundTripAndCorruption)
{
    CounterRng rng(1);
    const Tensor t = rng.normal_tensor({2, 3, 4}, 1);
    const auto bytes = encode_dcst(t);
    EXPECT_EQ(bytes.size(), 4u + 1 + 1 + 3 * 4 + 24 * 4);
    const Tensor back = decode_dcst(bytes);
    EXPECT_EQ(back.shape(), t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(t[i])));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_dcst(bad), IoError);
    bad = bytes;
    bad.pop_back();
    EXPECT_THROW(decode_dcst(bad), IoError);
}

TEST(Rng, CounterStreamsAreReproducible)
{
    CounterRng a(5), b(5), c(6);
    for (int i = 0; i < 10; ++i) {
        const auto x = a();
        EXPECT_EQ(x, b());
        EXPECT_NE(x, c());
    }
    EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
    EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
    CounterRng r(7);
    double mean = 0;
    for (int i = 0; i < 20000; ++i) {
        const auto k = r.uniform_int(-2, 2);
        ASSERT_GE(k, -2);
        ASSERT_LE(k, 2);
        mean += r.normal();
    }
    EXPECT_NEAR(mean / 20000, 0.0, 0.05);
}
