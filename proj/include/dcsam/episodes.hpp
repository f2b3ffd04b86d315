#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcsam/tensor.hpp"

namespace dcsam {

inline constexpr int kShapeFamilies = 8;
inline constexpr int kTextureVariants = 2;
inline constexpr int kNumClasses = kShapeFamilies * kTextureVariants;
inline constexpr int kFoldCount = 4;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kMinCanvas = 8;

enum class ShapeFamily { kDisk, kRectangle, kTriangle, kRing, kCross, kBar, kLShape, kCheckerBlob };

/// Class c is family c / 2 rendered with texture variant c % 2.
ShapeFamily class_family(int class_id);
int class_texture(int class_id);
const char* family_name(ShapeFamily family);

struct Canvas {
    std::size_t height = 24;
    std::size_t width = 24;
};

/// One in-context task: segment the support's class in the query.
struct Episode {
    Tensor support_image;  // 3×H×W in [0, 1]
    Tensor support_mask;   // H×W binary, at least one foreground pixel
    Tensor query_image;
    Tensor query_mask;
    int class_id = 0;
    std::uint64_t seed = 0;
};

struct FoldSplit {
    int fold_count = kFoldCount;
    int fold_index = 0;
    std::vector<int> train_classes;
    std::vector<int> test_classes;
};

/// Fold k tests on classes[k·C/4, (k+1)·C/4) and trains on the rest.
FoldSplit split_folds(const std::vector<int>& class_ids, int fold_index);
std::vector<int> all_classes();

/// Each image holds one instance of the class at a random pose (2%..50% of the
/// canvas) plus one or two distractors of other classes, each overlapping the
/// target by at most 10% of its area. Masks cover the target only.
Episode gen_episode(int class_id, std::uint64_t seed, Canvas canvas = {});

/// Pixel mask of a rendered instance; exposed for tests and distractor audits.
struct RenderedImage {
    Tensor image;
    Tensor target_mask;
    std::vector<Tensor> distractor_masks;
    std::vector<int> distractor_classes;
};
RenderedImage render_scene(int class_id, std::uint64_t seed, Canvas canvas);

void write_episode_bundle(const std::filesystem::path& dir, const Episode& episode);
Episode read_episode_bundle(const std::filesystem::path& dir);

// --- Mask tubes -----------------------------------------------------------

/// Nearest-neighbour similarity transform about the canvas centre:
/// p' = c + s·Flip(p - c) + (dx, dy). Scale is scale_tenths / 10.
struct TransformSpec {
    int dx = 0;
    int dy = 0;
    bool flip = false;
    int scale_tenths = 10;  // one of 9, 10, 11

    double scale() const { return scale_tenths / 10.0; }
    bool is_identity() const { return dx == 0 && dy == 0 && !flip && scale_tenths == 10; }
    friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

/// Warps every channel of a C×H×W or H×W tensor; pixels mapped from outside
/// the canvas become 0. Binary input stays binary.
Tensor warp(const Tensor& input, const TransformSpec& spec);

struct TubeMotion {
    bool allow_scale = true;
    bool allow_flip = true;
    int max_step = 2;  // per-frame |Δdx|, |Δdy| bound
};

struct MaskTube {
    std::vector<Tensor> frames;
    std::vector<Tensor> masks;
    std::vector<TransformSpec> transforms;
    int class_id = 0;
    std::uint64_t seed = 0;

    std::size_t length() const { return frames.size(); }
};

/// Frame 0 is the query unchanged; later frames follow a bounded random walk in
/// translation, a ±1 step walk on the scale grid, and a per-tube flip.
MaskTube make_tube(const Episode& episode, std::size_t frames, std::uint64_t seed,
                   const TubeMotion& motion = {});

/// Throws InvalidArgument if lengths differ or a mask is not binary.
void check_tube(const MaskTube& tube);

std::string format_tube_meta(const MaskTube& tube);
void write_tube(const std::filesystem::path& dir, const MaskTube& tube);
MaskTube read_tube(const std::filesystem::path& dir);

/// Parses `key = value` lines, ignoring blanks and `#` comments.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

}  // namespace dcsam
