#include "dcsam/episodes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "dcsam/attention.hpp"
#include "dcsam/dcst.hpp"
#include "dcsam/errors.hpp"
#include "dcsam/rng.hpp"

namespace dcsam {
namespace {

constexpr double kMinForeground = 0.02;
constexpr double kMaxForeground = 0.5;
constexpr double kMaxDistractorOverlap = 0.1;
constexpr int kPoseAttempts = 4000;

void check_class(int class_id)
{
    if (class_id < 0 || class_id >= kNumClasses)
        throw UnknownClass("class " + std::to_string(class_id) + " (valid: 0.." +
                           std::to_string(kNumClasses - 1) + ")");
}

struct Pose {
    double cx = 0, cy = 0, r = 1;
    double aspect = 1;  // rectangle height / width
    int orientation = 0;
};

bool inside(ShapeFamily family, const Pose& pose, double x, double y)
{
    double u = x - pose.cx, v = y - pose.cy;
    const double r = pose.r;
    switch (family) {
        case ShapeFamily::kDisk:
            return u * u + v * v <= r * r;
        case ShapeFamily::kRectangle:
            return std::abs(u) <= r && std::abs(v) <= r * pose.aspect;
        case ShapeFamily::kTriangle: {
            // Apex direction follows the orientation (up, right, down, left).
            for (int k = 0; k < pose.orientation; ++k) std::swap(u, v), u = -u;
            const double t = (v + r) / (2.0 * r);
            return t >= 0.0 && t <= 1.0 && std::abs(u) <= t * r;
        }
        case ShapeFamily::kRing: {
            const double d2 = u * u + v * v;
            return d2 <= r * r && d2 >= 0.3 * r * r;
        }
        case ShapeFamily::kCross: {
            const double t = std::max(0.5, 0.3 * r);
            return (std::abs(u) <= t && std::abs(v) <= r) || (std::abs(v) <= t && std::abs(u) <= r);
        }
        case ShapeFamily::kBar: {
            static constexpr std::array<double, 4> kAngles = {0.0, 0.785398163, 1.570796327, 2.356194490};
            const double a = kAngles[static_cast<std::size_t>(pose.orientation)];
            const double along = u * std::cos(a) + v * std::sin(a);
            const double across = -u * std::sin(a) + v * std::cos(a);
            return std::abs(along) <= r && std::abs(across) <= std::max(0.6, 0.25 * r);
        }
        case ShapeFamily::kLShape: {
            if (pose.orientation & 1) u = -u;
            if (pose.orientation & 2) v = -v;
            const double t = std::max(0.6, 0.45 * r);
            if (std::abs(u) > r || std::abs(v) > r) return false;
            return u <= -r + 2.0 * t || v >= r - 2.0 * t;
        }
        case ShapeFamily::kCheckerBlob: {
            // Centre lobe plus two lobes on one checkerboard diagonal.
            const double o = 0.45 * r, lobe = 0.55 * r;
            const double sx = (pose.orientation & 1) ? -1.0 : 1.0;
            auto in_lobe = [&](double lx, double ly, double rad) {
                return (u - lx) * (u - lx) + (v - ly) * (v - ly) <= rad * rad;
            };
            return in_lobe(0, 0, 0.5 * r) || in_lobe(sx * o, o, lobe) || in_lobe(-sx * o, -o, lobe);
        }
    }
    return false;
}

Tensor rasterize(ShapeFamily family, const Pose& pose, Canvas canvas)
{
    Tensor mask({canvas.height, canvas.width});
    for (std::size_t y = 0; y < canvas.height; ++y)
        for (std::size_t x = 0; x < canvas.width; ++x)
            if (inside(family, pose, static_cast<double>(x), static_cast<double>(y))) mask.at(y, x) = 1.0;
    return mask;
}

Pose sample_pose(CounterRng& rng, Canvas canvas, double min_frac, double max_frac)
{
    const double m = static_cast<double>(std::min(canvas.height, canvas.width));
    Pose p;
    p.r = rng.uniform(min_frac * m, max_frac * m);
    p.cx = rng.uniform(0.0, static_cast<double>(canvas.width - 1));
    p.cy = rng.uniform(0.0, static_cast<double>(canvas.height - 1));
    p.aspect = rng.uniform(0.5, 1.0);
    p.orientation = static_cast<int>(rng.uniform_int(0, 3));
    return p;
}

double count(const Tensor& mask) { return sum(mask); }

double overlap(const Tensor& a, const Tensor& b)
{
    double n = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] * b[i];
    return n;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v)
{
    const double c = v * s;
    const double hp = std::fmod(h * 6.0, 6.0);
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    std::array<double, 3> rgb{};
    switch (static_cast<int>(hp)) {
        case 0: rgb = {c, x, 0}; break;
        case 1: rgb = {x, c, 0}; break;
        case 2: rgb = {0, c, x}; break;
        case 3: rgb = {0, x, c}; break;
        case 4: rgb = {x, 0, c}; break;
        default: rgb = {c, 0, x}; break;
    }
    const double m = v - c;
    for (double& ch : rgb) ch += m;
    return rgb;
}

// Hues are spread by a stride coprime to 16 so neighbouring class ids differ.
std::array<double, 3> class_color(int class_id)
{
    const double hue = static_cast<double>((class_id * 5) % kNumClasses) / kNumClasses;
    return hsv_to_rgb(hue, 0.8, 0.9);
}

void paint(Tensor& image, const Tensor& mask, int class_id, CounterRng& rng)
{
    const auto color = class_color(class_id);
    const double gain = rng.uniform(0.9, 1.1);
    const bool striped = class_texture(class_id) == 1;
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            if (mask.at(y, x) == 0.0) continue;
            const double shade = striped && ((x + y) / 2) % 2 == 1 ? 0.5 : 1.0;
            for (std::size_t ch = 0; ch < kImageChannels; ++ch)
                image.at(ch, y, x) =
                    std::clamp(color[ch] * gain * shade + 0.03 * rng.normal(), 0.0, 1.0);
        }
}

}  // namespace

ShapeFamily class_family(int class_id)
{
    check_class(class_id);
    return static_cast<ShapeFamily>(class_id / kTextureVariants);
}

int class_texture(int class_id)
{
    check_class(class_id);
    return class_id % kTextureVariants;
}

const char* family_name(ShapeFamily family)
{
    switch (family) {
        case ShapeFamily::kDisk: return "disk";
        case ShapeFamily::kRectangle: return "rectangle";
        case ShapeFamily::kTriangle: return "triangle";
        case ShapeFamily::kRing: return "ring";
        case ShapeFamily::kCross: return "cross";
        case ShapeFamily::kBar: return "bar";
        case ShapeFamily::kLShape: return "l-shape";
        case ShapeFamily::kCheckerBlob: return "checker-blob";
    }
    return "?";
}

std::vector<int> all_classes()
{
    std::vector<int> ids(kNumClasses);
    for (int i = 0; i < kNumClasses; ++i) ids[static_cast<std::size_t>(i)] = i;
    return ids;
}

FoldSplit split_folds(const std::vector<int>& class_ids, int fold_index)
{
    if (class_ids.empty() || class_ids.size() % kFoldCount != 0)
        throw NonDivisibleClassCount(std::to_string(class_ids.size()) +
                                     " classes cannot be split into " +
                                     std::to_string(kFoldCount) + " folds");
    if (fold_index < 0 || fold_index >= kFoldCount)
        throw InvalidArgument("fold index " + std::to_string(fold_index) + " out of range");
    const std::size_t per = class_ids.size() / kFoldCount;
    const std::size_t lo = static_cast<std::size_t>(fold_index) * per, hi = lo + per;
    FoldSplit split;
    split.fold_index = fold_index;
    for (std::size_t i = 0; i < class_ids.size(); ++i)
        (i >= lo && i < hi ? split.test_classes : split.train_classes).push_back(class_ids[i]);
    return split;
}

RenderedImage render_scene(int class_id, std::uint64_t seed, Canvas canvas)
{
    check_class(class_id);
    if (canvas.height < kMinCanvas || canvas.width < kMinCanvas)
        throw InvalidArgument("canvas must be at least " + std::to_string(kMinCanvas) + "x" +
                              std::to_string(kMinCanvas));
    CounterRng rng(seed);
    const double area = static_cast<double>(canvas.height * canvas.width);

    RenderedImage out;
    CounterRng pose_rng = rng.split(1);
    const ShapeFamily family = class_family(class_id);
    for (int attempt = 0;; ++attempt) {
        if (attempt == kPoseAttempts) throw InvalidArgument("could not place target shape");
        const Tensor mask = rasterize(family, sample_pose(pose_rng, canvas, 0.18, 0.38), canvas);
        const double fg = count(mask);
        if (fg >= kMinForeground * area && fg <= kMaxForeground * area) {
            out.target_mask = mask;
            break;
        }
    }
    const double target_area = count(out.target_mask);

    CounterRng distractor_rng = rng.split(2);
    const int wanted = distractor_rng.bernoulli(0.5) ? 2 : 1;
    for (int k = 0; k < wanted; ++k) {
        int other = static_cast<int>(distractor_rng.uniform_int(0, kNumClasses - 2));
        if (other >= class_id) ++other;
        for (int attempt = 0; attempt < kPoseAttempts; ++attempt) {
            const Tensor mask =
                rasterize(class_family(other), sample_pose(distractor_rng, canvas, 0.12, 0.24), canvas);
            const double visible = count(mask) - overlap(mask, out.target_mask);
            if (visible < 1.0) continue;
            if (overlap(mask, out.target_mask) > kMaxDistractorOverlap * target_area) continue;
            out.distractor_masks.push_back(mask);
            out.distractor_classes.push_back(other);
            break;
        }
    }
    if (out.distractor_masks.empty()) throw InvalidArgument("could not place a distractor");

    CounterRng paint_rng = rng.split(3);
    out.image = Tensor({kImageChannels, canvas.height, canvas.width});
    const double level = paint_rng.uniform(0.15, 0.35);
    for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        const double tint = level + paint_rng.uniform(-0.03, 0.03);
        for (std::size_t p = 0; p < canvas.height * canvas.width; ++p)
            out.image[ch * canvas.height * canvas.width + p] =
                std::clamp(tint + 0.04 * paint_rng.normal(), 0.0, 1.0);
    }
    for (std::size_t k = 0; k < out.distractor_masks.size(); ++k)
        paint(out.image, out.distractor_masks[k], out.distractor_classes[k], paint_rng);
    paint(out.image, out.target_mask, class_id, paint_rng);
    return out;
}

Episode gen_episode(int class_id, std::uint64_t seed, Canvas canvas)
{
    check_class(class_id);
    const std::uint64_t base = derive_seed(seed, {static_cast<std::uint64_t>(class_id)});
    RenderedImage support = render_scene(class_id, derive_seed(base, {1}), canvas);
    RenderedImage query = render_scene(class_id, derive_seed(base, {2}), canvas);
    return Episode{std::move(support.image), std::move(support.target_mask),
                   std::move(query.image), std::move(query.target_mask), class_id, seed};
}

void write_episode_bundle(const std::filesystem::path& dir, const Episode& episode)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_dcst(dir / "support.dcst", episode.support_image);
    write_dcst(dir / "support_mask.dcst", episode.support_mask);
    write_dcst(dir / "query.dcst", episode.query_image);
    write_dcst(dir / "query_mask.dcst", episode.query_mask);
    write_file_atomic(dir / "meta.txt", "class_id = " + std::to_string(episode.class_id) +
                                            "\nseed = " + std::to_string(episode.seed) + "\n");
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text)
{
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(number) + ": expected `key = value`");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

Episode read_episode_bundle(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) throw IoError("no episode bundle at " + dir.string());
    Episode ep;
    ep.support_image = read_dcst(dir / "support.dcst");
    ep.support_mask = read_dcst(dir / "support_mask.dcst");
    ep.query_image = read_dcst(dir / "query.dcst");
    ep.query_mask = read_dcst(dir / "query_mask.dcst");
    bool have_class = false;
    for (const auto& [key, value] : parse_key_values(read_text_file(dir / "meta.txt"))) {
        try {
            if (key == "class_id") {
                ep.class_id = std::stoi(value);
                have_class = true;
            } else if (key == "seed") {
                ep.seed = std::stoull(value);
            }
        } catch (const std::logic_error&) {
            throw ConfigError("meta.txt: bad value for " + key + ": " + value);
        }
    }
    if (!have_class) throw ConfigError("meta.txt: missing key class_id");
    require_binary_mask(ep.support_mask, "read_episode_bundle");
    require_binary_mask(ep.query_mask, "read_episode_bundle");
    return ep;
}

// --- Tubes -------------------------------------------------------------------

Tensor warp(const Tensor& input, const TransformSpec& spec)
{
    if (spec.scale_tenths != 9 && spec.scale_tenths != 10 && spec.scale_tenths != 11)
        throw InvalidArgument("scale must be 0.9, 1.0 or 1.1");
    const bool planar = input.rank() == 2;
    if (!planar) require_rank(input, 3, "warp");
    const std::size_t channels = planar ? 1 : input.dim(0);
    const std::size_t h = input.dim(planar ? 0 : 1), w = input.dim(planar ? 1 : 2);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
    Tensor out(input.shape());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double u = (static_cast<double>(x) - cx - spec.dx) * 10.0 / spec.scale_tenths;
            const double v = (static_cast<double>(y) - cy - spec.dy) * 10.0 / spec.scale_tenths;
            if (spec.flip) u = -u;
            const double sx = std::floor(cx + u + 0.5), sy = std::floor(cy + v + 0.5);
            if (sx < 0 || sy < 0 || sx >= static_cast<double>(w) || sy >= static_cast<double>(h)) continue;
            const auto ix = static_cast<std::size_t>(sx), iy = static_cast<std::size_t>(sy);
            for (std::size_t ch = 0; ch < channels; ++ch)
                out[(ch * h + y) * w + x] = input[(ch * h + iy) * w + ix];
        }
    return out;
}

MaskTube make_tube(const Episode& episode, std::size_t frames, std::uint64_t seed,
                   const TubeMotion& motion)
{
    if (frames == 0) throw InvalidArgument("a tube needs at least one frame");
    if (motion.max_step < 0) throw InvalidArgument("max_step must be non-negative");
    CounterRng rng(derive_seed(seed, {0x7B0E}));
    MaskTube tube;
    tube.class_id = episode.class_id;
    tube.seed = seed;
    const bool flip = motion.allow_flip && rng.bernoulli(0.5);
    TransformSpec spec;
    for (std::size_t t = 0; t < frames; ++t) {
        if (t > 0) {
            spec.dx += static_cast<int>(rng.uniform_int(-motion.max_step, motion.max_step));
            spec.dy += static_cast<int>(rng.uniform_int(-motion.max_step, motion.max_step));
            if (motion.allow_scale)
                spec.scale_tenths = std::clamp(
                    spec.scale_tenths + static_cast<int>(rng.uniform_int(-1, 1)), 9, 11);
            // The flip is a property of the whole clip; frame 0 stays the raw query.
            spec.flip = flip;
        }
        tube.transforms.push_back(spec);
        tube.frames.push_back(t == 0 ? episode.query_image : warp(episode.query_image, spec));
        tube.masks.push_back(t == 0 ? episode.query_mask : warp(episode.query_mask, spec));
    }
    return tube;
}

void check_tube(const MaskTube& tube)
{
    if (tube.frames.size() != tube.masks.size() || tube.frames.size() != tube.transforms.size())
        throw InvalidArgument("tube frame, mask and transform counts differ");
    for (const Tensor& m : tube.masks) require_binary_mask(m, "check_tube");
}

std::string format_tube_meta(const MaskTube& tube)
{
    std::ostringstream os;
    os << "class_id = " << tube.class_id << "\nseed = " << tube.seed << "\nT = " << tube.length()
       << "\n# t dx dy flip scale\n";
    for (std::size_t t = 0; t < tube.transforms.size(); ++t) {
        const TransformSpec& s = tube.transforms[t];
        os << t << ' ' << s.dx << ' ' << s.dy << ' ' << (s.flip ? 1 : 0) << ' '
           << std::setprecision(2) << s.scale() << '\n';
    }
    return os.str();
}

namespace {

std::string frame_name(const char* prefix, std::size_t t)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.dcst", prefix, t);
    return buf;
}

}  // namespace

void write_tube(const std::filesystem::path& dir, const MaskTube& tube)
{
    check_tube(tube);
    std::error_code ec;
    std::filesystem::create_directories(dir / "frames", ec);
    std::filesystem::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t t = 0; t < tube.length(); ++t) {
        write_dcst(dir / "frames" / frame_name("frame", t), tube.frames[t]);
        write_dcst(dir / "masks" / frame_name("mask", t), tube.masks[t]);
    }
    write_file_atomic(dir / "meta.txt", format_tube_meta(tube));
}

MaskTube read_tube(const std::filesystem::path& dir)
{
    std::istringstream in(read_text_file(dir / "meta.txt"));
    MaskTube tube;
    std::size_t frames = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (const auto eq = line.find('='); eq != std::string::npos) {
            std::istringstream kv(line.substr(0, eq) + " " + line.substr(eq + 1));
            std::string key;
            kv >> key;
            if (key == "class_id") kv >> tube.class_id;
            else if (key == "seed") kv >> tube.seed;
            else if (key == "T") kv >> frames;
            continue;
        }
        std::istringstream row(line);
        std::size_t t;
        int flip;
        double scale;
        TransformSpec spec;
        if (!(row >> t >> spec.dx >> spec.dy >> flip >> scale) || t != tube.transforms.size())
            throw IoError("tube meta.txt: malformed transform line: " + line);
        spec.flip = flip != 0;
        spec.scale_tenths = static_cast<int>(std::lround(scale * 10.0));
        tube.transforms.push_back(spec);
    }
    if (frames == 0 || tube.transforms.size() != frames)
        throw IoError("tube meta.txt: T does not match the transform log");
    for (std::size_t t = 0; t < frames; ++t) {
        tube.frames.push_back(read_dcst(dir / "frames" / frame_name("frame", t)));
        tube.masks.push_back(read_dcst(dir / "masks" / frame_name("mask", t)));
    }
    check_tube(tube);
    return tube;
}

}  // namespace dcsam
