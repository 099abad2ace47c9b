#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "mmvt/rng.hpp"
#include "mmvt/visual.hpp"

using namespace mmvt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("mmvt_visual_test_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Tensor rand_frames(std::vector<std::size_t> dims, Rng& rng) {
    Tensor t(std::move(dims), DType::f32);
    for (std::size_t i = 0; i < t.size(); ++i) t.set(i, rng.uniform(0.0, 1.0));
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.dims() == b.dims() &&
           std::memcmp(a.data<float>().data(), b.data<float>().data(),
                       a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("manifest round-trips through JSON") {
    TempDir dir;
    std::vector<ManifestEntry> entries{
        {"clip0", "clip0_rgb.mmt", "clip0_flow.mmt", "clip0.wav", 3, 7},
        {"clip1", "clip1_rgb.mmt", "", "", 0, 1},
    };
    const std::string path = (dir.path / "manifest.json").string();
    save_manifest(entries, path);
    const auto back = load_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "clip0");
    CHECK(back[0].flow == "clip0_flow.mmt");
    CHECK(back[0].audio == "clip0.wav");
    CHECK(back[0].verb == 3);
    CHECK(back[0].noun == 7);
    CHECK(back[1].flow.empty());
    CHECK(back[1].audio.empty());
}

TEST_CASE("load_clip: optional modalities stay absent, bad shapes are rejected") {
    TempDir dir;
    Rng rng(1);
    const Tensor video = rand_frames({4, 32, 32, 3}, rng);
    save_mmt(video, (dir.path / "v.mmt").string());

    ManifestEntry entry{"c0", "v.mmt", "", "", 1, 2};
    const LoadedClip only_video = load_clip(entry, dir.path.string(), 4, 4);
    CHECK(bit_equal(only_video.video.frames, video));
    CHECK(!only_video.flow.has_value());
    CHECK(!only_video.audio.has_value());

    // a 3-channel tensor is not a flow field
    save_mmt(rand_frames({4, 32, 32, 3}, rng), (dir.path / "bad_flow.mmt").string());
    ManifestEntry bad = entry;
    bad.flow = "bad_flow.mmt";
    CHECK_THROWS_WITH_AS(load_clip(bad, dir.path.string(), 4, 4), doctest::Contains("[F,H,W,2]"),
                         std::runtime_error);

    ManifestEntry missing = entry;
    missing.video = "nope.mmt";
    CHECK_THROWS_AS(load_clip(missing, dir.path.string(), 4, 4), std::runtime_error);

    ManifestEntry bad_label = entry;
    bad_label.verb = 9;
    CHECK_THROWS_WITH_AS(load_clip(bad_label, dir.path.string(), 4, 4),
                         doctest::Contains("out of range"), std::runtime_error);
}

TEST_CASE("clip save/load round-trip is bit identical") {
    TempDir dir;
    Rng rng(2);
    const Tensor clip = rand_frames({3, 16, 16, 3}, rng);
    const std::string p = (dir.path / "clip.mmt").string();
    save_mmt(clip, p);
    CHECK(bit_equal(load_mmt(p), clip));
}

TEST_CASE("temporal_sample: degenerate, seeded, and looped cases") {
    CHECK(temporal_sample(64, 64, true, nullptr) == 0);  // only option, no draw

    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        Rng r = rng.fork("s", static_cast<std::uint64_t>(i));
        const std::size_t start = temporal_sample(100, 64, true, &r);
        CHECK(start <= 36);
        Rng r2 = rng.fork("s", static_cast<std::uint64_t>(i));
        CHECK(temporal_sample(100, 64, true, &r2) == start);  // reproducible
    }
    CHECK(temporal_sample(100, 64, false, nullptr) == 0);  // eval is deterministic

    // clips shorter than the target are looped by repetition
    Rng rng2(4);
    const Tensor short_clip = rand_frames({30, 4, 4, 3}, rng2);
    const Tensor looped = loop_frames(short_clip, 64);
    CHECK(looped.dim(0) == 64);
    const std::size_t stride = short_clip.size() / 30;
    for (std::size_t f = 0; f < 64; ++f)
        for (std::size_t k = 0; k < stride; ++k)
            CHECK(looped.at(f * stride + k) == short_clip.at((f % 30) * stride + k));
    CHECK(temporal_sample(64, 64, true, nullptr) == 0);
}

TEST_CASE("four_crop_starts follows round(i*(N-len)/3)") {
    CHECK(four_crop_starts(64, 64) == std::array<std::size_t, 4>{0, 0, 0, 0});
    CHECK(four_crop_starts(256, 64) == std::array<std::size_t, 4>{0, 64, 128, 192});
    CHECK(four_crop_starts(100, 64) == std::array<std::size_t, 4>{0, 12, 24, 36});
    CHECK_THROWS_AS(four_crop_starts(10, 64), std::invalid_argument);
}

TEST_CASE("augment identity case: unit scale, corner crop, no flip") {
    // find a seed whose draws give scale ~1 (so the 32x32 clip keeps its
    // size, collapsing the crop range to (0,0)) and no flip; draw order is
    // scale, crop y, crop x, flip
    bool found = false;
    for (std::uint64_t seed = 0; seed < 20000 && !found; ++seed) {
        Rng sim(seed);
        if (std::llround(32 * sim.uniform(0.9, 1.33)) != 32) continue;
        sim.range(1);
        sim.range(1);
        if (sim.uniform() < 0.5) continue;  // would flip
        found = true;

        Rng use(seed);
        Rng rng(9);
        VideoClip v;
        v.frames = rand_frames({2, 32, 32, 3}, rng);
        AugmentConfig cfg;
        cfg.target_h = 32;
        cfg.target_w = 32;
        const AugmentedPair out = augment_spatial(v, nullptr, use, cfg);
        CHECK(bit_equal(out.video.frames, v.frames));
    }
    CHECK(found);
}

TEST_CASE("hflip is an involution and negates flow's horizontal channel") {
    Rng rng(5);
    const Tensor frames = rand_frames({2, 4, 6, 3}, rng);
    CHECK(bit_equal(hflip(hflip(frames, false), false), frames));

    const Tensor flow = rand_frames({1, 2, 4, 2}, rng);
    const Tensor flipped = hflip(flow, true);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            const std::size_t src = ((0 * 2 + y) * 4 + (3 - x)) * 2;
            const std::size_t dst = ((0 * 2 + y) * 4 + x) * 2;
            CHECK(flipped.at(dst) == -flow.at(src));      // u negated
            CHECK(flipped.at(dst + 1) == flow.at(src + 1));  // v untouched
        }
    CHECK(bit_equal(hflip(hflip(flow, true), true), flow));
}

TEST_CASE("video and flow receive identical geometric parameters") {
    // encode pixel coordinates in the channels; any desync shows instantly
    const std::size_t H = 48, W = 48;
    VideoClip v;
    v.frames = Tensor({1, H, W, 3}, DType::f32);
    FlowClip f;
    f.frames = Tensor({1, H, W, 2}, DType::f32);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            v.frames.set((y * W + x) * 3 + 0, static_cast<double>(x));
            v.frames.set((y * W + x) * 3 + 1, static_cast<double>(y));
            f.frames.set((y * W + x) * 2 + 0, static_cast<double>(x));
            f.frames.set((y * W + x) * 2 + 1, static_cast<double>(y));
        }
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed);
        AugmentConfig cfg;
        cfg.target_h = 32;
        cfg.target_w = 32;
        const AugmentedPair out = augment_spatial(v, &f, rng, cfg);
        REQUIRE(out.flow.has_value());
        CHECK(out.video.frames.dim(3) == 3);
        CHECK(out.flow->frames.dim(3) == 2);
        for (std::size_t i = 0; i < 32 * 32; ++i) {
            const double vx = out.video.frames.at(i * 3 + 0);
            const double vy = out.video.frames.at(i * 3 + 1);
            const double fx = out.flow->frames.at(i * 2 + 0);
            const double fy = out.flow->frames.at(i * 2 + 1);
            // flow u is negated on flip; magnitudes must always agree
            CHECK(std::fabs(std::fabs(fx) - std::fabs(vx)) < 1e-4);
            CHECK(std::fabs(fy - vy) < 1e-4);
        }
    }
}

TEST_CASE("augmentation preserves frame and channel counts") {
    Rng rng(6);
    VideoClip v;
    v.frames = rand_frames({5, 40, 40, 3}, rng);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng r(seed);
        AugmentConfig cfg;
        cfg.target_h = 32;
        cfg.target_w = 32;
        const AugmentedPair out = augment_spatial(v, nullptr, r, cfg);
        CHECK(out.video.frames.dims() == std::vector<std::size_t>{5, 32, 32, 3});
    }
}

TEST_CASE("bilinear resize at identical size is the identity") {
    Rng rng(7);
    const Tensor frames = rand_frames({2, 8, 8, 3}, rng);
    const Tensor same = bilinear_resize(frames, 8, 8);
    for (std::size_t i = 0; i < frames.size(); ++i)
        CHECK(same.at(i) == doctest::Approx(frames.at(i)).epsilon(1e-6));
    // doubling then halving keeps values in range and dims exact
    const Tensor up = bilinear_resize(frames, 16, 16);
    CHECK(up.dims() == std::vector<std::size_t>{2, 16, 16, 3});
    CHECK_THROWS_AS(crop_spatial(frames, 4, 4, 8, 8), std::invalid_argument);
}

TEST_CASE("crop_time slices frames exactly") {
    Rng rng(8);
    const Tensor frames = rand_frames({10, 2, 2, 3}, rng);
    const Tensor cut = crop_time(frames, 3, 4);
    CHECK(cut.dim(0) == 4);
    const std::size_t stride = frames.size() / 10;
    for (std::size_t f = 0; f < 4; ++f)
        for (std::size_t k = 0; k < stride; ++k)
            CHECK(cut.at(f * stride + k) == frames.at((f + 3) * stride + k));
    CHECK_THROWS_AS(crop_time(frames, 8, 4), std::invalid_argument);
}

TEST_CASE("eval path applies no randomness") {
    Rng rng(10);
    const Tensor frames = rand_frames({70, 4, 4, 3}, rng);
    const Tensor a = crop_time(loop_frames(frames, 64), temporal_sample(70, 64, false, nullptr), 64);
    const Tensor b = crop_time(loop_frames(frames, 64), temporal_sample(70, 64, false, nullptr), 64);
    CHECK(bit_equal(a, b));
}
