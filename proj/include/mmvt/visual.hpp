#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mmvt/audio.hpp"
#include "mmvt/rng.hpp"
#include "mmvt/tensor.hpp"

namespace mmvt {

struct VideoClip {
    Tensor frames;  // [F,H,W,3] f32 in [0,1]
    double fps = 25.0;
};

struct FlowClip {
    Tensor frames;  // [F,H,W,2], horizontal then vertical displacement
};

struct ManifestEntry {
    std::string id;
    std::string video;  // .mmt path, required
    std::string flow;   // .mmt path, optional ("" = absent)
    std::string audio;  // .wav path, optional
    int verb = 0;
    int noun = 0;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

struct LoadedClip {
    std::string id;
    VideoClip video;
    std::optional<FlowClip> flow;
    std::optional<AudioClip> audio;
    int verb = 0;
    int noun = 0;
};

// paths in the entry are resolved relative to base_dir; label range and
// modality channel counts are validated here
LoadedClip load_clip(const ManifestEntry& entry, const std::string& base_dir, int n_verbs,
                     int n_nouns);

// clips shorter than target are extended by cyclic repetition
Tensor loop_frames(const Tensor& frames, std::size_t target);

// train: uniform random start; eval: start 0 (crop choice comes from
// four_crop_starts)
std::size_t temporal_sample(std::size_t n_frames, std::size_t target, bool train, Rng* rng);

// starts = round(i*(N-len)/3) for i in 0..3
std::array<std::size_t, 4> four_crop_starts(std::size_t n_frames, std::size_t len);

Tensor crop_time(const Tensor& frames, std::size_t start, std::size_t len);

Tensor bilinear_resize(const Tensor& frames, std::size_t out_h, std::size_t out_w);
Tensor crop_spatial(const Tensor& frames, std::size_t y0, std::size_t x0, std::size_t h,
                    std::size_t w);
// mirror along width; negate_channel0 flips the sign of flow's horizontal
// displacement
Tensor hflip(const Tensor& frames, bool negate_channel0);

struct AugmentConfig {
    double min_scale = 0.9;
    double max_scale = 1.33;
    double flip_prob = 0.5;
    std::size_t target_h = 224;
    std::size_t target_w = 224;
};

struct AugmentedPair {
    VideoClip video;
    std::optional<FlowClip> flow;
};

// one scale draw, bilinear resize, random crop, coin-flip mirror; the same
// geometric transform is applied to video and flow
AugmentedPair augment_spatial(const VideoClip& v, const FlowClip* f, Rng& rng,
                              const AugmentConfig& cfg);

}  // namespace mmvt
