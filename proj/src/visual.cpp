#include "mmvt/visual.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace mmvt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve(const std::string& base_dir, const std::string& rel) {
    const fs::path p(rel);
    if (p.is_absolute() || base_dir.empty()) return rel;
    return (fs::path(base_dir) / p).string();
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("manifest: invalid JSON in " + path + ": " + e.what());
    }
    if (!j.is_array()) throw std::runtime_error("manifest: top level must be an array");
    std::vector<ManifestEntry> entries;
    for (const auto& e : j) {
        ManifestEntry m;
        m.id = e.at("id").get<std::string>();
        m.video = e.at("video").get<std::string>();
        m.flow = e.value("flow", std::string{});
        m.audio = e.value("audio", std::string{});
        m.verb = e.at("verb").get<int>();
        m.noun = e.at("noun").get<int>();
        entries.push_back(std::move(m));
    }
    return entries;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    json j = json::array();
    for (const ManifestEntry& m : entries) {
        json e{{"id", m.id}, {"video", m.video}, {"verb", m.verb}, {"noun", m.noun}};
        if (!m.flow.empty()) e["flow"] = m.flow;
        if (!m.audio.empty()) e["audio"] = m.audio;
        j.push_back(std::move(e));
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("manifest: cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

LoadedClip load_clip(const ManifestEntry& entry, const std::string& base_dir, int n_verbs,
                     int n_nouns) {
    if (entry.verb < 0 || entry.verb >= n_verbs)
        throw std::runtime_error("clip " + entry.id + ": verb label " + std::to_string(entry.verb) +
                                 " out of range [0," + std::to_string(n_verbs) + ")");
    if (entry.noun < 0 || entry.noun >= n_nouns)
        throw std::runtime_error("clip " + entry.id + ": noun label " + std::to_string(entry.noun) +
                                 " out of range [0," + std::to_string(n_nouns) + ")");

    LoadedClip clip;
    clip.id = entry.id;
    clip.verb = entry.verb;
    clip.noun = entry.noun;

    clip.video.frames = load_mmt(resolve(base_dir, entry.video));
    const Tensor& v = clip.video.frames;
    if (v.ndim() != 4 || v.dim(3) != 3)
        throw std::runtime_error("clip " + entry.id + ": video must be [F,H,W,3], got " +
                                 dims_to_string(v.dims()));

    if (!entry.flow.empty()) {
        FlowClip f;
        f.frames = load_mmt(resolve(base_dir, entry.flow));
        if (f.frames.ndim() != 4 || f.frames.dim(3) != 2)
            throw std::runtime_error("clip " + entry.id + ": flow must be [F,H,W,2], got " +
                                     dims_to_string(f.frames.dims()));
        for (std::size_t d = 0; d < 3; ++d)
            if (f.frames.dim(d) != v.dim(d))
                throw std::runtime_error("clip " + entry.id + ": flow geometry " +
                                         dims_to_string(f.frames.dims()) +
                                         " does not match video " + dims_to_string(v.dims()));
        clip.flow = std::move(f);
    }
    if (!entry.audio.empty()) clip.audio = load_wav(resolve(base_dir, entry.audio));
    return clip;
}

Tensor loop_frames(const Tensor& frames, std::size_t target) {
    if (frames.empty() || frames.ndim() < 1) throw std::invalid_argument("loop_frames: empty clip");
    const std::size_t n = frames.dim(0);
    if (n >= target) return frames;
    std::vector<std::size_t> od = frames.dims();
    od[0] = target;
    Tensor out(od, frames.dtype());
    const std::size_t stride = frames.size() / n;
    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t src = i % n;
        for (std::size_t k = 0; k < stride; ++k)
            out.set(i * stride + k, frames.at(src * stride + k));
    }
    return out;
}

std::size_t temporal_sample(std::size_t n_frames, std::size_t target, bool train, Rng* rng) {
    if (n_frames <= target) return 0;  // shorter clips are looped by the caller
    const std::size_t span = n_frames - target;
    if (!train) return 0;
    if (!rng) throw std::invalid_argument("temporal_sample: train mode needs an rng");
    return rng->range(span + 1);
}

std::array<std::size_t, 4> four_crop_starts(std::size_t n_frames, std::size_t len) {
    if (n_frames < len) throw std::invalid_argument("four_crop_starts: clip shorter than crop");
    const double span = static_cast<double>(n_frames - len);
    std::array<std::size_t, 4> starts{};
    for (std::size_t i = 0; i < 4; ++i)
        starts[i] = static_cast<std::size_t>(std::llround(span * static_cast<double>(i) / 3.0));
    return starts;
}

Tensor crop_time(const Tensor& frames, std::size_t start, std::size_t len) {
    const std::size_t n = frames.dim(0);
    if (start + len > n) throw std::invalid_argument("crop_time: range exceeds clip");
    std::vector<std::size_t> od = frames.dims();
    od[0] = len;
    Tensor out(od, frames.dtype());
    const std::size_t stride = frames.size() / n;
    for (std::size_t i = 0; i < len * stride; ++i) out.set(i, frames.at(start * stride + i));
    return out;
}

Tensor bilinear_resize(const Tensor& frames, std::size_t out_h, std::size_t out_w) {
    if (frames.ndim() != 4) throw std::invalid_argument("resize: expects [F,H,W,C]");
    const std::size_t F = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
    if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize: zero output size");
    Tensor out({F, out_h, out_w, C}, frames.dtype());
    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t y = 0; y < out_h; ++y) {
            // half-pixel centers
            const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
            const double cy = std::clamp(src_y, 0.0, static_cast<double>(H - 1));
            const std::size_t y0 = static_cast<std::size_t>(cy);
            const std::size_t y1 = std::min(y0 + 1, H - 1);
            const double fy = cy - static_cast<double>(y0);
            for (std::size_t x = 0; x < out_w; ++x) {
                const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
                const double cx = std::clamp(src_x, 0.0, static_cast<double>(W - 1));
                const std::size_t x0 = static_cast<std::size_t>(cx);
                const std::size_t x1 = std::min(x0 + 1, W - 1);
                const double fx = cx - static_cast<double>(x0);
                for (std::size_t c = 0; c < C; ++c) {
                    auto px = [&](std::size_t yy, std::size_t xx) {
                        return frames.at(((f * H + yy) * W + xx) * C + c);
                    };
                    const double top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                    const double bot = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                    out.set(((f * out_h + y) * out_w + x) * C + c, top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    return out;
}

Tensor crop_spatial(const Tensor& frames, std::size_t y0, std::size_t x0, std::size_t h,
                    std::size_t w) {
    if (frames.ndim() != 4) throw std::invalid_argument("crop: expects [F,H,W,C]");
    const std::size_t F = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
    if (y0 + h > H || x0 + w > W)
        throw std::invalid_argument("crop: window " + std::to_string(h) + "x" + std::to_string(w) +
                                    " at (" + std::to_string(y0) + "," + std::to_string(x0) +
                                    ") exceeds frame " + std::to_string(H) + "x" +
                                    std::to_string(W));
    Tensor out({F, h, w, C}, frames.dtype());
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t c = 0; c < C; ++c)
                    out.set(((f * h + y) * w + x) * C + c,
                            frames.at(((f * H + y0 + y) * W + x0 + x) * C + c));
    return out;
}

Tensor hflip(const Tensor& frames, bool negate_channel0) {
    if (frames.ndim() != 4) throw std::invalid_argument("hflip: expects [F,H,W,C]");
    const std::size_t F = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
    Tensor out(frames.dims(), frames.dtype());
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < C; ++c) {
                    double v = frames.at(((f * H + y) * W + (W - 1 - x)) * C + c);
                    if (negate_channel0 && c == 0) v = -v;
                    out.set(((f * H + y) * W + x) * C + c, v);
                }
    return out;
}

AugmentedPair augment_spatial(const VideoClip& v, const FlowClip* f, Rng& rng,
                              const AugmentConfig& cfg) {
    if (!(cfg.min_scale > 0.0 && cfg.min_scale <= cfg.max_scale))
        throw std::invalid_argument("augment: bad scale range");
    const Tensor& frames = v.frames;
    if (frames.ndim() != 4) throw std::invalid_argument("augment: video must be [F,H,W,C]");

    // draw order is part of the determinism contract: scale, crop y, crop x, flip
    const double s = rng.uniform(cfg.min_scale, cfg.max_scale);
    const std::size_t H = frames.dim(1), W = frames.dim(2);
    const std::size_t sh = std::max<std::size_t>(cfg.target_h,
                                                 static_cast<std::size_t>(std::llround(H * s)));
    const std::size_t sw = std::max<std::size_t>(cfg.target_w,
                                                 static_cast<std::size_t>(std::llround(W * s)));
    const std::size_t y0 = rng.range(sh - cfg.target_h + 1);
    const std::size_t x0 = rng.range(sw - cfg.target_w + 1);
    const bool flip = rng.uniform() < cfg.flip_prob;

    auto apply = [&](const Tensor& t, bool is_flow) {
        Tensor r = (t.dim(1) == sh && t.dim(2) == sw) ? t : bilinear_resize(t, sh, sw);
        r = crop_spatial(r, y0, x0, cfg.target_h, cfg.target_w);
        if (flip) r = hflip(r, is_flow);
        return r;
    };

    AugmentedPair out;
    out.video.fps = v.fps;
    out.video.frames = apply(frames, false);
    if (f) {
        if (f->frames.dim(0) != frames.dim(0) || f->frames.dim(1) != H ||
            f->frames.dim(2) != W)
            throw std::invalid_argument("augment: flow geometry does not match video");
        FlowClip fc;
        fc.frames = apply(f->frames, true);
        out.flow = std::move(fc);
    }
    return out;
}

}  // namespace mmvt
