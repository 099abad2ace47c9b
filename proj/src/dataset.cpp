#include "mmvt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "mmvt/audio.hpp"
#include "mmvt/rng.hpp"

namespace mmvt {

namespace fs = std::filesystem;

ManifestSource::ManifestSource(const std::string& manifest_path, int n_verbs, int n_nouns)
    : entries_(load_manifest(manifest_path)),
      base_dir_(fs::path(manifest_path).parent_path().string()),
      n_verbs_(n_verbs),
      n_nouns_(n_nouns) {}

ClipData ManifestSource::get(std::size_t i) const {
    const LoadedClip lc = load_clip(entries_.at(i), base_dir_, n_verbs_, n_nouns_);
    ClipData c;
    c.id = lc.id;
    c.verb = lc.verb;
    c.noun = lc.noun;
    c.rgb = lc.video.frames;
    if (lc.flow) c.flow = lc.flow->frames;
    if (lc.audio) {
        const int n_frames = static_cast<int>(c.rgb.dim(0));
        c.spec = normalize_stream(extract_stream(*lc.audio, n_frames)).frames;
    }
    return c;
}

namespace {

bool wants(const std::vector<Modality>& mods, Modality m) {
    return std::find(mods.begin(), mods.end(), m) != mods.end();
}

}  // namespace

SyntheticDataset make_synthetic(int n_clips, int n_verbs, int n_nouns, std::size_t frames,
                                std::size_t resolution, const std::vector<Modality>& modalities,
                                std::uint64_t seed) {
    if (n_verbs < 2 || n_nouns < 2)
        throw std::invalid_argument("synthetic: need at least 2 classes per head");
    if (n_clips <= 0 || frames == 0) throw std::invalid_argument("synthetic: empty dataset");

    SyntheticDataset ds;
    ds.n_verbs = n_verbs;
    ds.n_nouns = n_nouns;
    ds.seed = seed;
    const Rng root(seed);
    const std::size_t R = resolution;
    const auto fF = static_cast<double>(frames);

    for (int i = 0; i < n_clips; ++i) {
        // round-robin labels: both histograms stay uniform within 1, and the
        // per-block shift decorrelates the two heads
        const int verb = i % n_verbs;
        const int noun = (i % n_nouns + i / n_nouns) % n_nouns;
        Rng rng = root.fork("clip", static_cast<std::uint64_t>(i));

        ClipData c;
        c.id = "clip" + std::to_string(i);
        c.verb = verb;
        c.noun = noun;

        // Both codes are content-based so they survive the permutation
        // symmetry of zero-initialized position embeddings: the verb sets a
        // temporal oscillation frequency (read off within-tubelet frame
        // differences), the noun a sub-patch spatial frequency that every
        // 16x16 patch sees in full. The noun code is a cosine centered on
        // the image so horizontal flips map it to itself, and it rides on
        // flow's vertical channel, which flips do not negate.
        const double fv = static_cast<double>(verb + 1);        // cycles per clip
        const double fn = 2.0 * static_cast<double>(noun + 1);  // cycles per width
        auto verb_wave = [&](std::size_t t) {
            return std::sin(2.0 * M_PI * fv * (static_cast<double>(t) + 0.5) / fF);
        };
        auto noun_wave = [&](std::size_t x) {
            const double centered = static_cast<double>(x) + 0.5 - static_cast<double>(R) / 2.0;
            return std::cos(2.0 * M_PI * fn * centered / static_cast<double>(R));
        };

        if (wants(modalities, Modality::RGB)) {
            c.rgb = Tensor({frames, R, R, 3}, DType::f32);
            auto p = c.rgb.data<float>();
            std::size_t k = 0;
            for (std::size_t t = 0; t < frames; ++t) {
                const double tm = 0.3 * verb_wave(t);
                for (std::size_t y = 0; y < R; ++y)
                    for (std::size_t x = 0; x < R; ++x) {
                        const double sp = 0.3 * noun_wave(x);
                        for (std::size_t ch = 0; ch < 3; ++ch) {
                            const double v = 0.5 + tm + sp + 0.02 * rng.normal();
                            p[k++] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                        }
                    }
            }
        }
        if (wants(modalities, Modality::Flow)) {
            c.flow = Tensor({frames, R, R, 2}, DType::f32);
            auto p = c.flow.data<float>();
            std::size_t k = 0;
            for (std::size_t t = 0; t < frames; ++t) {
                const double tm = 0.6 * verb_wave(t);
                for (std::size_t y = 0; y < R; ++y)
                    for (std::size_t x = 0; x < R; ++x) {
                        p[k++] = static_cast<float>(tm + 0.03 * rng.normal());
                        p[k++] = static_cast<float>(0.6 * noun_wave(x) + 0.03 * rng.normal());
                    }
            }
        }
        if (wants(modalities, Modality::Spectrogram)) {
            // audio carries both signals: the noun picks the carrier tone,
            // the verb the amplitude-modulation rate
            const int sr = 16000;
            const std::size_t n_samples = frames * static_cast<std::size_t>(sr) / 25;
            std::vector<float> wave(n_samples);
            const double carrier = 400.0 + 250.0 * static_cast<double>(noun);
            const double mod_hz = 0.5 * fv * 25.0 / fF;  // fv cycles over the clip
            for (std::size_t s = 0; s < n_samples; ++s) {
                const double ts = static_cast<double>(s) / sr;
                const double env = 0.55 + 0.45 * std::sin(2.0 * M_PI * mod_hz * ts);
                const double v = 0.6 * env * std::sin(2.0 * M_PI * carrier * ts) +
                                 0.01 * rng.normal();
                wave[s] = static_cast<float>(std::clamp(v, -1.0, 1.0));
            }
            AudioClip a;
            a.samples = wave;
            a.sample_rate = sr;
            c.spec = normalize_stream(extract_stream(a, static_cast<int>(frames))).frames;
            ds.audio.push_back(std::move(wave));
        } else {
            ds.audio.emplace_back();
        }
        ds.clips.push_back(std::move(c));
    }
    return ds;
}

void export_dataset(const SyntheticDataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < ds.clips.size(); ++i) {
        const ClipData& c = ds.clips[i];
        ManifestEntry e;
        e.id = c.id;
        e.verb = c.verb;
        e.noun = c.noun;
        if (c.rgb.empty()) throw std::runtime_error("export: clip " + c.id + " has no video");
        e.video = c.id + "_rgb.mmt";
        save_mmt(c.rgb, (fs::path(dir) / e.video).string());
        if (!c.flow.empty()) {
            e.flow = c.id + "_flow.mmt";
            save_mmt(c.flow, (fs::path(dir) / e.flow).string());
        }
        if (!ds.audio[i].empty()) {
            e.audio = c.id + ".wav";
            write_wav_pcm16((fs::path(dir) / e.audio).string(), ds.audio[i], 16000);
        }
        entries.push_back(std::move(e));
    }
    save_manifest(entries, (fs::path(dir) / "manifest.json").string());
}

ClipData crop_clip(const ClipData& c, std::size_t start, std::size_t frames) {
    ClipData out;
    out.id = c.id;
    out.verb = c.verb;
    out.noun = c.noun;
    auto cut = [&](const Tensor& t) {
        if (t.empty()) return Tensor{};
        return crop_time(loop_frames(t, frames), start, frames);
    };
    out.rgb = cut(c.rgb);
    out.flow = cut(c.flow);
    out.spec = cut(c.spec);
    return out;
}

std::vector<Tensor> assemble_views(const ModelSpec& spec, const ClipData& c) {
    std::vector<Tensor> inputs;
    for (const ViewSpec& v : spec.views) {
        const Tensor* t = nullptr;
        switch (v.modality) {
            case Modality::RGB: t = &c.rgb; break;
            case Modality::Flow: t = &c.flow; break;
            case Modality::Spectrogram: t = &c.spec; break;
        }
        if (t->empty())
            throw std::runtime_error("clip " + c.id + ": missing " +
                                     modality_name(v.modality) + " stream required by the model");
        inputs.push_back(*t);
    }
    return inputs;
}

}  // namespace mmvt
