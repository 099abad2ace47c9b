#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmvt/model_spec.hpp"
#include "mmvt/tensor.hpp"
#include "mmvt/visual.hpp"

namespace mmvt {

// one clip with whatever modality streams exist for it; absent streams are
// empty tensors, never zero-filled stand-ins
struct ClipData {
    std::string id;
    Tensor rgb;   // [F,H,W,3]
    Tensor flow;  // [F,H,W,2]
    Tensor spec;  // [F,96,64], normalized to [-1,1]
    int verb = 0;
    int noun = 0;
};

class ClipSource {
public:
    virtual ~ClipSource() = default;
    virtual std::size_t size() const = 0;
    virtual ClipData get(std::size_t i) const = 0;
};

// manifest-backed source; spectrogram streams are extracted from the wav at
// load time, one image per video frame
class ManifestSource : public ClipSource {
public:
    ManifestSource(const std::string& manifest_path, int n_verbs, int n_nouns);
    std::size_t size() const override { return entries_.size(); }
    ClipData get(std::size_t i) const override;
    const std::vector<ManifestEntry>& entries() const { return entries_; }

private:
    std::vector<ManifestEntry> entries_;
    std::string base_dir_;
    int n_verbs_;
    int n_nouns_;
};

// Deterministic stand-in corpus with planted class signals: the verb label
// drives a temporal modulation frequency, the noun label a spatial (or
// spectral) pattern, so both heads are learnable and neither signal encodes
// the other label.
struct SyntheticDataset : ClipSource {
    std::vector<ClipData> clips;
    std::vector<std::vector<float>> audio;  // per clip, 16 kHz; empty unless S requested
    int n_verbs = 0;
    int n_nouns = 0;
    std::uint64_t seed = 0;

    std::size_t size() const override { return clips.size(); }
    ClipData get(std::size_t i) const override { return clips.at(i); }
};

SyntheticDataset make_synthetic(int n_clips, int n_verbs, int n_nouns, std::size_t frames,
                                std::size_t resolution, const std::vector<Modality>& modalities,
                                std::uint64_t seed);

// writes manifest.json plus per-clip .mmt/.wav files into dir
void export_dataset(const SyntheticDataset& ds, const std::string& dir);

// loops every present stream to at least `frames` and crops [start, start+frames)
ClipData crop_clip(const ClipData& c, std::size_t start, std::size_t frames);

// one input tensor per view, drawn from the clip's modality streams
std::vector<Tensor> assemble_views(const ModelSpec& spec, const ClipData& c);

}  // namespace mmvt
