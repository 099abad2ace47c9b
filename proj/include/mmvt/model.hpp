#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmvt/model_spec.hpp"
#include "mmvt/ops.hpp"
#include "mmvt/rng.hpp"
#include "mmvt/tensor.hpp"

namespace mmvt {

// Multiview multimodal transformer: per-view tubelet embedding, factorised
// per-view encoder stacks (self-attention only among tokens that share a
// temporal index), cross-view attention between adjacent views at one fusion
// depth, a global encoder over the per-index CLS tokens of every view, and
// verb/noun heads reading the global CLS state.

struct TubeletEmbedder {
    Tensor kernel;  // [hidden, tubelet_t*16*16*channels], channel axis fastest
    Tensor bias;    // [hidden]
};

struct BlockParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [d,d] / [d]
    Tensor ln2_gamma, ln2_beta;
    Tensor w1, b1;  // [d,mlp] / [mlp]
    Tensor w2, b2;  // [mlp,d] / [d]
    int heads = 1;
};

// receiver-side projections for one lateral connection; keys and values are
// the donor tokens mapped into the receiver width
struct FusionParams {
    Tensor w_in, b_in;    // [d_donor, d_recv] / [d_recv]
    Tensor w_out, b_out;  // [d_recv, d_recv] / [d_recv]
    int heads = 1;
};

struct ViewEncoder {
    ViewSpec spec;
    BackboneDims dims;
    TubeletEmbedder embed;
    Tensor pos;  // [T,S,hidden], learned, zero-init
    Tensor cls;  // [hidden], replicated to every temporal index
    std::vector<BlockParams> blocks;
    Tensor out_gamma, out_beta;            // final pre-extraction norm
    std::optional<FusionParams> fusion;    // receives from the next view
    int fusion_depth = -1;                 // block index the fusion precedes
    std::size_t t_idx = 0, s_tokens = 0;
};

struct GlobalEncoder {
    BackboneDims dims;
    std::vector<Tensor> proj_w, proj_b;  // per view, [d_view,768] / [768]
    Tensor cls;
    std::vector<BlockParams> blocks;
    Tensor out_gamma, out_beta;
};

struct ModelConfig {
    ModelSpec spec;
    std::size_t frames = 64;
    std::size_t height = 224;
    std::size_t width = 224;
    int n_verbs = 97;   // Epic-Kitchens-100 convention
    int n_nouns = 300;
    std::vector<BackboneDims> view_dims;  // defaults to the backbone table
    BackboneDims global_dims = global_encoder_dims();
    double droplayer = 0.1;
    int fusion_layer = -1;  // -1: floor(min(pair depth)/2) per adjacent pair
    DType dtype = DType::f32;
};

ModelConfig default_config(const ModelSpec& spec);

struct NamedParam {
    std::string name;
    Tensor* value;
};

struct MMModel {
    ModelConfig cfg;
    std::vector<ViewEncoder> views;
    GlobalEncoder global_enc;
    Tensor verb_w, verb_b;  // [768,n_verbs] / [n_verbs]
    Tensor noun_w, noun_b;

    std::vector<NamedParam> params();
    std::size_t param_count() const;
};

// zero-filled parameters with the full geometry resolved and validated
MMModel build_model(const ModelConfig& cfg);

// truncated-normal weights (sigma = init_scale, clipped at 2 sigma), zero
// biases and position embeddings, unit layer-norm gains
MMModel init_params(const ModelConfig& cfg, Rng& rng, double init_scale = 0.02);

// input [F,H,W,C] (spectrograms may come as [F,96,64]) -> [T,S,hidden] with
// the learned position embedding added
Tensor tubelet_tokenize(const TubeletEmbedder& e, const ViewSpec& view, const Tensor& input,
                        const Tensor& pos);

// mean over the 3 source channels per spatio-temporal tap, tiled to
// target_channels (1=spectrogram, 2=flow)
Tensor adapt_rgb_kernel(const Tensor& rgb_kernel, int target_channels);

// pre-norm attention + MLP over each temporal index independently; in train
// mode the whole block is skipped with probability 1-survival, in eval mode
// both residual branches are scaled by survival
Tensor factorised_block(const Tensor& tokens, const BlockParams& p, bool train, double survival,
                        Rng* rng);

// queries = receiver tokens, keys/values = donor tokens projected into the
// receiver width, attended over the donor's full flattened token set;
// output is projected and residual-added to the receiver
Tensor cross_view_attend(const Tensor& receiver, const Tensor& donor, const FusionParams& p);

struct ForwardOut {
    Tensor verb_logits;  // [n_verbs]
    Tensor noun_logits;  // [n_nouns]
};

ForwardOut forward(const MMModel& m, const std::vector<Tensor>& inputs, bool train_mode,
                   Rng* rng = nullptr);

void save_checkpoint(const MMModel& m, const std::string& path);
MMModel load_checkpoint(const std::string& path);
// throws if the stored variant string differs from expect_model
MMModel load_checkpoint(const std::string& path, const std::string& expect_model);

}  // namespace mmvt
