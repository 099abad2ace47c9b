#include "mmvt/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mmvt {

namespace {

using nlohmann::json;

enum class ParamKind { weight, bias, norm_gain, position, cls_token };

struct KindedParam {
    std::string name;
    Tensor* value;
    ParamKind kind;
};

void collect_block(std::vector<KindedParam>& out, const std::string& prefix, BlockParams& b) {
    out.push_back({prefix + ".ln1.gamma", &b.ln1_gamma, ParamKind::norm_gain});
    out.push_back({prefix + ".ln1.beta", &b.ln1_beta, ParamKind::bias});
    out.push_back({prefix + ".attn.wq", &b.wq, ParamKind::weight});
    out.push_back({prefix + ".attn.bq", &b.bq, ParamKind::bias});
    out.push_back({prefix + ".attn.wk", &b.wk, ParamKind::weight});
    out.push_back({prefix + ".attn.bk", &b.bk, ParamKind::bias});
    out.push_back({prefix + ".attn.wv", &b.wv, ParamKind::weight});
    out.push_back({prefix + ".attn.bv", &b.bv, ParamKind::bias});
    out.push_back({prefix + ".attn.wo", &b.wo, ParamKind::weight});
    out.push_back({prefix + ".attn.bo", &b.bo, ParamKind::bias});
    out.push_back({prefix + ".ln2.gamma", &b.ln2_gamma, ParamKind::norm_gain});
    out.push_back({prefix + ".ln2.beta", &b.ln2_beta, ParamKind::bias});
    out.push_back({prefix + ".mlp.w1", &b.w1, ParamKind::weight});
    out.push_back({prefix + ".mlp.b1", &b.b1, ParamKind::bias});
    out.push_back({prefix + ".mlp.w2", &b.w2, ParamKind::weight});
    out.push_back({prefix + ".mlp.b2", &b.b2, ParamKind::bias});
}

std::vector<KindedParam> collect_params(MMModel& m) {
    std::vector<KindedParam> out;
    for (std::size_t v = 0; v < m.views.size(); ++v) {
        ViewEncoder& ve = m.views[v];
        const std::string p = "view" + std::to_string(v);
        out.push_back({p + ".embed.kernel", &ve.embed.kernel, ParamKind::weight});
        out.push_back({p + ".embed.bias", &ve.embed.bias, ParamKind::bias});
        out.push_back({p + ".pos", &ve.pos, ParamKind::position});
        out.push_back({p + ".cls", &ve.cls, ParamKind::cls_token});
        for (std::size_t l = 0; l < ve.blocks.size(); ++l)
            collect_block(out, p + ".block" + std::to_string(l), ve.blocks[l]);
        out.push_back({p + ".out.gamma", &ve.out_gamma, ParamKind::norm_gain});
        out.push_back({p + ".out.beta", &ve.out_beta, ParamKind::bias});
        if (ve.fusion) {
            out.push_back({p + ".fusion.w_in", &ve.fusion->w_in, ParamKind::weight});
            out.push_back({p + ".fusion.b_in", &ve.fusion->b_in, ParamKind::bias});
            out.push_back({p + ".fusion.w_out", &ve.fusion->w_out, ParamKind::weight});
            out.push_back({p + ".fusion.b_out", &ve.fusion->b_out, ParamKind::bias});
        }
    }
    for (std::size_t v = 0; v < m.global_enc.proj_w.size(); ++v) {
        out.push_back({"global.proj" + std::to_string(v) + ".w", &m.global_enc.proj_w[v],
                       ParamKind::weight});
        out.push_back({"global.proj" + std::to_string(v) + ".b", &m.global_enc.proj_b[v],
                       ParamKind::bias});
    }
    out.push_back({"global.cls", &m.global_enc.cls, ParamKind::cls_token});
    for (std::size_t l = 0; l < m.global_enc.blocks.size(); ++l)
        collect_block(out, "global.block" + std::to_string(l), m.global_enc.blocks[l]);
    out.push_back({"global.out.gamma", &m.global_enc.out_gamma, ParamKind::norm_gain});
    out.push_back({"global.out.beta", &m.global_enc.out_beta, ParamKind::bias});
    out.push_back({"head.verb.w", &m.verb_w, ParamKind::weight});
    out.push_back({"head.verb.b", &m.verb_b, ParamKind::bias});
    out.push_back({"head.noun.w", &m.noun_w, ParamKind::weight});
    out.push_back({"head.noun.b", &m.noun_b, ParamKind::bias});
    return out;
}

BlockParams make_block(const BackboneDims& d, DType dt) {
    BlockParams b;
    const auto hidden = static_cast<std::size_t>(d.hidden);
    const auto mlp = static_cast<std::size_t>(d.mlp);
    b.ln1_gamma = Tensor::zeros({hidden}, dt);
    b.ln1_beta = Tensor::zeros({hidden}, dt);
    b.wq = Tensor::zeros({hidden, hidden}, dt);
    b.bq = Tensor::zeros({hidden}, dt);
    b.wk = Tensor::zeros({hidden, hidden}, dt);
    b.bk = Tensor::zeros({hidden}, dt);
    b.wv = Tensor::zeros({hidden, hidden}, dt);
    b.bv = Tensor::zeros({hidden}, dt);
    b.wo = Tensor::zeros({hidden, hidden}, dt);
    b.bo = Tensor::zeros({hidden}, dt);
    b.ln2_gamma = Tensor::zeros({hidden}, dt);
    b.ln2_beta = Tensor::zeros({hidden}, dt);
    b.w1 = Tensor::zeros({hidden, mlp}, dt);
    b.b1 = Tensor::zeros({mlp}, dt);
    b.w2 = Tensor::zeros({mlp, hidden}, dt);
    b.b2 = Tensor::zeros({hidden}, dt);
    b.heads = d.heads;
    return b;
}

}  // namespace

ModelConfig default_config(const ModelSpec& spec) {
    ModelConfig cfg;
    cfg.spec = spec;
    for (const ViewSpec& v : spec.views) cfg.view_dims.push_back(backbone_dims(v.backbone));
    return cfg;
}

std::vector<NamedParam> MMModel::params() {
    std::vector<NamedParam> out;
    for (KindedParam& p : collect_params(*this)) out.push_back({std::move(p.name), p.value});
    return out;
}

std::size_t MMModel::param_count() const {
    std::size_t n = 0;
    for (const KindedParam& p : collect_params(const_cast<MMModel&>(*this))) n += p.value->size();
    return n;
}

MMModel build_model(const ModelConfig& cfg) {
    if (cfg.spec.views.empty()) throw std::invalid_argument("model: spec needs at least one view");
    MMModel m;
    m.cfg = cfg;
    if (m.cfg.view_dims.empty())
        for (const ViewSpec& v : cfg.spec.views) m.cfg.view_dims.push_back(backbone_dims(v.backbone));
    if (m.cfg.view_dims.size() != cfg.spec.views.size())
        throw std::invalid_argument("model: view_dims count does not match view count");
    if (m.cfg.n_verbs < 2 || m.cfg.n_nouns < 2)
        throw std::invalid_argument("model: need at least 2 classes per head");

    const DType dt = m.cfg.dtype;
    const auto& gd = m.cfg.global_dims;
    if (gd.hidden % gd.heads != 0)
        throw std::invalid_argument("model: global hidden not divisible by head count");

    for (std::size_t v = 0; v < cfg.spec.views.size(); ++v) {
        const ViewSpec& vs = cfg.spec.views[v];
        const BackboneDims& d = m.cfg.view_dims[v];
        if (d.hidden % d.heads != 0)
            throw std::invalid_argument("model: view hidden not divisible by head count");
        ViewEncoder ve;
        ve.spec = vs;
        ve.dims = d;
        const TokenGeometry g = token_geometry(vs, m.cfg.frames, m.cfg.height, m.cfg.width);
        ve.t_idx = g.temporal_indices;
        ve.s_tokens = g.spatial_tokens;
        const auto hidden = static_cast<std::size_t>(d.hidden);
        const std::size_t patch = static_cast<std::size_t>(vs.tubelet_t) * kSpatialTubelet *
                                  kSpatialTubelet *
                                  static_cast<std::size_t>(modality_channels(vs.modality));
        ve.embed.kernel = Tensor::zeros({hidden, patch}, dt);
        ve.embed.bias = Tensor::zeros({hidden}, dt);
        ve.pos = Tensor::zeros({ve.t_idx, ve.s_tokens, hidden}, dt);
        ve.cls = Tensor::zeros({hidden}, dt);
        for (int l = 0; l < d.layers; ++l) ve.blocks.push_back(make_block(d, dt));
        ve.out_gamma = Tensor::zeros({hidden}, dt);
        ve.out_beta = Tensor::zeros({hidden}, dt);
        m.views.push_back(std::move(ve));
    }

    // lateral connections between adjacent views: the earlier (written-order)
    // view receives from the later one
    for (std::size_t v = 0; v + 1 < m.views.size(); ++v) {
        const int lo = std::min(m.cfg.view_dims[v].layers, m.cfg.view_dims[v + 1].layers);
        const int depth = m.cfg.fusion_layer >= 0 ? m.cfg.fusion_layer : lo / 2;
        if (depth > lo)
            throw std::invalid_argument("model: fusion layer " + std::to_string(depth) +
                                        " exceeds pair depth " + std::to_string(lo));
        FusionParams f;
        const auto dr = static_cast<std::size_t>(m.cfg.view_dims[v].hidden);
        const auto dd = static_cast<std::size_t>(m.cfg.view_dims[v + 1].hidden);
        f.w_in = Tensor::zeros({dd, dr}, dt);
        f.b_in = Tensor::zeros({dr}, dt);
        f.w_out = Tensor::zeros({dr, dr}, dt);
        f.b_out = Tensor::zeros({dr}, dt);
        f.heads = m.cfg.view_dims[v].heads;
        m.views[v].fusion = std::move(f);
        m.views[v].fusion_depth = depth;
    }

    m.global_enc.dims = gd;
    const auto gh = static_cast<std::size_t>(gd.hidden);
    for (std::size_t v = 0; v < m.views.size(); ++v) {
        m.global_enc.proj_w.push_back(
            Tensor::zeros({static_cast<std::size_t>(m.cfg.view_dims[v].hidden), gh}, dt));
        m.global_enc.proj_b.push_back(Tensor::zeros({gh}, dt));
    }
    m.global_enc.cls = Tensor::zeros({gh}, dt);
    for (int l = 0; l < gd.layers; ++l) m.global_enc.blocks.push_back(make_block(gd, dt));
    m.global_enc.out_gamma = Tensor::zeros({gh}, dt);
    m.global_enc.out_beta = Tensor::zeros({gh}, dt);

    m.verb_w = Tensor::zeros({gh, static_cast<std::size_t>(m.cfg.n_verbs)}, dt);
    m.verb_b = Tensor::zeros({static_cast<std::size_t>(m.cfg.n_verbs)}, dt);
    m.noun_w = Tensor::zeros({gh, static_cast<std::size_t>(m.cfg.n_nouns)}, dt);
    m.noun_b = Tensor::zeros({static_cast<std::size_t>(m.cfg.n_nouns)}, dt);
    return m;
}

MMModel init_params(const ModelConfig& cfg, Rng& rng, double init_scale) {
    MMModel m = build_model(cfg);
    for (KindedParam& p : collect_params(m)) {
        Tensor& t = *p.value;
        const std::size_t n = t.size();
        switch (p.kind) {
            case ParamKind::weight:
            case ParamKind::cls_token:
                for (std::size_t i = 0; i < n; ++i) t.set(i, rng.truncated_normal(init_scale));
                break;
            case ParamKind::norm_gain:
                for (std::size_t i = 0; i < n; ++i) t.set(i, 1.0);
                break;
            case ParamKind::bias:
            case ParamKind::position:
                break;  // already zero
        }
    }
    return m;
}

Tensor tubelet_tokenize(const TubeletEmbedder& e, const ViewSpec& view, const Tensor& input_,
                        const Tensor& pos) {
    Tensor input = input_;
    if (view.modality == Modality::Spectrogram && input.ndim() == 3)
        input = reshape(input, {input.dim(0), input.dim(1), input.dim(2), 1});
    if (input.ndim() != 4)
        throw std::invalid_argument("tokenize: input must be [F,H,W,C], got " +
                                    dims_to_string(input.dims()));
    const auto channels = static_cast<std::size_t>(modality_channels(view.modality));
    if (input.dim(3) != channels)
        throw std::invalid_argument("tokenize: " + std::string(modality_name(view.modality)) +
                                    " view expects " + std::to_string(channels) +
                                    " channels, got " + std::to_string(input.dim(3)));
    const std::size_t F = input.dim(0), H = input.dim(1), W = input.dim(2);
    const auto t = static_cast<std::size_t>(view.tubelet_t);
    if (F % t != 0 || H % kSpatialTubelet != 0 || W % kSpatialTubelet != 0)
        throw std::invalid_argument("tokenize: input " + dims_to_string(input.dims()) +
                                    " not divisible by tubelet " + std::to_string(t) + "x16x16");
    const std::size_t T = F / t, Hp = H / kSpatialTubelet, Wp = W / kSpatialTubelet;
    const std::size_t S = Hp * Wp;
    const std::size_t patch = t * kSpatialTubelet * kSpatialTubelet * channels;
    if (e.kernel.ndim() != 2 || e.kernel.dim(1) != patch)
        throw std::invalid_argument("tokenize: kernel " + dims_to_string(e.kernel.dims()) +
                                    " does not match patch size " + std::to_string(patch));
    const std::size_t hidden = e.kernel.dim(0);

    Tensor x = patch_gather(input, t, kSpatialTubelet, kSpatialTubelet);
    x = add_bias(matmul_nt(x, e.kernel), e.bias);
    x = reshape(x, {T, S, hidden});
    if (!pos.empty()) {
        if (pos.dims() != x.dims())
            throw std::invalid_argument("tokenize: position embedding " +
                                        dims_to_string(pos.dims()) + " does not match tokens " +
                                        dims_to_string(x.dims()));
        x = add(x, pos);
    }
    return x;
}

Tensor adapt_rgb_kernel(const Tensor& rgb_kernel, int target_channels) {
    if (rgb_kernel.ndim() != 2 || rgb_kernel.dim(1) % 3 != 0)
        throw std::invalid_argument("adapt_kernel: source kernel must have 3 input channels, got " +
                                    dims_to_string(rgb_kernel.dims()));
    if (target_channels != 1 && target_channels != 2)
        throw std::invalid_argument("adapt_kernel: target channels must be 1 or 2");
    const std::size_t hidden = rgb_kernel.dim(0);
    const std::size_t taps = rgb_kernel.dim(1) / 3;
    const auto tc = static_cast<std::size_t>(target_channels);
    Tensor out({hidden, taps * tc}, rgb_kernel.dtype());
    for (std::size_t h = 0; h < hidden; ++h) {
        for (std::size_t j = 0; j < taps; ++j) {
            const double mean = (rgb_kernel.at(h * taps * 3 + j * 3) +
                                 rgb_kernel.at(h * taps * 3 + j * 3 + 1) +
                                 rgb_kernel.at(h * taps * 3 + j * 3 + 2)) /
                                3.0;
            for (std::size_t c = 0; c < tc; ++c) out.set(h * taps * tc + j * tc + c, mean);
        }
    }
    return out;
}

Tensor factorised_block(const Tensor& tokens, const BlockParams& p, bool train, double survival,
                        Rng* rng) {
    if (tokens.ndim() != 3)
        throw std::invalid_argument("block: tokens must be [T,N,d], got " +
                                    dims_to_string(tokens.dims()));
    const std::size_t T = tokens.dim(0), N = tokens.dim(1), d = tokens.dim(2);
    const auto heads = static_cast<std::size_t>(p.heads);
    if (d % heads != 0)
        throw std::invalid_argument("block: hidden " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    if (train && survival < 1.0) {
        if (!rng) throw std::invalid_argument("block: stochastic depth needs an rng");
        if (rng->uniform() < 1.0 - survival) return tokens;
    }
    const double resid = train ? 1.0 : survival;
    const std::size_t dh = d / heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto split_heads = [&](const Tensor& x) {
        return reshape(permute(reshape(x, {T, N, heads, dh}), {0, 2, 1, 3}), {T * heads, N, dh});
    };

    Tensor x = tokens;
    {
        Tensor flat = reshape(layer_norm(x, p.ln1_gamma, p.ln1_beta), {T * N, d});
        Tensor q = split_heads(add_bias(matmul(flat, p.wq), p.bq));
        Tensor k = split_heads(add_bias(matmul(flat, p.wk), p.bk));
        Tensor v = split_heads(add_bias(matmul(flat, p.wv), p.bv));
        Tensor attn = softmax(scale(matmul(q, permute(k, {0, 2, 1})), attn_scale), 2);
        Tensor ctx = reshape(permute(reshape(matmul(attn, v), {T, heads, N, dh}), {0, 2, 1, 3}),
                             {T * N, d});
        Tensor out = reshape(add_bias(matmul(ctx, p.wo), p.bo), {T, N, d});
        if (resid != 1.0) out = scale(out, resid);
        x = add(x, out);
    }
    {
        Tensor flat = reshape(layer_norm(x, p.ln2_gamma, p.ln2_beta), {T * N, d});
        Tensor h1 = gelu(add_bias(matmul(flat, p.w1), p.b1));
        Tensor out = reshape(add_bias(matmul(h1, p.w2), p.b2), {T, N, d});
        if (resid != 1.0) out = scale(out, resid);
        x = add(x, out);
    }
    return x;
}

Tensor cross_view_attend(const Tensor& receiver, const Tensor& donor, const FusionParams& p) {
    if (receiver.ndim() != 3 || donor.ndim() != 3)
        throw std::invalid_argument("fusion: token sets must be [T,N,d]");
    const std::size_t nr = receiver.dim(0) * receiver.dim(1);
    const std::size_t nd = donor.dim(0) * donor.dim(1);
    const std::size_t dr = receiver.dim(2), dd = donor.dim(2);
    if (p.w_in.dim(0) != dd || p.w_in.dim(1) != dr)
        throw std::invalid_argument("fusion: projection " + dims_to_string(p.w_in.dims()) +
                                    " does not map donor width " + std::to_string(dd) +
                                    " to receiver width " + std::to_string(dr));
    const auto heads = static_cast<std::size_t>(p.heads);
    if (dr % heads != 0) throw std::invalid_argument("fusion: receiver width not divisible by heads");
    const std::size_t dh = dr / heads;

    Tensor kv = add_bias(matmul(reshape(donor, {nd, dd}), p.w_in), p.b_in);
    auto split_heads = [&](const Tensor& x, std::size_t n) {
        return permute(reshape(x, {n, heads, dh}), {1, 0, 2});
    };
    Tensor q = split_heads(reshape(receiver, {nr, dr}), nr);
    Tensor k = split_heads(kv, nd);
    Tensor attn = softmax(scale(matmul(q, permute(k, {0, 2, 1})),
                                1.0 / std::sqrt(static_cast<double>(dh))),
                          2);
    Tensor ctx = reshape(permute(matmul(attn, k), {1, 0, 2}), {nr, dr});
    Tensor out = add_bias(matmul(ctx, p.w_out), p.b_out);
    out = reshape(out, {receiver.dim(0), receiver.dim(1), dr});
    return add(receiver, out);
}

namespace {

Tensor view_input(const ViewEncoder& ve, const ModelConfig& cfg, const Tensor& raw) {
    if (raw.empty()) throw std::invalid_argument("forward: missing view input");
    Tensor input = raw;
    if (ve.spec.modality == Modality::Spectrogram && input.ndim() == 3)
        input = reshape(input, {input.dim(0), input.dim(1), input.dim(2), 1});
    if (input.ndim() != 4) throw std::invalid_argument("forward: view input must be [F,H,W,C]");
    const std::size_t want_h = ve.spec.modality == Modality::Spectrogram ? kSpecFrames : cfg.height;
    const std::size_t want_w = ve.spec.modality == Modality::Spectrogram ? kSpecBins : cfg.width;
    if (input.dim(0) != cfg.frames || input.dim(1) != want_h || input.dim(2) != want_w)
        throw std::invalid_argument("forward: view input " + dims_to_string(input.dims()) +
                                    " does not match configured geometry [" +
                                    std::to_string(cfg.frames) + "," + std::to_string(want_h) +
                                    "," + std::to_string(want_w) + ",c]");
    if (input.dtype() != cfg.dtype)
        throw std::invalid_argument("forward: input dtype does not match model dtype");
    return input;
}

}  // namespace

ForwardOut forward(const MMModel& m, const std::vector<Tensor>& inputs, bool train_mode,
                   Rng* rng) {
    if (train_mode && !rng) throw std::invalid_argument("forward: train mode requires an rng");
    if (inputs.size() != m.views.size())
        throw std::invalid_argument("forward: model has " + std::to_string(m.views.size()) +
                                    " views but " + std::to_string(inputs.size()) +
                                    " inputs were given");

    const std::size_t n_views = m.views.size();
    std::vector<Tensor> toks(n_views);
    for (std::size_t v = 0; v < n_views; ++v) {
        const ViewEncoder& ve = m.views[v];
        const Tensor input = view_input(ve, m.cfg, inputs[v]);
        Tensor t = tubelet_tokenize(ve.embed, ve.spec, input, ve.pos);
        Tensor cls = tile_leading(reshape(ve.cls, {1, static_cast<std::size_t>(ve.dims.hidden)}),
                                  ve.t_idx);
        toks[v] = concat({cls, t}, 1);  // CLS occupies slot 0 of every index
    }

    std::size_t max_depth = 0;
    for (const ViewEncoder& ve : m.views) max_depth = std::max(max_depth, ve.blocks.size());

    for (std::size_t l = 0; l <= max_depth; ++l) {
        bool any_event = false;
        for (std::size_t v = 0; v + 1 < n_views; ++v)
            any_event = any_event || m.views[v].fusion_depth == static_cast<int>(l);
        if (any_event) {
            // snapshot semantics: all fusions at this depth read pre-fusion states
            const std::vector<Tensor> snap = toks;
            for (std::size_t v = 0; v + 1 < n_views; ++v)
                if (m.views[v].fusion_depth == static_cast<int>(l))
                    toks[v] = cross_view_attend(snap[v], snap[v + 1], *m.views[v].fusion);
        }
        if (l == max_depth) break;
        for (std::size_t v = 0; v < n_views; ++v) {
            const ViewEncoder& ve = m.views[v];
            if (l >= ve.blocks.size()) continue;
            const double survival =
                1.0 - m.cfg.droplayer * static_cast<double>(l + 1) /
                          static_cast<double>(ve.blocks.size());
            toks[v] = factorised_block(toks[v], ve.blocks[l], train_mode, survival, rng);
        }
    }

    const auto gh = static_cast<std::size_t>(m.global_enc.dims.hidden);
    std::vector<Tensor> parts;
    parts.push_back(reshape(m.global_enc.cls, {1, gh}));
    for (std::size_t v = 0; v < n_views; ++v) {
        const ViewEncoder& ve = m.views[v];
        Tensor normed = layer_norm(toks[v], ve.out_gamma, ve.out_beta);
        Tensor cls_seq = reshape(slice(normed, 1, 0, 1),
                                 {ve.t_idx, static_cast<std::size_t>(ve.dims.hidden)});
        parts.push_back(add_bias(matmul(cls_seq, m.global_enc.proj_w[v]), m.global_enc.proj_b[v]));
    }
    Tensor g = concat(parts, 0);
    g = reshape(g, {1, g.dim(0), gh});
    for (const BlockParams& b : m.global_enc.blocks)
        g = factorised_block(g, b, false, 1.0, nullptr);
    g = layer_norm(g, m.global_enc.out_gamma, m.global_enc.out_beta);
    Tensor cls_out = reshape(slice(g, 1, 0, 1), {1, gh});

    ForwardOut out;
    out.verb_logits = reshape(add_bias(matmul(cls_out, m.verb_w), m.verb_b),
                              {static_cast<std::size_t>(m.cfg.n_verbs)});
    out.noun_logits = reshape(add_bias(matmul(cls_out, m.noun_w), m.noun_b),
                              {static_cast<std::size_t>(m.cfg.n_nouns)});
    return out;
}

// ------------------------------------------------------------- checkpoints

namespace {
constexpr char kCkptMagic[8] = {'M', 'M', 'C', 'K', 'P', 'T', '1', '\n'};
constexpr int kCkptVersion = 1;

json dims_to_json(const BackboneDims& d) {
    return json{{"layers", d.layers}, {"heads", d.heads}, {"hidden", d.hidden}, {"mlp", d.mlp}};
}

BackboneDims dims_from_json(const json& j) {
    return {j.at("layers").get<int>(), j.at("heads").get<int>(), j.at("hidden").get<int>(),
            j.at("mlp").get<int>()};
}
}  // namespace

void save_checkpoint(const MMModel& m, const std::string& path) {
    MMModel& mm = const_cast<MMModel&>(m);
    json header{{"version", kCkptVersion},
                {"model", format_model_spec(m.cfg.spec)},
                {"frames", m.cfg.frames},
                {"height", m.cfg.height},
                {"width", m.cfg.width},
                {"n_verbs", m.cfg.n_verbs},
                {"n_nouns", m.cfg.n_nouns},
                {"droplayer", m.cfg.droplayer},
                {"fusion_layer", m.cfg.fusion_layer},
                {"dtype", dtype_name(m.cfg.dtype)},
                {"global_dims", dims_to_json(m.cfg.global_dims)}};
    json vd = json::array();
    for (const BackboneDims& d : m.cfg.view_dims) vd.push_back(dims_to_json(d));
    header["view_dims"] = vd;
    const auto params = collect_params(mm);
    header["params"] = params.size();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kCkptMagic, sizeof(kCkptMagic));
    const std::string hs = header.dump();
    std::uint64_t len = hs.size();
    char lb[8];
    for (int i = 0; i < 8; ++i) lb[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    os.write(lb, 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const KindedParam& p : params) write_mmt(os, *p.value);
    if (!os) throw std::runtime_error("checkpoint: write failed");
}

MMModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic bytes");
    char lb[8];
    is.read(lb, 8);
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
        len |= static_cast<std::uint64_t>(static_cast<unsigned char>(lb[i])) << (8 * i);
    std::string hs(len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("checkpoint: truncated header");

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: invalid header JSON: ") + e.what());
    }
    if (header.at("version").get<int>() != kCkptVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(header.at("version").get<int>()));

    ModelConfig cfg;
    cfg.spec = parse_model_spec(header.at("model").get<std::string>());
    cfg.frames = header.at("frames").get<std::size_t>();
    cfg.height = header.at("height").get<std::size_t>();
    cfg.width = header.at("width").get<std::size_t>();
    cfg.n_verbs = header.at("n_verbs").get<int>();
    cfg.n_nouns = header.at("n_nouns").get<int>();
    cfg.droplayer = header.at("droplayer").get<double>();
    cfg.fusion_layer = header.at("fusion_layer").get<int>();
    cfg.dtype = header.at("dtype").get<std::string>() == "f64" ? DType::f64 : DType::f32;
    cfg.global_dims = dims_from_json(header.at("global_dims"));
    for (const auto& d : header.at("view_dims")) cfg.view_dims.push_back(dims_from_json(d));

    MMModel m = build_model(cfg);
    auto params = collect_params(m);
    if (header.at("params").get<std::size_t>() != params.size())
        throw std::runtime_error("checkpoint: parameter count disagrees with model spec");
    for (KindedParam& p : params) {
        Tensor t = read_mmt(is);
        if (t.dims() != p.value->dims() || t.dtype() != p.value->dtype())
            throw std::runtime_error("checkpoint: parameter " + p.name + " has dims " +
                                     dims_to_string(t.dims()) + ", model expects " +
                                     dims_to_string(p.value->dims()));
        *p.value = std::move(t);
    }
    return m;
}

MMModel load_checkpoint(const std::string& path, const std::string& expect_model) {
    MMModel m = load_checkpoint(path);
    const std::string have = format_model_spec(m.cfg.spec);
    const std::string want = format_model_spec(parse_model_spec(expect_model));
    if (have != want)
        throw std::runtime_error("checkpoint: holds model " + have + ", expected " + want);
    return m;
}

}  // namespace mmvt
