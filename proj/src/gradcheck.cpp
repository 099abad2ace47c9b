#include "mmvt/gradcheck.hpp"

#include <cmath>

#include "mmvt/tape.hpp"
#include "mmvt/trainer.hpp"

namespace mmvt {

GradcheckResult gradcheck_model(MMModel& m, const std::vector<Tensor>& inputs, int verb_target,
                                int noun_target, double h, double smoothing) {
    auto params = m.params();

    auto loss_value = [&]() {
        const ForwardOut out = forward(m, inputs, false, nullptr);
        const Tensor loss = two_head_loss(reshape(out.verb_logits, {1, out.verb_logits.dim(0)}),
                                          reshape(out.noun_logits, {1, out.noun_logits.dim(0)}),
                                          {verb_target}, {noun_target}, smoothing);
        return loss.at(0);
    };

    // reverse-mode gradients, one tape
    std::vector<Tensor> ad;
    {
        Tape tape;
        for (const NamedParam& p : params) tape.watch(*p.value);
        const ForwardOut out = forward(m, inputs, false, nullptr);
        const Tensor loss = two_head_loss(reshape(out.verb_logits, {1, out.verb_logits.dim(0)}),
                                          reshape(out.noun_logits, {1, out.noun_logits.dim(0)}),
                                          {verb_target}, {noun_target}, smoothing);
        const std::vector<Tensor> grads = tape.backward(loss);
        for (const NamedParam& p : params) {
            Tensor g = Tape::grad_of(grads, *p.value);
            if (g.empty()) g = Tensor::zeros(p.value->dims(), p.value->dtype());
            ad.push_back(std::move(g));
        }
        for (const NamedParam& p : params) {
            p.value->clear_node();
            p.value->set_requires_grad(false);
        }
    }

    // the probe loop runs ~2 forwards per element; skip per-op finite scans
    // there (the reverse-mode pass above ran with whatever mode is active)
    struct CheckGuard {
        bool saved = finite_checks_enabled();
        CheckGuard() { set_finite_checks(false); }
        ~CheckGuard() { set_finite_checks(saved); }
    } guard;

    GradcheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& t = *params[pi].value;
        const std::size_t n = t.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double orig = t.at(i);
            t.set(i, orig + h);
            const double fp = loss_value();
            t.set(i, orig - h);
            const double fm = loss_value();
            t.set(i, orig);
            const double fd = (fp - fm) / (2.0 * h);
            const double adv = ad[pi].at(i);
            const double rel = std::fabs(adv - fd) / std::max(std::fabs(adv) + std::fabs(fd), 1e-6);
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_param = params[pi].name;
            }
            ++result.elements_checked;
        }
        ++result.params_checked;
    }
    return result;
}

ModelConfig tiny_gradcheck_config() {
    ModelConfig cfg;
    cfg.spec = parse_model_spec("Ti/2:R+Ti/4:F");
    cfg.view_dims = {{2, 2, 16, 32}, {2, 2, 16, 32}};
    cfg.global_dims = {2, 8, 16, 32};
    cfg.frames = 4;
    cfg.height = 32;
    cfg.width = 32;
    cfg.n_verbs = 5;
    cfg.n_nouns = 7;
    cfg.droplayer = 0.0;
    cfg.fusion_layer = 1;
    cfg.dtype = DType::f64;
    return cfg;
}

std::vector<Tensor> tiny_gradcheck_inputs(const ModelConfig& cfg, Rng& rng) {
    std::vector<Tensor> inputs;
    for (const ViewSpec& v : cfg.spec.views) {
        const std::size_t h = v.modality == Modality::Spectrogram ? kSpecFrames : cfg.height;
        const std::size_t w = v.modality == Modality::Spectrogram ? kSpecBins : cfg.width;
        const auto c = static_cast<std::size_t>(modality_channels(v.modality));
        Tensor t({cfg.frames, h, w, c}, cfg.dtype);
        for (std::size_t i = 0; i < t.size(); ++i) t.set(i, rng.uniform(-1.0, 1.0));
        inputs.push_back(std::move(t));
    }
    return inputs;
}

}  // namespace mmvt
