#include "mmvt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mmvt/audio.hpp"
#include "mmvt/parallel.hpp"
#include "mmvt/tape.hpp"

namespace mmvt {

double lr_at(const Schedule& s, std::size_t step) {
    if (s.warmup_steps >= s.total_steps)
        throw std::invalid_argument("schedule: warmup_steps must be below total_steps");
    if (step > s.total_steps)
        throw std::invalid_argument("schedule: step " + std::to_string(step) +
                                    " beyond total " + std::to_string(s.total_steps));
    if (step < s.warmup_steps)
        return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    const double progress = static_cast<double>(step - s.warmup_steps) /
                            static_cast<double>(s.total_steps - s.warmup_steps);
    return 0.5 * s.base_lr * (1.0 + std::cos(M_PI * progress));
}

Tensor two_head_loss(const Tensor& verb_logits, const Tensor& noun_logits,
                     const std::vector<int>& verb_targets, const std::vector<int>& noun_targets,
                     double smoothing) {
    return add(cross_entropy_smoothed(verb_logits, verb_targets, smoothing),
               cross_entropy_smoothed(noun_logits, noun_targets, smoothing));
}

OptState make_opt_state(const std::vector<NamedParam>& params) {
    OptState opt;
    for (const NamedParam& p : params)
        opt.velocity.push_back(Tensor::zeros(p.value->dims(), p.value->dtype()));
    return opt;
}

void sgd_step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads,
              OptState& opt, double lr) {
    if (params.size() != grads.size() || params.size() != opt.velocity.size())
        throw std::invalid_argument("sgd: parameter/gradient/velocity counts disagree");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].value;
        Tensor& v = opt.velocity[i];
        const Tensor& g = grads[i];
        if (!g.empty() && g.dims() != p.dims())
            throw std::invalid_argument("sgd: gradient shape mismatch for " + params[i].name);
        const std::size_t n = p.size();
        for (std::size_t k = 0; k < n; ++k) {
            const double vel = opt.momentum * v.at(k) + (g.empty() ? 0.0 : g.at(k));
            v.set(k, vel);
            p.set(k, p.at(k) - lr * vel);
        }
    }
    ++opt.step;
}

namespace {

std::size_t stream_frames(const ClipData& c) {
    if (!c.rgb.empty()) return c.rgb.dim(0);
    if (!c.flow.empty()) return c.flow.dim(0);
    if (!c.spec.empty()) return c.spec.dim(0);
    throw std::runtime_error("clip " + c.id + " has no modality streams");
}

// temporal crop + train-time augmentation for one sample; rng draws happen in
// a fixed order so the stream is reproducible from (seed, epoch, sample-index)
ClipData prepare_sample(const ClipData& raw, const ModelConfig& mcfg, bool augment, Rng& rng) {
    const std::size_t frames = mcfg.frames;
    const std::size_t n = std::max(stream_frames(raw), frames);
    const std::size_t start = temporal_sample(n, frames, true, &rng);
    ClipData c = crop_clip(raw, start, frames);
    if (!augment) return c;

    if (!c.rgb.empty()) {
        AugmentConfig acfg;
        acfg.target_h = mcfg.height;
        acfg.target_w = mcfg.width;
        VideoClip v{c.rgb};
        FlowClip f;
        const bool has_flow = !c.flow.empty();
        if (has_flow) f.frames = c.flow;
        AugmentedPair aug = augment_spatial(v, has_flow ? &f : nullptr, rng, acfg);
        c.rgb = std::move(aug.video.frames);
        if (has_flow) c.flow = std::move(aug.flow->frames);
    }
    if (!c.spec.empty()) {
        SpectrogramStream s{c.spec, true};
        c.spec = spec_augment(s, rng).frames;
    }
    return c;
}

std::vector<std::size_t> epoch_order(std::size_t n, Rng rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.range(i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace

EvalAccuracy eval_train_accuracy(const MMModel& model, const ClipSource& data, int threads) {
    const std::size_t n = data.size();
    std::vector<int> verb_ok(n, 0), noun_ok(n, 0);
    parallel_for(n, threads, [&](std::size_t i) {
        const ClipData raw = data.get(i);
        const ClipData c = crop_clip(raw, 0, model.cfg.frames);
        const ForwardOut out = forward(model, assemble_views(model.cfg.spec, c), false);
        verb_ok[i] = argmax(out.verb_logits) == static_cast<std::size_t>(c.verb) ? 1 : 0;
        noun_ok[i] = argmax(out.noun_logits) == static_cast<std::size_t>(c.noun) ? 1 : 0;
    });
    EvalAccuracy acc;
    for (std::size_t i = 0; i < n; ++i) {
        acc.verb += verb_ok[i];
        acc.noun += noun_ok[i];
    }
    acc.verb /= static_cast<double>(n);
    acc.noun /= static_cast<double>(n);
    return acc;
}

TrainResult train(MMModel& model, const ClipSource& data, const TrainConfig& cfg) {
    const std::size_t n = data.size();
    if (n == 0) throw std::invalid_argument("train: dataset is empty");
    if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");

    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t total = steps_per_epoch * static_cast<std::size_t>(std::max(cfg.epochs, 1));
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

    Schedule sched;
    sched.base_lr = cfg.base_lr;
    sched.total_steps = total;
    sched.warmup_steps = std::min(
        static_cast<std::size_t>(std::llround(cfg.warmup_frac * static_cast<double>(total))),
        total - 1);

    const Rng root(cfg.seed);
    auto params = model.params();
    OptState opt = make_opt_state(params);
    const std::size_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;

    TrainResult result;
    std::vector<std::size_t> order;
    std::size_t order_epoch = static_cast<std::size_t>(-1);

    for (std::size_t step = 0; step < total; ++step) {
        const std::size_t epoch = step / steps_per_epoch;
        const std::size_t pos = (step % steps_per_epoch) * cfg.batch_size;
        if (epoch != order_epoch) {
            order = epoch_order(n, root.fork("shuffle", epoch));
            order_epoch = epoch;
        }
        const std::size_t bs = std::min(cfg.batch_size, n - pos);

        std::vector<ClipData> batch(bs);
        parallel_for(bs, cfg.threads, [&](std::size_t i) {
            Rng srng = root.fork("sample", (static_cast<std::uint64_t>(epoch) << 32) |
                                               static_cast<std::uint64_t>(pos + i));
            batch[i] = prepare_sample(data.get(order[pos + i]), model.cfg, cfg.augment, srng);
        });

        const double lr = lr_at(sched, step);
        Rng drop_rng = root.fork("droplayer", step);

        StepRecord rec;
        rec.step = step + 1;
        rec.lr = lr;
        {
            // tape scope: released before the eval pass below runs
            Tape tape;
            for (const NamedParam& p : params) tape.watch(*p.value);

            std::vector<Tensor> verb_rows, noun_rows;
            std::vector<int> verb_targets, noun_targets;
            std::size_t verb_hit = 0, noun_hit = 0;
            for (const ClipData& c : batch) {
                const ForwardOut out =
                    forward(model, assemble_views(model.cfg.spec, c), true, &drop_rng);
                verb_hit += argmax(out.verb_logits) == static_cast<std::size_t>(c.verb) ? 1 : 0;
                noun_hit += argmax(out.noun_logits) == static_cast<std::size_t>(c.noun) ? 1 : 0;
                verb_rows.push_back(reshape(out.verb_logits, {1, out.verb_logits.dim(0)}));
                noun_rows.push_back(reshape(out.noun_logits, {1, out.noun_logits.dim(0)}));
                verb_targets.push_back(c.verb);
                noun_targets.push_back(c.noun);
            }
            const Tensor loss = two_head_loss(concat(verb_rows, 0), concat(noun_rows, 0),
                                              verb_targets, noun_targets, cfg.smoothing);

            const std::vector<Tensor> node_grads = tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (const NamedParam& p : params)
                grads.push_back(Tape::grad_of(node_grads, *p.value));
            sgd_step(params, grads, opt, lr);

            rec.loss = loss.at(0);
            rec.verb_acc = static_cast<double>(verb_hit) / static_cast<double>(bs);
            rec.noun_acc = static_cast<double>(noun_hit) / static_cast<double>(bs);
        }

        if ((step + 1) % eval_every == 0 || step + 1 == total) {
            const EvalAccuracy acc = eval_train_accuracy(model, data, cfg.threads);
            rec.has_eval = true;
            rec.eval_verb_acc = acc.verb;
            rec.eval_noun_acc = acc.noun;
            result.final_eval_verb_acc = acc.verb;
            result.final_eval_noun_acc = acc.noun;
            if (acc.verb == 1.0 && acc.noun == 1.0 && result.perfect_at_step < 0)
                result.perfect_at_step = static_cast<long>(step + 1);
        }
        result.log.push_back(rec);
        result.steps_run = step + 1;
        if (cfg.stop_on_perfect && result.perfect_at_step >= 0) break;
    }
    return result;
}

void write_metric_log(const std::vector<StepRecord>& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("metrics: cannot open " + path + " for writing");
    for (const StepRecord& r : log) {
        nlohmann::json j{{"step", r.step},   {"lr", r.lr},
                         {"loss", r.loss},   {"verb_acc", r.verb_acc},
                         {"noun_acc", r.noun_acc}};
        if (r.has_eval) {
            j["eval_verb_acc"] = r.eval_verb_acc;
            j["eval_noun_acc"] = r.eval_noun_acc;
        }
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("metrics: write failed");
}

}  // namespace mmvt
