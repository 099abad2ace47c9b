#pragma once

#include <string>
#include <vector>

#include "mmvt/dataset.hpp"
#include "mmvt/model.hpp"

namespace mmvt {

// cosine learning-rate schedule with a linear warm up
struct Schedule {
    double base_lr = 0.4;  // the reference configuration trains at 0.4
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;
};

double lr_at(const Schedule& s, std::size_t step);

// sum of the two smoothed cross-entropies, equal weights
Tensor two_head_loss(const Tensor& verb_logits, const Tensor& noun_logits,
                     const std::vector<int>& verb_targets, const std::vector<int>& noun_targets,
                     double smoothing = 0.1);

// SGD with momentum 0.9: v <- mu*v + g; p <- p - lr*v
struct OptState {
    std::vector<Tensor> velocity;
    double momentum = 0.9;
    std::size_t step = 0;
};

OptState make_opt_state(const std::vector<NamedParam>& params);
void sgd_step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads,
              OptState& opt, double lr);

struct TrainConfig {
    double base_lr = 0.05;  // desk-scale default (paper reference: 0.4 at batch 128)
    std::size_t batch_size = 8;
    int epochs = 10;
    double warmup_frac = 0.05;
    double smoothing = 0.1;
    std::uint64_t seed = 0;
    bool augment = true;
    int threads = 1;
    std::size_t max_steps = 0;      // 0 = run all epochs
    bool stop_on_perfect = false;   // stop once eval accuracy hits 1.0 on both heads
    std::size_t eval_every = 0;     // steps between full-train evals; 0 = once per epoch
};

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double verb_acc = 0.0;  // batch accuracy
    double noun_acc = 0.0;
    bool has_eval = false;
    double eval_verb_acc = 0.0;  // full train set, eval mode, no augmentation
    double eval_noun_acc = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> log;
    std::size_t steps_run = 0;
    double final_eval_verb_acc = 0.0;
    double final_eval_noun_acc = 0.0;
    long perfect_at_step = -1;  // first step where eval hit 1.0/1.0
};

TrainResult train(MMModel& model, const ClipSource& data, const TrainConfig& cfg);

void write_metric_log(const std::vector<StepRecord>& log, const std::string& path);

// full-set eval-mode accuracy (single temporal crop at 0, no augmentation)
struct EvalAccuracy {
    double verb = 0.0;
    double noun = 0.0;
};
EvalAccuracy eval_train_accuracy(const MMModel& model, const ClipSource& data, int threads = 1);

}  // namespace mmvt
