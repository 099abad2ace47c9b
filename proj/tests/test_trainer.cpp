#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmvt/tape.hpp"
#include "mmvt/trainer.hpp"

using namespace mmvt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(std::size_t frames = 8, std::size_t res = 16) {
    ModelConfig cfg;
    cfg.spec = parse_model_spec("Ti/2:R+Ti/2:F");
    cfg.view_dims = {{1, 2, 12, 24}, {1, 2, 12, 24}};
    cfg.global_dims = {1, 4, 12, 24};
    cfg.frames = frames;
    cfg.height = res;
    cfg.width = res;
    cfg.n_verbs = 4;
    cfg.n_nouns = 4;
    cfg.droplayer = 0.0;
    cfg.fusion_layer = 0;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("lr schedule endpoints and shape") {
    Schedule s{0.4, 100, 1000};
    CHECK(lr_at(s, 0) == 0.0);
    CHECK(lr_at(s, 100) == 0.4);
    CHECK(lr_at(s, 1000) < 1e-12);
    CHECK(lr_at(s, 50) == doctest::Approx(0.2));

    // continuous at the warmup boundary, non-increasing after it
    CHECK(lr_at(s, 99) == doctest::Approx(0.4 * 99 / 100.0));
    double prev = lr_at(s, 100);
    for (std::size_t step = 101; step <= 1000; step += 7) {
        const double lr = lr_at(s, step);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
    CHECK_THROWS_AS(lr_at(s, 1001), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(Schedule{0.4, 10, 10}, 5), std::invalid_argument);
}

TEST_CASE("two-head loss: uniform analytic value, perfect peak, formula oracle") {
    const Tensor uniform_v = Tensor::zeros({1, 4}, DType::f64);
    const Tensor uniform_n = Tensor::zeros({1, 4}, DType::f64);
    CHECK(two_head_loss(uniform_v, uniform_n, {1}, {2}, 0.0).at(0) ==
          doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));

    Tensor peak_v = Tensor::zeros({1, 4}, DType::f64);
    peak_v.set(1, 60.0);
    Tensor peak_n = Tensor::zeros({1, 4}, DType::f64);
    peak_n.set(2, 60.0);
    CHECK(two_head_loss(peak_v, peak_n, {1}, {2}, 0.0).at(0) < 1e-10);

    // random logits against a direct-summation oracle at smoothing 0.1
    Rng rng(404);
    Tensor lv({2, 3}, DType::f64), ln_({2, 5}, DType::f64);
    for (std::size_t i = 0; i < lv.size(); ++i) lv.set(i, rng.uniform(-2, 2));
    for (std::size_t i = 0; i < ln_.size(); ++i) ln_.set(i, rng.uniform(-2, 2));
    const std::vector<int> tv{0, 2}, tn{4, 1};
    auto ce = [](const Tensor& logits, const std::vector<int>& targets, double s) {
        const std::size_t B = logits.dim(0), C = logits.dim(1);
        double total = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            double denom = 0.0;
            for (std::size_t c = 0; c < C; ++c) denom += std::exp(logits.at(b * C + c));
            for (std::size_t c = 0; c < C; ++c) {
                const double q =
                    c == static_cast<std::size_t>(targets[b]) ? 1.0 - s : s / (C - 1.0);
                total -= q * std::log(std::exp(logits.at(b * C + c)) / denom);
            }
        }
        return total / B;
    };
    CHECK(two_head_loss(lv, ln_, tv, tn, 0.1).at(0) ==
          doctest::Approx(ce(lv, tv, 0.1) + ce(ln_, tn, 0.1)).epsilon(1e-10));
}

TEST_CASE("loss is invariant to shifting all logits of one head") {
    Rng rng(405);
    Tensor lv({1, 6}, DType::f64), ln_({1, 6}, DType::f64);
    for (std::size_t i = 0; i < 6; ++i) {
        lv.set(i, rng.uniform(-1, 1));
        ln_.set(i, rng.uniform(-1, 1));
    }
    const double base = two_head_loss(lv, ln_, {2}, {3}, 0.1).at(0);
    Tensor shifted = lv;
    for (std::size_t i = 0; i < 6; ++i) shifted.set(i, shifted.at(i) + 11.5);
    CHECK(two_head_loss(shifted, ln_, {2}, {3}, 0.1).at(0) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("sgd momentum recurrence") {
    Tensor p = Tensor::from_values({3}, {1.0, 2.0, 3.0}, DType::f64);
    std::vector<NamedParam> params{{"p", &p}};
    OptState opt = make_opt_state(params);

    // zero grads leave parameters alone and decay the velocity
    opt.velocity[0].set(0, 1.0);
    sgd_step(params, {Tensor::zeros({3}, DType::f64)}, opt, 0.1);
    CHECK(p.at(0) == doctest::Approx(1.0 - 0.1 * 0.9));
    CHECK(opt.velocity[0].at(0) == doctest::Approx(0.9));
    CHECK(p.at(1) == 2.0);
    CHECK(opt.step == 1);

    // fresh state: first step is plain SGD
    p = Tensor::from_values({1}, {5.0}, DType::f64);
    params = {{"p", &p}};
    opt = make_opt_state(params);
    const Tensor g = Tensor::from_values({1}, {2.0}, DType::f64);
    sgd_step(params, {g}, opt, 0.1);
    CHECK(p.at(0) == doctest::Approx(5.0 - 0.1 * 2.0).epsilon(1e-12));

    // second step with the same gradient: v = 0.9*2 + 2 = 3.8,
    // total update = lr * g * (1 + 1.9)
    sgd_step(params, {g}, opt, 0.1);
    CHECK(p.at(0) == doctest::Approx(5.0 - 0.1 * 2.0 * 2.9).epsilon(1e-12));

    CHECK_THROWS_AS(sgd_step(params, {Tensor::zeros({2}, DType::f64)}, opt, 0.1),
                    std::invalid_argument);
}

TEST_CASE("synthetic dataset is seed-deterministic with near-uniform labels") {
    const auto mods = std::vector<Modality>{Modality::RGB, Modality::Flow};
    const SyntheticDataset a = make_synthetic(10, 4, 4, 4, 16, mods, 7);
    const SyntheticDataset b = make_synthetic(10, 4, 4, 4, 16, mods, 7);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(a.clips[i].verb == b.clips[i].verb);
        CHECK(a.clips[i].noun == b.clips[i].noun);
        CHECK(std::memcmp(a.clips[i].rgb.data<float>().data(), b.clips[i].rgb.data<float>().data(),
                          a.clips[i].rgb.size() * sizeof(float)) == 0);
        CHECK(a.clips[i].flow.dims() == std::vector<std::size_t>{4, 16, 16, 2});
    }

    std::vector<int> verb_hist(4, 0), noun_hist(4, 0);
    for (const ClipData& c : a.clips) {
        ++verb_hist[static_cast<std::size_t>(c.verb)];
        ++noun_hist[static_cast<std::size_t>(c.noun)];
    }
    auto spread = [](const std::vector<int>& h) {
        int lo = h[0], hi = h[0];
        for (int v : h) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return hi - lo;
    };
    CHECK(spread(verb_hist) <= 1);
    CHECK(spread(noun_hist) <= 1);

    CHECK_THROWS_AS(make_synthetic(4, 1, 4, 4, 16, mods, 0), std::invalid_argument);
}

TEST_CASE("a linear probe on raw pixels beats chance on both tasks") {
    const SyntheticDataset ds =
        make_synthetic(32, 4, 4, 8, 16, {Modality::RGB}, 11);
    const std::size_t dim = 8 * 16 * 16 * 3;
    Tensor x({32, dim}, DType::f32);
    std::vector<int> verbs, nouns;
    for (std::size_t i = 0; i < 32; ++i) {
        for (std::size_t k = 0; k < dim; ++k) x.set(i * dim + k, ds.clips[i].rgb.at(k));
        verbs.push_back(ds.clips[i].verb);
        nouns.push_back(ds.clips[i].noun);
    }

    auto probe_accuracy = [&](const std::vector<int>& targets) {
        Tensor w = Tensor::zeros({dim, 4}, DType::f32);
        Tensor b = Tensor::zeros({4}, DType::f32);
        for (int step = 0; step < 150; ++step) {
            Tape tape;
            tape.watch(w);
            tape.watch(b);
            const Tensor logits = add_bias(matmul(x, w), b);
            const Tensor loss = cross_entropy_smoothed(logits, targets, 0.0);
            const auto grads = tape.backward(loss);
            const Tensor& gw = Tape::grad_of(grads, w);
            const Tensor& gb = Tape::grad_of(grads, b);
            for (std::size_t i = 0; i < w.size(); ++i) w.set(i, w.at(i) - 0.5 * gw.at(i));
            for (std::size_t i = 0; i < b.size(); ++i) b.set(i, b.at(i) - 0.5 * gb.at(i));
            w.clear_node();
            b.clear_node();
        }
        const Tensor logits = add_bias(matmul(x, w), b);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < 32; ++i) {
            const Tensor row = reshape(slice(logits, 0, i, 1), {4});
            hits += argmax(row) == static_cast<std::size_t>(targets[i]) ? 1 : 0;
        }
        return static_cast<double>(hits) / 32.0;
    };

    CHECK(probe_accuracy(verbs) > 0.375);  // chance is 0.25
    CHECK(probe_accuracy(nouns) > 0.375);
}

TEST_CASE("train: initial loss near ln(Cv)+ln(Cn), deterministic logs") {
    const ModelConfig mcfg = tiny_config();
    const SyntheticDataset ds =
        make_synthetic(8, 4, 4, mcfg.frames, mcfg.height, {Modality::RGB, Modality::Flow}, 3);

    TrainConfig tc;
    tc.base_lr = 0.02;
    tc.batch_size = 4;
    tc.epochs = 2;
    tc.seed = 5;
    tc.augment = true;

    Rng prng(1);
    MMModel m1 = init_params(mcfg, prng);
    const TrainResult r1 = train(m1, ds, tc);
    REQUIRE(!r1.log.empty());
    const double expect0 = std::log(4.0) + std::log(4.0);
    CHECK(r1.log[0].loss == doctest::Approx(expect0).epsilon(0.10));

    Rng prng2(1);
    MMModel m2 = init_params(mcfg, prng2);
    const TrainResult r2 = train(m2, ds, tc);

    const fs::path dir = fs::temp_directory_path() / "mmvt_trainer_test";
    fs::create_directories(dir);
    write_metric_log(r1.log, (dir / "a.jsonl").string());
    write_metric_log(r2.log, (dir / "b.jsonl").string());
    CHECK(slurp((dir / "a.jsonl").string()) == slurp((dir / "b.jsonl").string()));
    CHECK(!slurp((dir / "a.jsonl").string()).empty());
    fs::remove_all(dir);

    // momentum buffers stay finite (train would have thrown otherwise, but
    // check the recorded losses as well)
    for (const StepRecord& rec : r1.log) CHECK(std::isfinite(rec.loss));
}

TEST_CASE("thread count does not change training results") {
    const ModelConfig mcfg = tiny_config();
    const SyntheticDataset ds =
        make_synthetic(8, 4, 4, mcfg.frames, mcfg.height, {Modality::RGB, Modality::Flow}, 9);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 1;
    tc.seed = 13;
    tc.threads = 1;
    Rng p1(2);
    MMModel m1 = init_params(mcfg, p1);
    const TrainResult r1 = train(m1, ds, tc);
    tc.threads = 4;
    Rng p2(2);
    MMModel m2 = init_params(mcfg, p2);
    const TrainResult r2 = train(m2, ds, tc);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].loss == r2.log[i].loss);
        CHECK(r1.log[i].verb_acc == r2.log[i].verb_acc);
    }
}

TEST_CASE("one small step on a frozen batch decreases the loss") {
    const ModelConfig mcfg = tiny_config();
    const SyntheticDataset ds =
        make_synthetic(4, 4, 4, mcfg.frames, mcfg.height, {Modality::RGB, Modality::Flow}, 21);
    Rng prng(3);
    MMModel m = init_params(mcfg, prng);
    auto params = m.params();

    auto batch_loss = [&](bool tape_mode) {
        std::vector<Tensor> verb_rows, noun_rows;
        std::vector<int> tv, tn;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const ClipData c = crop_clip(ds.clips[i], 0, mcfg.frames);
            const ForwardOut out = forward(m, assemble_views(mcfg.spec, c), false);
            verb_rows.push_back(reshape(out.verb_logits, {1, 4}));
            noun_rows.push_back(reshape(out.noun_logits, {1, 4}));
            tv.push_back(c.verb);
            tn.push_back(c.noun);
        }
        (void)tape_mode;
        return two_head_loss(concat(verb_rows, 0), concat(noun_rows, 0), tv, tn, 0.1);
    };

    double before, after;
    {
        Tape tape;
        for (auto& p : params) tape.watch(*p.value);
        const Tensor loss = batch_loss(true);
        before = loss.at(0);
        const auto node_grads = tape.backward(loss);
        std::vector<Tensor> grads;
        for (auto& p : params) grads.push_back(Tape::grad_of(node_grads, *p.value));
        OptState opt = make_opt_state(params);
        sgd_step(params, grads, opt, 1e-4);
        for (const Tensor& v : opt.velocity)
            for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::isfinite(v.at(i)));
    }
    for (auto& p : params) p.value->clear_node();
    after = batch_loss(false).at(0);
    CHECK(after < before);
}

TEST_CASE("train stops early when requested and caps at max_steps") {
    const ModelConfig mcfg = tiny_config();
    const SyntheticDataset ds =
        make_synthetic(4, 4, 4, mcfg.frames, mcfg.height, {Modality::RGB, Modality::Flow}, 31);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 50;
    tc.max_steps = 3;
    tc.seed = 1;
    Rng prng(4);
    MMModel m = init_params(mcfg, prng);
    const TrainResult r = train(m, ds, tc);
    CHECK(r.steps_run == 3);
    CHECK(r.log.size() == 3);
}
