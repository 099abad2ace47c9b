// mmvt: command-line entry point for spectrogram extraction, training,
// inference, logit dumping, ensemble evaluation, gradcheck, and shape tables.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error. All randomness
// derives from --seed through named streams; nothing reads ambient entropy.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmvt/audio.hpp"
#include "mmvt/dataset.hpp"
#include "mmvt/ensemble.hpp"
#include "mmvt/gradcheck.hpp"
#include "mmvt/model.hpp"
#include "mmvt/model_spec.hpp"
#include "mmvt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int env_threads() {
    const char* v = std::getenv("MMVT_THREADS");
    if (!v) return 1;
    const int n = std::atoi(v);
    return n > 0 ? n : 1;
}

struct TrainFileConfig {
    double base_lr = 0.05;
    std::size_t batch_size = 8;
    int epochs = 10;
    double warmup_frac = 0.05;
    double droplayer = 0.1;
    double smoothing = 0.1;
    std::uint64_t seed = 0;
    std::size_t resolution = 224;
    std::size_t frames = 64;
    int n_verbs = 97;
    int n_nouns = 300;
    std::size_t max_steps = 0;
    bool augment = true;
    double init_scale = 0.02;
};

TrainFileConfig load_train_config(const std::string& path) {
    TrainFileConfig c;
    if (path.empty()) return c;
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config: invalid JSON in " + path + ": " + e.what());
    }
    c.base_lr = j.value("base_lr", c.base_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.droplayer = j.value("droplayer", c.droplayer);
    c.smoothing = j.value("smoothing", c.smoothing);
    c.seed = j.value("seed", c.seed);
    c.resolution = j.value("resolution", c.resolution);
    c.frames = j.value("frames", c.frames);
    c.n_verbs = j.value("n_verbs", c.n_verbs);
    c.n_nouns = j.value("n_nouns", c.n_nouns);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.augment = j.value("augment", c.augment);
    c.init_scale = j.value("init_scale", c.init_scale);
    return c;
}

void echo_config(const TrainFileConfig& c, const std::string& model, int threads,
                 const std::string& path) {
    const json j{{"model", model},
                 {"base_lr", c.base_lr},
                 {"batch_size", c.batch_size},
                 {"epochs", c.epochs},
                 {"warmup_frac", c.warmup_frac},
                 {"droplayer", c.droplayer},
                 {"smoothing", c.smoothing},
                 {"seed", c.seed},
                 {"resolution", c.resolution},
                 {"frames", c.frames},
                 {"n_verbs", c.n_verbs},
                 {"n_nouns", c.n_nouns},
                 {"max_steps", c.max_steps},
                 {"augment", c.augment},
                 {"init_scale", c.init_scale},
                 {"threads", threads}};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write " + path);
    os << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal multiview transformer toolkit"};
    app.require_subcommand(1);

    // ------------------------------------------------------- extract-spec
    auto* sc_extract = app.add_subcommand("extract-spec",
                                          "extract a frame-aligned 96x64 mel spectrogram stream");
    std::string x_wav, x_out;
    int x_frames = 64;
    std::uint64_t x_seed = 0;
    bool x_specaugment = false;
    int x_threads = 0;
    sc_extract->add_option("--wav", x_wav, "input PCM WAV file")->required();
    sc_extract->add_option("--frames", x_frames, "video frame count to align to")->required();
    sc_extract->add_option("--out", x_out, "output .mmt tensor [F,96,64]")->required();
    sc_extract->add_option("--seed", x_seed, "rng seed for SpecAugment");
    sc_extract->add_flag("--specaugment", x_specaugment, "apply SpecAugment masks");
    sc_extract->add_option("--threads", x_threads, "worker threads (default MMVT_THREADS or 1)");

    // --------------------------------------------------------------- train
    auto* sc_train = app.add_subcommand("train", "train a model on a manifest dataset");
    std::string t_model, t_manifest, t_config, t_out;
    double t_base_lr = 0, t_warmup = 0, t_droplayer = 0, t_smoothing = 0, t_init = 0;
    std::uint64_t t_seed = 0;
    std::size_t t_batch = 0, t_res = 0, t_frames = 0, t_steps = 0;
    int t_epochs = 0, t_verbs = 0, t_nouns = 0, t_threads = 0;
    bool t_no_augment = false;
    sc_train->add_option("--model", t_model, "variant string, e.g. B/2:R+S/4:S+Ti/8:F")->required();
    sc_train->add_option("--manifest", t_manifest, "dataset manifest JSON")->required();
    sc_train->add_option("--config", t_config, "training config JSON");
    sc_train->add_option("--out", t_out, "output directory")->required();
    sc_train->add_option("--seed", t_seed, "root seed");
    sc_train->add_option("--epochs", t_epochs, "epochs");
    sc_train->add_option("--batch-size", t_batch, "batch size");
    sc_train->add_option("--base-lr", t_base_lr, "peak learning rate");
    sc_train->add_option("--warmup-frac", t_warmup, "warmup fraction of total steps");
    sc_train->add_option("--droplayer", t_droplayer, "stochastic droplayer rate");
    sc_train->add_option("--smoothing", t_smoothing, "label smoothing");
    sc_train->add_option("--frames", t_frames, "clip length in frames");
    sc_train->add_option("--res", t_res, "square input resolution");
    sc_train->add_option("--n-verbs", t_verbs, "verb class count");
    sc_train->add_option("--n-nouns", t_nouns, "noun class count");
    sc_train->add_option("--steps", t_steps, "cap on total optimizer steps");
    sc_train->add_option("--init-scale", t_init,
                         "weight init sigma (from-scratch desk runs train best near 0.2)");
    sc_train->add_flag("--no-augment", t_no_augment, "disable train-time augmentation");
    sc_train->add_option("--threads", t_threads, "worker threads (default MMVT_THREADS or 1)");

    // --------------------------------------------------------------- infer
    auto* sc_infer = app.add_subcommand("infer", "print per-clip four-crop predictions");
    std::string i_ckpt, i_manifest;
    int i_threads = 0;
    sc_infer->add_option("--ckpt", i_ckpt, "checkpoint file")->required();
    sc_infer->add_option("--manifest", i_manifest, "dataset manifest JSON")->required();
    sc_infer->add_option("--threads", i_threads, "worker threads (default MMVT_THREADS or 1)");

    // --------------------------------------------------------- dump-logits
    auto* sc_dump = app.add_subcommand("dump-logits", "write per-clip logits as JSON-lines");
    std::string d_ckpt, d_manifest, d_out, d_model_id;
    int d_threads = 0;
    sc_dump->add_option("--ckpt", d_ckpt, "checkpoint file")->required();
    sc_dump->add_option("--manifest", d_manifest, "dataset manifest JSON")->required();
    sc_dump->add_option("--model-id", d_model_id, "model id stored in each record")->required();
    sc_dump->add_option("--out", d_out, "output .jsonl path")->required();
    sc_dump->add_option("--threads", d_threads, "worker threads (default MMVT_THREADS or 1)");

    // ---------------------------------------------------------------- eval
    auto* sc_eval = app.add_subcommand("eval", "evaluate a logit ensemble against labels");
    std::string e_logits, e_ensemble, e_manifest, e_report;
    sc_eval->add_option("--logits", e_logits, "logits .jsonl file or directory")->required();
    sc_eval->add_option("--ensemble", e_ensemble, "ensemble config JSON")->required();
    sc_eval->add_option("--manifest", e_manifest, "manifest with ground-truth labels")->required();
    sc_eval->add_option("--report", e_report, "output report JSON")->required();

    // ----------------------------------------------------------- gradcheck
    auto* sc_grad = app.add_subcommand("gradcheck",
                                       "finite-difference check of every model gradient");
    std::uint64_t g_seed = 0;
    sc_grad->add_option("--seed", g_seed, "rng seed");

    // -------------------------------------------------------------- shapes
    auto* sc_shapes = app.add_subcommand("shapes", "per-view token geometry table");
    std::string s_model;
    std::size_t s_frames = 64, s_res = 224;
    sc_shapes->add_option("--model", s_model, "variant string")->required();
    sc_shapes->add_option("--frames", s_frames, "clip length in frames");
    sc_shapes->add_option("--res", s_res, "square input resolution");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*sc_extract) {
            const int threads = x_threads > 0 ? x_threads : env_threads();
            const mmvt::AudioClip clip = mmvt::load_wav(x_wav);
            mmvt::SpectrogramStream s =
                mmvt::normalize_stream(mmvt::extract_stream(clip, x_frames, 25, threads));
            if (x_specaugment) {
                mmvt::Rng rng(mmvt::Rng::derive_seed(x_seed, "specaugment"));
                s = mmvt::spec_augment(s, rng);
            }
            mmvt::save_mmt(s.frames, x_out);
            std::printf("wrote %s [%d,96,64]\n", x_out.c_str(), x_frames);
        } else if (*sc_train) {
            TrainFileConfig fc = load_train_config(t_config);
            if (sc_train->count("--seed")) fc.seed = t_seed;
            if (sc_train->count("--epochs")) fc.epochs = t_epochs;
            if (sc_train->count("--batch-size")) fc.batch_size = t_batch;
            if (sc_train->count("--base-lr")) fc.base_lr = t_base_lr;
            if (sc_train->count("--warmup-frac")) fc.warmup_frac = t_warmup;
            if (sc_train->count("--droplayer")) fc.droplayer = t_droplayer;
            if (sc_train->count("--smoothing")) fc.smoothing = t_smoothing;
            if (sc_train->count("--frames")) fc.frames = t_frames;
            if (sc_train->count("--res")) fc.resolution = t_res;
            if (sc_train->count("--n-verbs")) fc.n_verbs = t_verbs;
            if (sc_train->count("--n-nouns")) fc.n_nouns = t_nouns;
            if (sc_train->count("--steps")) fc.max_steps = t_steps;
            if (sc_train->count("--init-scale")) fc.init_scale = t_init;
            if (t_no_augment) fc.augment = false;
            const int threads = t_threads > 0 ? t_threads : env_threads();

            fs::create_directories(t_out);
            echo_config(fc, t_model, threads, (fs::path(t_out) / "config.json").string());

            mmvt::ModelConfig mcfg = mmvt::default_config(mmvt::parse_model_spec(t_model));
            mcfg.frames = fc.frames;
            mcfg.height = fc.resolution;
            mcfg.width = fc.resolution;
            mcfg.n_verbs = fc.n_verbs;
            mcfg.n_nouns = fc.n_nouns;
            mcfg.droplayer = fc.droplayer;
            mmvt::Rng init_rng(mmvt::Rng::derive_seed(fc.seed, "init"));
            mmvt::MMModel model = mmvt::init_params(mcfg, init_rng, fc.init_scale);

            const mmvt::ManifestSource data(t_manifest, fc.n_verbs, fc.n_nouns);
            mmvt::TrainConfig tc;
            tc.base_lr = fc.base_lr;
            tc.batch_size = fc.batch_size;
            tc.epochs = fc.epochs;
            tc.warmup_frac = fc.warmup_frac;
            tc.smoothing = fc.smoothing;
            tc.seed = fc.seed;
            tc.augment = fc.augment;
            tc.threads = threads;
            tc.max_steps = fc.max_steps;
            const mmvt::TrainResult result = mmvt::train(model, data, tc);

            mmvt::write_metric_log(result.log, (fs::path(t_out) / "metrics.jsonl").string());
            mmvt::save_checkpoint(model, (fs::path(t_out) / "model.ckpt").string());
            std::printf("trained %zu steps; train acc verb=%.3f noun=%.3f\n", result.steps_run,
                        result.final_eval_verb_acc, result.final_eval_noun_acc);
        } else if (*sc_infer) {
            const int threads = i_threads > 0 ? i_threads : env_threads();
            const mmvt::MMModel model = mmvt::load_checkpoint(i_ckpt);
            const mmvt::ManifestSource data(i_manifest, model.cfg.n_verbs, model.cfg.n_nouns);
            const auto records = mmvt::dump_logits(model, data, "model", threads);
            for (const auto& r : records) {
                std::size_t vb = 0, nn = 0;
                for (std::size_t k = 1; k < r.verb_logits.size(); ++k)
                    if (r.verb_logits[k] > r.verb_logits[vb]) vb = k;
                for (std::size_t k = 1; k < r.noun_logits.size(); ++k)
                    if (r.noun_logits[k] > r.noun_logits[nn]) nn = k;
                std::printf("%s verb=%zu noun=%zu\n", r.clip_id.c_str(), vb, nn);
            }
        } else if (*sc_dump) {
            const int threads = d_threads > 0 ? d_threads : env_threads();
            const mmvt::MMModel model = mmvt::load_checkpoint(d_ckpt);
            const mmvt::ManifestSource data(d_manifest, model.cfg.n_verbs, model.cfg.n_nouns);
            const auto records = mmvt::dump_logits(model, data, d_model_id, threads);
            mmvt::write_logits_jsonl(records, d_out);
            std::printf("wrote %zu records to %s\n", records.size(), d_out.c_str());
        } else if (*sc_eval) {
            const auto records = mmvt::read_logits_store(e_logits);
            const mmvt::EnsembleConfig cfg = mmvt::load_ensemble_config(e_ensemble);
            std::vector<mmvt::ClipLabel> labels;
            for (const auto& entry : mmvt::load_manifest(e_manifest))
                labels.push_back({entry.id, entry.verb, entry.noun});
            const mmvt::EvalReport report = mmvt::evaluate(records, cfg, labels);
            mmvt::save_eval_report(report, e_report);
            std::printf("top1_action=%.4f top1_noun=%.4f top1_verb=%.4f (%zu clips)\n",
                        report.top1_action, report.top1_noun, report.top1_verb,
                        report.predictions.size());
        } else if (*sc_grad) {
            mmvt::set_finite_checks(true);
            const mmvt::ModelConfig cfg = mmvt::tiny_gradcheck_config();
            mmvt::Rng prng(mmvt::Rng::derive_seed(g_seed, "params"));
            mmvt::MMModel model = mmvt::init_params(cfg, prng);
            mmvt::Rng irng(mmvt::Rng::derive_seed(g_seed, "inputs"));
            const auto inputs = mmvt::tiny_gradcheck_inputs(cfg, irng);
            const mmvt::GradcheckResult r = mmvt::gradcheck_model(model, inputs, 2, 3);
            std::printf("gradcheck: %zu params, %zu elements, max rel err %.3e (worst: %s)\n",
                        r.params_checked, r.elements_checked, r.max_rel_err,
                        r.worst_param.c_str());
            return r.max_rel_err < 1e-4 ? 0 : 1;
        } else if (*sc_shapes) {
            const mmvt::ModelSpec spec = mmvt::parse_model_spec(s_model);
            std::printf("%-12s %-12s %16s %14s %8s\n", "view", "modality", "temporal_indices",
                        "spatial_tokens", "tokens");
            for (const mmvt::ViewSpec& v : spec.views) {
                const mmvt::TokenGeometry g = mmvt::token_geometry(v, s_frames, s_res, s_res);
                const std::string name = std::string(mmvt::backbone_code(v.backbone)) + "/" +
                                         std::to_string(v.tubelet_t) + ":" +
                                         mmvt::modality_code(v.modality);
                std::printf("%-12s %-12s %16zu %14zu %8zu\n", name.c_str(),
                            mmvt::modality_name(v.modality), g.temporal_indices, g.spatial_tokens,
                            g.temporal_indices * g.spatial_tokens);
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
