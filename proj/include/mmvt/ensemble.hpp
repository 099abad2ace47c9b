#pragma once

#include <string>
#include <vector>

#include "mmvt/dataset.hpp"
#include "mmvt/model.hpp"

namespace mmvt {

// per-clip logits of one model, already averaged over the four temporal crops
struct LogitsRecord {
    std::string model_id;
    std::string clip_id;
    std::vector<double> verb_logits;
    std::vector<double> noun_logits;
};

// which models vote for each task; the two sets may differ
struct EnsembleConfig {
    std::vector<std::string> verb_models;
    std::vector<std::string> noun_models;
};

struct ClipLabel {
    std::string clip_id;
    int verb = 0;
    int noun = 0;
};

struct ClipPrediction {
    std::string clip_id;
    int verb = 0;
    int noun = 0;
};

struct EvalReport {
    double top1_action = 0.0;
    double top1_noun = 0.0;
    double top1_verb = 0.0;
    std::vector<ClipPrediction> predictions;
};

// forward at each of the four temporal crops, arithmetic mean of the logits
ForwardOut infer_clip(const MMModel& m, const ClipData& clip);

std::vector<LogitsRecord> dump_logits(const MMModel& m, const ClipSource& data,
                                      const std::string& model_id, int threads = 1);

// JSON-lines store, sorted by clip_id; byte-stable across runs
void write_logits_jsonl(const std::vector<LogitsRecord>& records, const std::string& path);
std::vector<LogitsRecord> read_logits_jsonl(const std::string& path);
// reads a single .jsonl file or every *.jsonl inside a directory
std::vector<LogitsRecord> read_logits_store(const std::string& path);

enum class Head { verb, noun };

// unweighted arithmetic mean over the subset's records for one clip
std::vector<double> ensemble_logits(const std::vector<LogitsRecord>& records,
                                    const std::string& clip_id,
                                    const std::vector<std::string>& subset, Head head);

// argmax ties break to the lowest class index; action counts as correct only
// when both heads match
EvalReport evaluate(const std::vector<LogitsRecord>& records, const EnsembleConfig& cfg,
                    const std::vector<ClipLabel>& labels);

EnsembleConfig load_ensemble_config(const std::string& path);
void save_eval_report(const EvalReport& report, const std::string& path);

// greedy forward selection on validation top-1 for one head; optional utility
std::vector<std::string> greedy_select(const std::vector<LogitsRecord>& records,
                                       const std::vector<ClipLabel>& labels, Head head);

}  // namespace mmvt
