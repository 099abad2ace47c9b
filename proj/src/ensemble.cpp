#include "mmvt/ensemble.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "mmvt/parallel.hpp"

namespace mmvt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> to_vector(const Tensor& t) {
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = t.at(i);
    return v;
}

std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;  // strict: ties keep the lowest index
    return best;
}

}  // namespace

ForwardOut infer_clip(const MMModel& m, const ClipData& clip) {
    const std::size_t frames = m.cfg.frames;
    std::size_t n = 0;
    if (!clip.rgb.empty())
        n = clip.rgb.dim(0);
    else if (!clip.flow.empty())
        n = clip.flow.dim(0);
    else if (!clip.spec.empty())
        n = clip.spec.dim(0);
    else
        throw std::runtime_error("infer: clip " + clip.id + " has no modality streams");
    n = std::max(n, frames);

    const auto starts = four_crop_starts(n, frames);
    Tensor verb_sum, noun_sum;
    for (const std::size_t start : starts) {
        const ClipData c = crop_clip(clip, start, frames);
        const ForwardOut out = forward(m, assemble_views(m.cfg.spec, c), false);
        verb_sum = verb_sum.empty() ? out.verb_logits : add(verb_sum, out.verb_logits);
        noun_sum = noun_sum.empty() ? out.noun_logits : add(noun_sum, out.noun_logits);
    }
    ForwardOut out;
    out.verb_logits = scale(verb_sum, 0.25);
    out.noun_logits = scale(noun_sum, 0.25);
    return out;
}

std::vector<LogitsRecord> dump_logits(const MMModel& m, const ClipSource& data,
                                      const std::string& model_id, int threads) {
    std::vector<LogitsRecord> records(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        const ClipData clip = data.get(i);
        const ForwardOut out = infer_clip(m, clip);
        records[i] = LogitsRecord{model_id, clip.id, to_vector(out.verb_logits),
                                  to_vector(out.noun_logits)};
    });
    std::sort(records.begin(), records.end(),
              [](const LogitsRecord& a, const LogitsRecord& b) { return a.clip_id < b.clip_id; });
    return records;
}

void write_logits_jsonl(const std::vector<LogitsRecord>& records, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("logits: cannot open " + path + " for writing");
    for (const LogitsRecord& r : records) {
        const json j{{"model_id", r.model_id},
                     {"clip_id", r.clip_id},
                     {"verb_logits", r.verb_logits},
                     {"noun_logits", r.noun_logits}};
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("logits: write failed");
}

std::vector<LogitsRecord> read_logits_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("logits: cannot open " + path);
    std::vector<LogitsRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("logits: bad JSON at " + path + ":" +
                                     std::to_string(line_no) + ": " + e.what());
        }
        LogitsRecord r;
        r.model_id = j.at("model_id").get<std::string>();
        r.clip_id = j.at("clip_id").get<std::string>();
        r.verb_logits = j.at("verb_logits").get<std::vector<double>>();
        r.noun_logits = j.at("noun_logits").get<std::vector<double>>();
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<LogitsRecord> read_logits_store(const std::string& path) {
    if (!fs::is_directory(path)) return read_logits_jsonl(path);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path))
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("logits: no .jsonl files in " + path);
    std::vector<LogitsRecord> all;
    for (const std::string& f : files) {
        auto part = read_logits_jsonl(f);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

std::vector<double> ensemble_logits(const std::vector<LogitsRecord>& records,
                                    const std::string& clip_id,
                                    const std::vector<std::string>& subset, Head head) {
    if (subset.empty()) throw std::invalid_argument("ensemble: empty model subset");
    std::vector<double> mean;
    std::size_t found = 0;
    for (const std::string& model : subset) {
        const LogitsRecord* rec = nullptr;
        for (const LogitsRecord& r : records)
            if (r.model_id == model && r.clip_id == clip_id) {
                rec = &r;
                break;
            }
        if (!rec)
            throw std::runtime_error("ensemble: no record for model " + model + " on clip " +
                                     clip_id);
        const std::vector<double>& v = head == Head::verb ? rec->verb_logits : rec->noun_logits;
        if (mean.empty())
            mean.assign(v.size(), 0.0);
        else if (mean.size() != v.size())
            throw std::runtime_error("ensemble: class count mismatch on clip " + clip_id);
        for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i];
        ++found;
    }
    for (double& x : mean) x /= static_cast<double>(found);
    return mean;
}

EvalReport evaluate(const std::vector<LogitsRecord>& records, const EnsembleConfig& cfg,
                    const std::vector<ClipLabel>& labels) {
    if (cfg.verb_models.empty() || cfg.noun_models.empty())
        throw std::invalid_argument("ensemble: both model subsets must be non-empty");
    if (labels.empty()) throw std::invalid_argument("evaluate: no labels");

    EvalReport report;
    std::size_t verb_hits = 0, noun_hits = 0, action_hits = 0;
    for (const ClipLabel& label : labels) {
        const auto verb = ensemble_logits(records, label.clip_id, cfg.verb_models, Head::verb);
        const auto noun = ensemble_logits(records, label.clip_id, cfg.noun_models, Head::noun);
        ClipPrediction pred;
        pred.clip_id = label.clip_id;
        pred.verb = static_cast<int>(argmax_lowest(verb));
        pred.noun = static_cast<int>(argmax_lowest(noun));
        const bool vb = pred.verb == label.verb;
        const bool nn = pred.noun == label.noun;
        verb_hits += vb ? 1 : 0;
        noun_hits += nn ? 1 : 0;
        action_hits += vb && nn ? 1 : 0;
        report.predictions.push_back(std::move(pred));
    }
    const auto n = static_cast<double>(labels.size());
    report.top1_verb = verb_hits / n;
    report.top1_noun = noun_hits / n;
    report.top1_action = action_hits / n;
    return report;
}

EnsembleConfig load_ensemble_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("ensemble: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("ensemble: invalid JSON in " + path + ": " + e.what());
    }
    // accept numeric ids too: the published subsets are written as indices
    auto id_of = [](const json& m) {
        return m.is_string() ? m.get<std::string>() : std::to_string(m.get<long>());
    };
    EnsembleConfig cfg;
    for (const auto& m : j.at("verb_models")) cfg.verb_models.push_back(id_of(m));
    for (const auto& m : j.at("noun_models")) cfg.noun_models.push_back(id_of(m));
    return cfg;
}

void save_eval_report(const EvalReport& report, const std::string& path) {
    json preds = json::array();
    for (const ClipPrediction& p : report.predictions)
        preds.push_back(json{{"clip_id", p.clip_id}, {"verb", p.verb}, {"noun", p.noun}});
    const json j{{"top1_action", report.top1_action},
                 {"top1_noun", report.top1_noun},
                 {"top1_verb", report.top1_verb},
                 {"predictions", preds}};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("report: cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

std::vector<std::string> greedy_select(const std::vector<LogitsRecord>& records,
                                       const std::vector<ClipLabel>& labels, Head head) {
    std::set<std::string> pool;
    for (const LogitsRecord& r : records) pool.insert(r.model_id);

    auto score = [&](const std::vector<std::string>& subset) {
        std::size_t hits = 0;
        for (const ClipLabel& label : labels) {
            const auto logits = ensemble_logits(records, label.clip_id, subset, head);
            const int pred = static_cast<int>(argmax_lowest(logits));
            const int truth = head == Head::verb ? label.verb : label.noun;
            hits += pred == truth ? 1 : 0;
        }
        return static_cast<double>(hits) / static_cast<double>(labels.size());
    };

    std::vector<std::string> chosen;
    double best = -1.0;
    for (;;) {
        std::string pick;
        double pick_score = best;
        for (const std::string& candidate : pool) {
            if (std::find(chosen.begin(), chosen.end(), candidate) != chosen.end()) continue;
            std::vector<std::string> trial = chosen;
            trial.push_back(candidate);
            const double s = score(trial);
            if (s > pick_score) {
                pick_score = s;
                pick = candidate;
            }
        }
        if (pick.empty()) break;
        chosen.push_back(pick);
        best = pick_score;
    }
    return chosen;
}

}  // namespace mmvt
