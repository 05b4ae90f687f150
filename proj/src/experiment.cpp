#include "diki/experiment.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace diki {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("config: trailing characters in '" + key + "'");
    return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(x))
        throw ConfigError("config: '" + key + "' expects a finite number, got '" + v + "'");
    return x;
}

bool parse_switch(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("config: '" + key + "' expects on|off, got '" + v + "'");
}

std::string real_str(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

struct Field {
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Member>
Field count_field(Member member, std::string key) {
    return {[member, key](ExperimentConfig& c, const std::string& v) {
                std::invoke(member, c) = parse_count(key, v);
            },
            [member](ExperimentConfig c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field real_field(Member member, std::string key) {
    return {[member, key](ExperimentConfig& c, const std::string& v) {
                std::invoke(member, c) = parse_real(key, v);
            },
            [member](ExperimentConfig c) { return real_str(std::invoke(member, c)); }};
}

// Accessors returning references into the nested structs.
#define DIKI_REF(path) [](ExperimentConfig& c) -> auto& { return c.path; }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        t["vocab"] = count_field(DIKI_REF(backbone.vocab), "vocab");
        t["dim"] = count_field(DIKI_REF(backbone.dim), "dim");
        t["depth"] = count_field(DIKI_REF(backbone.depth), "depth");
        t["backbone_seed"] = count_field(DIKI_REF(backbone.seed), "backbone_seed");
        t["weight_scale"] = real_field(DIKI_REF(backbone.weight_scale), "weight_scale");
        t["bias_scale"] = real_field(DIKI_REF(backbone.bias_scale), "bias_scale");

        t["tasks"] = count_field(DIKI_REF(stream.num_tasks), "tasks");
        t["classes"] = count_field(DIKI_REF(stream.classes_per_task), "classes");
        t["samples"] = count_field(DIKI_REF(stream.samples_per_class), "samples");
        t["seq_len"] = count_field(DIKI_REF(stream.seq_len), "seq_len");
        t["shared_tokens"] = count_field(DIKI_REF(stream.shared_tokens), "shared_tokens");
        t["cues_per_class"] = count_field(DIKI_REF(stream.cues_per_class), "cues_per_class");
        t["class_token_rate"] = real_field(DIKI_REF(stream.class_token_rate), "class_token_rate");
        t["cue_rate"] = real_field(DIKI_REF(stream.cue_rate), "cue_rate");
        t["domain_shift"] = real_field(DIKI_REF(stream.domain_shift), "domain_shift");
        t["stream_seed"] = count_field(DIKI_REF(stream.seed), "stream_seed");

        t["lr0"] = real_field(DIKI_REF(train.lr0), "lr0");
        t["epochs"] = count_field(DIKI_REF(train.epochs), "epochs");
        t["batch"] = count_field(DIKI_REF(train.batch), "batch");
        t["logit_scale"] = real_field(DIKI_REF(train.logit_scale), "logit_scale");
        t["length"] = count_field(DIKI_REF(train.length), "length");
        t["adapter_depth"] = count_field(DIKI_REF(train.adapter_depth), "adapter_depth");
        t["k_bound"] = real_field(DIKI_REF(train.k_bound), "k_bound");
        t["ridge"] = real_field(DIKI_REF(train.ridge), "ridge");
        t["seed"] = count_field(DIKI_REF(train.seed), "seed");
        t["mode"] = {[](ExperimentConfig& c, const std::string& v) { c.train.mode = ModeSpec::parse(v); },
                     [](const ExperimentConfig& c) { return c.train.mode.to_string(); }};

        t["calibrate"] = {
            [](ExperimentConfig& c, const std::string& v) { c.eval.calibrate = parse_switch("calibrate", v); },
            [](const ExperimentConfig& c) { return std::string(c.eval.calibrate ? "on" : "off"); }};
        t["prescale_a"] = real_field(DIKI_REF(eval.prescale_a), "prescale_a");
        t["prescale_b"] = real_field(DIKI_REF(eval.prescale_b), "prescale_b");
        t["selector"] = {[](ExperimentConfig& c, const std::string& v) {
                             if (v == "gaussian") c.eval.selector = Selector::gaussian;
                             else if (v == "key") c.eval.selector = Selector::key_match;
                             else throw ConfigError("config: selector expects gaussian|key, got '" + v + "'");
                         },
                         [](const ExperimentConfig& c) {
                             return std::string(c.eval.selector == Selector::gaussian ? "gaussian" : "key");
                         }};
        t["candidates"] = {[](ExperimentConfig& c, const std::string& v) {
                               if (v == "harness") c.eval.candidates_from_selected = false;
                               else if (v == "selected") c.eval.candidates_from_selected = true;
                               else throw ConfigError("config: candidates expects harness|selected, got '" + v + "'");
                           },
                           [](const ExperimentConfig& c) {
                               return std::string(c.eval.candidates_from_selected ? "selected" : "harness");
                           }};
        return t;
    }();
    return table;
}

#undef DIKI_REF

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = fields().find(key);
        if (it == fields().end())
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ConfigError("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
        it->second.set(cfg, value);
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string render_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
    return out;
}

InferOptions infer_options(const EvalConfig& eval, double logit_scale) {
    InferOptions o;
    o.calibrate = eval.calibrate;
    o.prescale_a = eval.prescale_a;
    o.prescale_b = eval.prescale_b;
    o.logit_scale = logit_scale;
    o.selector = eval.selector;
    o.candidates_from_selected = eval.candidates_from_selected;
    return o;
}

TaskEval evaluate_task(const TaskPool& pool, const TaskData& task, std::size_t expected_task,
                       const DualEncoder& backbone, const InferOptions& opts) {
    TaskEval out;
    if (task.test.empty()) return out;
    std::size_t correct = 0, routed = 0;
    double weight_sum = 0.0;
    for (const Sample& s : task.test) {
        const Prediction p = infer(s.tokens, pool, task.classes, backbone, opts);
        if (p.predicted.class_token == task.classes[s.label].class_token) ++correct;
        if (p.task == expected_task) ++routed;
        weight_sum += p.weight;
    }
    const auto n = static_cast<double>(task.test.size());
    out.accuracy = static_cast<double>(correct) / n;
    out.assignment = static_cast<double>(routed) / n;
    out.mean_weight = weight_sum / n;
    return out;
}

double zero_shot_accuracy(const TaskData& task, const DualEncoder& backbone, double logit_scale) {
    if (task.test.empty()) return 0.0;
    const Mat text = class_embeddings(task.classes, backbone.text);
    std::size_t correct = 0;
    for (const Sample& s : task.test) {
        const Vec f = encode(s.tokens, backbone.image);
        if (argmax(logits(f, text, logit_scale)) == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(task.test.size());
}

namespace {

void fill_row(ContinualResult& r, std::size_t i, const TaskPool& pool,
              const std::vector<TaskData>& stream, const DualEncoder& backbone,
              const InferOptions& opts) {
    for (std::size_t j = 0; j < stream.size(); ++j) {
        const TaskEval e = evaluate_task(pool, stream[j], j, backbone, opts);
        r.accuracy(i, j) = e.accuracy;
        r.assignment(i, j) = e.assignment;
        r.mean_weight(i, j) = e.mean_weight;
    }
}

}  // namespace

ContinualResult run_continual(const std::vector<TaskData>& stream, const DualEncoder& backbone,
                              const TrainConfig& cfg, const EvalConfig& eval) {
    if (stream.empty()) throw ContractError("run_continual: empty stream");
    cfg.validate(backbone);
    const std::size_t n = stream.size();
    ContinualResult r{AccuracyMatrix(n, n), Mat(n, n), Mat(n, n), TaskPool{cfg.mode, {}}};
    const InferOptions opts = infer_options(eval, cfg.logit_scale);
    Rng rng(cfg.seed);
    for (std::size_t i = 0; i < n; ++i) {
        Rng task_rng = rng.split();
        learn_task(r.pool, stream[i], backbone, cfg, task_rng);
        fill_row(r, i, r.pool, stream, backbone, opts);
    }
    return r;
}

TaskPool train_pool(const std::vector<TaskData>& stream, const DualEncoder& backbone,
                    const TrainConfig& cfg) {
    if (stream.empty()) throw ContractError("train_pool: empty stream");
    cfg.validate(backbone);
    TaskPool pool{cfg.mode, {}};
    Rng rng(cfg.seed);
    for (const TaskData& task : stream) {
        Rng task_rng = rng.split();
        learn_task(pool, task, backbone, cfg, task_rng);
    }
    return pool;
}

ContinualResult evaluate_pool(const TaskPool& pool, const std::vector<TaskData>& stream,
                              const DualEncoder& backbone, const InferOptions& opts) {
    const std::size_t n = stream.size();
    if (n == 0) throw ContractError("evaluate_pool: empty stream");
    if (pool.entries.size() != n)
        throw ContractError("evaluate_pool: pool has " + std::to_string(pool.entries.size()) +
                            " tasks, stream has " + std::to_string(n));
    ContinualResult r{AccuracyMatrix(n, n), Mat(n, n), Mat(n, n), pool};
    for (std::size_t i = 0; i < n; ++i) fill_row(r, i, pool.prefix(i + 1), stream, backbone, opts);
    return r;
}

double learned_assignment_accuracy(const Mat& assignment) {
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < assignment.rows(); ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            s += assignment(i, j);
            ++count;
        }
    return count == 0 ? 0.0 : s / static_cast<double>(count);
}

ContinualResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const DualEncoder backbone = DualEncoder::build(cfg.backbone);
    const std::vector<TaskData> stream = gen_stream(cfg.stream, cfg.backbone.vocab);
    ContinualResult r = run_continual(stream, backbone, cfg.train, cfg.eval);
    write_csv(r.accuracy, out_dir);

    std::ofstream diag(out_dir / "diagnostics.csv", std::ios::binary);
    if (!diag) throw IoError("cannot write diagnostics.csv in " + out_dir.string());
    diag << "quantity,trained_task,eval_task,value\n";
    for (std::size_t j = 0; j < stream.size(); ++j)
        diag << "zero_shot,-," << j << ','
             << format_fixed6(zero_shot_accuracy(stream[j], backbone, cfg.train.logit_scale)) << '\n';
    for (std::size_t i = 0; i < stream.size(); ++i)
        for (std::size_t j = 0; j < stream.size(); ++j) {
            diag << "assignment," << i << ',' << j << ',' << format_fixed6(r.assignment(i, j)) << '\n';
            diag << "mean_weight," << i << ',' << j << ',' << format_fixed6(r.mean_weight(i, j)) << '\n';
        }
    return r;
}

}  // namespace diki
