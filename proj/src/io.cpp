#include "diki/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace diki {

namespace {

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_hex(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw IoError(where + ": bad real '" + s + "'");
    return v;
}

class Reader {
public:
    Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) throw IoError(name_ + ": unexpected end of file");
        return w;
    }
    void expect(const std::string& w) {
        const std::string got = word();
        if (got != w) throw IoError(name_ + ": expected '" + w + "', found '" + got + "'");
    }
    std::uint64_t count() {
        const std::string w = word();
        char* end = nullptr;
        const unsigned long long v = std::strtoull(w.c_str(), &end, 10);
        if (w.empty() || w[0] == '-' || end != w.c_str() + w.size())
            throw IoError(name_ + ": bad integer '" + w + "'");
        return v;
    }
    double real() { return parse_hex(word(), name_); }

    Mat mat() {
        expect("mat");
        const std::size_t r = count(), c = count();
        std::vector<double> data(r * c);
        for (double& x : data) x = real();
        try {
            return Mat(r, c, std::move(data));
        } catch (const std::exception& e) {
            throw IoError(name_ + ": " + e.what());
        }
    }
    Vec vec(const std::string& tag) {
        expect(tag);
        Vec v(count());
        for (double& x : v) x = real();
        return v;
    }
    ClassTemplate class_template() {
        expect("class");
        ClassTemplate t;
        for (Token& p : t.prefix) p = static_cast<Token>(count());
        t.class_token = static_cast<Token>(count());
        return t;
    }
    std::vector<ClassTemplate> classes() {
        expect("classes");
        std::vector<ClassTemplate> out(count());
        for (auto& c : out) c = class_template();
        return out;
    }

private:
    std::istream& in_;
    std::string name_;
};

void put_mat(std::ostream& out, const Mat& m) {
    out << "mat " << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? " " : "") << hex(m(i, j));
        out << '\n';
    }
}

void put_vec(std::ostream& out, const char* tag, const Vec& v) {
    out << tag << ' ' << v.size();
    for (double x : v) out << ' ' << hex(x);
    out << '\n';
}

void put_classes(std::ostream& out, const std::vector<ClassTemplate>& classes) {
    out << "classes " << classes.size() << '\n';
    for (const auto& c : classes)
        out << "class " << c.prefix[0] << ' ' << c.prefix[1] << ' ' << c.prefix[2] << ' '
            << c.class_token << '\n';
}

void put_samples(std::ostream& out, const char* tag, const std::vector<Sample>& samples) {
    out << tag << ' ' << samples.size() << '\n';
    for (const Sample& s : samples) {
        out << s.label << ' ' << s.tokens.size();
        for (Token t : s.tokens) out << ' ' << t;
        out << '\n';
    }
}

std::vector<Sample> get_samples(Reader& r, const char* tag) {
    r.expect(tag);
    std::vector<Sample> out(r.count());
    for (Sample& s : out) {
        s.label = r.count();
        s.tokens.resize(r.count());
        for (Token& t : s.tokens) t = static_cast<Token>(r.count());
    }
    return out;
}

std::ofstream open_out(const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    return in;
}

std::string task_file(std::size_t i) { return "task_" + std::to_string(i) + ".txt"; }

}  // namespace

void write_task_dir(const std::filesystem::path& dir, const StreamSpec& spec, std::size_t vocab,
                    const std::vector<TaskData>& tasks) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    auto manifest = open_out(dir / "stream.txt");
    manifest << "vocab = " << vocab << '\n'
             << "tasks = " << spec.num_tasks << '\n'
             << "classes = " << spec.classes_per_task << '\n'
             << "samples = " << spec.samples_per_class << '\n'
             << "seq_len = " << spec.seq_len << '\n'
             << "shared_tokens = " << spec.shared_tokens << '\n'
             << "cues_per_class = " << spec.cues_per_class << '\n'
             << "class_token_rate = " << hex(spec.class_token_rate) << '\n'
             << "cue_rate = " << hex(spec.cue_rate) << '\n'
             << "domain_shift = " << hex(spec.domain_shift) << '\n'
             << "stream_seed = " << spec.seed << '\n';

    for (std::size_t i = 0; i < tasks.size(); ++i) {
        auto out = open_out(dir / task_file(i));
        out << "diki-task 1\n";
        put_classes(out, tasks[i].classes);
        put_samples(out, "train", tasks[i].train);
        put_samples(out, "test", tasks[i].test);
        if (!out) throw IoError("write failed for " + (dir / task_file(i)).string());
    }
}

TaskDir read_task_dir(const std::filesystem::path& dir) {
    auto manifest = open_in(dir / "stream.txt");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(manifest, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    const std::string where = (dir / "stream.txt").string();
    auto get = [&](const std::string& k) {
        const auto it = kv.find(k);
        if (it == kv.end()) throw IoError(where + ": missing '" + k + "'");
        return it->second;
    };
    auto get_count = [&](const std::string& k) {
        const std::string v = get(k);
        char* end = nullptr;
        const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
        if (v.empty() || end != v.c_str() + v.size()) throw IoError(where + ": bad '" + k + "'");
        return static_cast<std::size_t>(x);
    };

    TaskDir td;
    td.vocab = get_count("vocab");
    td.spec.num_tasks = get_count("tasks");
    td.spec.classes_per_task = get_count("classes");
    td.spec.samples_per_class = get_count("samples");
    td.spec.seq_len = get_count("seq_len");
    td.spec.shared_tokens = get_count("shared_tokens");
    td.spec.cues_per_class = get_count("cues_per_class");
    td.spec.class_token_rate = parse_hex(get("class_token_rate"), where);
    td.spec.cue_rate = parse_hex(get("cue_rate"), where);
    td.spec.domain_shift = parse_hex(get("domain_shift"), where);
    td.spec.seed = get_count("stream_seed");

    for (std::size_t i = 0; i < td.spec.num_tasks; ++i) {
        const auto path = dir / task_file(i);
        auto in = open_in(path);
        Reader r(in, path.string());
        r.expect("diki-task");
        r.expect("1");
        TaskData t;
        t.classes = r.classes();
        t.train = get_samples(r, "train");
        t.test = get_samples(r, "test");
        for (const ClassTemplate& c : t.classes)
            for (Token tok : c.tokens())
                if (tok >= td.vocab) throw IoError(path.string() + ": template token outside vocabulary");
        for (const auto* split : {&t.train, &t.test})
            for (const Sample& s : *split) {
                if (s.label >= t.classes.size()) throw IoError(path.string() + ": label out of range");
                for (Token tok : s.tokens)
                    if (tok >= td.vocab) throw IoError(path.string() + ": token outside vocabulary");
            }
        td.tasks.push_back(std::move(t));
    }
    return td;
}

void write_pool(const std::filesystem::path& file, const PoolFile& pf) {
    auto out = open_out(file);
    const BackboneConfig& b = pf.backbone;
    out << "diki-pool 1\n";
    out << "mode " << pf.pool.mode.to_string() << '\n';
    out << "backbone " << b.vocab << ' ' << b.dim << ' ' << b.depth << ' ' << b.seed << ' '
        << hex(b.weight_scale) << ' ' << hex(b.bias_scale) << '\n';
    out << "logit_scale " << hex(pf.logit_scale) << '\n';
    out << "tasks " << pf.pool.entries.size() << '\n';
    for (std::size_t i = 0; i < pf.pool.entries.size(); ++i) {
        const PoolEntry& e = pf.pool.entries[i];
        out << "task " << i << '\n';
        put_classes(out, e.classes);
        for (const auto& [tag, list] : {std::pair{"image_adapters", &e.params.image_adapters},
                                        std::pair{"text_adapters", &e.params.text_adapters}}) {
            out << tag << ' ' << list->size() << '\n';
            for (const Adapter& a : *list) {
                put_mat(out, a.keys);
                put_mat(out, a.values);
            }
        }
        for (const auto& [tag, list] : {std::pair{"image_prompts", &e.params.image_prompts},
                                        std::pair{"text_prompts", &e.params.text_prompts}}) {
            out << tag << ' ' << list->size() << '\n';
            for (const PromptBaseline& p : *list) put_mat(out, p.prompts);
        }
        out << "ridge " << hex(e.gaussian.ridge()) << '\n';
        put_vec(out, "mu", e.gaussian.mean());
        put_mat(out, e.gaussian.covariance());
        put_vec(out, "key", e.mean_key);
    }
    out << "end\n";
    if (!out) throw IoError("write failed for " + file.string());
}

PoolFile read_pool(const std::filesystem::path& file) {
    auto in = open_in(file);
    Reader r(in, file.string());
    r.expect("diki-pool");
    if (const std::string v = r.word(); v != "1")
        throw IoError(file.string() + ": unsupported pool version " + v);
    PoolFile pf;
    r.expect("mode");
    try {
        pf.pool.mode = ModeSpec::parse(r.word());
    } catch (const ConfigError& e) {
        throw IoError(file.string() + ": " + e.what());
    }
    r.expect("backbone");
    pf.backbone.vocab = r.count();
    pf.backbone.dim = r.count();
    pf.backbone.depth = r.count();
    pf.backbone.seed = r.count();
    pf.backbone.weight_scale = r.real();
    pf.backbone.bias_scale = r.real();
    r.expect("logit_scale");
    pf.logit_scale = r.real();
    r.expect("tasks");
    const std::size_t n = r.count();
    for (std::size_t i = 0; i < n; ++i) {
        r.expect("task");
        if (r.count() != i) throw IoError(file.string() + ": tasks out of order");
        AdapterSet params;
        std::vector<ClassTemplate> classes = r.classes();
        for (auto [tag, list] : {std::pair{"image_adapters", &params.image_adapters},
                                 std::pair{"text_adapters", &params.text_adapters}}) {
            r.expect(tag);
            list->resize(r.count());
            for (Adapter& a : *list) {
                a.keys = r.mat();
                a.values = r.mat();
            }
        }
        for (auto [tag, list] : {std::pair{"image_prompts", &params.image_prompts},
                                 std::pair{"text_prompts", &params.text_prompts}}) {
            r.expect(tag);
            list->resize(r.count());
            for (PromptBaseline& p : *list) p.prompts = r.mat();
        }
        r.expect("ridge");
        const double ridge = r.real();
        Vec mu = r.vec("mu");
        Mat sigma = r.mat();
        Vec key = r.vec("key");
        try {
            pf.pool.entries.push_back(
                {std::move(params), TaskGaussian(std::move(mu), std::move(sigma), ridge),
                 std::move(key), std::move(classes)});
        } catch (const std::exception& e) {
            throw IoError(file.string() + ": task " + std::to_string(i) + ": " + e.what());
        }
    }
    r.expect("end");
    return pf;
}

}  // namespace diki
