#include "config.hpp"

#include <fstream>
#include <set>

#include "emgtf/error.hpp"

namespace emgtf::cli {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config: '" + section + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in '" + section + "'");
    }
}

template <typename T>
void read(const json& obj, const std::string& section, const char* key, T& dst) {
    if (!obj.contains(key)) return;
    try {
        dst = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: '" + section + "." + key + "' has the wrong type (" +
                          std::string(obj.at(key).type_name()) + ")");
    }
}

RepetitionSet read_reps(const json& obj, const char* key, const RepetitionSet& fallback) {
    if (!obj.contains(key)) return fallback;
    std::vector<int> v;
    read(obj, "data", key, v);
    RepetitionSet out;
    for (int r : v) {
        if (r < 1 || r > 32767) throw ConfigError("config: repetition " + std::to_string(r) + " out of range");
        out.insert(static_cast<std::int16_t>(r));
    }
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    reject_unknown(doc, "<root>", {"seed", "data", "pipeline", "model", "train", "output"});
    read(doc, "<root>", "seed", c.seed);
    c.train.seed = c.seed;

    if (doc.contains("data")) {
        const auto& d = doc["data"];
        reject_unknown(d, "data", {"sessions", "synth", "windows", "train_reps", "test_reps"});
        std::vector<std::string> sessions;
        read(d, "data", "sessions", sessions);
        for (const auto& s : sessions) c.data.sessions.push_back(resolve(base_dir, s));
        if (d.contains("windows")) {
            std::string w;
            read(d, "data", "windows", w);
            c.data.windows = resolve(base_dir, w);
        }
        if (d.contains("synth")) {
            const auto& s = d["synth"];
            reject_unknown(s, "data.synth",
                           {"seed", "n_classes", "n_channels", "fs", "reps", "gesture_s", "rest_s", "subject",
                            "subjects"});
            SynthSource src;
            read(s, "data.synth", "seed", src.spec.seed);
            read(s, "data.synth", "n_classes", src.spec.n_classes);
            read(s, "data.synth", "n_channels", src.spec.n_channels);
            read(s, "data.synth", "fs", src.spec.fs);
            read(s, "data.synth", "reps", src.spec.reps);
            read(s, "data.synth", "gesture_s", src.spec.gesture_s);
            read(s, "data.synth", "rest_s", src.spec.rest_s);
            read(s, "data.synth", "subject", src.spec.subject);
            read(s, "data.synth", "subjects", src.subjects);
            c.data.synth = src;
        }
        c.data.train_reps = read_reps(d, "train_reps", kDefaultTrainReps);
        c.data.test_reps = read_reps(d, "test_reps", kDefaultTestReps);
    }

    if (doc.contains("pipeline")) {
        const auto& p = doc["pipeline"];
        reject_unknown(p, "pipeline",
                       {"mu", "window_ms", "step_ms", "hampel_half_window", "hampel_sigmas", "highpass_hz",
                        "lowpass_hz", "filter_order", "rms_window_ms", "target_fs", "envelope_lowpass_hz"});
        read(p, "pipeline", "mu", c.pipeline.mu);
        read(p, "pipeline", "window_ms", c.pipeline.windowing.window_ms);
        read(p, "pipeline", "step_ms", c.pipeline.windowing.step_ms);
        read(p, "pipeline", "hampel_half_window", c.pipeline.hampel_half_window);
        read(p, "pipeline", "hampel_sigmas", c.pipeline.hampel_sigmas);
        read(p, "pipeline", "highpass_hz", c.pipeline.highpass_hz);
        read(p, "pipeline", "lowpass_hz", c.pipeline.lowpass_hz);
        read(p, "pipeline", "filter_order", c.pipeline.filter_order);
        read(p, "pipeline", "rms_window_ms", c.pipeline.rms_window_ms);
        read(p, "pipeline", "target_fs", c.pipeline.target_fs);
        read(p, "pipeline", "envelope_lowpass_hz", c.pipeline.envelope_lowpass_hz);
    }

    if (doc.contains("model")) {
        const auto& m = doc["model"];
        reject_unknown(m, "model",
                       {"variant", "channels", "window", "patch", "dim", "depth", "heads", "mlp_dim", "n_classes",
                        "fnb_k_v1", "fnb_k_v2", "fnb_capacity"});
        if (m.contains("variant")) {
            std::string v;
            read(m, "model", "variant", v);
            c.model.variant = parse_variant(v);
        }
        read(m, "model", "channels", c.model.channels);
        read(m, "model", "window", c.model.window);
        read(m, "model", "patch", c.model.patch);
        read(m, "model", "dim", c.model.dim);
        read(m, "model", "depth", c.model.depth);
        read(m, "model", "heads", c.model.heads);
        read(m, "model", "mlp_dim", c.model.mlp_dim);
        read(m, "model", "n_classes", c.model.n_classes);
        read(m, "model", "fnb_k_v1", c.model.fnb_k_v1);
        read(m, "model", "fnb_k_v2", c.model.fnb_k_v2);
        read(m, "model", "fnb_capacity", c.model.fnb_capacity);
    }

    if (doc.contains("train")) {
        const auto& t = doc["train"];
        reject_unknown(t, "train",
                       {"lr", "beta1", "beta2", "eps", "weight_decay", "batch_size", "epochs", "shuffle",
                        "step_decay", "decay_every", "decay_factor"});
        read(t, "train", "lr", c.train.lr);
        read(t, "train", "beta1", c.train.beta1);
        read(t, "train", "beta2", c.train.beta2);
        read(t, "train", "eps", c.train.eps);
        read(t, "train", "weight_decay", c.train.weight_decay);
        read(t, "train", "batch_size", c.train.batch_size);
        read(t, "train", "epochs", c.train.epochs);
        read(t, "train", "shuffle", c.train.shuffle);
        read(t, "train", "step_decay", c.train.step_decay);
        read(t, "train", "decay_every", c.train.decay_every);
        read(t, "train", "decay_factor", c.train.decay_factor);
    }

    if (doc.contains("output")) {
        const auto& o = doc["output"];
        reject_unknown(o, "output", {"dir"});
        std::string dir;
        read(o, "output", "dir", dir);
        if (!dir.empty()) c.out_dir = dir;
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(doc, path.parent_path());
}

void ExperimentConfig::validate() const {
    try {
        pipeline.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    model.validate();
    train.validate();
    if (data.synth) {
        const auto& s = data.synth->spec;
        if (s.n_classes < 1 || s.n_classes > kMaxStimulusCode) {
            throw ConfigError("config: data.synth.n_classes must lie in [1, " + std::to_string(kMaxStimulusCode) + "]");
        }
        if (s.reps < 1 || s.n_channels < 1 || !(s.fs > 0.0) || !(s.gesture_s > 0.0) || !(s.rest_s >= 0.0)) {
            throw ConfigError("config: data.synth needs reps, channels, fs and gesture_s > 0 and rest_s >= 0");
        }
        if (data.synth->subjects < 1) throw ConfigError("config: data.synth.subjects must be >= 1");
    }
    for (auto r : data.train_reps) {
        if (data.test_reps.count(r)) {
            throw ConfigError("config: repetition " + std::to_string(r) + " is in both train_reps and test_reps");
        }
    }
}

ordered_json ExperimentConfig::to_json() const {
    ordered_json j;
    j["seed"] = seed;

    ordered_json d;
    ordered_json sessions_json = ordered_json::array();
    for (const auto& s : data.sessions) sessions_json.push_back(s.string());
    d["sessions"] = sessions_json;
    if (data.synth) {
        const auto& s = data.synth->spec;
        d["synth"] = {{"seed", s.seed},   {"n_classes", s.n_classes}, {"n_channels", s.n_channels},
                      {"fs", s.fs},       {"reps", s.reps},           {"gesture_s", s.gesture_s},
                      {"rest_s", s.rest_s}, {"subject", s.subject},   {"subjects", data.synth->subjects}};
    }
    if (data.windows) d["windows"] = data.windows->string();
    d["train_reps"] = std::vector<int>(data.train_reps.begin(), data.train_reps.end());
    d["test_reps"] = std::vector<int>(data.test_reps.begin(), data.test_reps.end());
    j["data"] = d;

    const auto& p = pipeline;
    j["pipeline"] = {{"mu", p.mu},
                     {"window_ms", p.windowing.window_ms},
                     {"step_ms", p.windowing.step_ms},
                     {"hampel_half_window", p.hampel_half_window},
                     {"hampel_sigmas", p.hampel_sigmas},
                     {"highpass_hz", p.highpass_hz},
                     {"lowpass_hz", p.lowpass_hz},
                     {"filter_order", p.filter_order},
                     {"rms_window_ms", p.rms_window_ms},
                     {"target_fs", p.target_fs},
                     {"envelope_lowpass_hz", p.envelope_lowpass_hz}};

    const auto& m = model;
    j["model"] = {{"variant", std::string(to_string(m.variant))},
                  {"channels", m.channels},
                  {"window", m.window},
                  {"patch", m.patch},
                  {"dim", m.dim},
                  {"depth", m.depth},
                  {"heads", m.heads},
                  {"mlp_dim", m.mlp_dim},
                  {"n_classes", m.n_classes},
                  {"fnb_k_v1", m.fnb_k_v1},
                  {"fnb_k_v2", m.fnb_k_v2},
                  {"fnb_capacity", m.fnb_capacity}};

    const auto& t = train;
    j["train"] = {{"lr", t.lr},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"eps", t.eps},
                  {"weight_decay", t.weight_decay},
                  {"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"shuffle", t.shuffle},
                  {"step_decay", t.step_decay},
                  {"decay_every", t.decay_every},
                  {"decay_factor", t.decay_factor}};
    j["output"] = {{"dir", out_dir.string()}};
    return j;
}

} // namespace emgtf::cli
