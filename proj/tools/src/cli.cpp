#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "emgtf/checkpoint.hpp"
#include "emgtf/error.hpp"

namespace emgtf::cli {

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string variant;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "experiment configuration (JSON)");
    cmd->add_option("--seed", f.seed, "seed for initialization and batch order");
    cmd->add_option("--variant", f.variant, "baseline | v1 | v2 | v3");
    cmd->add_option("--out", f.out, "output directory");
}

ExperimentConfig resolve(const CommonFlags& f) {
    ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(f.config);
    if (f.seed) c.set_seed(*f.seed);
    if (!f.variant.empty()) c.model.variant = parse_variant(f.variant);
    if (!f.out.empty()) c.out_dir = f.out;
    c.validate();
    return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void print_counts(const WindowSet& ws, std::ostream& out) {
    std::map<std::int32_t, std::pair<std::size_t, std::size_t>> per_class;
    for (const auto& w : ws.windows) {
        auto& c = per_class[w.label];
        (w.split == Split::test ? c.second : c.first)++;
    }
    out << "class  train   test\n";
    for (const auto& [label, c] : per_class) {
        out << std::setw(5) << label << std::setw(7) << c.first << std::setw(7) << c.second << '\n';
    }
    out << "total" << std::setw(7) << ws.count(Split::train) << std::setw(7) << ws.count(Split::test) << '\n';
}

void write_report(const RunReport& report, const std::filesystem::path& dir) {
    write_text(dir / "report.json", report.to_json());
    write_text(dir / "per_subject.csv", report.to_csv());
}

int cmd_synth(const ExperimentConfig& c, std::ostream& out) {
    if (!c.data.synth) throw ConfigError("synth: the config has no data.synth section");
    ensure_dir(c.out_dir);
    for (const auto& s : load_sessions(c)) {
        const auto path = c.out_dir / ("subject_" + std::to_string(s.subject) + ".emg1");
        write_native(s, path);
        out << path.string() << ": " << s.n_channels() << " channels, " << s.n_samples() << " samples\n";
    }
    return kOk;
}

int cmd_preprocess(const ExperimentConfig& c, std::ostream& out) {
    ExperimentConfig fresh = c;
    fresh.data.windows.reset();
    const auto ws = load_windows(fresh);
    ensure_dir(c.out_dir);
    const auto path = c.out_dir / "windows.emw1";
    write_windows(ws, path);
    print_counts(ws, out);
    out << "wrote " << path.string() << '\n';
    return kOk;
}

int cmd_train(const ExperimentConfig& c, std::ostream& out) {
    const auto ws = load_windows(c);
    if (ws.n_classes() > c.model.n_classes) {
        throw DataError("windows carry " + std::to_string(ws.n_classes()) + " classes but model.n_classes is " +
                        std::to_string(c.model.n_classes));
    }
    ensure_dir(c.out_dir);
    const auto start = std::chrono::steady_clock::now();
    EmgtfNet<float> model(c.model, c.seed);
    RunReport report;
    report.variant = std::string(to_string(c.model.variant));
    report.seed = c.seed;
    report.trainable_params = model.param_count(true);
    report.total_params = model.param_count(false);
    report.train_windows = ws.count(Split::train);
    report.config_json = c.to_json().dump();
    out << "variant " << report.variant << ", " << report.trainable_params << " trainable parameters, "
        << report.train_windows << " train / " << ws.count(Split::test) << " test windows\n";

    const auto result = train(model, ws, c.train, [&](const EpochStats& e) {
        out << "epoch " << std::setw(3) << e.epoch + 1 << '/' << c.train.epochs << "  loss " << std::fixed
            << std::setprecision(5) << e.loss << "  train_acc " << std::setprecision(4) << e.train_accuracy
            << std::defaultfloat << '\n';
    });
    report.epochs = result.epochs;
    summarize(report, evaluate(model, ws));
    report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    save_checkpoint(model, c.seed, c.out_dir / "checkpoint.emck");
    write_report(report, c.out_dir);
    out << "test accuracy " << report.overall_accuracy << " (" << report.test_windows << " windows), wrote "
        << (c.out_dir / "report.json").string() << '\n';
    return kOk;
}

int cmd_eval(const ExperimentConfig& c, const std::string& checkpoint, const std::string& windows_path,
             const std::string& variant_flag, std::ostream& out) {
    if (checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
    std::optional<Variant> expected;
    if (!variant_flag.empty()) expected = parse_variant(variant_flag);
    auto ck = load_checkpoint(checkpoint, expected);
    ExperimentConfig cfg = c;
    if (!windows_path.empty()) cfg.data.windows = std::filesystem::path(windows_path);
    const auto ws = load_windows(cfg);
    ensure_dir(c.out_dir);

    const auto start = std::chrono::steady_clock::now();
    RunReport report;
    report.variant = std::string(to_string(ck.model.variant()));
    report.seed = ck.seed;
    report.trainable_params = ck.model.param_count(true);
    report.total_params = ck.model.param_count(false);
    report.train_windows = ws.count(Split::train);
    nlohmann::ordered_json echo = cfg.to_json();
    echo["checkpoint"] = checkpoint;
    report.config_json = echo.dump();
    summarize(report, evaluate(ck.model, ws));
    report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_report(report, c.out_dir);
    out << "test accuracy " << report.overall_accuracy << " (" << report.test_windows << " windows)\n";
    return kOk;
}

int cmd_bench(const ExperimentConfig& c, const std::string& checkpoint, std::size_t runs, std::ostream& out) {
    if (runs < 1) throw ConfigError("bench: --runs must be >= 1");
    std::optional<Checkpoint> ck;
    if (!checkpoint.empty()) ck = load_checkpoint(checkpoint);
    EmgtfNet<float> model = ck ? std::move(ck->model) : EmgtfNet<float>(c.model, c.seed);
    const auto report = measure_latency(model, runs, 50, c.seed);
    ensure_dir(c.out_dir);
    auto j = report.to_json();
    j["variant"] = std::string(to_string(model.variant()));
    write_text(c.out_dir / "bench.json", j.dump(2) + "\n");
    out << std::fixed << std::setprecision(4) << "tau median " << report.median_ms << " ms, p95 " << report.p95_ms
        << " ms over " << report.runs << " runs\n"
        << "150 + tau = " << report.total_ms() << " ms vs " << std::setprecision(0) << report.budget_ms
        << " ms budget: " << (report.pass() ? "PASS" : "FAIL") << '\n'
        << std::defaultfloat;
    return kOk;
}

int cmd_param_count(const ExperimentConfig& c, std::ostream& out) {
    EmgtfNet<float> model(c.model, c.seed);
    out << "variant " << to_string(c.model.variant) << ": trainable " << model.param_count(true)
        << ", including centroids " << model.param_count(false) << '\n';
    return kOk;
}

} // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e)) return kConfigError;
    if (dynamic_cast<const DataError*>(&e)) return kDataError;
    if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
    return kFailure;
}

std::vector<RecordingSession> load_sessions(const ExperimentConfig& c) {
    std::vector<RecordingSession> sessions;
    if (!c.data.sessions.empty()) {
        for (const auto& p : c.data.sessions) {
            if (!std::filesystem::exists(p)) throw DataError("session file not found: " + p.string());
            auto s = read_native(p);
            s.validate();
            sessions.push_back(std::move(s));
        }
        return sessions;
    }
    if (!c.data.synth) throw ConfigError("config names no data: set data.sessions, data.synth or data.windows");
    for (std::size_t i = 0; i < c.data.synth->subjects; ++i) {
        SynthSpec spec = c.data.synth->spec;
        spec.seed += i;
        spec.subject = static_cast<std::uint16_t>(spec.subject + i);
        sessions.push_back(synth_generate(spec));
    }
    return sessions;
}

WindowSet load_windows(const ExperimentConfig& c) {
    WindowSet ws;
    if (c.data.windows) {
        if (!std::filesystem::exists(*c.data.windows)) {
            throw DataError("windows file not found: " + c.data.windows->string());
        }
        ws = read_windows(*c.data.windows);
        if (ws.count(Split::train) + ws.count(Split::test) != ws.size()) {
            ws = split_by_repetition(ws, c.data.train_reps, c.data.test_reps);
        }
    } else {
        WindowSet all;
        for (const auto& s : load_sessions(c)) {
            auto part = preprocess_session(s, c.pipeline);
            if (all.windows.empty()) {
                all.channels = part.channels;
                all.width = part.width;
            }
            all.append(part);
        }
        if (all.empty()) throw DataError("no gesture windows: the recordings contain only rest or runs shorter than one window");
        ws = split_by_repetition(all, c.data.train_reps, c.data.test_reps);
    }
    check_no_leakage(ws, c.data.test_reps);
    return ws;
}

nlohmann::ordered_json LatencyReport::to_json() const {
    return {{"runs", runs},
            {"tau_median_ms", median_ms},
            {"tau_p95_ms", p95_ms},
            {"tau_mean_ms", mean_ms},
            {"decision_ms", decision_ms},
            {"total_ms", total_ms()},
            {"budget_ms", budget_ms},
            {"pass", pass()}};
}

LatencyReport measure_latency(EmgtfNet<float>& model, std::size_t runs, std::size_t warmup, std::uint64_t seed) {
    const auto& s = model.spec();
    Rng rng(seed);
    std::vector<float> x(s.channels * s.window);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor<float> window({1, s.channels, s.window}, x);

    NoGradGuard no_grad;
    float sink = 0.0f;
    for (std::size_t i = 0; i < warmup; ++i) sink += model.forward(window).data()[0];
    std::vector<double> ms(runs);
    for (auto& t : ms) {
        const auto t0 = std::chrono::steady_clock::now();
        sink += model.forward(window).data()[0];
        t = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    if (!std::isfinite(sink)) throw NumericError("bench: non-finite logits");

    LatencyReport r;
    r.runs = runs;
    double total = 0.0;
    for (double t : ms) total += t;
    r.mean_ms = total / static_cast<double>(runs);
    std::sort(ms.begin(), ms.end());
    r.median_ms = runs % 2 ? ms[runs / 2] : 0.5 * (ms[runs / 2 - 1] + ms[runs / 2]);
    r.p95_ms = ms[std::min(runs - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(runs))) - 1)];
    return r;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"EMGTFNet: sEMG gesture classification with vision transformers and fuzzy neural blocks",
                 "emgtfnet"};
    app.require_subcommand(1);

    CommonFlags f;
    std::string checkpoint, windows;
    std::size_t runs = 1000;

    auto* synth = app.add_subcommand("synth", "generate synthetic EMG1 recordings");
    auto* preprocess = app.add_subcommand("preprocess", "run the signal pipeline and write split windows");
    auto* train_cmd = app.add_subcommand("train", "train a variant; writes checkpoint and reports");
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test windows");
    auto* bench = app.add_subcommand("bench", "measure single-window inference latency");
    auto* params = app.add_subcommand("param-count", "print the parameter count of a configured model");
    for (auto* cmd : {synth, preprocess, train_cmd, eval, bench, params}) add_common(cmd, f);
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
    eval->add_option("--windows", windows, "EMW1 window file (default: from the config)");
    bench->add_option("--checkpoint", checkpoint, "checkpoint to time (default: freshly initialized model)");
    bench->add_option("--runs", runs, "timed forward passes")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "emgtfnet: " << e.what() << '\n';
        return kConfigError;
    }

    try {
        const auto config = resolve(f);
        if (synth->parsed()) return cmd_synth(config, out);
        if (preprocess->parsed()) return cmd_preprocess(config, out);
        if (train_cmd->parsed()) return cmd_train(config, out);
        if (eval->parsed()) return cmd_eval(config, checkpoint, windows, f.variant, out);
        if (bench->parsed()) return cmd_bench(config, checkpoint, runs, out);
        return cmd_param_count(config, out);
    } catch (const std::exception& e) {
        err << "emgtfnet: " << e.what() << '\n';
        return exit_code_for(e);
    }
}

} // namespace emgtf::cli
