// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Desk-scale training goes through the emgtfnet CLI.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "emgtf/fuzzy.hpp"
#include "emgtf/model.hpp"
#include "emgtf/ops.hpp"
#include "emgtf/signal.hpp"
#include "model_gradcheck.hpp"
#include "primitive_checks.hpp"
#include "temp_dir.hpp"

using namespace emgtf;

namespace {

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int emgtfnet(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "emgtfnet");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream os, es;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), os, es);
    if (out) *out = os.str();
    if (code != 0) std::fprintf(stderr, "emgtfnet %s: %s", args[1].c_str(), es.str().c_str());
    return code;
}

void param_count() {
    const auto n = EmgtfNet<float>(ModelSpec{}, 0).param_count();
    report("param_count", n == 54'609, fmt("baseline (12,4,1,64,256,8; 17 classes) has %zu trainable parameters, expected 54609", n));
}

void gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double prim = 0.0;
    std::string worst_prim;
    for (const auto& c : testing::check_all_primitives(1e-3)) {
        if (c.rel_error >= prim) prim = c.rel_error, worst_prim = c.op;
    }
    ModelSpec spec;
    spec.variant = Variant::v2;
    double full = 0.0;
    std::string worst_group;
    std::size_t coords = 0;
    for (const auto& e : testing::check_model_gradients(spec, 2, 1e-3)) {
        coords += e.checked;
        if (e.rel_error >= full) full = e.rel_error, worst_group = e.name;
    }
    const double t = seconds_since(t0);
    report("gradient_correctness", prim < 1e-6 && full < 1e-4 && t < 120.0,
           fmt("primitives max rel err %.2e (%s) < 1e-6; v2 loss max rel err %.2e (%s) over all %zu coordinates < "
               "1e-4; %.1f s < 120 s",
               prim, worst_prim.c_str(), full, worst_group.c_str(), coords, t));
}

void fnb_invariants() {
    Rng rng(77);
    double worst_sum = 0.0, worst_oracle = 0.0;
    bool in_range = true, k1_ok = true;
    std::size_t oracle_cases = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = trial % 10 == 0 ? 1 : 1 + rng.below(24);
        const std::size_t d = 1 + rng.below(64);
        const double spread = std::pow(10.0, rng.uniform(-1.0, 1.5));
        auto v = testing::random_tensor(rng, {1, d}, -spread, spread, false);
        auto c = testing::random_tensor(rng, {k, d}, -spread, spread, false);
        auto a = testing::random_tensor(rng, {k, d}, 0.05, 5.0, false);
        const auto o = fuzzy_rule_activation(v, c, a);
        double s = 0.0;
        for (double x : o.data()) {
            in_range = in_range && x >= 0.0 && x <= 1.0;
            s += x;
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        if (k == 1) k1_ok = k1_ok && o.data()[0] == 1.0;

        // Literal product of Gaussian memberships, compared where it stays normal.
        std::vector<double> naive(k, 1.0);
        bool underflow = false;
        for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                const double z = (v.data()[j] - c.data()[r * d + j]) / a.data()[r * d + j];
                naive[r] *= std::exp(-0.25 * z * z);
            }
            underflow = underflow || naive[r] < std::numeric_limits<double>::min();
        }
        if (underflow) continue;
        ++oracle_cases;
        double z = 0.0;
        for (double x : naive) z += x;
        for (std::size_t r = 0; r < k; ++r) worst_oracle = std::max(worst_oracle, std::abs(naive[r] / z - o.data()[r]));
    }
    report("fnb_invariants", in_range && worst_sum <= 1e-6 && k1_ok && worst_oracle <= 1e-8 && oracle_cases > 0,
           fmt("1000 triples: outputs in [0,1] %s, max |sum-1| %.1e <= 1e-6, K=1 -> [1] %s, log-domain vs naive product "
               "max diff %.1e <= 1e-8 on %zu non-underflowing cases",
               in_range ? "yes" : "NO", worst_sum, k1_ok ? "yes" : "NO", worst_oracle, oracle_cases));
}

void dsp_golden() {
    const bool mu_ok = mu_law(0.0, 256.0) == 0.0 && mu_law(1.0, 256.0) == 1.0 && mu_law(-1.0, 256.0) == -1.0;

    bool rms_ok = true;
    for (double c : {0.75, 0.3, -1.7, 1e-4}) {
        Signal s{2000.0, {std::vector<double>(10'000, c)}};
        const auto env = rms_envelope(s, 100.0);
        for (double v : env.channels[0]) rms_ok = rms_ok && v == std::abs(c);
    }

    std::vector<double> x(101);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.2 * static_cast<double>(i));
    auto spiked = x;
    spiked[50] += 40.0;
    const auto y = hampel(spiked, 5, 3.0);
    bool hampel_ok = std::abs(y[50]) < 2.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (i != 50) hampel_ok = hampel_ok && y[i] == x[i];

    std::vector<std::int16_t> stim(100, 1), rep(100, 1);
    Signal env{100.0, {std::vector<double>(100, 0.5)}};
    const auto n_windows = segment_windows(env, stim, rep, WindowingParams{200.0, 10.0}).size();

    report("dsp_golden", mu_ok && rms_ok && hampel_ok && n_windows == 81,
           fmt("mu-law F(0)=0, F(+-1)=+-1 %s; RMS of constants exact %s; Hampel removes isolated spike %s; "
               "100-sample run gives %zu windows (W=20, S=1), expected 81",
               mu_ok ? "yes" : "NO", rms_ok ? "yes" : "NO", hampel_ok ? "yes" : "NO", n_windows));
}

void clustering() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(5);
    const double centers[3][2] = {{0, 0}, {8, 1}, {2, 9}};
    Matrix data(300, 2);
    double means[3][2] = {};
    for (std::size_t i = 0; i < 300; ++i) {
        const auto b = i / 100;
        for (std::size_t j = 0; j < 2; ++j) {
            data(i, j) = centers[b][j] + 0.6 * rng.normal();
            means[b][j] += data(i, j) / 100.0;
        }
    }
    FcmOptions opt;
    opt.seed = 3;
    const auto fit = fcm_fit(data, 3, opt);
    double worst = 0.0;
    for (const auto& m : means) {
        double best = 1e300;
        for (std::size_t k = 0; k < 3; ++k) best = std::min(best, std::hypot(fit.centroids(k, 0) - m[0], fit.centroids(k, 1) - m[1]));
        worst = std::max(worst, best);
    }
    const auto one = fcm_fit(data, 1);
    double mean_err = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < 300; ++i) m += data(i, j);
        mean_err = std::max(mean_err, std::abs(one.centroids(0, j) - m / 300.0));
    }
    const double t = seconds_since(t0);
    report("clustering_oracle", worst < 0.05 && mean_err < 1e-9 && t < 10.0,
           fmt("3 blobs: max distance to blob mean %.2e < 0.05; K=1 vs mean %.1e < 1e-9; %.2f s < 10 s", worst, mean_err, t));
}

struct DeskRun {
    bool ok = false;
    double accuracy = 0.0;
    double seconds = 0.0;
    std::size_t train = 0, test = 0, epochs = 0;
};

DeskRun desk_train(const std::string& config, const std::string& variant, const std::filesystem::path& out,
                   const std::vector<std::string>& extra = {}) {
    DeskRun r;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> args{"train", "--config", config, "--variant", variant, "--out", out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    r.ok = emgtfnet(args) == 0;
    r.seconds = seconds_since(t0);
    if (!r.ok) return r;
    const auto j = nlohmann::json::parse(slurp(out / "report.json"));
    r.accuracy = j["accuracy"]["overall"];
    r.train = j["windows"]["train"];
    r.test = j["windows"]["test"];
    r.epochs = j["epochs"].size();
    return r;
}

bool same_reports(const std::filesystem::path& a, const std::filesystem::path& b) {
    auto ja = nlohmann::json::parse(slurp(a / "report.json"));
    auto jb = nlohmann::json::parse(slurp(b / "report.json"));
    for (auto* j : {&ja, &jb}) {
        j->erase("wall_clock_s");
        (*j)["config"]["output"].erase("dir");
    }
    return ja == jb && slurp(a / "per_subject.csv") == slurp(b / "per_subject.csv") &&
           slurp(a / "checkpoint.emck") == slurp(b / "checkpoint.emck");
}

} // namespace

int main() {
    const std::string config_dir = EMGTF_CONFIG_DIR;
    const std::string desk = config_dir + "/desk_synth.json";
    testing::TempDir work;

    param_count();
    gradients();
    fnb_invariants();
    dsp_golden();
    clustering();

    // Desk-scale end-to-end through the CLI.
    const char* variants[] = {"baseline", "v1", "v2", "v3"};
    DeskRun runs[4];
    for (int i = 0; i < 4; ++i) {
        runs[i] = desk_train(desk, variants[i], work / variants[i]);
        std::fprintf(stderr, "desk %s: ok=%d acc=%.4f %zu/%zu windows, %zu epochs, %.1f s\n", variants[i], runs[i].ok,
                     runs[i].accuracy, runs[i].train, runs[i].test, runs[i].epochs, runs[i].seconds);
    }
    bool desk_ok = true;
    std::string detail = fmt("%zu train / %zu test windows, %zu epochs;", runs[0].train, runs[0].test, runs[0].epochs);
    for (int i = 0; i < 4; ++i) {
        const bool within = i == 0 || std::abs(runs[i].accuracy - runs[0].accuracy) <= 0.02;
        const bool ok = runs[i].ok && runs[i].accuracy >= 0.95 && runs[i].epochs <= 50 && runs[i].seconds < 600.0 && within;
        desk_ok = desk_ok && ok;
        detail += fmt(" %s %.2f%% in %.0f s%s;", variants[i], 100.0 * runs[i].accuracy, runs[i].seconds,
                      i == 0 ? "" : (within ? " (within 2 pts)" : " (NOT within 2 pts)"));
    }
    report("desk_scale_end_to_end", desk_ok, detail + " need >= 95%, < 600 s each");

    // Determinism: rerun baseline with the same config and seed; also v3
    // (fuzzy clustering in the loop) on a shortened schedule.
    const auto again = desk_train(desk, "baseline", work / "baseline_again");
    bool det_ok = again.ok && same_reports(work / "baseline", work / "baseline_again");
    std::string v3_note;
    {
        // Shorter v3 schedule via a derived config.
        auto j = nlohmann::json::parse(slurp(desk));
        j["train"]["epochs"] = 5;
        const auto short_cfg = work / "desk_v3_short.json";
        std::ofstream(short_cfg) << j.dump(2);
        const auto a = desk_train(short_cfg.string(), "v3", work / "v3_a");
        const auto b = desk_train(short_cfg.string(), "v3", work / "v3_b");
        const bool v3_same = a.ok && b.ok && same_reports(work / "v3_a", work / "v3_b");
        det_ok = det_ok && v3_same;
        v3_note = v3_same ? "v3 5-epoch reruns identical" : "v3 reruns DIFFER";
    }
    report("determinism", det_ok,
           fmt("baseline 50-epoch rerun: reports, loss curve, per-subject CSV and checkpoint %s; %s",
               det_ok ? "bit-identical" : "differ", v3_note.c_str()));

    // Latency on the trained v3 checkpoint.
    {
        const auto ck = (work / "v3" / "checkpoint.emck").string();
        const bool ran = runs[3].ok && emgtfnet({"bench", "--checkpoint", ck, "--out", (work / "bench").string()}) == 0;
        if (ran) {
            const auto j = nlohmann::json::parse(slurp(work / "bench" / "bench.json"));
            const double tau = j["tau_median_ms"], p95 = j["tau_p95_ms"];
            report("latency", tau > 0.0 && 150.0 + tau < 300.0,
                   fmt("v3 median tau %.4f ms (p95 %.4f ms, %d runs); 150 + tau = %.4f ms < 300 ms", tau, p95,
                       j["runs"].get<int>(), 150.0 + tau));
        } else {
            report("latency", false, "bench did not run");
        }
    }

    // The full DB2 harness must exist and parse; running it is out of CI scope.
    {
        bool ok = false;
        std::string d;
        try {
            const auto c = cli::ExperimentConfig::load(config_dir + "/db2_full.json");
            ok = c.model.n_classes == 17 && !c.data.sessions.empty();
            d = fmt("db2_full.json loads (variant %s, %zu classes, %zu epochs); full DB2 training excluded from CI, "
                    "40-subject accuracy not reproduced at desk scale",
                    std::string(to_string(c.model.variant)).c_str(), c.model.n_classes, c.train.epochs);
        } catch (const std::exception& e) {
            d = std::string("db2_full.json unusable: ") + e.what();
        }
        report("db2_harness", ok, d);
    }

    std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
