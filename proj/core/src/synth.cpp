#include <cmath>
#include <numbers>

#include "emgtf/dataset.hpp"
#include "emgtf/error.hpp"
#include "emgtf/random.hpp"

namespace emgtf {

namespace {

struct Signature {
    std::vector<double> gain;       // per channel, active-level RMS
    std::vector<double> smoothing;  // per channel one-pole coefficient
};

constexpr double kRestLevel = 0.02;
constexpr double kHumLevel = 0.03;
constexpr double kSpikeProbability = 1e-4;
constexpr double kSpikeLevel = 5.0;
constexpr double kOnsetSeconds = 0.1;

} // namespace

RecordingSession synth_generate(const SynthSpec& spec) {
    if (spec.n_classes < 2) throw ParameterError("synth: need at least two classes");
    if (spec.n_classes > kMaxStimulusCode) throw ParameterError("synth: at most 17 classes");
    if (spec.n_channels == 0 || spec.reps < 1) throw ParameterError("synth: need channels and repetitions");
    if (!(spec.fs > 0.0) || !(spec.gesture_s > 0.0) || spec.rest_s < 0.0) {
        throw ParameterError("synth: invalid timing");
    }

    Rng rng(spec.seed);
    const std::size_t channels = spec.n_channels;

    std::vector<Signature> signatures(static_cast<std::size_t>(spec.n_classes));
    for (auto& sig : signatures) {
        sig.gain.resize(channels);
        sig.smoothing.resize(channels);
        for (std::size_t c = 0; c < channels; ++c) {
            sig.gain[c] = 0.1 + 0.9 * rng.uniform();
            const double cutoff = rng.uniform(40.0, 450.0);
            sig.smoothing[c] = std::exp(-2.0 * std::numbers::pi * cutoff / spec.fs);
        }
    }
    std::vector<double> hum_phase(channels);
    for (auto& p : hum_phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

    const auto gesture_len = static_cast<std::size_t>(std::llround(spec.gesture_s * spec.fs));
    const auto rest_len = static_cast<std::size_t>(std::llround(spec.rest_s * spec.fs));
    const std::size_t total =
        rest_len + static_cast<std::size_t>(spec.n_classes) * static_cast<std::size_t>(spec.reps) * (gesture_len + rest_len);

    RecordingSession s;
    s.subject = spec.subject;
    s.exercise = spec.exercise;
    s.fs = static_cast<float>(spec.fs);
    s.emg.assign(channels, std::vector<float>(total));
    s.stimulus.assign(total, 0);
    s.repetition.assign(total, 0);

    std::vector<double> shaped(channels, 0.0);
    const auto onset = static_cast<std::size_t>(std::llround(kOnsetSeconds * spec.fs));
    std::size_t t = 0;

    auto emit = [&](int cls, int rep, std::size_t len, const std::vector<double>& jitter) {
        for (std::size_t i = 0; i < len; ++i, ++t) {
            double envelope = 0.0;
            if (cls > 0) {
                envelope = 1.0;
                const auto ramp = [&](std::size_t k) {
                    return 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(onset));
                };
                if (onset > 0 && i < onset) envelope = ramp(i);
                if (onset > 0 && len - i <= onset) envelope = std::min(envelope, ramp(len - i - 1));
            }
            const double time = static_cast<double>(t) / spec.fs;
            for (std::size_t c = 0; c < channels; ++c) {
                double v = kRestLevel * rng.normal();
                v += kHumLevel * std::sin(2.0 * std::numbers::pi * 50.0 * time + hum_phase[c]);
                if (cls > 0) {
                    const auto& sig = signatures[static_cast<std::size_t>(cls - 1)];
                    const double a = sig.smoothing[c];
                    shaped[c] = a * shaped[c] + (1.0 - a) * rng.normal();
                    const double unit = shaped[c] * std::sqrt((1.0 + a) / (1.0 - a));
                    v += envelope * sig.gain[c] * jitter[c] * unit;
                }
                if (rng.uniform() < kSpikeProbability) v += (rng.uniform() < 0.5 ? -kSpikeLevel : kSpikeLevel);
                s.emg[c][t] = static_cast<float>(v);
            }
            s.stimulus[t] = static_cast<std::int16_t>(cls);
            s.repetition[t] = static_cast<std::int16_t>(rep);
        }
    };

    const std::vector<double> none(channels, 1.0);
    emit(0, 0, rest_len, none);
    for (int cls = 1; cls <= spec.n_classes; ++cls) {
        for (int rep = 1; rep <= spec.reps; ++rep) {
            std::vector<double> jitter(channels);
            for (auto& j : jitter) j = rng.uniform(0.85, 1.15);
            emit(cls, rep, gesture_len, jitter);
            emit(0, 0, rest_len, none);
        }
    }
    return s;
}

} // namespace emgtf
