#include "emgtf/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "emgtf/error.hpp"

namespace emgtf {

namespace {

double median_of(std::vector<double>& v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

template <typename F>
Signal map_channels(const Signal& x, double fs_out, F&& fn) {
    Signal out;
    out.fs = fs_out;
    out.channels.reserve(x.n_channels());
    for (const auto& ch : x.channels) out.channels.push_back(fn(std::span<const double>(ch)));
    return out;
}

std::size_t samples_for_ms(double ms, double fs, const char* what) {
    const double exact = ms * fs / 1000.0;
    const double rounded = std::round(exact);
    if (rounded < 1.0 || std::abs(exact - rounded) > 1e-9) {
        throw ParameterError(std::string(what) + " of " + std::to_string(ms) + " ms is not a positive whole number of samples at " +
                             std::to_string(fs) + " Hz");
    }
    return static_cast<std::size_t>(rounded);
}

} // namespace

Signal Signal::from_session(const RecordingSession& session) {
    Signal s;
    s.fs = session.fs;
    s.channels.reserve(session.n_channels());
    for (const auto& ch : session.emg) s.channels.emplace_back(ch.begin(), ch.end());
    return s;
}

std::vector<double> hampel(std::span<const double> x, std::size_t half_window, double n_sigmas) {
    if (half_window < 1) throw ParameterError("hampel: half_window must be >= 1");
    constexpr double kMadToSigma = 1.4826;
    const std::size_t n = x.size();
    std::vector<double> out(x.begin(), x.end());
    std::vector<double> window;
    window.reserve(2 * half_window + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half_window ? i - half_window : 0;
        const std::size_t hi = std::min(n, i + half_window + 1);
        window.assign(x.begin() + static_cast<std::ptrdiff_t>(lo), x.begin() + static_cast<std::ptrdiff_t>(hi));
        const double med = median_of(window);
        for (auto& w : window) w = std::abs(w - med);
        const double mad = median_of(window);
        // With MAD = 0 the threshold is 0: only samples off the median move.
        if (std::abs(x[i] - med) > n_sigmas * kMadToSigma * mad) out[i] = med;
    }
    return out;
}

Signal hampel_filter(const Signal& x, std::size_t half_window, double n_sigmas) {
    return map_channels(x, x.fs, [&](std::span<const double> ch) { return hampel(ch, half_window, n_sigmas); });
}

std::vector<Biquad> butterworth_design(FilterKind kind, double cutoff_hz, double fs, int order) {
    if (fs <= 0.0) throw ParameterError("butterworth: fs must be positive");
    if (order < 1) throw ParameterError("butterworth: order must be >= 1");
    if (!(cutoff_hz > 0.0) || cutoff_hz >= fs / 2.0) {
        throw ParameterError("butterworth: cutoff " + std::to_string(cutoff_hz) + " Hz must lie in (0, " +
                             std::to_string(fs / 2.0) + ") Hz");
    }
    using cd = std::complex<double>;
    const double warped = 2.0 * fs * std::tan(std::numbers::pi * cutoff_hz / fs);
    const bool low = kind == FilterKind::lowpass;

    auto digital_pole = [&](cd prototype) {
        const cd s = low ? warped * prototype : warped / prototype;
        return (2.0 * fs + s) / (2.0 * fs - s);
    };

    std::vector<Biquad> sos;
    for (int k = 0; k < order / 2; ++k) {
        const cd p = std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order));
        const cd z = digital_pole(p);
        const double a1 = -2.0 * z.real();
        const double a2 = std::norm(z);
        if (low) {
            const double g = (1.0 + a1 + a2) / 4.0;
            sos.push_back({g, 2.0 * g, g, a1, a2});
        } else {
            const double g = (1.0 - a1 + a2) / 4.0;
            sos.push_back({g, -2.0 * g, g, a1, a2});
        }
    }
    if (order % 2 == 1) {
        const double z = digital_pole(cd(-1.0, 0.0)).real();
        const double a1 = -z;
        if (low) {
            const double g = (1.0 + a1) / 2.0;
            sos.push_back({g, g, 0.0, a1, 0.0});
        } else {
            const double g = (1.0 - a1) / 2.0;
            sos.push_back({g, -g, 0.0, a1, 0.0});
        }
    }
    return sos;
}

namespace {

struct SectionState {
    double z1 = 0.0, z2 = 0.0;
};

void run_cascade(std::span<const Biquad> sos, std::vector<SectionState> state, std::vector<double>& x) {
    for (std::size_t s = 0; s < sos.size(); ++s) {
        const auto& q = sos[s];
        auto [z1, z2] = state[s];
        for (double& v : x) {
            const double y = q.b0 * v + z1;
            z1 = q.b1 * v - q.a1 * y + z2;
            z2 = q.b2 * v - q.a2 * y;
            v = y;
        }
    }
}

// Steady-state section states for a constant input of 1.
std::vector<SectionState> step_states(std::span<const Biquad> sos) {
    std::vector<SectionState> zi(sos.size());
    double level = 1.0;
    for (std::size_t s = 0; s < sos.size(); ++s) {
        const auto& q = sos[s];
        const double gain = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
        const double y = gain * level;
        zi[s].z2 = q.b2 * level - q.a2 * y;
        zi[s].z1 = q.b1 * level - q.a1 * y + zi[s].z2;
        level = y;
    }
    return zi;
}

std::vector<SectionState> scaled(std::vector<SectionState> zi, double factor) {
    for (auto& z : zi) {
        z.z1 *= factor;
        z.z2 *= factor;
    }
    return zi;
}

} // namespace

std::vector<double> sos_filter(std::span<const Biquad> sos, std::span<const double> x) {
    std::vector<double> y(x.begin(), x.end());
    run_cascade(sos, std::vector<SectionState>(sos.size()), y);
    return y;
}

std::vector<double> sos_filtfilt(std::span<const Biquad> sos, std::span<const double> x) {
    const std::size_t n = x.size();
    if (n == 0) return {};
    if (n == 1) {
        std::vector<double> one(1, x[0]);
        // A single sample is a constant signal: the steady-state response.
        double gain = 1.0;
        for (const auto& q : sos) gain *= (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
        one[0] *= gain * gain;
        return one;
    }
    std::size_t trailing_zeros = 0;
    for (const auto& q : sos) trailing_zeros += (q.b2 == 0.0 && q.a2 == 0.0) ? 1 : 0;
    const std::size_t padlen = std::min(3 * (2 * sos.size() + 1 - trailing_zeros), n - 1);

    std::vector<double> ext;
    ext.reserve(n + 2 * padlen);
    for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    const auto zi = step_states(sos);
    run_cascade(sos, scaled(zi, ext.front()), ext);
    std::reverse(ext.begin(), ext.end());
    run_cascade(sos, scaled(zi, ext.front()), ext);
    std::reverse(ext.begin(), ext.end());
    return {ext.begin() + static_cast<std::ptrdiff_t>(padlen), ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

Signal butterworth_filtfilt(const Signal& x, FilterKind kind, double cutoff_hz, int order) {
    const auto sos = butterworth_design(kind, cutoff_hz, x.fs, order);
    return map_channels(x, x.fs, [&](std::span<const double> ch) { return sos_filtfilt(sos, ch); });
}

std::vector<double> moving_rms(std::span<const double> x, std::size_t k) {
    if (k < 1) throw ParameterError("moving_rms: window must hold at least one sample");
    constexpr std::size_t kReanchorEvery = 4096;
    // Mean of squares kept in incremental form, m += (new - old) / n, so a
    // constant input leaves m untouched and its RMS is returned exactly.
    std::vector<double> out(x.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t lo = i + 1 >= k ? i + 1 - k : 0;
        const double sq = x[i] * x[i];
        if (i % kReanchorEvery == 0 && i > 0) {
            // Re-anchor so rounding drift from the sliding updates stays bounded.
            mean = 0.0;
            for (std::size_t j = lo; j <= i; ++j) mean += (x[j] * x[j] - mean) / static_cast<double>(j - lo + 1);
        } else if (i < k) {
            mean += (sq - mean) / static_cast<double>(i + 1);
        } else {
            mean += (sq - x[i - k] * x[i - k]) / static_cast<double>(k);
        }
        out[i] = std::sqrt(std::max(mean, 0.0));
    }
    return out;
}

Signal rms_envelope(const Signal& x, double window_ms) {
    if (!(window_ms > 0.0)) throw ParameterError("rms_envelope: window_ms must be positive");
    const auto k = static_cast<std::size_t>(std::llround(window_ms * x.fs / 1000.0));
    if (k < 1) throw ParameterError("rms_envelope: window shorter than one sample");
    return map_channels(x, x.fs, [k](std::span<const double> ch) { return moving_rms(ch, k); });
}

std::size_t undersample_stride(double fs, double target_fs) {
    if (!(target_fs > 0.0) || !(fs > 0.0)) throw ParameterError("undersample: rates must be positive");
    const double ratio = fs / target_fs;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9) {
        throw ParameterError("undersample: " + std::to_string(fs) + " Hz is not an integer multiple of " +
                             std::to_string(target_fs) + " Hz");
    }
    return static_cast<std::size_t>(rounded);
}

Signal undersample(const Signal& x, double target_fs) {
    const std::size_t stride = undersample_stride(x.fs, target_fs);
    return map_channels(x, target_fs, [stride](std::span<const double> ch) {
        std::vector<double> out;
        out.reserve(ch.size() / stride + 1);
        for (std::size_t i = 0; i < ch.size(); i += stride) out.push_back(ch[i]);
        return out;
    });
}

Signal scale_to_unit(const Signal& x) {
    return map_channels(x, x.fs, [](std::span<const double> ch) {
        double peak = 0.0;
        for (double v : ch) peak = std::max(peak, std::abs(v));
        std::vector<double> out(ch.begin(), ch.end());
        if (peak > 0.0) {
            for (auto& v : out) v /= peak;
        }
        return out;
    });
}

double mu_law(double x, double mu) {
    if (!(mu > 0.0)) throw ParameterError("mu_law: mu must be positive");
    const double mag = std::log1p(mu * std::abs(x)) / std::log1p(mu);
    return x < 0.0 ? -mag : (x > 0.0 ? mag : 0.0);
}

Signal mu_law_normalize(const Signal& x, double mu) {
    if (!(mu > 0.0)) throw ParameterError("mu_law: mu must be positive");
    return map_channels(x, x.fs, [mu](std::span<const double> ch) {
        std::vector<double> out(ch.size());
        std::transform(ch.begin(), ch.end(), out.begin(), [mu](double v) { return mu_law(v, mu); });
        return out;
    });
}

std::size_t windows_in_run(std::size_t run_length, std::size_t width, std::size_t step) {
    if (step == 0) throw ParameterError("window step must be >= 1");
    if (run_length < width) return 0;
    return (run_length - width) / step + 1;
}

WindowSet segment_windows(const Signal& envelope, std::span<const std::int16_t> stimulus,
                          std::span<const std::int16_t> repetition, const WindowingParams& params,
                          std::uint16_t subject) {
    const std::size_t width = samples_for_ms(params.window_ms, envelope.fs, "window");
    const std::size_t step = samples_for_ms(params.step_ms, envelope.fs, "window step");
    const std::size_t n = envelope.n_samples();
    if (stimulus.size() != n || repetition.size() != n) {
        throw ContractError("segment_windows: label streams (" + std::to_string(stimulus.size()) + ", " +
                            std::to_string(repetition.size()) + ") do not match " + std::to_string(n) + " samples");
    }
    WindowSet out;
    out.channels = envelope.n_channels();
    out.width = width;
    std::size_t start = 0;
    while (start < n) {
        std::size_t end = start + 1;
        while (end < n && stimulus[end] == stimulus[start] && repetition[end] == repetition[start]) ++end;
        if (stimulus[start] > 0) {
            const std::size_t count = windows_in_run(end - start, width, step);
            for (std::size_t w = 0; w < count; ++w) {
                const std::size_t first = start + w * step;
                Window win;
                win.values.resize(out.channels * width);
                for (std::size_t c = 0; c < out.channels; ++c) {
                    const auto& ch = envelope.channels[c];
                    for (std::size_t t = 0; t < width; ++t) {
                        win.values[c * width + t] = static_cast<float>(ch[first + t]);
                    }
                }
                win.label = stimulus[start] - 1;
                win.repetition = repetition[start];
                win.subject = subject;
                out.windows.push_back(std::move(win));
            }
        }
        start = end;
    }
    return out;
}

void PipelineConfig::validate() const {
    if (hampel_half_window < 1) throw ParameterError("pipeline: hampel_half_window must be >= 1");
    if (!(hampel_sigmas > 0.0)) throw ParameterError("pipeline: hampel_sigmas must be positive");
    if (!(highpass_hz > 0.0) || !(lowpass_hz > highpass_hz)) {
        throw ParameterError("pipeline: need 0 < highpass_hz < lowpass_hz");
    }
    if (filter_order < 1) throw ParameterError("pipeline: filter_order must be >= 1");
    if (!(rms_window_ms > 0.0)) throw ParameterError("pipeline: rms_window_ms must be positive");
    if (!(target_fs > 0.0)) throw ParameterError("pipeline: target_fs must be positive");
    if (!(envelope_lowpass_hz > 0.0) || envelope_lowpass_hz >= target_fs / 2.0) {
        throw ParameterError("pipeline: envelope_lowpass_hz must lie below target_fs / 2");
    }
    if (!(mu > 0.0)) throw ParameterError("pipeline: mu must be positive");
    if (!(windowing.window_ms > 0.0) || !(windowing.step_ms > 0.0)) {
        throw ParameterError("pipeline: window_ms and step_ms must be positive");
    }
}

Signal envelope_pipeline(const Signal& raw, const PipelineConfig& config) {
    config.validate();
    Signal s = hampel_filter(raw, config.hampel_half_window, config.hampel_sigmas);
    s = butterworth_filtfilt(s, FilterKind::highpass, config.highpass_hz, config.filter_order);
    s = butterworth_filtfilt(s, FilterKind::lowpass, config.lowpass_hz, config.filter_order);
    s = rms_envelope(s, config.rms_window_ms);
    s = undersample(s, config.target_fs);
    s = butterworth_filtfilt(s, FilterKind::lowpass, config.envelope_lowpass_hz, config.filter_order);
    s = scale_to_unit(s);
    return mu_law_normalize(s, config.mu);
}

WindowSet preprocess_session(const RecordingSession& session, const PipelineConfig& config) {
    session.validate();
    const Signal envelope = envelope_pipeline(Signal::from_session(session), config);
    const std::size_t stride = undersample_stride(session.fs, config.target_fs);
    std::vector<std::int16_t> stimulus, repetition;
    for (std::size_t i = 0; i < session.n_samples(); i += stride) {
        stimulus.push_back(session.stimulus[i]);
        repetition.push_back(session.repetition[i]);
    }
    return segment_windows(envelope, stimulus, repetition, config.windowing, session.subject);
}

} // namespace emgtf
