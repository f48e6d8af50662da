#pragma once

// sEMG preprocessing chain: outlier removal, band limiting, RMS envelope,
// undersampling, envelope smoothing, mu-law companding and windowing.

#include <cstdint>
#include <span>
#include <vector>

#include "emgtf/dataset.hpp"

namespace emgtf {

/// Multichannel signal stored channel-major. Used both for raw EMG and for
/// the 100 Hz envelope.
struct Signal {
    double fs = 0.0;
    std::vector<std::vector<double>> channels;

    std::size_t n_channels() const noexcept { return channels.size(); }
    std::size_t n_samples() const noexcept { return channels.empty() ? 0 : channels.front().size(); }

    static Signal from_session(const RecordingSession& session);
};

// Per-channel primitives.
std::vector<double> hampel(std::span<const double> x, std::size_t half_window, double n_sigmas);
std::vector<double> moving_rms(std::span<const double> x, std::size_t k);
double mu_law(double x, double mu);

Signal hampel_filter(const Signal& x, std::size_t half_window = 5, double n_sigmas = 3.0);

enum class FilterKind { lowpass, highpass };

/// One second-order section, a0 normalized to 1.
struct Biquad {
    double b0, b1, b2, a1, a2;
};

/// Digital Butterworth design by the bilinear transform with prewarping,
/// as a cascade of second-order sections (a first-order tail for odd order).
std::vector<Biquad> butterworth_design(FilterKind kind, double cutoff_hz, double fs, int order);

/// Causal cascade filter, zero initial state.
std::vector<double> sos_filter(std::span<const Biquad> sos, std::span<const double> x);

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions.
std::vector<double> sos_filtfilt(std::span<const Biquad> sos, std::span<const double> x);

Signal butterworth_filtfilt(const Signal& x, FilterKind kind, double cutoff_hz, int order = 4);

/// Causal moving RMS over round(window_ms * fs / 1000) samples; the first
/// k-1 outputs use the available prefix.
Signal rms_envelope(const Signal& x, double window_ms);

/// Keeps every (fs / target_fs)-th sample starting at 0.
Signal undersample(const Signal& x, double target_fs);

/// Indices kept by undersample(): 0, stride, 2*stride, ...
std::size_t undersample_stride(double fs, double target_fs);

/// Divides each channel by its maximum absolute value (all-zero channels
/// are left untouched).
Signal scale_to_unit(const Signal& x);

/// F(x) = sign(x) ln(1 + mu|x|) / ln(1 + mu), elementwise.
Signal mu_law_normalize(const Signal& x, double mu);

struct WindowingParams {
    double window_ms = 200.0;
    double step_ms = 10.0;
};

/// Extracts windows from maximal runs of constant non-zero (stimulus,
/// repetition). A run of length T gives floor((T - W) / S) + 1 windows, none
/// when T < W. Stimulus s maps to label s - 1.
WindowSet segment_windows(const Signal& envelope, std::span<const std::int16_t> stimulus,
                          std::span<const std::int16_t> repetition, const WindowingParams& params,
                          std::uint16_t subject = 0);

/// Number of windows a run of `run_length` samples yields.
std::size_t windows_in_run(std::size_t run_length, std::size_t width, std::size_t step);

struct PipelineConfig {
    std::size_t hampel_half_window = 5;
    double hampel_sigmas = 3.0;
    double highpass_hz = 20.0;
    double lowpass_hz = 500.0;
    int filter_order = 4;
    double rms_window_ms = 100.0;
    double target_fs = 100.0;
    double envelope_lowpass_hz = 1.0;
    double mu = 256.0;
    WindowingParams windowing{};

    /// Throws ParameterError on invalid values.
    void validate() const;
};

/// Raw 2 kHz recording -> mu-law normalized 100 Hz envelope, in the fixed
/// order hampel, highpass, lowpass, RMS, undersample, lowpass, mu-law.
Signal envelope_pipeline(const Signal& raw, const PipelineConfig& config);

/// Full chain including windowing; label streams are undersampled with the
/// same stride as the signal.
WindowSet preprocess_session(const RecordingSession& session, const PipelineConfig& config);

} // namespace emgtf
