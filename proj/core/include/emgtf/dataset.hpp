#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string_view>
#include <vector>

namespace emgtf {

/// Highest stimulus code of NinaPro DB2 Exercise B.
inline constexpr int kMaxStimulusCode = 17;

/// One subject's multichannel recording with per-sample labels.
/// Code 0 in `stimulus` and `repetition` marks rest.
struct RecordingSession {
    std::uint16_t subject = 0;
    std::uint8_t exercise = 0;
    float fs = 2000.0f;
    std::vector<std::vector<float>> emg;  // [channel][sample]
    std::vector<std::int16_t> stimulus;
    std::vector<std::int16_t> repetition;

    std::size_t n_channels() const noexcept { return emg.size(); }
    std::size_t n_samples() const noexcept { return stimulus.size(); }

    /// Throws DataError describing the first broken invariant.
    void validate(int max_stimulus = kMaxStimulusCode) const;

    bool operator==(const RecordingSession&) const = default;
};

// EMG1: little-endian, sample-major, no padding.
//   "EMG1" | u32 version=1 | u16 subject | u8 exercise | u8 reserved=0 |
//   f32 fs | u32 n_channels | u64 n_samples |
//   n_samples x { n_channels x f32 emg, i16 stimulus, i16 repetition }
inline constexpr std::uint32_t kEmg1Version = 1;
inline constexpr std::size_t kEmg1HeaderBytes = 28;

void write_native(const RecordingSession& session, const std::filesystem::path& path);
RecordingSession read_native(const std::filesystem::path& path);

enum class Split : std::uint8_t { unassigned = 0, train = 1, test = 2 };

std::string_view to_string(Split split);

struct Window {
    std::vector<float> values;  // channels x width, row-major
    std::int32_t label = 0;
    std::int16_t repetition = 0;
    std::uint16_t subject = 0;
    Split split = Split::unassigned;

    bool operator==(const Window&) const = default;
};

struct WindowSet {
    std::size_t channels = 0;
    std::size_t width = 0;
    std::vector<Window> windows;

    std::size_t size() const noexcept { return windows.size(); }
    bool empty() const noexcept { return windows.empty(); }
    std::size_t count(Split split) const;
    /// Largest label + 1 (0 when empty).
    std::size_t n_classes() const;
    /// Windows with the given tag, order preserved.
    WindowSet filter(Split split) const;
    void append(const WindowSet& other);

    bool operator==(const WindowSet&) const = default;
};

using RepetitionSet = std::set<std::int16_t>;

inline const RepetitionSet kDefaultTrainReps{1, 3, 4, 6};
inline const RepetitionSet kDefaultTestReps{2, 5};

/// Tags windows train/test by repetition and drops windows from any other
/// repetition. Throws ConfigError when the sets overlap or either side ends
/// up empty.
WindowSet split_by_repetition(const WindowSet& windows, const RepetitionSet& train_reps = kDefaultTrainReps,
                              const RepetitionSet& test_reps = kDefaultTestReps);

/// Throws DataError if any test-tagged window's repetition is outside
/// `test_reps`.
void check_no_leakage(const WindowSet& windows, const RepetitionSet& test_reps);

// EMW1 window container, little-endian:
//   "EMW1" | u32 version=1 | u32 channels | u32 width | u64 count |
//   count x { u16 subject, i16 repetition, i32 label, u8 split, channels*width x f32 }
void write_windows(const WindowSet& windows, const std::filesystem::path& path);
WindowSet read_windows(const std::filesystem::path& path);

/// Parameters of the synthetic recording protocol: for each class, `reps`
/// gestures of `gesture_s` seconds, each followed by `rest_s` seconds of rest.
struct SynthSpec {
    std::uint64_t seed = 0;
    int n_classes = 4;
    std::size_t n_channels = 12;
    double fs = 2000.0;
    int reps = 6;
    double gesture_s = 5.0;
    double rest_s = 3.0;
    std::uint16_t subject = 1;
    std::uint8_t exercise = 2;  // 'B'
};

/// Deterministic per seed. Each class drives every channel with its own
/// amplitude and noise bandwidth, on top of rest-level noise, 50 Hz hum and
/// sparse spikes.
RecordingSession synth_generate(const SynthSpec& spec);

} // namespace emgtf
