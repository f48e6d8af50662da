#include "emgtf/dataset.hpp"

#include <algorithm>

#include "binary_io.hpp"
#include "emgtf/error.hpp"

namespace emgtf {

void RecordingSession::validate(int max_stimulus) const {
    if (!(fs > 0.0f)) throw DataError("recording: sampling rate must be positive");
    if (emg.empty()) throw DataError("recording: no EMG channels");
    const std::size_t t = stimulus.size();
    if (repetition.size() != t) {
        throw DataError("recording: repetition stream has " + std::to_string(repetition.size()) +
                        " samples, stimulus has " + std::to_string(t));
    }
    for (std::size_t c = 0; c < emg.size(); ++c) {
        if (emg[c].size() != t) {
            throw DataError("recording: channel " + std::to_string(c) + " has " + std::to_string(emg[c].size()) +
                            " samples, labels have " + std::to_string(t));
        }
    }
    for (std::size_t i = 0; i < t; ++i) {
        if (stimulus[i] < 0 || stimulus[i] > max_stimulus) {
            throw DataError("recording: stimulus code " + std::to_string(stimulus[i]) + " at sample " +
                            std::to_string(i) + " outside [0," + std::to_string(max_stimulus) + "]");
        }
        if (repetition[i] < 0) {
            throw DataError("recording: negative repetition code at sample " + std::to_string(i));
        }
    }
}

void write_native(const RecordingSession& session, const std::filesystem::path& path) {
    session.validate();
    io::Writer w(path);
    w.tag("EMG1");
    w.put(kEmg1Version);
    w.put(session.subject);
    w.put(session.exercise);
    w.put(std::uint8_t{0});
    w.put(session.fs);
    w.put(static_cast<std::uint32_t>(session.n_channels()));
    w.put(static_cast<std::uint64_t>(session.n_samples()));
    for (std::size_t i = 0; i < session.n_samples(); ++i) {
        for (const auto& ch : session.emg) w.put(ch[i]);
        w.put(session.stimulus[i]);
        w.put(session.repetition[i]);
    }
    w.close();
}

RecordingSession read_native(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_tag("EMG1");
    const auto version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kEmg1Version) {
        throw FormatError(path.string() + ": unsupported EMG1 version " + std::to_string(version), version_at);
    }
    RecordingSession s;
    s.subject = r.get<std::uint16_t>("subject");
    s.exercise = r.get<std::uint8_t>("exercise");
    const auto reserved_at = r.offset();
    if (r.get<std::uint8_t>("reserved") != 0) {
        throw FormatError(path.string() + ": reserved header byte is not zero", reserved_at);
    }
    const auto fs_at = r.offset();
    s.fs = r.get<float>("fs");
    if (!(s.fs > 0.0f)) throw FormatError(path.string() + ": non-positive sampling rate", fs_at);
    const auto channels_at = r.offset();
    const auto n_channels = r.get<std::uint32_t>("n_channels");
    if (n_channels == 0) throw FormatError(path.string() + ": zero channels", channels_at);
    const auto n_samples = r.get<std::uint64_t>("n_samples");

    const std::uint64_t record = std::uint64_t{n_channels} * 4 + 4;
    if (n_samples > r.remaining() / record) {
        throw FormatError(path.string() + ": header declares " + std::to_string(n_samples) + " samples but only " +
                              std::to_string(r.remaining() / record) + " complete records follow (truncated payload)",
                          r.offset() + (r.remaining() / record) * record);
    }
    s.emg.assign(n_channels, std::vector<float>(n_samples));
    s.stimulus.resize(n_samples);
    s.repetition.resize(n_samples);
    for (std::uint64_t i = 0; i < n_samples; ++i) {
        for (auto& ch : s.emg) ch[i] = r.get<float>("emg sample");
        s.stimulus[i] = r.get<std::int16_t>("stimulus");
        s.repetition[i] = r.get<std::int16_t>("repetition");
    }
    if (r.remaining() != 0) {
        throw FormatError(path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes after payload",
                          r.offset());
    }
    return s;
}

std::string_view to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: break;
    }
    return "unassigned";
}

std::size_t WindowSet::count(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(windows.begin(), windows.end(), [split](const Window& w) { return w.split == split; }));
}

std::size_t WindowSet::n_classes() const {
    std::int32_t top = -1;
    for (const auto& w : windows) top = std::max(top, w.label);
    return static_cast<std::size_t>(top + 1);
}

WindowSet WindowSet::filter(Split split) const {
    WindowSet out{channels, width, {}};
    for (const auto& w : windows) {
        if (w.split == split) out.windows.push_back(w);
    }
    return out;
}

void WindowSet::append(const WindowSet& other) {
    if (empty() && channels == 0) {
        channels = other.channels;
        width = other.width;
    } else if (!other.empty() && (other.channels != channels || other.width != width)) {
        throw DataError("cannot merge window sets of different geometry");
    }
    windows.insert(windows.end(), other.windows.begin(), other.windows.end());
}

WindowSet split_by_repetition(const WindowSet& windows, const RepetitionSet& train_reps,
                              const RepetitionSet& test_reps) {
    for (auto r : train_reps) {
        if (test_reps.contains(r)) {
            throw ConfigError("repetition " + std::to_string(r) + " is in both the train and the test set");
        }
    }
    WindowSet out{windows.channels, windows.width, {}};
    for (const auto& w : windows.windows) {
        Split tag = Split::unassigned;
        if (train_reps.contains(w.repetition)) tag = Split::train;
        else if (test_reps.contains(w.repetition)) tag = Split::test;
        else continue;
        out.windows.push_back(w);
        out.windows.back().split = tag;
    }
    if (out.count(Split::train) == 0) throw ConfigError("repetition split leaves no training windows");
    if (out.count(Split::test) == 0) throw ConfigError("repetition split leaves no test windows");
    return out;
}

void check_no_leakage(const WindowSet& windows, const RepetitionSet& test_reps) {
    for (const auto& w : windows.windows) {
        if (w.split == Split::test && !test_reps.contains(w.repetition)) {
            throw DataError("test window from repetition " + std::to_string(w.repetition) +
                            " is not in the configured test repetitions");
        }
    }
}

void write_windows(const WindowSet& windows, const std::filesystem::path& path) {
    const std::size_t values = windows.channels * windows.width;
    io::Writer w(path);
    w.tag("EMW1");
    w.put(std::uint32_t{1});
    w.put(static_cast<std::uint32_t>(windows.channels));
    w.put(static_cast<std::uint32_t>(windows.width));
    w.put(static_cast<std::uint64_t>(windows.size()));
    for (const auto& win : windows.windows) {
        if (win.values.size() != values) throw DataError("window has wrong number of values");
        w.put(win.subject);
        w.put(win.repetition);
        w.put(win.label);
        w.put(static_cast<std::uint8_t>(win.split));
        for (float v : win.values) w.put(v);
    }
    w.close();
}

WindowSet read_windows(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_tag("EMW1");
    const auto version_at = r.offset();
    if (const auto v = r.get<std::uint32_t>("version"); v != 1) {
        throw FormatError(path.string() + ": unsupported EMW1 version " + std::to_string(v), version_at);
    }
    WindowSet out;
    out.channels = r.get<std::uint32_t>("channels");
    out.width = r.get<std::uint32_t>("width");
    const auto count = r.get<std::uint64_t>("count");
    const std::uint64_t record = 9 + 4 * std::uint64_t{out.channels} * out.width;
    if (count > r.remaining() / record) r.fail("window count exceeds payload (truncated payload)");
    out.windows.resize(count);
    for (auto& win : out.windows) {
        win.subject = r.get<std::uint16_t>("subject");
        win.repetition = r.get<std::int16_t>("repetition");
        win.label = r.get<std::int32_t>("label");
        const auto split_at = r.offset();
        const auto split = r.get<std::uint8_t>("split");
        if (split > 2) throw FormatError(path.string() + ": invalid split tag", split_at);
        win.split = static_cast<Split>(split);
        win.values.resize(out.channels * out.width);
        for (auto& v : win.values) v = r.get<float>("window value");
    }
    if (r.remaining() != 0) r.fail("trailing bytes after payload");
    return out;
}

} // namespace emgtf
