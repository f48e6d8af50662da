#pragma once

// Experiment configuration: one JSON document with sections data, pipeline,
// model, train and output, plus a top-level seed. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emgtf/dataset.hpp"
#include "emgtf/model.hpp"
#include "emgtf/signal.hpp"
#include "emgtf/trainer.hpp"

namespace emgtf::cli {

struct SynthSource {
    SynthSpec spec;
    std::size_t subjects = 1;  // subject ids spec.subject, spec.subject + 1, ...
};

struct DataConfig {
    std::vector<std::filesystem::path> sessions;  // EMG1 recordings
    std::optional<SynthSource> synth;             // used when no sessions are listed
    std::optional<std::filesystem::path> windows;  // preprocessed EMW1 file, skips the pipeline
    RepetitionSet train_reps = kDefaultTrainReps;
    RepetitionSet test_reps = kDefaultTestReps;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;  // model initialization and batch order
    DataConfig data;
    PipelineConfig pipeline;
    ModelSpec model;
    TrainConfig train;
    std::filesystem::path out_dir = "out";

    /// Parses and validates. Relative data paths resolve against base_dir.
    /// Throws ConfigError on unknown keys, wrong types or invalid values.
    static ExperimentConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
    static ExperimentConfig load(const std::filesystem::path& path);

    /// Every field, defaults included.
    nlohmann::ordered_json to_json() const;

    void set_seed(std::uint64_t s) {
        seed = s;
        train.seed = s;
    }
    void validate() const;
};

} // namespace emgtf::cli
